//! Seeded synthetic text-attributed graphs with planted classes, plus a
//! matching token codebook and class codebook.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::Mat;
use crate::codebook::{ClassCodebook, Codebook};
use crate::error::Result;
use crate::tagdata::TextAttributedGraph;

const CLASS_NAMES: [&str; 8] = [
    "astronomy",
    "botany",
    "chemistry",
    "geology",
    "history",
    "music",
    "physics",
    "zoology",
];

/// Graph with `num_blocks × types_per_block` classes: class `c` is block
/// `c / types_per_block` and type `c % types_per_block`. A node's features
/// are its type prototype plus `block_signal` times its block prototype
/// plus isotropic noise, so features mostly name the type. Edges form within
/// a class with probability `p_class`, within a block with `p_block`, and
/// across blocks with `p_cross`, so structure mostly names the block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_nodes: usize,
    pub num_blocks: usize,
    pub types_per_block: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub block_signal: f64,
    pub p_class: f64,
    pub p_block: f64,
    pub p_cross: f64,
    pub tokens_per_class: usize,
    pub background_tokens: usize,
    pub token_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_nodes: 300,
            num_blocks: 2,
            types_per_block: 2,
            feature_dim: 32,
            noise: 0.3,
            block_signal: 1.0,
            p_class: 0.06,
            p_block: 0.01,
            p_cross: 0.002,
            tokens_per_class: 6,
            background_tokens: 40,
            token_noise: 0.35,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn num_classes(&self) -> usize {
        self.num_blocks * self.types_per_block
    }
}

pub struct SyntheticTag {
    pub graph: TextAttributedGraph,
    pub codebook: Codebook,
    pub class_codebook: ClassCodebook,
    /// Class prototypes (mean feature of each class), one row per class.
    pub prototypes: Mat,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_rows<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Mat {
    let mut m = Mat::from_shape_fn((rows, dim), |_| gaussian(rng));
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r.mapv_inplace(|x| x / n);
    }
    m
}

/// Lowercase letter-only name for index `i` (`aa`, `ab`, ...).
fn letter_name(prefix: &str, mut i: usize) -> String {
    let mut s = String::new();
    loop {
        s.insert(0, (b'a' + (i % 26) as u8) as char);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    while s.len() < 2 {
        s.insert(0, 'a');
    }
    format!("{prefix}{s}")
}

fn token_codebook<R: Rng + ?Sized>(
    prototypes: &Mat,
    tokens_per_class: usize,
    background: usize,
    token_noise: f64,
    rng: &mut R,
) -> Result<Codebook> {
    let (classes, d) = prototypes.dim();
    let total = classes * tokens_per_class + background;
    let mut tokens = Vec::with_capacity(total);
    let mut emb = Mat::zeros((total, d));
    let mut row = 0;
    for c in 0..classes {
        for t in 0..tokens_per_class {
            tokens.push(format!("{}{}", CLASS_NAMES[c % CLASS_NAMES.len()], letter_name("", t)));
            for j in 0..d {
                emb[[row, j]] = prototypes[[c, j]] + token_noise * gaussian(rng) / (d as f64).sqrt();
            }
            row += 1;
        }
    }
    let bg = unit_rows(background, d, rng);
    for b in 0..background {
        tokens.push(letter_name("filler", b));
        emb.row_mut(row).assign(&bg.row(b));
        row += 1;
    }
    Codebook::new(tokens, emb, json!({"source": "synthetic"}))
}

/// Builds the planted-partition graph described by `config`.
pub fn planted_tag(config: &SyntheticConfig) -> Result<SyntheticTag> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let classes = config.num_classes();
    let d = config.feature_dim;
    let types = unit_rows(config.types_per_block, d, &mut rng);
    let blocks = unit_rows(config.num_blocks, d, &mut rng);
    let block = |c: usize| c / config.types_per_block;
    let prototypes = Mat::from_shape_fn((classes, d), |(c, j)| {
        types[[c % config.types_per_block, j]] + config.block_signal * blocks[[block(c), j]]
    });
    let n = config.num_nodes;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let scale = config.noise;
    let features = Mat::from_shape_fn((n, d), |(i, j)| prototypes[[labels[i], j]] + scale * gaussian(&mut rng));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] {
                config.p_class
            } else if block(labels[i]) == block(labels[j]) {
                config.p_block
            } else {
                config.p_cross
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let class_names: Vec<String> = (0..classes)
        .map(|c| CLASS_NAMES[c % CLASS_NAMES.len()].to_string())
        .collect();
    let texts = (0..n)
        .map(|i| Some(format!("synthetic document {i} about {}", class_names[labels[i]])))
        .collect();
    let graph = TextAttributedGraph::new(
        "synthetic",
        features,
        &edges,
        Some(labels.into_iter().map(Some).collect()),
        class_names.clone(),
    )?
    .with_texts(texts)?;
    let codebook = token_codebook(
        &prototypes,
        config.tokens_per_class,
        config.background_tokens,
        config.token_noise,
        &mut rng,
    )?;
    let explanations = class_names.iter().map(|c| format!("Documents about {c}.")).collect();
    let class_codebook = ClassCodebook::new(class_names, explanations, prototypes.clone())?;
    Ok(SyntheticTag {
        graph,
        codebook,
        class_codebook,
        prototypes,
    })
}

/// Three classes whose prototypes (and class-codebook rows) are the first
/// three standard basis vectors; each node's features are its prototype
/// plus small noise on the remaining axes.
pub fn orthogonal_tag(nodes_per_class: usize, feature_dim: usize, seed: u64) -> Result<SyntheticTag> {
    axis_tag(nodes_per_class, feature_dim, 0.0, 0.0, seed)
}

/// Like [`orthogonal_tag`], but every node outside class 0 is shifted by
/// `skew` along the first class axis and all feature dimensions carry
/// Gaussian noise of scale `noise`. The classes stay linearly separable
/// for small noise while nearest-class-row matching starts to confuse
/// class 0 with the rest.
pub fn skewed_tag(
    nodes_per_class: usize,
    feature_dim: usize,
    skew: f64,
    noise: f64,
    seed: u64,
) -> Result<SyntheticTag> {
    axis_tag(nodes_per_class, feature_dim, skew, noise, seed)
}

fn axis_tag(nodes_per_class: usize, feature_dim: usize, skew: f64, noise: f64, seed: u64) -> Result<SyntheticTag> {
    let classes = 3;
    assert!(feature_dim > classes, "feature_dim must exceed the class count");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes = Mat::from_shape_fn((classes, feature_dim), |(c, j)| if c == j { 1.0 } else { 0.0 });
    let n = nodes_per_class * classes;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let features = Mat::from_shape_fn((n, feature_dim), |(i, j)| {
        let base = if j == labels[i] {
            1.0
        } else if j >= classes {
            0.05 * gaussian(&mut rng)
        } else if j == 0 {
            skew
        } else {
            0.0
        };
        if noise > 0.0 {
            base + noise * gaussian(&mut rng)
        } else {
            base
        }
    });
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] && rng.random::<f64>() < 0.1 {
                edges.push((i, j));
            }
        }
    }
    let class_names: Vec<String> = CLASS_NAMES[..classes].iter().map(|s| s.to_string()).collect();
    let graph = TextAttributedGraph::new(
        "orthogonal",
        features,
        &edges,
        Some(labels.into_iter().map(Some).collect()),
        class_names.clone(),
    )?;
    let codebook = token_codebook(&prototypes, 4, 12, 0.0, &mut rng)?;
    let explanations = class_names.iter().map(|c| format!("Documents about {c}.")).collect();
    let class_codebook = ClassCodebook::new(class_names, explanations, prototypes.clone())?;
    Ok(SyntheticTag {
        graph,
        codebook,
        class_codebook,
        prototypes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_graph_is_homophilous_and_seeded() {
        let cfg = SyntheticConfig::default();
        let a = planted_tag(&cfg).unwrap();
        let b = planted_tag(&cfg).unwrap();
        assert_eq!(a.graph.edges(), b.graph.edges());
        assert_eq!(a.graph.num_nodes(), 300);
        let same = a
            .graph
            .edges()
            .iter()
            .filter(|&&(u, v)| a.graph.label(u) == a.graph.label(v))
            .count();
        assert!(same * 2 > a.graph.edges().len());
        assert_eq!(a.codebook.len(), 4 * 6 + 40);
        assert_eq!(a.class_codebook.len(), 4);
    }

    #[test]
    fn letter_names_are_alphabetic() {
        assert_eq!(letter_name("x", 0), "xaa");
        assert_eq!(letter_name("", 27), "bb");
    }
}
