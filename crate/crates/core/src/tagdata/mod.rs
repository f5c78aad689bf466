//! Text-attributed graphs: on-disk format, local subgraph sampling, node
//! masking and episodic task sampling.
//!
//! A dataset directory holds
//!
//! * `meta.json` with `name`, `num_nodes`, `feature_dim` and `class_names`,
//! * `edges.tsv` with two tab-separated 0-based node ids per line,
//! * `features.f32`, `num_nodes × feature_dim` little-endian `f32`, row-major,
//! * optionally `labels.tsv` (`node_id<TAB>class_index`) and `texts.jsonl`
//!   (`{"id": int, "text": str}` per line).

mod sampling;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Result, StagError};
use crate::tensor_io;

pub use sampling::{mask_count, mask_nodes, sample_subgraph, sample_task, FewShotTask, MaskSpec, Subgraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_nodes: usize,
    pub feature_dim: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
}

/// An undirected graph whose nodes carry precomputed text-embedding features.
///
/// Edges are stored once each as `(min, max)`, sorted, without self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct TextAttributedGraph {
    name: String,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Mat,
    labels: Option<Vec<Option<usize>>>,
    class_names: Vec<String>,
    texts: Option<Vec<Option<String>>>,
}

fn canonical_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        for v in [a, b] {
            if v >= num_nodes {
                return Err(StagError::OutOfRange {
                    context: "edge endpoint".into(),
                    index: v,
                    bound: num_nodes,
                });
            }
        }
        if a != b {
            out.push((a.min(b), a.max(b)));
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

impl TextAttributedGraph {
    /// Builds a validated graph. Directed or duplicated edges are symmetrized
    /// and collapsed.
    pub fn new(
        name: impl Into<String>,
        features: Mat,
        edges: &[(usize, usize)],
        labels: Option<Vec<Option<usize>>>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let num_nodes = features.nrows();
        if features.ncols() == 0 {
            return Err(StagError::invalid("feature dimension must be positive"));
        }
        let edges = canonical_edges(num_nodes, edges)?;
        if let Some(labels) = &labels {
            if labels.len() != num_nodes {
                return Err(StagError::dims("labels", num_nodes, labels.len()));
            }
            for &l in labels.iter().flatten() {
                if l >= class_names.len() {
                    return Err(StagError::OutOfRange {
                        context: "class label".into(),
                        index: l,
                        bound: class_names.len(),
                    });
                }
            }
        }
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(TextAttributedGraph {
            name: name.into(),
            edges,
            neighbors,
            features,
            labels,
            class_names,
            texts: None,
        })
    }

    pub fn with_texts(mut self, texts: Vec<Option<String>>) -> Result<Self> {
        if texts.len() != self.num_nodes() {
            return Err(StagError::dims("texts", self.num_nodes(), texts.len()));
        }
        self.texts = Some(texts);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l[node])
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn texts(&self) -> Option<&[Option<String>]> {
        self.texts.as_deref()
    }

    /// Nodes grouped by class label.
    pub fn nodes_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_names.len()];
        if let Some(labels) = &self.labels {
            for (node, l) in labels.iter().enumerate() {
                if let Some(l) = l {
                    out[*l].push(node);
                }
            }
        }
        out
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            num_nodes: self.num_nodes(),
            feature_dim: self.feature_dim(),
            class_names: self.class_names.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TextLine {
    id: usize,
    text: String,
}

fn parse_usize(s: &str, what: &str, line: usize) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|e| StagError::parse(what, format!("line {}: {e}", line + 1)))
}

pub fn load_dataset(dir: &Path) -> Result<TextAttributedGraph> {
    let meta: DatasetMeta = tensor_io::read_json(&dir.join("meta.json"))?;

    let edges_path = dir.join("edges.tsv");
    let text = fs::read_to_string(&edges_path).map_err(|e| StagError::io(&edges_path, e))?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(StagError::parse(
                "edges.tsv",
                format!("line {}: expected two tab-separated ids", i + 1),
            ));
        };
        edges.push((parse_usize(a, "edges.tsv", i)?, parse_usize(b, "edges.tsv", i)?));
    }

    let features = tensor_io::read_matrix(&dir.join("features.f32"), meta.num_nodes, meta.feature_dim)?;

    let labels_path = dir.join("labels.tsv");
    let labels = if labels_path.exists() {
        let text = fs::read_to_string(&labels_path).map_err(|e| StagError::io(&labels_path, e))?;
        let mut labels = vec![None; meta.num_nodes];
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (node, class) = line
                .split_once('\t')
                .ok_or_else(|| StagError::parse("labels.tsv", format!("line {}", i + 1)))?;
            let node = parse_usize(node, "labels.tsv", i)?;
            if node >= meta.num_nodes {
                return Err(StagError::OutOfRange {
                    context: "labels.tsv node id".into(),
                    index: node,
                    bound: meta.num_nodes,
                });
            }
            labels[node] = Some(parse_usize(class, "labels.tsv", i)?);
        }
        Some(labels)
    } else {
        None
    };

    let graph = TextAttributedGraph::new(meta.name, features, &edges, labels, meta.class_names)?;

    let texts_path = dir.join("texts.jsonl");
    if texts_path.exists() {
        let text = fs::read_to_string(&texts_path).map_err(|e| StagError::io(&texts_path, e))?;
        let mut texts = vec![None; graph.num_nodes()];
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TextLine = serde_json::from_str(line)
                .map_err(|e| StagError::parse("texts.jsonl", format!("line {}: {e}", i + 1)))?;
            if entry.id >= texts.len() {
                return Err(StagError::OutOfRange {
                    context: "texts.jsonl id".into(),
                    index: entry.id,
                    bound: texts.len(),
                });
            }
            texts[entry.id] = Some(entry.text);
        }
        return graph.with_texts(texts);
    }
    Ok(graph)
}

pub fn save_dataset(graph: &TextAttributedGraph, dir: &Path) -> Result<()> {
    tensor_io::ensure_dir(dir)?;
    tensor_io::write_json(&dir.join("meta.json"), &graph.meta())?;

    let mut edges = String::new();
    for (a, b) in &graph.edges {
        edges.push_str(&format!("{a}\t{b}\n"));
    }
    let p = dir.join("edges.tsv");
    fs::write(&p, edges).map_err(|e| StagError::io(&p, e))?;

    tensor_io::write_matrix(&dir.join("features.f32"), &graph.features)?;

    if let Some(labels) = &graph.labels {
        let mut out = String::new();
        for (node, l) in labels.iter().enumerate() {
            if let Some(l) = l {
                out.push_str(&format!("{node}\t{l}\n"));
            }
        }
        let p = dir.join("labels.tsv");
        fs::write(&p, out).map_err(|e| StagError::io(&p, e))?;
    }
    if let Some(texts) = &graph.texts {
        let mut out = String::new();
        for (id, t) in texts.iter().enumerate() {
            if let Some(text) = t {
                let line = serde_json::to_string(&TextLine { id, text: text.clone() })
                    .map_err(|e| StagError::parse("texts.jsonl", e))?;
                out.push_str(&line);
                out.push('\n');
            }
        }
        let p = dir.join("texts.jsonl");
        fs::write(&p, out).map_err(|e| StagError::io(&p, e))?;
    }
    Ok(())
}
