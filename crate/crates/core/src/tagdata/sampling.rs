use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TextAttributedGraph;
use crate::autodiff::Mat;
use crate::error::{Result, StagError};

/// Local neighborhood of a center node, reindexed so the center is row 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub node_ids: Vec<usize>,
    pub local_edges: Vec<(usize, usize)>,
    pub features: Mat,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }
}

/// Fixed-fanout neighbor sampling: at every hop each frontier node keeps at
/// most `fanout` of its not-yet-visited neighbors, drawn uniformly without
/// replacement. The returned subgraph is induced on the visited nodes.
pub fn sample_subgraph<R: Rng + ?Sized>(
    graph: &TextAttributedGraph,
    center: usize,
    num_hops: usize,
    fanout: usize,
    rng: &mut R,
) -> Result<Subgraph> {
    if center >= graph.num_nodes() {
        return Err(StagError::OutOfRange {
            context: "subgraph center".into(),
            index: center,
            bound: graph.num_nodes(),
        });
    }
    if num_hops == 0 || fanout == 0 {
        return Err(StagError::invalid("num_hops and fanout must be at least 1"));
    }
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut node_ids = vec![center];
    local.insert(center, 0);
    let mut frontier = vec![center];
    for _ in 0..num_hops {
        let mut next = Vec::new();
        for &u in &frontier {
            let fresh: Vec<usize> = graph
                .neighbors(u)
                .iter()
                .copied()
                .filter(|v| !local.contains_key(v))
                .collect();
            let picked: Vec<usize> = if fresh.len() <= fanout {
                fresh
            } else {
                let mut idx = index::sample(rng, fresh.len(), fanout).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| fresh[i]).collect()
            };
            for v in picked {
                local.insert(v, node_ids.len());
                node_ids.push(v);
                next.push(v);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }

    let mut local_edges = Vec::new();
    for (li, &u) in node_ids.iter().enumerate() {
        for v in graph.neighbors(u) {
            if let Some(&lj) = local.get(v) {
                if li < lj {
                    local_edges.push((li, lj));
                }
            }
        }
    }
    local_edges.sort_unstable();
    let features = graph.features().select(ndarray::Axis(0), &node_ids);
    Ok(Subgraph {
        node_ids,
        local_edges,
        features,
    })
}

/// Local node indices replaced by the mask token.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub masked_ids: Vec<usize>,
    pub mask_token: Vec<f64>,
}

/// Number of nodes masked at `rate` out of `n`: round half up, at least one
/// whenever the rate is positive.
pub fn mask_count(rate: f64, n: usize) -> usize {
    if rate <= 0.0 || n == 0 {
        return 0;
    }
    let c = (rate * n as f64 + 0.5).floor() as usize;
    c.clamp(1, n)
}

pub fn mask_nodes<R: Rng + ?Sized>(
    subgraph: &Subgraph,
    mask_rate: f64,
    mask_token: &[f64],
    rng: &mut R,
) -> Result<(Mat, MaskSpec)> {
    if !(0.0..=1.0).contains(&mask_rate) {
        return Err(StagError::invalid(format!("mask rate {mask_rate} outside [0, 1]")));
    }
    let d = subgraph.features.ncols();
    if mask_token.len() != d {
        return Err(StagError::dims("mask token", d, mask_token.len()));
    }
    let n = subgraph.len();
    let count = mask_count(mask_rate, n);
    let mut masked_ids = index::sample(rng, n, count).into_vec();
    masked_ids.sort_unstable();
    let mut corrupted = subgraph.features.clone();
    let token = ndarray::ArrayView1::from(mask_token);
    for &i in &masked_ids {
        corrupted.row_mut(i).assign(&token);
    }
    Ok((
        corrupted,
        MaskSpec {
            masked_ids,
            mask_token: mask_token.to_vec(),
        },
    ))
}

/// An N-way k-shot episode. Class indices in `support` and `query` refer to
/// positions in `classes`, not to the graph's label ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotTask {
    pub n_way: usize,
    pub k_shot: usize,
    pub classes: Vec<usize>,
    pub class_names: Vec<String>,
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
}

/// Samples an episode: `n_way` classes uniformly without replacement among
/// those with at least `k_shot + q_per_class` labeled nodes, then disjoint
/// support and query nodes per class. `k_shot = 0` yields a zero-shot episode.
pub fn sample_task<R: Rng + ?Sized>(
    graph: &TextAttributedGraph,
    n_way: usize,
    k_shot: usize,
    q_per_class: usize,
    rng: &mut R,
) -> Result<FewShotTask> {
    if graph.labels().is_none() {
        return Err(StagError::invalid("episode sampling requires labels"));
    }
    if n_way == 0 {
        return Err(StagError::invalid("n_way must be at least 1"));
    }
    let need = k_shot + q_per_class;
    let by_class = graph.nodes_by_class();
    let eligible: Vec<usize> = (0..by_class.len())
        .filter(|&c| by_class[c].len() >= need && !by_class[c].is_empty())
        .collect();
    if eligible.len() < n_way {
        return Err(StagError::invalid(format!(
            "{n_way}-way task needs {n_way} classes with at least {need} nodes, found {}",
            eligible.len()
        )));
    }
    let mut classes: Vec<usize> = index::sample(rng, eligible.len(), n_way)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    classes.shuffle(rng);

    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut query = Vec::with_capacity(n_way * q_per_class);
    for (pos, &c) in classes.iter().enumerate() {
        let nodes = &by_class[c];
        let picked = index::sample(rng, nodes.len(), need).into_vec();
        for (i, &p) in picked.iter().enumerate() {
            if i < k_shot {
                support.push((nodes[p], pos));
            } else {
                query.push((nodes[p], pos));
            }
        }
    }
    let class_names = classes.iter().map(|&c| graph.class_names()[c].clone()).collect();
    Ok(FewShotTask {
        n_way,
        k_shot,
        classes,
        class_names,
        support,
        query,
    })
}
