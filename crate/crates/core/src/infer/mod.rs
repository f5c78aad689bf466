//! Inference on frozen fused features: LLM prompting over top-k tokens, a
//! deterministic offline stand-in for the LLM, and the non-LLM paths
//! (linear probing, link prediction, edge and subgraph classification).

mod llm;
mod prompt;

use ndarray::{Array1, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Result, StagError};
use crate::linalg::{self, cosine};

pub use llm::{
    llm_link_predict, parse_reply, parse_yes_no, stub_classify, AuditLog, AuditRecord, ChatClient, Classification,
    LlmConfig, NodeClassifier, StubClassifier,
};
pub use prompt::{fewshot_bundle, render_fewshot_prompt, render_link_prompt, render_zeroshot_prompt, PromptBundle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub weight_decay: f64,
    /// Step size; when absent, `2 / mean‖x‖²`, the inverse of a bound on
    /// the loss curvature.
    pub learning_rate: Option<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 500,
            weight_decay: 1e-4,
            learning_rate: None,
        }
    }
}

/// Multinomial logistic regression `ŷ = argmax softmax(W z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// `N × d`.
    pub weights: Mat,
    pub class_names: Vec<String>,
}

/// Full-batch gradient descent on the mean cross-entropy plus
/// `½·weight_decay·‖W‖²`, starting from zero weights.
pub fn train_linear_probe(
    features: &Mat,
    labels: &[usize],
    class_names: &[String],
    config: &ProbeConfig,
) -> Result<LinearProbe> {
    let n_classes = class_names.len();
    let (n, d) = features.dim();
    if labels.len() != n {
        return Err(StagError::dims("probe labels", n, labels.len()));
    }
    if n_classes == 0 {
        return Err(StagError::invalid("probe needs at least one class"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(StagError::OutOfRange {
            context: "probe label".into(),
            index: bad,
            bound: n_classes,
        });
    }
    let mut seen = vec![false; n_classes];
    for &l in labels {
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(StagError::Degenerate(format!(
            "class {} has no training examples",
            class_names[missing]
        )));
    }
    let mut weights = Mat::zeros((n_classes, d));
    if n_classes == 1 {
        return Ok(LinearProbe {
            weights,
            class_names: class_names.to_vec(),
        });
    }
    let mean_sq = features.rows().into_iter().map(|r| r.dot(&r)).sum::<f64>() / n as f64;
    let lr = config
        .learning_rate
        .unwrap_or_else(|| 2.0 / (mean_sq + config.weight_decay).max(1e-12));
    let mut onehot = Mat::zeros((n, n_classes));
    for (i, &l) in labels.iter().enumerate() {
        onehot[[i, l]] = 1.0;
    }
    for _ in 0..config.steps {
        let mut probs = features.dot(&weights.t());
        for mut row in probs.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        probs -= &onehot;
        let mut grad = probs.t().dot(features) / n as f64;
        grad.scaled_add(config.weight_decay, &weights);
        weights.scaled_add(-lr, &grad);
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(StagError::NonFinite("linear probe weights".into()));
    }
    Ok(LinearProbe {
        weights,
        class_names: class_names.to_vec(),
    })
}

pub fn predict_linear(probe: &LinearProbe, z: ArrayView1<f64>) -> Result<usize> {
    if z.len() != probe.weights.ncols() {
        return Err(StagError::dims("probe input", probe.weights.ncols(), z.len()));
    }
    let scores = probe.weights.dot(&z);
    Ok(linalg::argmax(scores.as_slice().expect("contiguous")))
}

pub fn predict_linear_batch(probe: &LinearProbe, z: &Mat) -> Result<Vec<usize>> {
    z.rows().into_iter().map(|r| predict_linear(probe, r)).collect()
}

/// Fraction of rows of `z` the probe labels correctly.
pub fn probe_accuracy(probe: &LinearProbe, z: &Mat, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(StagError::invalid("accuracy over zero examples"));
    }
    let preds = predict_linear_batch(probe, z)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

pub const DEFAULT_LINK_THRESHOLD: f64 = 0.5;

/// An edge is predicted when `cos(z_u, z_v) > threshold`.
pub fn link_predict(z_u: ArrayView1<f64>, z_v: ArrayView1<f64>, threshold: f64) -> Result<bool> {
    Ok(cosine(z_u, z_v)? > threshold)
}

/// `[z_head ; z_tail]`.
pub fn edge_features(z_head: ArrayView1<f64>, z_tail: ArrayView1<f64>) -> Array1<f64> {
    ndarray::concatenate(Axis(0), &[z_head, z_tail]).expect("1-d concatenation")
}

pub fn edge_classify(z_head: ArrayView1<f64>, z_tail: ArrayView1<f64>, probe: &LinearProbe) -> Result<usize> {
    if z_head.len() + z_tail.len() != probe.weights.ncols() {
        return Err(StagError::dims(
            "edge features",
            probe.weights.ncols(),
            z_head.len() + z_tail.len(),
        ));
    }
    predict_linear(probe, edge_features(z_head, z_tail).view())
}

/// Mean of the per-node rows of `z_f`.
pub fn subgraph_embed(z_f: &Mat) -> Result<Array1<f64>> {
    z_f.mean_axis(Axis(0))
        .ok_or_else(|| StagError::invalid("cannot embed an empty subgraph"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn probe_separates_two_classes() {
        let x = array![[1.0, 0.1], [0.9, -0.2], [-1.0, 0.0], [-0.8, 0.3]];
        let y = [0, 0, 1, 1];
        let probe = train_linear_probe(&x, &y, &names(2), &ProbeConfig::default()).unwrap();
        assert_eq!(probe_accuracy(&probe, &x, &y).unwrap(), 1.0);
    }

    #[test]
    fn single_class_probe_and_degenerate_input() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let probe = train_linear_probe(&x, &[0, 0], &names(1), &ProbeConfig::default()).unwrap();
        assert_eq!(predict_linear(&probe, array![-5.0, 1.0].view()).unwrap(), 0);
        assert!(train_linear_probe(&x, &[0, 0], &names(2), &ProbeConfig::default()).is_err());
        assert!(train_linear_probe(&x, &[0, 3], &names(2), &ProbeConfig::default()).is_err());
    }

    #[test]
    fn link_examples() {
        let z = array![0.3, -0.4];
        assert!(link_predict(z.view(), z.view(), 0.5).unwrap());
        assert!(!link_predict(z.view(), (-&z).view(), 0.5).unwrap());
        assert!(link_predict(z.view(), array![0.0, 0.0].view(), 0.5).is_err());
    }

    #[test]
    fn edge_concatenation_is_head_then_tail() {
        let f = edge_features(array![1.0, 2.0].view(), array![3.0].view());
        assert_eq!(f.to_vec(), vec![1.0, 2.0, 3.0]);
        let probe = LinearProbe {
            weights: array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            class_names: names(2),
        };
        let a = array![1.0, 0.0];
        let b = array![0.0, 0.0];
        assert_eq!(edge_classify(a.view(), b.view(), &probe).unwrap(), 0);
        assert_eq!(edge_classify(b.view(), a.view(), &probe).unwrap(), 1);
        assert!(edge_classify(a.view(), array![1.0].view(), &probe).is_err());
    }

    #[test]
    fn separable_relations_are_recovered() {
        let heads = array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]];
        let tails = array![[0.0, 1.0], [0.1, 0.8], [1.0, 0.0], [0.9, 0.2]];
        let x = Mat::from_shape_fn((4, 4), |(i, j)| if j < 2 { heads[[i, j]] } else { tails[[i, j - 2]] });
        let y = [0, 0, 1, 1];
        let probe = train_linear_probe(&x, &y, &names(2), &ProbeConfig::default()).unwrap();
        for i in 0..4 {
            assert_eq!(edge_classify(heads.row(i), tails.row(i), &probe).unwrap(), y[i]);
        }
    }

    #[test]
    fn subgraph_mean_pool() {
        assert_eq!(
            subgraph_embed(&array![[1.0, 0.0], [0.0, 1.0]]).unwrap().to_vec(),
            vec![0.5, 0.5]
        );
        assert_eq!(
            subgraph_embed(&array![[2.0, 3.0], [2.0, 3.0]]).unwrap().to_vec(),
            vec![2.0, 3.0]
        );
        let a = subgraph_embed(&array![[1.0, 5.0], [2.0, 0.5], [0.0, 1.0]]).unwrap();
        let b = subgraph_embed(&array![[0.0, 1.0], [1.0, 5.0], [2.0, 0.5]]).unwrap();
        assert!((&a - &b).iter().all(|x| x.abs() < 1e-15));
        assert!(subgraph_embed(&Mat::zeros((0, 2))).is_err());
    }
}
