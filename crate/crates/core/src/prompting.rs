//! Few-shot prompt tuning: a small gating network over frozen fused
//! features, trained against a class codebook, plus nearest-class inference.

use std::path::Path;

use ndarray::{Array1, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::codebook::{ClassCodebook, Codebook};
use crate::error::{Result, StagError};
use crate::linalg::{self, cosine};
use crate::optim::AdamW;
use crate::params::{glorot, ParamSet};
use crate::quantizer::{self, tape_ops};
use crate::tensor_io;

const W1: &str = "prompt.w1";
const B1: &str = "prompt.b1";
const W2: &str = "prompt.w2";
const B2: &str = "prompt.b2";
const ORDER: [&str; 4] = [W1, B1, W2, B2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTuneConfig {
    pub beta_p: f64,
    pub tau_p: f64,
    /// Temperature for quantizing `z_p` against the token codebook.
    pub tau_sa: f64,
    /// Commit to the nearest token instead of the soft mixture.
    pub hard_assignment: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: usize,
    /// Defaults to `d_x / 4`.
    pub bottleneck_dim: Option<usize>,
    pub seed: u64,
}

impl Default for PromptTuneConfig {
    fn default() -> Self {
        PromptTuneConfig {
            beta_p: 1.0,
            tau_p: 0.5,
            tau_sa: 0.1,
            hard_assignment: true,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            steps: 200,
            bottleneck_dim: None,
            seed: 0,
        }
    }
}

impl PromptTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_p > 0.0) || !(self.tau_sa > 0.0) {
            return Err(StagError::invalid("prompt temperatures must be positive"));
        }
        if !(self.beta_p >= 0.0) {
            return Err(StagError::invalid("beta_p must be nonnegative"));
        }
        if self.steps == 0 {
            return Err(StagError::invalid("prompt tuning needs at least one step"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(StagError::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Gate network `g(z) = 2·sigmoid(W2 tanh(W1 z + b1) + b2)`, a `d_x → d_b → d_x`
/// bottleneck. The output layer starts at zero, so `g ≡ 1` before tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptNetParams {
    pub input_dim: usize,
    pub bottleneck_dim: usize,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct PromptFile {
    input_dim: usize,
    bottleneck_dim: usize,
    tensors: Vec<String>,
    #[serde(default)]
    tuning: Option<PromptTuneConfig>,
}

impl PromptNetParams {
    pub fn init(input_dim: usize, bottleneck_dim: usize, seed: u64) -> Result<Self> {
        if bottleneck_dim == 0 || bottleneck_dim >= input_dim {
            return Err(StagError::invalid(format!(
                "bottleneck_dim must be in 1..{input_dim}, got {bottleneck_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.insert(W1, glorot(input_dim, bottleneck_dim, &mut rng));
        params.insert(B1, Mat::zeros((1, bottleneck_dim)));
        params.insert(W2, Mat::zeros((bottleneck_dim, input_dim)));
        params.insert(B2, Mat::zeros((1, input_dim)));
        Ok(PromptNetParams {
            input_dim,
            bottleneck_dim,
            params,
        })
    }

    /// A network whose gate is identically one.
    pub fn identity(input_dim: usize) -> Result<Self> {
        Self::init(input_dim, (input_dim / 4).max(1), 0)
    }

    fn gate_rows(&self, z: &Mat) -> Mat {
        let p = &self.params;
        let mut h = z.dot(p.get(W1).expect("w1")) + p.get(B1).expect("b1");
        h.mapv_inplace(f64::tanh);
        let mut g = h.dot(p.get(W2).expect("w2")) + p.get(B2).expect("b2");
        g.mapv_inplace(|a| 2.0 / (1.0 + (-a).exp()));
        g
    }

    /// `p(z)` for a single vector.
    pub fn gate(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(z.len())?;
        let row = z.insert_axis(Axis(0)).to_owned();
        Ok(self.gate_rows(&row).row(0).to_owned())
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.input_dim {
            return Err(StagError::dims("prompt input", self.input_dim, len));
        }
        Ok(())
    }

    /// `z_p = p(z_f) ⊙ z_f` for every row.
    pub fn forward_batch(&self, z_f: &Mat) -> Result<Mat> {
        self.check_dim(z_f.ncols())?;
        Ok(self.gate_rows(z_f) * z_f)
    }

    pub fn save(&self, dir: &Path, tuning: Option<&PromptTuneConfig>) -> Result<()> {
        tensor_io::ensure_dir(dir)?;
        let values: Vec<f32> = ORDER
            .iter()
            .flat_map(|n| self.params.get(n).expect("prompt tensor").iter().map(|&v| v as f32))
            .collect();
        tensor_io::write_f32(&dir.join("prompt.f32"), values)?;
        tensor_io::write_json(
            &dir.join("prompt_config.json"),
            &PromptFile {
                input_dim: self.input_dim,
                bottleneck_dim: self.bottleneck_dim,
                tensors: ORDER.iter().map(|s| s.to_string()).collect(),
                tuning: tuning.cloned(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let file: PromptFile = tensor_io::read_json(&dir.join("prompt_config.json"))?;
        let mut net = Self::init(file.input_dim, file.bottleneck_dim, 0)?;
        let values = tensor_io::read_f32(&dir.join("prompt.f32"))?;
        let expected: usize = ORDER.iter().map(|n| net.params.get(n).expect("tensor").len()).sum();
        if values.len() != expected {
            return Err(StagError::dims("prompt.f32 values", expected, values.len()));
        }
        let mut offset = 0;
        for name in ORDER {
            let m = net.params.get_mut(name).expect("tensor");
            for v in m.iter_mut() {
                *v = values[offset] as f64;
                offset += 1;
            }
        }
        Ok(net)
    }
}

/// `z_p = p(z_f) ⊙ z_f`.
pub fn prompt_forward(z_f: ArrayView1<f64>, params: &PromptNetParams) -> Result<Array1<f64>> {
    let g = params.gate(z_f)?;
    Ok(g * z_f)
}

/// `β_p·(1 − cos(z_p, z_q))`, with `z_q` treated as a constant.
pub fn prompt_commit_loss(z_p: ArrayView1<f64>, z_q: ArrayView1<f64>, beta_p: f64) -> Result<f64> {
    quantizer::commitment_loss(z_p, z_q, beta_p)
}

/// Class-to-class weights `cos(e_{c_a}, e_{c_b})`.
pub fn class_similarity(classes: &ClassCodebook) -> Mat {
    let u = classes.unit_embeddings();
    u.dot(&u.t())
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(StagError::dims("labels", rows, labels.len()));
    }
    if rows == 0 {
        return Err(StagError::invalid("no labeled examples"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(StagError::OutOfRange {
            context: "class label".into(),
            index: bad,
            bound: classes,
        });
    }
    Ok(())
}

/// `−(1/n) Σ_i Σ_j cos(e_{c(i)}, e_j) · log softmax_j(cos(z_{p,i}, e_j)/τ_p)`.
pub fn weighted_class_contrastive(z_p: &Mat, labels: &[usize], classes: &ClassCodebook, tau_p: f64) -> Result<f64> {
    check_labels(labels, z_p.nrows(), classes.len())?;
    if z_p.ncols() != classes.dim() {
        return Err(StagError::dims("prompted features", classes.dim(), z_p.ncols()));
    }
    let weights = class_similarity(classes);
    let unit = classes.unit_embeddings();
    let mut total = 0.0;
    for (row, &label) in z_p.rows().into_iter().zip(labels) {
        let n = linalg::norm(row);
        if n == 0.0 {
            return Err(StagError::Degenerate("zero-norm prompted feature".into()));
        }
        let logits: Vec<f64> = unit.rows().into_iter().map(|e| e.dot(&row) / n / tau_p).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for (j, l) in logits.iter().enumerate() {
            total -= weights[[label, j]] * (l - lse);
        }
    }
    Ok(total / labels.len() as f64)
}

/// Index of the most cosine-similar class row; ties go to the lower index.
pub fn classify_by_class_codebook(z: ArrayView1<f64>, classes: &ClassCodebook) -> Result<usize> {
    linalg::nearest_by_cosine(z, classes.unit_embeddings())
}

/// Fraction of rows of `z` whose nearest class matches `labels`.
pub fn class_codebook_accuracy(z: &Mat, labels: &[usize], classes: &ClassCodebook) -> Result<f64> {
    check_labels(labels, z.nrows(), classes.len())?;
    let mut correct = 0;
    for (row, &l) in z.rows().into_iter().zip(labels) {
        if classify_by_class_codebook(row, classes)? == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Quantization targets for the commitment term, one row per input row.
fn commit_targets(z_p: &Mat, codebook: &Codebook, config: &PromptTuneConfig) -> Result<Mat> {
    let attn = if config.hard_assignment {
        let mut onehot = Mat::zeros((z_p.nrows(), codebook.len()));
        for (i, row) in z_p.rows().into_iter().enumerate() {
            onehot[[i, linalg::nearest_by_cosine(row, codebook.unit_embeddings())?]] = 1.0;
        }
        onehot
    } else {
        quantizer::soft_assign_batch(z_p, codebook, config.tau_sa)?
    };
    quantizer::quantize_batch(&attn, codebook)
}

/// Total tuning objective (commitment plus weighted contrast) for `net` on
/// the given frozen features.
pub fn prompt_objective(
    net: &PromptNetParams,
    z_f: &Mat,
    labels: &[usize],
    codebook: &Codebook,
    classes: &ClassCodebook,
    config: &PromptTuneConfig,
) -> Result<f64> {
    let z_p = net.forward_batch(z_f)?;
    let z_q = commit_targets(&z_p, codebook, config)?;
    let mut commit = 0.0;
    for (p, q) in z_p.rows().into_iter().zip(z_q.rows()) {
        commit += prompt_commit_loss(p, q, config.beta_p)?;
    }
    let contrast = weighted_class_contrastive(&z_p, labels, classes, config.tau_p)?;
    Ok(commit / z_p.nrows() as f64 + contrast)
}

fn record_gate(tape: &mut Tape, net: &ParamSet, z: Var) -> (Var, crate::params::BoundParams) {
    let bound = net.record(tape, true);
    let h = tape.matmul(z, bound.var(W1));
    let h = tape.add_row(h, bound.var(B1));
    let h = tape.tanh(h);
    let a = tape.matmul(h, bound.var(W2));
    let a = tape.add_row(a, bound.var(B2));
    let s = tape.sigmoid(a);
    (tape.scale(s, 2.0), bound)
}

/// Trains a prompt network on frozen support features `z_f` with class
/// indices `labels` into `classes`. Only the returned network changes.
pub fn tune_prompt(
    z_f: &Mat,
    labels: &[usize],
    codebook: &Codebook,
    classes: &ClassCodebook,
    config: &PromptTuneConfig,
) -> Result<PromptNetParams> {
    config.validate()?;
    check_labels(labels, z_f.nrows(), classes.len())?;
    let d = z_f.ncols();
    if d != classes.dim() || d != codebook.dim() {
        return Err(StagError::dims("support features", classes.dim(), d));
    }
    let mut seen = vec![false; classes.len()];
    for &l in labels {
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(StagError::invalid(format!(
            "class {} has no support examples",
            classes.class_names()[missing]
        )));
    }
    let bottleneck = config.bottleneck_dim.unwrap_or((d / 4).max(1));
    let mut net = PromptNetParams::init(d, bottleneck, config.seed)?;
    let mut weights = Mat::zeros((labels.len(), classes.len()));
    let sim = class_similarity(classes);
    for (i, &l) in labels.iter().enumerate() {
        weights.row_mut(i).assign(&sim.row(l));
    }
    let class_t = classes.unit_embeddings().t().to_owned();
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let scale = -1.0 / labels.len() as f64;
    for _ in 0..config.steps {
        let mut tape = Tape::new();
        let z = tape.constant(z_f.clone());
        let (gate, bound) = record_gate(&mut tape, &net.params, z);
        let z_p = tape.mul(gate, z);
        let targets = commit_targets(tape.value(z_p), codebook, config)?;
        let target = tape.constant(targets);
        let commit = tape_ops::commitment_to(&mut tape, z_p, target, config.beta_p);
        let ct = tape.constant(class_t.clone());
        let logits = tape_ops::assignment_logits(&mut tape, z_p, ct, config.tau_p);
        let logp = tape.row_log_softmax(logits);
        let w = tape.constant(weights.clone());
        let weighted = tape.mul(w, logp);
        let s = tape.sum(weighted);
        let contrast = tape.scale(s, scale);
        let total = tape.add(commit, contrast);
        if !tape.scalar(total).is_finite() {
            return Err(StagError::NonFinite("prompt tuning objective".into()));
        }
        let mut grads = tape.backward(total);
        let g = bound.gradients(&tape, &mut grads)?;
        opt.step(&mut net.params, &g);
    }
    Ok(net)
}

/// Top-`k` tokens of `z_p` against the token codebook, for prompting an LLM
/// after tuning.
pub fn prompted_tokens(
    z_f: ArrayView1<f64>,
    net: &PromptNetParams,
    codebook: &Codebook,
    tau_sa: f64,
    k: usize,
) -> Result<Vec<String>> {
    let z_p = prompt_forward(z_f, net)?;
    if linalg::norm(z_p.view()) == 0.0 {
        return Err(StagError::Degenerate("prompted feature has zero norm".into()));
    }
    let attn = quantizer::soft_assign(z_p.view(), codebook, tau_sa)?;
    quantizer::top_k_tokens(&attn, codebook, k)
}

/// Cosine between `z_p` and each class row.
pub fn class_scores(z: ArrayView1<f64>, classes: &ClassCodebook) -> Result<Vec<f64>> {
    classes.embeddings().rows().into_iter().map(|e| cosine(z, e)).collect()
}
