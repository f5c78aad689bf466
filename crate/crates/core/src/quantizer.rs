//! Soft assignment of vectors to a frozen codebook.
//!
//! `attn(z) = softmax([cos(z, e_k)]_k / τ)` is a distribution over the `K`
//! codewords and `z_q = Eᵀ·attn(z)` is the corresponding convex combination.
//! The hard variant replaces `attn` with a one-hot at the most similar
//! codeword.

use ndarray::{Array1, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::codebook::Codebook;
use crate::error::{Result, StagError};
use crate::linalg::{self, cosine};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerConfig {
    pub tau_sa: f64,
    pub beta: f64,
    pub top_k: usize,
    pub hard_mode: bool,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            tau_sa: 0.1,
            beta: 1.9,
            top_k: 13,
            hard_mode: false,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_sa > 0.0) {
            return Err(StagError::invalid("tau_sa must be positive"));
        }
        if !(self.beta > 0.0 && self.beta <= 2.0) {
            return Err(StagError::invalid("beta must lie in (0, 2]"));
        }
        if self.top_k == 0 {
            return Err(StagError::invalid("top_k must be at least 1"));
        }
        Ok(())
    }

    pub fn validate_for(&self, codebook: &Codebook) -> Result<()> {
        self.validate()?;
        if self.top_k > codebook.len() {
            return Err(StagError::invalid(format!(
                "top_k {} exceeds codebook size {}",
                self.top_k,
                codebook.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationResult {
    pub attn: Vec<f64>,
    pub z_q: Vec<f64>,
    pub token_indices: Option<Vec<usize>>,
}

fn check_dim(z: ArrayView1<f64>, codebook: &Codebook) -> Result<()> {
    if z.len() != codebook.dim() {
        return Err(StagError::dims("vector vs codebook dim", codebook.dim(), z.len()));
    }
    if linalg::norm(z) == 0.0 {
        return Err(StagError::Degenerate("zero-norm vector cannot be assigned".into()));
    }
    Ok(())
}

pub fn soft_assign(z: ArrayView1<f64>, codebook: &Codebook, tau_sa: f64) -> Result<Vec<f64>> {
    check_dim(z, codebook)?;
    let n = linalg::norm(z);
    let logits: Vec<f64> = codebook
        .unit_embeddings()
        .dot(&z)
        .iter()
        .map(|&s| s / n / tau_sa)
        .collect();
    Ok(linalg::softmax(&logits))
}

/// [`soft_assign`] for every row of `z` at once (`B × K`).
pub fn soft_assign_batch(z: &Mat, codebook: &Codebook, tau_sa: f64) -> Result<Mat> {
    if z.ncols() != codebook.dim() {
        return Err(StagError::dims("batch vs codebook dim", codebook.dim(), z.ncols()));
    }
    let norms: Array1<f64> = z.map_axis(Axis(1), |r| linalg::norm(r));
    if norms.iter().any(|&n| n == 0.0) {
        return Err(StagError::Degenerate("zero-norm row in batch".into()));
    }
    let mut logits = z.dot(&codebook.unit_embeddings().t());
    for (mut row, n) in logits.rows_mut().into_iter().zip(norms.iter()) {
        let scale = 1.0 / (n * tau_sa);
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x)) * scale;
        row.mapv_inplace(|x| (x * scale - max).exp());
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    Ok(logits)
}

pub fn quantize(attn: &[f64], codebook: &Codebook) -> Result<Vec<f64>> {
    if attn.len() != codebook.len() {
        return Err(StagError::dims("attention length", codebook.len(), attn.len()));
    }
    Ok(codebook.embeddings().t().dot(&ArrayView1::from(attn)).to_vec())
}

/// `attn · E`, row per input (`B × d`).
pub fn quantize_batch(attn: &Mat, codebook: &Codebook) -> Result<Mat> {
    if attn.ncols() != codebook.len() {
        return Err(StagError::dims("attention length", codebook.len(), attn.ncols()));
    }
    Ok(attn.dot(codebook.embeddings()))
}

/// One-hot at the most cosine-similar codeword, ties to the lowest index.
pub fn hard_assign(z: ArrayView1<f64>, codebook: &Codebook) -> Result<Vec<f64>> {
    check_dim(z, codebook)?;
    let k = linalg::nearest_by_cosine(z, codebook.unit_embeddings())?;
    let mut out = vec![0.0; codebook.len()];
    out[k] = 1.0;
    Ok(out)
}

/// `β·(1 − cos(z_f, z_q))`. Under differentiation `z_q` is a constant.
pub fn commitment_loss(z_f: ArrayView1<f64>, z_q: ArrayView1<f64>, beta: f64) -> Result<f64> {
    Ok(beta * (1.0 - cosine(z_f, z_q)?))
}

/// `D_KL(p ‖ q) = Σ p·ln(p/q)`; entries with `p = 0` contribute nothing.
pub fn kl_alignment_loss(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(StagError::dims("KL operands", p.len(), q.len()));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum())
}

/// Indices of the `k` largest weights, descending, ties to the lower index.
pub fn top_k_indices(attn: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > attn.len() {
        return Err(StagError::invalid(format!("top-k {k} outside [1, {}]", attn.len())));
    }
    let mut idx: Vec<usize> = (0..attn.len()).collect();
    let cmp = |a: &usize, b: &usize| attn[*b].total_cmp(&attn[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    Ok(idx)
}

pub fn top_k_tokens(attn: &[f64], codebook: &Codebook, k: usize) -> Result<Vec<String>> {
    if attn.len() != codebook.len() {
        return Err(StagError::dims("attention length", codebook.len(), attn.len()));
    }
    Ok(top_k_indices(attn, k)?
        .into_iter()
        .map(|i| codebook.token(i).to_string())
        .collect())
}

/// Assignment, quantization and top-k tokens for one vector under `config`.
pub fn quantize_vector(
    z: ArrayView1<f64>,
    codebook: &Codebook,
    config: &QuantizerConfig,
) -> Result<QuantizationResult> {
    let attn = if config.hard_mode {
        hard_assign(z, codebook)?
    } else {
        soft_assign(z, codebook, config.tau_sa)?
    };
    let z_q = quantize(&attn, codebook)?;
    let k = if config.hard_mode { 1 } else { config.top_k };
    let token_indices = Some(top_k_indices(&attn, k.min(codebook.len()))?);
    Ok(QuantizationResult {
        attn,
        z_q,
        token_indices,
    })
}

/// Differentiable pieces used during training. `unit_t` is the constant
/// `d × K` transpose of the unit-normalized codebook.
pub(crate) mod tape_ops {
    use super::*;

    /// `cos(z_i, e_k)/τ` for every row of `z`; rows must be nonzero.
    pub fn assignment_logits(tape: &mut Tape, z: Var, unit_t: Var, tau: f64) -> Var {
        let zn = tape.row_normalize(z);
        let sims = tape.matmul(zn, unit_t);
        tape.scale(sims, 1.0 / tau)
    }

    /// Soft (or, when `hard`, one-hot) assignment and `z_q` for every row.
    pub fn assign_and_quantize(
        tape: &mut Tape,
        z: Var,
        unit_t: Var,
        codebook: Var,
        tau: f64,
        hard: bool,
    ) -> (Var, Var) {
        if hard {
            let logits = tape.value(z).dot(tape.value(unit_t));
            let mut onehot = Mat::zeros(logits.dim());
            for (i, row) in logits.rows().into_iter().enumerate() {
                onehot[[i, linalg::argmax(row.as_slice().expect("row-major"))]] = 1.0;
            }
            let attn = tape.constant(onehot);
            let zq = tape.matmul(attn, codebook);
            (attn, zq)
        } else {
            let logits = assignment_logits(tape, z, unit_t, tau);
            let attn = tape.row_softmax(logits);
            let zq = tape.matmul(attn, codebook);
            (attn, zq)
        }
    }

    /// Mean over rows of `β·(1 − cos(z_i, t_i))` for a constant target `t`
    /// (the stop-gradient of `z_q`).
    pub fn commitment_to(tape: &mut Tape, z: Var, target: Var, beta: f64) -> Var {
        let zn = tape.row_normalize(z);
        let tn = tape.row_normalize(target);
        let cos = tape.row_dot(zn, tn);
        let one_minus = {
            let neg = tape.scale(cos, -1.0);
            tape.add_const(neg, 1.0)
        };
        let m = tape.mean(one_minus);
        tape.scale(m, beta)
    }

    /// Mean over rows of `D_KL(p_i ‖ softmax(logits_i))` for a constant `p`.
    pub fn kl_to_target(tape: &mut Tape, target: &Mat, logits: Var) -> Var {
        let logq = tape.row_log_softmax(logits);
        let entropy_term: f64 = target.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum();
        let p = tape.constant(target.clone());
        let cross = tape.mul(p, logq);
        let s = tape.sum(cross);
        let neg = tape.scale(s, -1.0);
        let total = tape.add_const(neg, entropy_term);
        tape.scale(total, 1.0 / target.nrows() as f64)
    }
}
