//! Dual-branch self-supervised pre-training.
//!
//! The reconstruction branch encodes the original subgraph features, fuses,
//! quantizes and decodes them, scoring the result with the scaled cosine
//! error plus a commitment term and the KL alignment between the token
//! distributions of `x` and `z_f`. The masked branch runs the same pipeline
//! on features whose masked rows hold the learnable mask token, then scores
//! the decoded masked rows with InfoNCE against their original features.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::codebook::Codebook;
use crate::error::{Result, StagError};
use crate::gnn::{self, Activation, Batch, ModelConfig, StagModel, MASK_TOKEN};
use crate::linalg::cosine;
use crate::optim::AdamW;
use crate::params::BoundParams;
use crate::quantizer::{self, tape_ops, QuantizerConfig};
use crate::tagdata::TextAttributedGraph;
use crate::tagdata::{mask_count, sample_subgraph};
use crate::tensor_io;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mask_rate: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_subgraphs: usize,
    pub num_neg: usize,
    pub tau_c: f64,
    pub gamma: f64,
    pub lambda_kl: f64,
    pub num_hops: usize,
    pub fanout: usize,
    pub quantizer: QuantizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mask_rate: 0.53,
            learning_rate: 5.0e-5,
            weight_decay: 1.88e-6,
            epochs: 20,
            batch_subgraphs: 32,
            num_neg: 20,
            tau_c: 0.831,
            gamma: 2.0,
            lambda_kl: 1.0,
            num_hops: 2,
            fanout: 10,
            quantizer: QuantizerConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(StagError::invalid("mask_rate must lie in [0, 1]"));
        }
        if self.gamma < 1.0 {
            return Err(StagError::invalid("gamma must be at least 1"));
        }
        if !(self.tau_c > 0.0) {
            return Err(StagError::invalid("tau_c must be positive"));
        }
        if self.epochs == 0 || self.batch_subgraphs == 0 {
            return Err(StagError::invalid("epochs and batch_subgraphs must be positive"));
        }
        if !(self.lambda_kl >= 0.0) {
            return Err(StagError::invalid("lambda_kl must be nonnegative"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(StagError::invalid(
                "learning_rate must be positive and weight_decay nonnegative",
            ));
        }
        if self.num_hops == 0 || self.fanout == 0 {
            return Err(StagError::invalid("num_hops and fanout must be positive"));
        }
        self.quantizer.validate()
    }
}

/// Reference model and training settings for a named source dataset
/// (`cora_full`, `ogbn_arxiv`, `ogbn_products`), with 768-dim features.
pub fn preset(name: &str) -> Option<(ModelConfig, TrainConfig)> {
    let base = TrainConfig::default();
    let model = ModelConfig::default();
    match name {
        "cora_full" => Some((model, base)),
        "ogbn_arxiv" => Some((
            ModelConfig {
                hidden_dim: 512,
                num_layers: 1,
                num_heads: 2,
                activation: Activation::Prelu,
                ..model
            },
            TrainConfig {
                mask_rate: 0.6,
                learning_rate: 2.32e-4,
                weight_decay: 9.94e-3,
                epochs: 16,
                num_neg: 23,
                tau_c: 0.354,
                lambda_kl: 1.0,
                quantizer: QuantizerConfig {
                    beta: 0.58,
                    ..base.quantizer.clone()
                },
                ..base
            },
        )),
        "ogbn_products" => Some((
            ModelConfig {
                hidden_dim: 512,
                num_layers: 2,
                num_heads: 4,
                activation: Activation::Relu,
                ..model
            },
            TrainConfig {
                mask_rate: 0.74,
                learning_rate: 3.47e-4,
                weight_decay: 1.57e-3,
                epochs: 10,
                num_neg: 16,
                tau_c: 0.103,
                lambda_kl: 1.6,
                quantizer: QuantizerConfig {
                    beta: 1.4,
                    ..base.quantizer.clone()
                },
                ..base
            },
        )),
        _ => None,
    }
}

/// Mean over rows of `(1 − cos(x_i, z_i))^γ`.
pub fn sce_loss(x: &Mat, z_d: &Mat, gamma: f64) -> Result<f64> {
    if x.dim() != z_d.dim() {
        return Err(StagError::dims("decoded rows", x.len(), z_d.len()));
    }
    if x.nrows() == 0 {
        return Err(StagError::invalid("sce loss over zero rows"));
    }
    let mut total = 0.0;
    for (a, b) in x.rows().into_iter().zip(z_d.rows()) {
        total += (1.0 - cosine(a, b)?).max(0.0).powf(gamma);
    }
    Ok(total / x.nrows() as f64)
}

/// Uniform sample (without replacement) of at most `num_neg` other rows for
/// each of `n` rows.
pub fn sample_negatives<R: Rng + ?Sized>(n: usize, num_neg: usize, rng: &mut R) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let k = num_neg.min(n.saturating_sub(1));
            let mut picks: Vec<usize> = index::sample(rng, n - 1, k)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j })
                .collect();
            picks.sort_unstable();
            picks
        })
        .collect()
}

/// InfoNCE over masked rows: row `i` of `z_d_masked` is pulled toward row
/// `i` of `x_masked` and pushed from the decoded rows of its sampled
/// negatives.
pub fn contrastive_loss<R: Rng + ?Sized>(
    z_d_masked: &Mat,
    x_masked: &Mat,
    tau_c: f64,
    num_neg: usize,
    rng: &mut R,
) -> Result<f64> {
    if z_d_masked.dim() != x_masked.dim() {
        return Err(StagError::dims("masked rows", x_masked.len(), z_d_masked.len()));
    }
    let n = z_d_masked.nrows();
    if n == 0 {
        return Err(StagError::invalid("contrastive loss needs at least one masked node"));
    }
    let negatives = sample_negatives(n, num_neg, rng);
    let mut total = 0.0;
    for (i, negs) in negatives.iter().enumerate() {
        let zi = z_d_masked.row(i);
        let pos = cosine(zi, x_masked.row(i))? / tau_c;
        let mut logits = vec![pos];
        for &j in negs {
            logits.push(cosine(zi, z_d_masked.row(j))? / tau_c);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - pos;
    }
    Ok(total / n as f64)
}

/// `½(commit_rec + commit_contrast) + rec + contrast + λ·kl`.
pub fn total_loss(
    commit_rec: f64,
    commit_contrast: f64,
    rec: f64,
    contrast: f64,
    kl: f64,
    lambda_kl: f64,
) -> Result<f64> {
    for (name, v) in [
        ("commit_rec", commit_rec),
        ("commit_contrast", commit_contrast),
        ("rec", rec),
        ("contrast", contrast),
        ("kl", kl),
        ("lambda_kl", lambda_kl),
    ] {
        if !v.is_finite() {
            return Err(StagError::NonFinite(name.into()));
        }
    }
    Ok(0.5 * (commit_rec + commit_contrast) + rec + contrast + lambda_kl * kl)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub rec: f64,
    pub contrast: f64,
    pub commit_rec: f64,
    pub commit_contrast: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossComponents {
    /// Absolute deviation of `total` from the weighted sum of its parts.
    pub fn identity_error(&self, lambda_kl: f64) -> f64 {
        let expect = 0.5 * (self.commit_rec + self.commit_contrast) + self.rec + self.contrast + lambda_kl * self.kl;
        (self.total - expect).abs()
    }

    fn accumulate(&mut self, other: &LossComponents) {
        self.rec += other.rec;
        self.contrast += other.contrast;
        self.commit_rec += other.commit_rec;
        self.commit_contrast += other.commit_contrast;
        self.kl += other.kl;
        self.total += other.total;
    }

    fn scaled(&self, s: f64) -> LossComponents {
        LossComponents {
            rec: self.rec * s,
            contrast: self.contrast * s,
            commit_rec: self.commit_rec * s,
            commit_contrast: self.commit_contrast * s,
            kl: self.kl * s,
            total: self.total * s,
        }
    }
}

/// Random choices for one step: which batch rows are masked and which
/// masked rows serve as negatives for each masked row (indices into
/// `masked`).
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub masked: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

impl StepPlan {
    pub fn sample<R: Rng + ?Sized>(rows: usize, config: &TrainConfig, rng: &mut R) -> StepPlan {
        let count = mask_count(config.mask_rate, rows);
        let mut masked = index::sample(rng, rows, count).into_vec();
        masked.sort_unstable();
        let negatives = sample_negatives(masked.len(), config.num_neg, rng);
        StepPlan { masked, negatives }
    }
}

/// Frozen codebook tensors in the layout the tape expects.
pub struct CodebookTensors {
    embeddings: Mat,
    unit_t: Mat,
}

impl CodebookTensors {
    pub fn new(codebook: &Codebook) -> Self {
        CodebookTensors {
            embeddings: codebook.embeddings().clone(),
            unit_t: codebook.unit_embeddings().t().to_owned(),
        }
    }
}

struct Branch {
    z_f: Var,
    z_q: Var,
    z_d: Var,
    logits: Var,
    commit: Var,
}

fn run_branch(
    tape: &mut Tape,
    params: &BoundParams,
    model: &ModelConfig,
    quant: &QuantizerConfig,
    cb: (Var, Var),
    features: Var,
    batch: &Batch,
    frozen: Option<&Mat>,
) -> Result<Branch> {
    let z_e = gnn::encode_var(tape, params, model, features, &batch.graph);
    let z_f = gnn::fuse_var(tape, params, model, z_e, features)?;
    let (unit_t, emb) = cb;
    let logits = tape_ops::assignment_logits(tape, z_f, unit_t, quant.tau_sa);
    let z_q = if quant.hard_mode {
        tape_ops::assign_and_quantize(tape, z_f, unit_t, emb, quant.tau_sa, true).1
    } else {
        let attn = tape.row_softmax(logits);
        tape.matmul(attn, emb)
    };
    let target = match frozen {
        Some(m) => tape.constant(m.clone()),
        None => tape.detach(z_q),
    };
    let commit = tape_ops::commitment_to(tape, z_f, target, quant.beta);
    let z_d = gnn::decode_var(tape, params, model, z_q, &batch.graph);
    Ok(Branch {
        z_f,
        z_q,
        z_d,
        logits,
        commit,
    })
}

fn sce_var(tape: &mut Tape, x: Var, z: Var, gamma: f64) -> Var {
    let xn = tape.row_normalize(x);
    let zn = tape.row_normalize(z);
    let cos = tape.row_dot(xn, zn);
    let neg = tape.scale(cos, -1.0);
    let err = tape.add_const(neg, 1.0);
    let err = tape.relu(err);
    let powed = if gamma == 1.0 { err } else { tape.powf(err, gamma) };
    tape.mean(powed)
}

fn contrastive_var(tape: &mut Tape, z_d: Var, x: &Mat, plan: &StepPlan, tau_c: f64) -> Var {
    let rows = Rc::new(plan.masked.clone());
    let zm = tape.select_rows(z_d, rows.clone());
    let xm = tape.constant(x.select(ndarray::Axis(0), &plan.masked));
    let zn = tape.row_normalize(zm);
    let xn = tape.row_normalize(xm);
    let pos = tape.row_dot(zn, xn);
    let pos = tape.scale(pos, 1.0 / tau_c);
    let znt = tape.transpose(zn);
    let sims = tape.matmul(zn, znt);
    let sims = tape.scale(sims, 1.0 / tau_c);
    let logits = tape.concat_cols(&[pos, sims]);
    let n = plan.masked.len();
    let mut mask = Mat::zeros((n, n + 1));
    for (i, negs) in plan.negatives.iter().enumerate() {
        mask[[i, 0]] = 1.0;
        for &j in negs {
            mask[[i, j + 1]] = 1.0;
        }
    }
    let lse = tape.masked_log_sum_exp(logits, Rc::new(mask));
    let diff = tape.sub(lse, pos);
    tape.mean(diff)
}

/// A recorded objective, ready for `backward`.
pub struct Objective {
    pub tape: Tape,
    pub params: BoundParams,
    pub total: Var,
    pub components: LossComponents,
    /// Fused features of the reconstruction branch.
    pub z_f: Mat,
    /// Quantized features of the reconstruction and masked branches.
    pub z_q: (Mat, Mat),
}

/// Records the full objective for `batch` under a fixed `plan`.
pub fn record_objective(
    model: &StagModel,
    codebook: &CodebookTensors,
    batch: &Batch,
    plan: &StepPlan,
    config: &TrainConfig,
    trainable: bool,
) -> Result<Objective> {
    record_objective_with(model, codebook, batch, plan, config, trainable, None)
}

/// As [`record_objective`], but with the stop-gradient commitment targets
/// of both branches pinned to `frozen` instead of the current `z_q`. With
/// the targets pinned, the objective's ordinary derivative equals the
/// training gradient.
pub fn record_objective_with(
    model: &StagModel,
    codebook: &CodebookTensors,
    batch: &Batch,
    plan: &StepPlan,
    config: &TrainConfig,
    trainable: bool,
    frozen: Option<(&Mat, &Mat)>,
) -> Result<Objective> {
    let quant = &config.quantizer;
    let mut tape = Tape::new();
    let params = model.params.record(&mut tape, trainable);
    let unit_t = tape.constant(codebook.unit_t.clone());
    let emb = tape.constant(codebook.embeddings.clone());
    let x = tape.constant(batch.features.clone());

    let target = {
        let mut logits = batch.features.dot(&codebook.unit_t);
        for (mut row, src) in logits.rows_mut().into_iter().zip(batch.features.rows()) {
            let n = src.dot(&src).sqrt();
            if n == 0.0 {
                return Err(StagError::Degenerate("zero-norm input feature row".into()));
            }
            let s = 1.0 / (n * quant.tau_sa);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v)) * s;
            row.mapv_inplace(|v| (v * s - max).exp());
            let t = row.sum();
            row.mapv_inplace(|v| v / t);
        }
        logits
    };

    let rec_branch = run_branch(
        &mut tape,
        &params,
        &model.config,
        quant,
        (unit_t, emb),
        x,
        batch,
        frozen.map(|f| f.0),
    )?;
    let rec = sce_var(&mut tape, x, rec_branch.z_d, config.gamma);
    let kl = tape_ops::kl_to_target(&mut tape, &target, rec_branch.logits);

    let token = params.var(MASK_TOKEN);
    let masked_x = tape.replace_rows(x, token, Rc::new(plan.masked.clone()));
    let mask_branch = run_branch(
        &mut tape,
        &params,
        &model.config,
        quant,
        (unit_t, emb),
        masked_x,
        batch,
        frozen.map(|f| f.1),
    )?;
    let contrast = if plan.masked.is_empty() {
        tape.constant(Mat::zeros((1, 1)))
    } else {
        contrastive_var(&mut tape, mask_branch.z_d, &batch.features, plan, config.tau_c)
    };

    let commit_sum = tape.add(rec_branch.commit, mask_branch.commit);
    let half = tape.scale(commit_sum, 0.5);
    let t1 = tape.add(half, rec);
    let t2 = tape.add(t1, contrast);
    let klw = tape.scale(kl, config.lambda_kl);
    let total = tape.add(t2, klw);

    let components = LossComponents {
        rec: tape.scalar(rec),
        contrast: tape.scalar(contrast),
        commit_rec: tape.scalar(rec_branch.commit),
        commit_contrast: tape.scalar(mask_branch.commit),
        kl: tape.scalar(kl),
        total: tape.scalar(total),
    };
    for (name, v) in [
        ("rec", components.rec),
        ("contrast", components.contrast),
        ("commit_rec", components.commit_rec),
        ("commit_contrast", components.commit_contrast),
        ("kl", components.kl),
        ("total", components.total),
    ] {
        if !v.is_finite() {
            return Err(StagError::NonFinite(format!("{name} loss")));
        }
    }
    let z_f = tape.value(rec_branch.z_f).clone();
    let z_q = (tape.value(rec_branch.z_q).clone(), tape.value(mask_branch.z_q).clone());
    Ok(Objective {
        z_q,
        tape,
        params,
        total,
        components,
        z_f,
    })
}

/// Loss components and parameter gradients of the objective.
pub fn objective_gradients(
    model: &StagModel,
    codebook: &CodebookTensors,
    batch: &Batch,
    plan: &StepPlan,
    config: &TrainConfig,
) -> Result<(LossComponents, BTreeMap<String, Mat>)> {
    let obj = record_objective(model, codebook, batch, plan, config, true)?;
    let mut grads = obj.tape.backward(obj.total);
    let g = obj.params.gradients(&obj.tape, &mut grads)?;
    Ok((obj.components, g))
}

/// One optimizer update on `batch`.
pub fn pretrain_step<R: Rng + ?Sized>(
    model: &mut StagModel,
    optimizer: &mut AdamW,
    codebook: &CodebookTensors,
    batch: &Batch,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<LossComponents> {
    let plan = StepPlan::sample(batch.len(), config, rng);
    let (components, grads) = objective_gradients(model, codebook, batch, &plan, config)?;
    optimizer.step(&mut model.params, &grads);
    Ok(components)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub steps: usize,
    #[serde(flatten)]
    pub mean: LossComponents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub lambda_kl: f64,
    pub epochs: Vec<EpochLosses>,
    pub steps: Vec<LossComponents>,
    pub wall_time_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn initial_total(&self) -> Option<f64> {
        self.steps.first().map(|s| s.total)
    }

    pub fn final_epoch(&self) -> Option<&EpochLosses> {
        self.epochs.last()
    }

    /// Largest identity deviation over every recorded step.
    pub fn max_identity_error(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.identity_error(self.lambda_kl))
            .fold(0.0, f64::max)
    }

    /// Writes `report.json` and `epochs.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        tensor_io::ensure_dir(dir)?;
        tensor_io::write_json(&dir.join("report.json"), self)?;
        let mut csv = String::from("epoch,steps,rec,contrast,commit_rec,commit_contrast,kl,total\n");
        for e in &self.epochs {
            let m = &e.mean;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.epoch, e.steps, m.rec, m.contrast, m.commit_rec, m.commit_contrast, m.kl, m.total
            ));
        }
        let path = dir.join("epochs.csv");
        std::fs::write(&path, csv).map_err(|e| StagError::io(&path, e))
    }
}

/// Trains a freshly initialized model on `graph`. When `out_dir` is given,
/// the checkpoint and report are written there.
pub fn run_pretraining(
    graph: &TextAttributedGraph,
    codebook: &Codebook,
    model_config: &ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(StagModel, TrainReport)> {
    config.validate()?;
    config.quantizer.validate_for(codebook)?;
    if graph.feature_dim() != model_config.feature_dim {
        return Err(StagError::dims(
            "graph feature dim",
            model_config.feature_dim,
            graph.feature_dim(),
        ));
    }
    if codebook.dim() != graph.feature_dim() {
        return Err(StagError::dims("codebook dim", graph.feature_dim(), codebook.dim()));
    }
    if graph.num_nodes() == 0 {
        return Err(StagError::invalid("cannot train on an empty graph"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = StagModel::init(model_config.clone(), &mut rng)?;
    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let tensors = CodebookTensors::new(codebook);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = Vec::new();
    let mut centers: Vec<usize> = (0..graph.num_nodes()).collect();
    for epoch in 0..config.epochs {
        centers.shuffle(&mut rng);
        let mut sum = LossComponents::default();
        let mut count = 0;
        for chunk in centers.chunks(config.batch_subgraphs) {
            let subgraphs = chunk
                .iter()
                .map(|&c| sample_subgraph(graph, c, config.num_hops, config.fanout, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let batch = Batch::from_subgraphs(&subgraphs)?;
            let c = pretrain_step(&mut model, &mut optimizer, &tensors, &batch, config, &mut rng)?;
            sum.accumulate(&c);
            steps.push(c);
            count += 1;
        }
        let mean = sum.scaled(1.0 / count as f64);
        log::info!(
            "epoch {epoch}: total {:.5} rec {:.5} kl {:.5}",
            mean.total,
            mean.rec,
            mean.kl
        );
        epochs.push(EpochLosses {
            epoch,
            steps: count,
            mean,
        });
    }
    let mut report = TrainReport {
        lambda_kl: config.lambda_kl,
        epochs,
        steps,
        wall_time_secs: 0.0,
        checkpoint: None,
    };
    if let Some(dir) = out_dir {
        let record = serde_json::json!({ "train": config, "dataset": graph.name() });
        model.save(dir, Some(record))?;
        report.checkpoint = Some(dir.to_path_buf());
        report.wall_time_secs = start.elapsed().as_secs_f64();
        report.save(dir)?;
    } else {
        report.wall_time_secs = start.elapsed().as_secs_f64();
    }
    Ok((model, report))
}

/// Mean `D_KL(attn(x_i) ‖ attn(z_f,i))` over the rows of `z_f`, one per node.
pub fn mean_alignment_kl(graph: &TextAttributedGraph, codebook: &Codebook, tau_sa: f64, z_f: &Mat) -> Result<f64> {
    let p = quantizer::soft_assign_batch(graph.features(), codebook, tau_sa)?;
    let q = quantizer::soft_assign_batch(z_f, codebook, tau_sa)?;
    let mut total = 0.0;
    for (pr, qr) in p.rows().into_iter().zip(q.rows()) {
        total += quantizer::kl_alignment_loss(pr.as_slice().unwrap(), qr.as_slice().unwrap())?;
    }
    Ok(total / graph.num_nodes() as f64)
}
