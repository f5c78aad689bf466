//! Experiment orchestration: episodic few-shot and zero-shot evaluation,
//! the ablation matrix, and the quantization cost benchmark.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::codebook::{ClassCodebook, Codebook};
use crate::error::{Result, StagError};
use crate::gnn::{embed_nodes, ModelConfig, StagModel};
use crate::infer::{
    probe_accuracy, render_fewshot_prompt, render_zeroshot_prompt, train_linear_probe, AuditLog, AuditRecord,
    NodeClassifier, ProbeConfig, StubClassifier,
};
use crate::linalg;
use crate::pretrain::{mean_alignment_kl, run_pretraining, TrainConfig, TrainReport};
use crate::prompting::{classify_by_class_codebook, tune_prompt, PromptTuneConfig};
use crate::quantizer::{quantize_batch, quantize_vector, soft_assign_batch, top_k_indices, QuantizerConfig};
use crate::tagdata::{sample_task, FewShotTask, TextAttributedGraph};
use crate::tensor_io;

/// How query nodes are classified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferencePath {
    /// Token prompts answered by a chat model.
    Llm,
    /// Token prompts answered by the offline stand-in.
    Stub,
    /// Logistic regression trained on the support set.
    Linear,
    /// Nearest class-codebook row to `z_f`.
    ClassCodebook,
    /// Prompt network tuned on the support set, then nearest class row.
    PromptTuned,
}

impl InferencePath {
    pub fn needs_classifier(self) -> bool {
        matches!(self, InferencePath::Llm | InferencePath::Stub)
    }

    pub fn needs_support(self) -> bool {
        matches!(self, InferencePath::Linear | InferencePath::PromptTuned)
    }
}

impl std::str::FromStr for InferencePath {
    type Err = StagError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llm" => Ok(InferencePath::Llm),
            "stub" => Ok(InferencePath::Stub),
            "linear" => Ok(InferencePath::Linear),
            "class-codebook" => Ok(InferencePath::ClassCodebook),
            "prompt-tuned" => Ok(InferencePath::PromptTuned),
            other => Err(StagError::invalid(format!("unknown inference path {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub num_tasks: usize,
    /// Spread over tasks as `ceil(total_queries / num_tasks)` per task,
    /// rounded up to a multiple of `n_way`.
    pub total_queries: usize,
    pub num_hops: usize,
    pub fanout: usize,
    pub quantizer: QuantizerConfig,
    pub probe: ProbeConfig,
    pub prompt: PromptTuneConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_way: 5,
            k_shot: 5,
            num_tasks: 20,
            total_queries: 2000,
            num_hops: 2,
            fanout: 10,
            quantizer: QuantizerConfig::default(),
            probe: ProbeConfig::default(),
            prompt: PromptTuneConfig::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn queries_per_class(&self) -> usize {
        let per_task = self.total_queries.div_ceil(self.num_tasks.max(1));
        per_task.div_ceil(self.n_way.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.num_tasks == 0 || self.total_queries == 0 {
            return Err(StagError::invalid(
                "n_way, num_tasks and total_queries must be positive",
            ));
        }
        self.quantizer.validate()?;
        self.prompt.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub task_id: usize,
    pub node: usize,
    pub gold: String,
    pub predicted: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub path: InferencePath,
    pub config: EvalConfig,
    pub task_accuracies: Vec<f64>,
    pub task_queries: Vec<usize>,
    pub mean: f64,
    /// Sample standard deviation over tasks.
    pub std: f64,
    pub total_queries: usize,
    pub records: Vec<QueryRecord>,
}

impl EvalReport {
    fn assemble(path: InferencePath, config: &EvalConfig, tasks: Vec<(f64, Vec<QueryRecord>)>) -> Self {
        let task_accuracies: Vec<f64> = tasks.iter().map(|(a, _)| *a).collect();
        let task_queries: Vec<usize> = tasks.iter().map(|(_, r)| r.len()).collect();
        let (mean, std) = linalg::mean_std(&task_accuracies);
        EvalReport {
            path,
            config: config.clone(),
            total_queries: task_queries.iter().sum(),
            task_accuracies,
            task_queries,
            mean,
            std,
            records: tasks.into_iter().flat_map(|(_, r)| r).collect(),
        }
    }

    /// Writes `report.json` and `tasks.csv` (one row per task) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        tensor_io::ensure_dir(dir)?;
        tensor_io::write_json(&dir.join("report.json"), self)?;
        let mut csv = String::from("task,queries,accuracy\n");
        for (i, (a, q)) in self.task_accuracies.iter().zip(&self.task_queries).enumerate() {
            csv.push_str(&format!("{i},{q},{a}\n"));
        }
        let path = dir.join("tasks.csv");
        std::fs::write(&path, csv).map_err(|e| StagError::io(path, e))
    }
}

/// Read-only state shared by every evaluation worker.
pub struct EvalContext<'a> {
    pub model: &'a StagModel,
    pub graph: &'a TextAttributedGraph,
    pub codebook: &'a Codebook,
    /// Required by the class-codebook, prompt-tuned and stub paths.
    pub classes: Option<&'a ClassCodebook>,
    /// Required by the LLM path; the stub path builds one from `classes`.
    pub classifier: Option<&'a dyn NodeClassifier>,
    pub audit: Option<&'a AuditLog>,
}

impl EvalContext<'_> {
    fn check(&self, path: InferencePath) -> Result<()> {
        if self.model.config.feature_dim != self.graph.feature_dim() {
            return Err(StagError::dims(
                "checkpoint feature_dim",
                self.graph.feature_dim(),
                self.model.config.feature_dim,
            ));
        }
        match path {
            InferencePath::Llm if self.classifier.is_none() => {
                Err(StagError::invalid("the llm path needs an endpoint (or use the stub)"))
            }
            InferencePath::Stub | InferencePath::ClassCodebook | InferencePath::PromptTuned
                if self.classes.is_none() =>
            {
                Err(StagError::invalid("this path needs a class codebook"))
            }
            _ => Ok(()),
        }
    }
}

/// Tokens for each row of `z`: the top-k assignment, or the single nearest
/// token in hard mode.
pub fn tokenize_rows(z: &Mat, codebook: &Codebook, config: &QuantizerConfig) -> Result<Vec<Vec<String>>> {
    z.rows()
        .into_iter()
        .map(|r| {
            let q = quantize_vector(r, codebook, config)?;
            Ok(q.token_indices
                .unwrap_or_default()
                .into_iter()
                .map(|i| codebook.token(i).to_string())
                .collect())
        })
        .collect()
}

fn task_seed(seed: u64, task: usize) -> u64 {
    seed ^ (task as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn evaluate_task(
    ctx: &EvalContext<'_>,
    path: InferencePath,
    config: &EvalConfig,
    task_id: usize,
    task: &FewShotTask,
) -> Result<(f64, Vec<QueryRecord>, Vec<AuditRecord>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(config.seed, task_id));
    let support_nodes: Vec<usize> = task.support.iter().map(|&(n, _)| n).collect();
    let query_nodes: Vec<usize> = task.query.iter().map(|&(n, _)| n).collect();
    let support_labels: Vec<usize> = task.support.iter().map(|&(_, c)| c).collect();
    let z_s = embed_nodes(
        ctx.model,
        ctx.graph,
        &support_nodes,
        config.num_hops,
        config.fanout,
        &mut rng,
    )?;
    let z_q = embed_nodes(
        ctx.model,
        ctx.graph,
        &query_nodes,
        config.num_hops,
        config.fanout,
        &mut rng,
    )?;
    let task_classes = match ctx.classes {
        Some(c) => Some(c.subset(&task.class_names)?),
        None => None,
    };
    let mut audit = Vec::new();
    let predictions: Vec<usize> = match path {
        InferencePath::Linear => {
            let probe = train_linear_probe(&z_s, &support_labels, &task.class_names, &config.probe)?;
            crate::infer::predict_linear_batch(&probe, &z_q)?
        }
        InferencePath::ClassCodebook => {
            let classes = task_classes.as_ref().expect("checked");
            z_q.rows()
                .into_iter()
                .map(|r| classify_by_class_codebook(r, classes))
                .collect::<Result<_>>()?
        }
        InferencePath::PromptTuned => {
            let classes = task_classes.as_ref().expect("checked");
            let cfg = PromptTuneConfig {
                seed: task_seed(config.prompt.seed, task_id),
                ..config.prompt.clone()
            };
            let net = tune_prompt(&z_s, &support_labels, ctx.codebook, classes, &cfg)?;
            let z_p = net.forward_batch(&z_q)?;
            z_p.rows()
                .into_iter()
                .map(|r| classify_by_class_codebook(r, classes))
                .collect::<Result<_>>()?
        }
        InferencePath::Llm | InferencePath::Stub => {
            let stub;
            let classifier: &dyn NodeClassifier = match (path, ctx.classifier) {
                (InferencePath::Llm, Some(c)) => c,
                _ => {
                    stub = StubClassifier {
                        codebook: ctx.codebook,
                        classes: ctx.classes.expect("checked"),
                    };
                    &stub
                }
            };
            let support_tokens = tokenize_rows(&z_s, ctx.codebook, &config.quantizer)?;
            let query_tokens = tokenize_rows(&z_q, ctx.codebook, &config.quantizer)?;
            let mut out = Vec::with_capacity(query_tokens.len());
            for (tokens, &(_, gold)) in query_tokens.iter().zip(&task.query) {
                let bundle = if task.k_shot == 0 {
                    render_zeroshot_prompt(&task.class_names, tokens)?
                } else {
                    render_fewshot_prompt(task, &support_tokens, tokens)?
                };
                let c = classifier.classify(&bundle)?;
                if ctx.audit.is_some() {
                    audit.push(AuditRecord {
                        task_id,
                        prompt: bundle.render(),
                        raw_reply: c.raw_reply.clone(),
                        parsed: c.parsed.clone(),
                        gold: task.class_names[gold].clone(),
                    });
                }
                out.push(c.index);
            }
            out
        }
    };
    let records: Vec<QueryRecord> = task
        .query
        .iter()
        .zip(&predictions)
        .map(|(&(node, gold), &p)| QueryRecord {
            task_id,
            node,
            gold: task.class_names[gold].clone(),
            predicted: task.class_names[p].clone(),
        })
        .collect();
    let correct = records.iter().filter(|r| r.gold == r.predicted).count();
    let acc = if records.is_empty() {
        0.0
    } else {
        correct as f64 / records.len() as f64
    };
    Ok((acc, records, audit))
}

fn run_episodes(ctx: &EvalContext<'_>, path: InferencePath, config: &EvalConfig, k_shot: usize) -> Result<EvalReport> {
    config.validate()?;
    ctx.check(path)?;
    if k_shot == 0 && path.needs_support() {
        return Err(StagError::invalid(format!("{path:?} needs labeled support examples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let q = config.queries_per_class();
    let tasks = (0..config.num_tasks)
        .map(|_| sample_task(ctx.graph, config.n_way, k_shot, q, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let results = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| evaluate_task(ctx, path, config, i, t))
        .collect::<Result<Vec<_>>>()?;
    let mut per_task = Vec::with_capacity(results.len());
    for (acc, records, audit) in results {
        if let Some(log) = ctx.audit {
            for r in &audit {
                log.append(r)?;
            }
        }
        per_task.push((acc, records));
    }
    let mut cfg = config.clone();
    cfg.k_shot = k_shot;
    Ok(EvalReport::assemble(path, &cfg, per_task))
}

/// N-way k-shot episodes sampled from `config.seed`, each classified along
/// `path`.
pub fn run_fewshot_eval(ctx: &EvalContext<'_>, path: InferencePath, config: &EvalConfig) -> Result<EvalReport> {
    if config.k_shot == 0 {
        return Err(StagError::invalid("few-shot evaluation needs k_shot ≥ 1"));
    }
    run_episodes(ctx, path, config, config.k_shot)
}

/// N-way episodes with empty support sets.
pub fn run_zeroshot_eval(ctx: &EvalContext<'_>, path: InferencePath, config: &EvalConfig) -> Result<EvalReport> {
    run_episodes(ctx, path, config, 0)
}

// ---------------------------------------------------------------------------
// Ablations

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoFusion,
    NoKl,
    NoSoft,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoFusion, Variant::NoKl, Variant::NoSoft];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFusion => "no-fusion",
            Variant::NoKl => "no-kl",
            Variant::NoSoft => "no-soft",
        }
    }

    /// Configs identical to the inputs except for the toggled component.
    pub fn apply(self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let (mut m, mut t) = (model.clone(), train.clone());
        match self {
            Variant::Full => {}
            Variant::NoFusion => m.fusion = false,
            Variant::NoKl => t.lambda_kl = 0.0,
            Variant::NoSoft => t.quantizer.hard_mode = true,
        }
        (m, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Fraction of labeled nodes used to fit each probe.
    pub probe_train_fraction: f64,
    /// Random splits averaged per probe score.
    pub probe_repeats: usize,
    pub probe: ProbeConfig,
    /// Episodes for the stub path; its `quantizer` is replaced by the
    /// variant's.
    pub stub: EvalConfig,
    pub jaccard_k: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            probe_train_fraction: 0.2,
            probe_repeats: 10,
            probe: ProbeConfig::default(),
            stub: EvalConfig {
                n_way: 3,
                k_shot: 0,
                num_tasks: 10,
                total_queries: 300,
                ..EvalConfig::default()
            },
            jaccard_k: 13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub probe_accuracy: f64,
    pub stub_accuracy: Option<f64>,
    pub mean_kl: f64,
    pub mean_jaccard: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub raw_probe_accuracy: Vec<(u64, f64)>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant, seed: u64) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let set: BTreeSet<u64> = self.rows.iter().map(|r| r.seed).collect();
        set.into_iter().collect()
    }

    /// Per-variant mean probe accuracy, best first.
    pub fn ordered(&self) -> Vec<(Variant, f64)> {
        let mut out: Vec<(Variant, f64)> = Variant::ALL
            .iter()
            .filter_map(|&v| {
                let accs: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.variant == v)
                    .map(|r| r.probe_accuracy)
                    .collect();
                (!accs.is_empty()).then(|| (v, linalg::mean_std(&accs).0))
            })
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    /// Writes `ablation.json` and `ablation.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        tensor_io::ensure_dir(dir)?;
        tensor_io::write_json(&dir.join("ablation.json"), self)?;
        let mut csv =
            String::from("variant,seed,probe_accuracy,stub_accuracy,mean_kl,mean_jaccard,initial_loss,final_loss\n");
        for r in &self.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.variant.name(),
                r.seed,
                r.probe_accuracy,
                r.stub_accuracy.map(|a| a.to_string()).unwrap_or_default(),
                r.mean_kl,
                r.mean_jaccard,
                r.initial_loss,
                r.final_loss
            ));
        }
        let path = dir.join("ablation.csv");
        std::fs::write(&path, csv).map_err(|e| StagError::io(path, e))
    }
}

/// Mean linear-probe test accuracy over `repeats` random splits that put
/// `train_fraction` of the labeled nodes in the training set.
pub fn split_probe_accuracy(
    z: &Mat,
    graph: &TextAttributedGraph,
    train_fraction: f64,
    repeats: usize,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) || repeats == 0 {
        return Err(StagError::invalid("train_fraction must be in (0, 1) and repeats ≥ 1"));
    }
    let labeled: Vec<(usize, usize)> = (0..graph.num_nodes())
        .filter_map(|i| graph.label(i).map(|l| (i, l)))
        .collect();
    let n_train = ((labeled.len() as f64) * train_fraction).round() as usize;
    if n_train == 0 || n_train >= labeled.len() {
        return Err(StagError::invalid("split leaves an empty side"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..repeats {
        let mut order = labeled.clone();
        order.shuffle(&mut rng);
        let (train, test) = order.split_at(n_train);
        let pick = |part: &[(usize, usize)]| {
            let idx: Vec<usize> = part.iter().map(|&(i, _)| i).collect();
            let y: Vec<usize> = part.iter().map(|&(_, l)| l).collect();
            (z.select(Axis(0), &idx), y)
        };
        let (xtr, ytr) = pick(train);
        let (xte, yte) = pick(test);
        let p = train_linear_probe(&xtr, &ytr, graph.class_names(), probe)?;
        total += probe_accuracy(&p, &xte, &yte)?;
    }
    Ok(total / repeats as f64)
}

/// Mean Jaccard overlap of the top-`k` codeword sets of corresponding rows.
pub fn mean_topk_jaccard(a: &Mat, b: &Mat, k: usize) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(StagError::dims("attention rows", a.nrows(), b.nrows()));
    }
    if a.nrows() == 0 {
        return Err(StagError::invalid("jaccard over zero rows"));
    }
    let mut total = 0.0;
    for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
        let sa: BTreeSet<usize> = top_k_indices(&ra.to_vec(), k)?.into_iter().collect();
        let sb: BTreeSet<usize> = top_k_indices(&rb.to_vec(), k)?.into_iter().collect();
        total += sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64;
    }
    Ok(total / a.nrows() as f64)
}

/// Trains every variant once per seed and scores it by linear probing,
/// by the stub path (when a class codebook is given), and by the alignment
/// between the token assignments of `z_f` and of `x`.
pub fn run_ablation(
    graph: &TextAttributedGraph,
    codebook: &Codebook,
    classes: Option<&ClassCodebook>,
    config: &AblationConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationReport> {
    let nodes: Vec<usize> = (0..graph.num_nodes()).collect();
    let attn_x = soft_assign_batch(graph.features(), codebook, config.train.quantizer.tau_sa)?;
    let mut raw = Vec::new();
    let mut rows = Vec::new();
    for &seed in seeds {
        raw.push((
            seed,
            split_probe_accuracy(
                graph.features(),
                graph,
                config.probe_train_fraction,
                config.probe_repeats,
                &config.probe,
                seed,
            )?,
        ));
        for &variant in variants {
            let (mc, mut tc) = variant.apply(&config.model, &config.train);
            tc.seed = seed;
            let (model, report) = run_pretraining(graph, codebook, &mc, &tc, None)?;
            rows.push(score_variant(
                graph, codebook, classes, config, &nodes, &attn_x, variant, seed, &model, &report, &tc,
            )?);
            log::info!("ablation {} seed {seed} done", variant.name());
        }
    }
    Ok(AblationReport {
        config: config.clone(),
        raw_probe_accuracy: raw,
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn score_variant(
    graph: &TextAttributedGraph,
    codebook: &Codebook,
    classes: Option<&ClassCodebook>,
    config: &AblationConfig,
    nodes: &[usize],
    attn_x: &Mat,
    variant: Variant,
    seed: u64,
    model: &StagModel,
    report: &TrainReport,
    train: &TrainConfig,
) -> Result<AblationRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z_f = embed_nodes(model, graph, nodes, train.num_hops, train.fanout, &mut rng)?;
    let probe_accuracy = split_probe_accuracy(
        &z_f,
        graph,
        config.probe_train_fraction,
        config.probe_repeats,
        &config.probe,
        seed,
    )?;
    let tau = train.quantizer.tau_sa;
    let mean_kl = mean_alignment_kl(graph, codebook, tau, &z_f)?;
    let attn_z = soft_assign_batch(&z_f, codebook, tau)?;
    let mean_jaccard = mean_topk_jaccard(attn_x, &attn_z, config.jaccard_k)?;
    let stub_accuracy = match classes {
        Some(classes) => {
            let ctx = EvalContext {
                model,
                graph,
                codebook,
                classes: Some(classes),
                classifier: None,
                audit: None,
            };
            let eval = EvalConfig {
                quantizer: train.quantizer.clone(),
                seed,
                ..config.stub.clone()
            };
            let r = if eval.k_shot == 0 {
                run_zeroshot_eval(&ctx, InferencePath::Stub, &eval)?
            } else {
                run_fewshot_eval(&ctx, InferencePath::Stub, &eval)?
            };
            Some(r.mean)
        }
        None => None,
    };
    Ok(AblationRow {
        variant,
        seed,
        probe_accuracy,
        stub_accuracy,
        mean_kl,
        mean_jaccard,
        initial_loss: report.initial_total().unwrap_or(f64::NAN),
        final_loss: report.final_epoch().map(|e| e.mean.total).unwrap_or(f64::NAN),
    })
}

// ---------------------------------------------------------------------------
// Quantization cost

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchGrid {
    /// Values swept for B, K and d, each with the other two at `base`.
    pub batch: Vec<usize>,
    pub codebook: Vec<usize>,
    pub dim: Vec<usize>,
    /// `(B, K, d)` held fixed while another axis is swept.
    pub base: (usize, usize, usize),
    pub repeats: usize,
    pub tau_sa: f64,
    pub seed: u64,
}

impl Default for BenchGrid {
    fn default() -> Self {
        BenchGrid {
            batch: vec![64, 128, 192, 256],
            codebook: vec![256, 512, 768, 1024],
            dim: vec![32, 64, 96, 128],
            base: (128, 512, 64),
            repeats: 15,
            tau_sa: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub batch: usize,
    pub codebook: usize,
    pub dim: usize,
    pub median_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    pub axis: String,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub grid: BenchGrid,
    pub cells: Vec<BenchCell>,
    /// Absent for axes swept over fewer than two values.
    pub fits: Vec<AxisFit>,
}

impl BenchReport {
    pub fn fit(&self, axis: &str) -> Option<&AxisFit> {
        self.fits.iter().find(|f| f.axis == axis)
    }

    pub fn cell(&self, batch: usize, codebook: usize, dim: usize) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.batch == batch && c.codebook == codebook && c.dim == dim)
    }

    /// Writes `bench.json` and `bench.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        tensor_io::ensure_dir(dir)?;
        tensor_io::write_json(&dir.join("bench.json"), self)?;
        let mut csv = String::from("batch,codebook,dim,median_secs\n");
        for c in &self.cells {
            csv.push_str(&format!("{},{},{},{}\n", c.batch, c.codebook, c.dim, c.median_secs));
        }
        let path = dir.join("bench.csv");
        std::fs::write(&path, csv).map_err(|e| StagError::io(path, e))
    }
}

/// Ordinary least squares `y ≈ a + b·x`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((intercept, slope, r2))
}

fn random_codebook<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Codebook> {
    let emb = Mat::from_shape_fn((k, d), |_| rng.random_range(-1.0..1.0));
    Codebook::new((0..k).map(|i| format!("t{i}")).collect(), emb, serde_json::Value::Null)
}

const MIN_SAMPLE_SECS: f64 = 5e-3;

/// Median wall time of soft assignment plus quantization for one `B × d`
/// batch against a `K`-row codebook. Each sample runs the pass as many
/// times as needed to last at least 5 ms and reports the per-pass time.
pub fn time_quantize(b: usize, k: usize, d: usize, repeats: usize, tau_sa: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codebook = random_codebook(k, d, &mut rng)?;
    let z = Mat::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
    let pass = || -> Result<()> {
        let attn = soft_assign_batch(std::hint::black_box(&z), &codebook, tau_sa)?;
        std::hint::black_box(quantize_batch(&attn, &codebook)?);
        Ok(())
    };
    let start = Instant::now();
    pass()?;
    let once = start.elapsed().as_secs_f64().max(1e-9);
    let inner = ((MIN_SAMPLE_SECS / once).ceil() as usize).clamp(1, 10_000);
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        for _ in 0..inner {
            pass()?;
        }
        times.push(start.elapsed().as_secs_f64() / inner as f64);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2].max(f64::MIN_POSITIVE))
}

/// Times every cell of the one-axis-at-a-time grid and fits a line along
/// each swept axis.
pub fn bench_quantize(grid: &BenchGrid) -> Result<BenchReport> {
    let (b0, k0, d0) = grid.base;
    if grid.batch.is_empty() && grid.codebook.is_empty() && grid.dim.is_empty() {
        let t = time_quantize(b0, k0, d0, grid.repeats, grid.tau_sa, grid.seed)?;
        return Ok(BenchReport {
            grid: grid.clone(),
            cells: vec![BenchCell {
                batch: b0,
                codebook: k0,
                dim: d0,
                median_secs: t,
            }],
            fits: Vec::new(),
        });
    }
    let mut cells: Vec<BenchCell> = Vec::new();
    let mut fits = Vec::new();
    let axes: [(&str, &Vec<usize>); 3] = [("batch", &grid.batch), ("codebook", &grid.codebook), ("dim", &grid.dim)];
    for (axis, values) in axes {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &v in values {
            let (b, k, d) = match axis {
                "batch" => (v, k0, d0),
                "codebook" => (b0, v, d0),
                _ => (b0, k0, v),
            };
            let t = match cells.iter().find(|c| (c.batch, c.codebook, c.dim) == (b, k, d)) {
                Some(c) => c.median_secs,
                None => {
                    let t = time_quantize(b, k, d, grid.repeats, grid.tau_sa, grid.seed)?;
                    cells.push(BenchCell {
                        batch: b,
                        codebook: k,
                        dim: d,
                        median_secs: t,
                    });
                    t
                }
            };
            xs.push(v as f64);
            ys.push(t);
        }
        if let Some((intercept, slope, r_squared)) = linear_fit(&xs, &ys) {
            fits.push(AxisFit {
                axis: axis.to_string(),
                intercept,
                slope,
                r_squared,
            });
        }
    }
    Ok(BenchReport {
        grid: grid.clone(),
        cells,
        fits,
    })
}
