//! Graph-attention encoder and decoder, and the structural-semantic fusion
//! `z_f = φ·W_f z_e/‖W_f z_e‖ + ψ·x/‖x‖`.
//!
//! Hidden attention layers concatenate their heads (`hidden_dim / num_heads`
//! columns each); the output layer of each stack averages its heads. `φ` and
//! `ψ` are stored as logits and squashed with a sigmoid, so both stay in
//! `(0, 1)`.

use std::path::Path;
use std::rc::Rc;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EdgeIndex, Mat, Tape, Var};
use crate::error::{Result, StagError};
use crate::linalg;
use crate::params::{glorot, BoundParams, ParamSet};
use crate::tagdata::sample_subgraph;
use crate::tagdata::{Subgraph, TextAttributedGraph};
use crate::tensor_io;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Prelu,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub activation: Activation,
    pub negative_slope: f64,
    /// When false, `z_f` is the plain projection `W_f z_e`.
    pub fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 768,
            hidden_dim: 256,
            num_layers: 3,
            num_heads: 2,
            decoder_layers: 1,
            decoder_heads: 1,
            activation: Activation::Elu,
            negative_slope: 0.2,
            fusion: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(StagError::invalid("feature_dim and hidden_dim must be positive"));
        }
        if self.num_layers == 0 || self.decoder_layers == 0 {
            return Err(StagError::invalid("encoder and decoder need at least one layer"));
        }
        if self.num_heads == 0 || self.decoder_heads == 0 {
            return Err(StagError::invalid("attention needs at least one head"));
        }
        if self.num_layers > 1 && !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(StagError::invalid("hidden_dim must be divisible by num_heads"));
        }
        if self.decoder_layers > 1 && !self.hidden_dim.is_multiple_of(self.decoder_heads) {
            return Err(StagError::invalid("hidden_dim must be divisible by decoder_heads"));
        }
        Ok(())
    }
}

/// Shape of one attention layer.
#[derive(Clone, Copy, Debug)]
struct LayerShape {
    input: usize,
    per_head: usize,
    heads: usize,
    concat: bool,
}

impl LayerShape {
    fn output(&self) -> usize {
        if self.concat {
            self.per_head * self.heads
        } else {
            self.per_head
        }
    }
}

fn stack_shapes(input: usize, hidden: usize, output: usize, layers: usize, heads: usize) -> Vec<LayerShape> {
    let mut shapes = Vec::with_capacity(layers);
    let mut dim = input;
    for l in 0..layers {
        let last = l + 1 == layers;
        let shape = if last {
            LayerShape {
                input: dim,
                per_head: output,
                heads,
                concat: false,
            }
        } else {
            LayerShape {
                input: dim,
                per_head: hidden / heads,
                heads,
                concat: true,
            }
        };
        dim = shape.output();
        shapes.push(shape);
    }
    shapes
}

/// Encoder, decoder, fusion and mask-token parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StagModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

pub const MASK_TOKEN: &str = "mask_token";
pub const FUSION_WEIGHT: &str = "fusion.weight";
pub const FUSION_PHI: &str = "fusion.phi_logit";
pub const FUSION_PSI: &str = "fusion.psi_logit";

impl StagModel {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (prefix, shapes) in [
            ("encoder", config.encoder_shapes()),
            ("decoder", config.decoder_shapes()),
        ] {
            for (l, s) in shapes.iter().enumerate() {
                for h in 0..s.heads {
                    params.insert(format!("{prefix}.{l}.{h}.weight"), glorot(s.input, s.per_head, rng));
                    params.insert(format!("{prefix}.{l}.{h}.att_src"), glorot(s.per_head, 1, rng));
                    params.insert(format!("{prefix}.{l}.{h}.att_dst"), glorot(s.per_head, 1, rng));
                }
                params.insert(format!("{prefix}.{l}.bias"), Mat::zeros((1, s.output())));
                if config.activation == Activation::Prelu {
                    params.insert(format!("{prefix}.{l}.prelu"), Mat::from_elem((1, 1), 0.25));
                }
            }
        }
        params.insert(FUSION_WEIGHT, glorot(config.hidden_dim, config.feature_dim, rng));
        params.insert(FUSION_PHI, Mat::zeros((1, 1)));
        params.insert(FUSION_PSI, Mat::zeros((1, 1)));
        let token = Mat::from_shape_fn((1, config.feature_dim), |_| rng.random_range(-0.1..0.1));
        params.insert(MASK_TOKEN, token);
        Ok(StagModel { config, params })
    }

    pub fn phi(&self) -> f64 {
        sigmoid(self.params.get(FUSION_PHI).map_or(0.0, |m| m[[0, 0]]))
    }

    pub fn psi(&self) -> f64 {
        sigmoid(self.params.get(FUSION_PSI).map_or(0.0, |m| m[[0, 0]]))
    }

    pub fn mask_token(&self) -> Vec<f64> {
        self.params
            .get(MASK_TOKEN)
            .map(|m| m.row(0).to_vec())
            .unwrap_or_default()
    }

    pub fn fusion_params(&self) -> Result<FusionParams> {
        Ok(FusionParams {
            weight: self.params.expect(FUSION_WEIGHT)?.clone(),
            phi: self.phi(),
            psi: self.psi(),
        })
    }

    /// Writes `config.json` plus one `<name>.f32` per parameter tensor.
    /// `extra` is embedded verbatim under `"training"`.
    pub fn save(&self, dir: &Path, extra: Option<serde_json::Value>) -> Result<()> {
        tensor_io::ensure_dir(dir)?;
        self.params.save(dir)?;
        tensor_io::write_json(
            &dir.join("config.json"),
            &CheckpointConfig {
                model: self.config.clone(),
                tensors: self.params.shapes(),
                training: extra,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: CheckpointConfig = tensor_io::read_json(&dir.join("config.json"))?;
        cfg.model.validate()?;
        let params = ParamSet::load(dir, &cfg.tensors)?;
        let model = StagModel {
            config: cfg.model,
            params,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let reference = StagModel::init(self.config.clone(), &mut rng)?;
        for (name, m) in reference.params.iter() {
            let got = self.params.expect(name)?;
            if got.dim() != m.dim() {
                return Err(StagError::dims(format!("checkpoint tensor {name}"), m.len(), got.len()));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    tensors: std::collections::BTreeMap<String, [usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<serde_json::Value>,
}

/// Reads the `"training"` record stored next to a checkpoint, if any.
pub fn checkpoint_training_record(dir: &Path) -> Result<Option<serde_json::Value>> {
    let cfg: CheckpointConfig = tensor_io::read_json(&dir.join("config.json"))?;
    Ok(cfg.training)
}

impl ModelConfig {
    fn encoder_shapes(&self) -> Vec<LayerShape> {
        stack_shapes(
            self.feature_dim,
            self.hidden_dim,
            self.hidden_dim,
            self.num_layers,
            self.num_heads,
        )
    }

    fn decoder_shapes(&self) -> Vec<LayerShape> {
        stack_shapes(
            self.feature_dim,
            self.hidden_dim,
            self.feature_dim,
            self.decoder_layers,
            self.decoder_heads,
        )
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fusion weights with `φ`, `ψ` already squashed.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    /// `hidden_dim × feature_dim`; `z_e · weight` is the projection `W_f z_e`.
    pub weight: Mat,
    pub phi: f64,
    pub psi: f64,
}

/// Union of several subgraphs, each reindexed into a shared row space.
pub struct Batch {
    pub graph: Rc<EdgeIndex>,
    pub features: Mat,
    pub node_ids: Vec<usize>,
    /// Row of each subgraph's center node.
    pub centers: Vec<usize>,
    /// First row of each subgraph, plus the total row count at the end.
    pub offsets: Vec<usize>,
}

impl Batch {
    pub fn from_subgraphs(subgraphs: &[Subgraph]) -> Result<Batch> {
        let Some(first) = subgraphs.first() else {
            return Err(StagError::invalid("empty batch"));
        };
        let d = first.features.ncols();
        let total: usize = subgraphs.iter().map(Subgraph::len).sum();
        let mut features = Mat::zeros((total, d));
        let mut edges = Vec::new();
        let mut node_ids = Vec::with_capacity(total);
        let mut centers = Vec::with_capacity(subgraphs.len());
        let mut offsets = Vec::with_capacity(subgraphs.len() + 1);
        let mut off = 0;
        for s in subgraphs {
            if s.features.ncols() != d {
                return Err(StagError::dims("subgraph feature dim", d, s.features.ncols()));
            }
            features
                .slice_mut(ndarray::s![off..off + s.len(), ..])
                .assign(&s.features);
            edges.extend(s.local_edges.iter().map(|&(a, b)| (a + off, b + off)));
            node_ids.extend_from_slice(&s.node_ids);
            centers.push(off);
            offsets.push(off);
            off += s.len();
        }
        offsets.push(off);
        Ok(Batch {
            graph: Rc::new(EdgeIndex::from_undirected(total, &edges)),
            features,
            node_ids,
            centers,
            offsets,
        })
    }

    pub fn single(subgraph: &Subgraph) -> Result<Batch> {
        Self::from_subgraphs(std::slice::from_ref(subgraph))
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn activate(tape: &mut Tape, x: Var, act: Activation, prelu: Option<Var>) -> Var {
    match act {
        Activation::Elu => tape.elu(x, 1.0),
        Activation::Relu => tape.relu(x),
        Activation::Prelu => tape.prelu(x, prelu.expect("prelu slope recorded")),
    }
}

fn attention_stack(
    tape: &mut Tape,
    params: &BoundParams,
    config: &ModelConfig,
    prefix: &str,
    shapes: &[LayerShape],
    input: Var,
    graph: &Rc<EdgeIndex>,
    activate_last: bool,
) -> Var {
    let mut h = input;
    for (l, s) in shapes.iter().enumerate() {
        let mut heads = Vec::with_capacity(s.heads);
        for head in 0..s.heads {
            let w = params.var(&format!("{prefix}.{l}.{head}.weight"));
            let a_src = params.var(&format!("{prefix}.{l}.{head}.att_src"));
            let a_dst = params.var(&format!("{prefix}.{l}.{head}.att_dst"));
            let wh = tape.matmul(h, w);
            let src = tape.matmul(wh, a_src);
            let dst = tape.matmul(wh, a_dst);
            heads.push(tape.graph_attention(wh, src, dst, graph.clone(), config.negative_slope));
        }
        let combined = if s.concat {
            tape.concat_cols(&heads)
        } else if heads.len() == 1 {
            heads[0]
        } else {
            let mut acc = heads[0];
            for &other in &heads[1..] {
                acc = tape.add(acc, other);
            }
            tape.scale(acc, 1.0 / heads.len() as f64)
        };
        let bias = params.var(&format!("{prefix}.{l}.bias"));
        let out = tape.add_row(combined, bias);
        let last = l + 1 == shapes.len();
        h = if !last || activate_last {
            let slope = (config.activation == Activation::Prelu).then(|| params.var(&format!("{prefix}.{l}.prelu")));
            activate(tape, out, config.activation, slope)
        } else {
            out
        };
    }
    h
}

pub(crate) fn encode_var(
    tape: &mut Tape,
    params: &BoundParams,
    config: &ModelConfig,
    features: Var,
    graph: &Rc<EdgeIndex>,
) -> Var {
    attention_stack(
        tape,
        params,
        config,
        "encoder",
        &config.encoder_shapes(),
        features,
        graph,
        true,
    )
}

pub(crate) fn decode_var(
    tape: &mut Tape,
    params: &BoundParams,
    config: &ModelConfig,
    quantized: Var,
    graph: &Rc<EdgeIndex>,
) -> Var {
    attention_stack(
        tape,
        params,
        config,
        "decoder",
        &config.decoder_shapes(),
        quantized,
        graph,
        false,
    )
}

fn check_rows_nonzero(m: &Mat, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        if !row.iter().all(|x| x.is_finite()) {
            return Err(StagError::NonFinite(format!("{what} row {i}")));
        }
        if row.dot(&row) == 0.0 {
            return Err(StagError::Degenerate(format!("{what} row {i} has zero norm")));
        }
    }
    Ok(())
}

/// Row-wise fusion on the tape. With fusion disabled the projection is
/// returned unnormalized.
pub(crate) fn fuse_var(tape: &mut Tape, params: &BoundParams, config: &ModelConfig, z_e: Var, x: Var) -> Result<Var> {
    let w = params.var(FUSION_WEIGHT);
    let proj = tape.matmul(z_e, w);
    check_rows_nonzero(tape.value(proj), "projected structural features")?;
    if !config.fusion {
        return Ok(proj);
    }
    check_rows_nonzero(tape.value(x), "semantic features")?;
    let pn = tape.row_normalize(proj);
    let xn = tape.row_normalize(x);
    let phi_logit = params.var(FUSION_PHI);
    let psi_logit = params.var(FUSION_PSI);
    let phi = tape.sigmoid(phi_logit);
    let psi = tape.sigmoid(psi_logit);
    let a = tape.mul_scalar(pn, phi);
    let b = tape.mul_scalar(xn, psi);
    Ok(tape.add(a, b))
}

fn check_features(features: &Mat, expected: usize, rows: usize) -> Result<()> {
    if features.ncols() != expected {
        return Err(StagError::dims("feature dim", expected, features.ncols()));
    }
    if features.nrows() != rows {
        return Err(StagError::dims("feature rows", rows, features.nrows()));
    }
    Ok(())
}

/// Structural embeddings `z_e` (`|nodes| × hidden_dim`).
pub fn gnn_encode(subgraph: &Subgraph, features: &Mat, model: &StagModel) -> Result<Mat> {
    check_features(features, model.config.feature_dim, subgraph.len())?;
    let graph = Rc::new(EdgeIndex::from_undirected(subgraph.len(), &subgraph.local_edges));
    let mut tape = Tape::new();
    let params = model.params.record(&mut tape, false);
    let x = tape.constant(features.clone());
    let z = encode_var(&mut tape, &params, &model.config, x, &graph);
    Ok(tape.value(z).clone())
}

/// Decoded features `z_d` (`|nodes| × feature_dim`).
pub fn gnn_decode(subgraph: &Subgraph, quantized: &Mat, model: &StagModel) -> Result<Mat> {
    check_features(quantized, model.config.feature_dim, subgraph.len())?;
    let graph = Rc::new(EdgeIndex::from_undirected(subgraph.len(), &subgraph.local_edges));
    let mut tape = Tape::new();
    let params = model.params.record(&mut tape, false);
    let x = tape.constant(quantized.clone());
    let z = decode_var(&mut tape, &params, &model.config, x, &graph);
    Ok(tape.value(z).clone())
}

/// `z_f = φ·(W_f z_e)/‖W_f z_e‖ + ψ·x/‖x‖` for a single node.
pub fn fuse(z_e: ArrayView1<f64>, x: ArrayView1<f64>, params: &FusionParams) -> Result<Array1<f64>> {
    if z_e.len() != params.weight.nrows() {
        return Err(StagError::dims("z_e", params.weight.nrows(), z_e.len()));
    }
    if x.len() != params.weight.ncols() {
        return Err(StagError::dims("x", params.weight.ncols(), x.len()));
    }
    let proj = params.weight.t().dot(&z_e);
    let pn = linalg::norm(proj.view());
    let xn = linalg::norm(x);
    if pn == 0.0 {
        return Err(StagError::Degenerate(
            "projected structural vector has zero norm".into(),
        ));
    }
    if xn == 0.0 {
        return Err(StagError::Degenerate("semantic vector has zero norm".into()));
    }
    Ok(proj * (params.phi / pn) + &x.mapv(|v| v * params.psi / xn))
}

/// Encodes and fuses every row of `batch`, returning `(z_e, z_f)`.
pub fn encode_and_fuse(model: &StagModel, batch: &Batch) -> Result<(Mat, Mat)> {
    check_features(&batch.features, model.config.feature_dim, batch.len())?;
    let mut tape = Tape::new();
    let params = model.params.record(&mut tape, false);
    let x = tape.constant(batch.features.clone());
    let z_e = encode_var(&mut tape, &params, &model.config, x, &batch.graph);
    let z_f = fuse_var(&mut tape, &params, &model.config, z_e, x)?;
    Ok((tape.value(z_e).clone(), tape.value(z_f).clone()))
}

/// `z_f` for each of `nodes`, each computed from its own sampled
/// neighborhood (`num_hops`, `fanout`). Rows follow the order of `nodes`.
pub fn embed_nodes<R: Rng + ?Sized>(
    model: &StagModel,
    graph: &TextAttributedGraph,
    nodes: &[usize],
    num_hops: usize,
    fanout: usize,
    rng: &mut R,
) -> Result<Mat> {
    let mut out = Mat::zeros((nodes.len(), model.config.feature_dim));
    for (c, chunk) in nodes.chunks(EMBED_CHUNK).enumerate() {
        let subgraphs = chunk
            .iter()
            .map(|&n| sample_subgraph(graph, n, num_hops, fanout, rng))
            .collect::<Result<Vec<_>>>()?;
        let batch = Batch::from_subgraphs(&subgraphs)?;
        let (_, z_f) = encode_and_fuse(model, &batch)?;
        for (i, &row) in batch.centers.iter().enumerate() {
            out.row_mut(c * EMBED_CHUNK + i).assign(&z_f.row(row));
        }
    }
    Ok(out)
}

const EMBED_CHUNK: usize = 64;
