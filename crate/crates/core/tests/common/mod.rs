#![allow(dead_code)]

pub mod mock_llm;
pub mod props;
pub mod trials;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use stag_core::codebook::Codebook;
use stag_core::gnn::{Activation, Batch, ModelConfig, StagModel};
use stag_core::pretrain::{self, CodebookTensors, StepPlan, TrainConfig};
use stag_core::tagdata::Subgraph;
use stag_core::Mat;

pub struct GradFixture {
    pub model: StagModel,
    pub codebook: Codebook,
    pub batch: Batch,
    pub plan: StepPlan,
    pub config: TrainConfig,
}

/// A 10-node graph with 8-dim features and a 6-token codebook.
pub fn grad_fixture(activation: Activation, seed: u64) -> GradFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let d = 8;
    let features = Mat::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let mut edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 9)];
    edges.extend([(0, 5), (2, 7), (1, 8), (3, 9)]);
    let subgraph = Subgraph {
        node_ids: (0..n).collect(),
        local_edges: edges,
        features,
    };
    let tokens = ["alpha", "beta", "gamma", "delta", "eps", "zeta"];
    let emb = Mat::from_shape_fn((6, d), |_| rng.random_range(-1.0..1.0));
    let codebook = Codebook::new(tokens.iter().map(|s| s.to_string()).collect(), emb, json!({})).unwrap();
    let model_config = ModelConfig {
        feature_dim: d,
        hidden_dim: 6,
        num_layers: 2,
        num_heads: 2,
        activation,
        ..ModelConfig::default()
    };
    let mut model = StagModel::init(model_config, &mut rng).unwrap();
    // Move the fusion gates away from their symmetric starting point.
    model.params.get_mut("fusion.phi_logit").unwrap()[[0, 0]] = 0.3;
    model.params.get_mut("fusion.psi_logit").unwrap()[[0, 0]] = -0.2;
    let mut config = TrainConfig {
        mask_rate: 0.5,
        num_neg: 3,
        tau_c: 0.7,
        gamma: 2.0,
        lambda_kl: 1.0,
        ..TrainConfig::default()
    };
    config.quantizer.tau_sa = 0.5;
    config.quantizer.top_k = 3;
    let plan = StepPlan::sample(n, &config, &mut rng);
    GradFixture {
        model,
        codebook,
        batch: Batch::single(&subgraph).unwrap(),
        plan,
        config,
    }
}

/// Largest per-tensor relative error `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` of the
/// analytic gradient against central differences, with the tensor name and
/// the number of scalars checked. Stop-gradient targets are held at their
/// unperturbed values while differencing.
pub fn max_gradient_error(fx: &GradFixture, eps: f64) -> (String, f64, usize) {
    let tensors = CodebookTensors::new(&fx.codebook);
    let (_, analytic) = pretrain::objective_gradients(&fx.model, &tensors, &fx.batch, &fx.plan, &fx.config).unwrap();
    let base = pretrain::record_objective(&fx.model, &tensors, &fx.batch, &fx.plan, &fx.config, false).unwrap();
    let (zq_rec, zq_mask) = base.z_q;
    let eval = |m: &StagModel| {
        pretrain::record_objective_with(
            m,
            &tensors,
            &fx.batch,
            &fx.plan,
            &fx.config,
            false,
            Some((&zq_rec, &zq_mask)),
        )
        .unwrap()
        .components
        .total
    };
    let mut worst = (String::new(), 0.0, 0);
    let mut numeric: BTreeMap<String, Mat> = BTreeMap::new();
    for (name, value) in fx.model.params.iter() {
        let mut g = Mat::zeros(value.dim());
        for idx in 0..value.len() {
            let (r, c) = (idx / value.ncols(), idx % value.ncols());
            let mut plus = fx.model.clone();
            plus.params.get_mut(name).unwrap()[[r, c]] += eps;
            let mut minus = fx.model.clone();
            minus.params.get_mut(name).unwrap()[[r, c]] -= eps;
            g[[r, c]] = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        }
        numeric.insert(name.clone(), g);
    }
    let mut checked = 0;
    for (name, g_fd) in &numeric {
        let g = &analytic[name];
        let diff = (g - g_fd).mapv(|x| x * x).sum().sqrt();
        let scale = g.mapv(|x| x * x).sum().sqrt().max(g_fd.mapv(|x| x * x).sum().sqrt());
        let rel = if scale < 1e-9 { diff } else { diff / scale };
        checked += g.len();
        if rel > worst.1 {
            worst = (name.clone(), rel, 0);
        }
    }
    worst.2 = checked;
    worst
}

/// The planted two-block graph used by the end-to-end experiments.
pub fn planted(seed: u64) -> stag_core::synthetic::SyntheticTag {
    stag_core::synthetic::planted_tag(&stag_core::synthetic::SyntheticConfig {
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// Model and training settings for the end-to-end experiments: the default
/// encoder depth with a width matched to the 32-dim features.
pub fn experiment_config() -> stag_core::eval::AblationConfig {
    let mut train = TrainConfig {
        learning_rate: 5e-3,
        weight_decay: 1e-4,
        epochs: 20,
        mask_rate: 0.5,
        num_neg: 10,
        tau_c: 0.5,
        ..TrainConfig::default()
    };
    train.quantizer.beta = 1.9;
    stag_core::eval::AblationConfig {
        model: ModelConfig {
            feature_dim: 32,
            hidden_dim: 32,
            num_layers: 3,
            num_heads: 2,
            ..ModelConfig::default()
        },
        train,
        ..Default::default()
    }
}
