//! Scaled-down experiments shared by integration tests and the acceptance
//! runner.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stag_core::eval::{run_fewshot_eval, EvalConfig, EvalContext, EvalReport, InferencePath};
use stag_core::gnn::{embed_nodes, ModelConfig, StagModel};
use stag_core::infer::{render_zeroshot_prompt, stub_classify};
use stag_core::pretrain::{run_pretraining, TrainConfig};
use stag_core::prompting::{class_codebook_accuracy, tune_prompt, PromptTuneConfig};
use stag_core::quantizer::{soft_assign, top_k_tokens};
use stag_core::synthetic::{orthogonal_tag, planted_tag, skewed_tag, SyntheticConfig, SyntheticTag};
use stag_core::Result;

pub struct PromptTrial {
    pub before: f64,
    pub after: f64,
    pub frozen: bool,
}

fn small_model(d: usize) -> ModelConfig {
    ModelConfig {
        feature_dim: d,
        hidden_dim: 16,
        num_layers: 2,
        num_heads: 2,
        ..ModelConfig::default()
    }
}

fn short_training(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 5e-3,
        weight_decay: 1e-4,
        epochs,
        mask_rate: 0.5,
        num_neg: 5,
        tau_c: 0.5,
        seed,
        ..TrainConfig::default()
    }
}

/// Pre-trains on `tag`, tunes a prompt network on five labeled nodes per
/// class and scores nearest-class accuracy on the remaining nodes with and
/// without the prompt.
pub fn prompt_trial(tag: &SyntheticTag, seed: u64, epochs: usize, tune: &PromptTuneConfig) -> Result<PromptTrial> {
    let g = &tag.graph;
    let d = g.feature_dim();
    let (model, _) = run_pretraining(g, &tag.codebook, &small_model(d), &short_training(seed, epochs), None)?;
    let params_before = model.params.clone();
    let codebook_before = tag.codebook.clone();
    let classes_before = tag.class_codebook.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut support = Vec::new();
    let mut held_out = Vec::new();
    for mut nodes in g.nodes_by_class() {
        nodes.shuffle(&mut rng);
        support.extend_from_slice(&nodes[..5]);
        held_out.extend_from_slice(&nodes[5..]);
    }
    let label = |ids: &[usize]| ids.iter().map(|&i| g.label(i).unwrap()).collect::<Vec<_>>();
    let z_s = embed_nodes(&model, g, &support, 2, 10, &mut rng)?;
    let z_h = embed_nodes(&model, g, &held_out, 2, 10, &mut rng)?;
    let net = tune_prompt(&z_s, &label(&support), &tag.codebook, &tag.class_codebook, tune)?;
    let before = class_codebook_accuracy(&z_h, &label(&held_out), &tag.class_codebook)?;
    let after = class_codebook_accuracy(&net.forward_batch(&z_h)?, &label(&held_out), &tag.class_codebook)?;
    let frozen =
        model.params == params_before && tag.codebook == codebook_before && tag.class_codebook == classes_before;
    Ok(PromptTrial { before, after, frozen })
}

/// Prompt trials on the skewed three-class graph, one per seed.
pub fn skewed_prompt_trials(seeds: std::ops::Range<u64>) -> Result<Vec<PromptTrial>> {
    seeds
        .map(|seed| {
            let tag = skewed_tag(40, 16, 0.8, 0.1, seed)?;
            prompt_trial(&tag, seed, 3, &PromptTuneConfig::default())
        })
        .collect()
}

/// Zero-shot stub accuracy on the orthogonal graph when each node is
/// described by the `k` tokens nearest its own features.
pub fn stub_orthogonal_accuracy(k: usize) -> Result<f64> {
    let tag = orthogonal_tag(30, 12, 4)?;
    let g = &tag.graph;
    let names = g.class_names().to_vec();
    let mut correct = 0;
    for i in 0..g.num_nodes() {
        let attn = soft_assign(g.features().row(i), &tag.codebook, 0.1)?;
        let tokens = top_k_tokens(&attn, &tag.codebook, k)?;
        let bundle = render_zeroshot_prompt(&names, &tokens)?;
        if stub_classify(&bundle, &tag.codebook, &tag.class_codebook)? == g.label(i).unwrap() {
            correct += 1;
        }
    }
    Ok(correct as f64 / g.num_nodes() as f64)
}

/// A five-class planted graph for five-way episodes.
pub fn five_class_tag(seed: u64) -> Result<SyntheticTag> {
    planted_tag(&SyntheticConfig {
        num_blocks: 5,
        types_per_block: 1,
        seed,
        ..SyntheticConfig::default()
    })
}

/// 5-way 5-shot stub evaluation over 20 tasks after a one-epoch warm-up.
pub fn five_way_stub_report(seed: u64) -> Result<EvalReport> {
    let tag = five_class_tag(seed)?;
    let (model, _) = run_pretraining(
        &tag.graph,
        &tag.codebook,
        &small_model(32),
        &short_training(seed, 1),
        None,
    )?;
    five_way_report_with(&model, &tag, seed)
}

pub fn five_way_report_with(model: &StagModel, tag: &SyntheticTag, seed: u64) -> Result<EvalReport> {
    let ctx = EvalContext {
        model,
        graph: &tag.graph,
        codebook: &tag.codebook,
        classes: Some(&tag.class_codebook),
        classifier: None,
        audit: None,
    };
    let cfg = EvalConfig {
        seed,
        ..EvalConfig::default()
    };
    run_fewshot_eval(&ctx, InferencePath::Stub, &cfg)
}
