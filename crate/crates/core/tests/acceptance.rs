//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! Exits 0 after reporting unless `STAG_ACCEPTANCE_STRICT=1`, in which case
//! any failure gives exit code 1.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stag_core::eval::{bench_quantize, run_ablation, AblationReport, BenchGrid, Variant};
use stag_core::gnn::Activation;
use stag_core::infer::{render_fewshot_prompt, render_zeroshot_prompt};
use stag_core::pretrain::{contrastive_loss, run_pretraining, sce_loss};
use stag_core::tagdata::FewShotTask;

use common::trials::{five_way_stub_report, skewed_prompt_trials, stub_orthogonal_accuracy};
use common::{experiment_config, grad_fixture, max_gradient_error, planted, props};

type Outcome = Result<String, String>;

fn within(elapsed: Duration, limit_secs: u64, detail: String) -> Outcome {
    if elapsed > Duration::from_secs(limit_secs) {
        Err(format!(
            "{detail}; took {:.1}s, limit {limit_secs}s",
            elapsed.as_secs_f64()
        ))
    } else {
        Ok(format!("{detail}; {:.1}s", elapsed.as_secs_f64()))
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (String::new(), 0.0);
    for (act, seed) in [(Activation::Elu, 0), (Activation::Prelu, 1), (Activation::Relu, 2)] {
        let (name, err, _) = max_gradient_error(&grad_fixture(act, seed), 1e-5);
        if err > worst.1 {
            worst = (format!("{act:?} {name}"), err);
        }
    }
    let detail = format!("max relative error {:.2e} ({})", worst.1, worst.0);
    if worst.1 > 1e-4 {
        return Err(detail);
    }
    within(start.elapsed(), 60, detail)
}

fn quantizer_invariants() -> Outcome {
    let start = Instant::now();
    let failures: Vec<String> = props::quantizer_suite(256)
        .into_iter()
        .filter_map(|(name, r)| r.err().map(|e| format!("{name}: {e}")))
        .collect();
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    within(start.elapsed(), 60, "6 properties".into())
}

fn loss_values() -> Outcome {
    let x = array![[1.0, 0.0]];
    let z = array![[0.5, 0.75f64.sqrt()]];
    let sce = sce_loss(&x, &z, 2.0).map_err(|e| e.to_string())?;
    if (sce - 0.25).abs() > 1e-12 {
        return Err(format!("sce {sce}"));
    }
    let pair = array![[1.0, 0.0], [0.0, 1.0]];
    let e = std::f64::consts::E;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let con = contrastive_loss(&pair, &pair, 1.0, 1, &mut rng).map_err(|e| e.to_string())?;
    if (con + (e / (e + 1.0)).ln()).abs() > 1e-9 {
        return Err(format!("contrastive {con}"));
    }
    let tag = planted(0);
    let mut cfg = experiment_config();
    cfg.train.epochs = 2;
    let (_, report) =
        run_pretraining(&tag.graph, &tag.codebook, &cfg.model, &cfg.train, None).map_err(|e| e.to_string())?;
    let identity = report.max_identity_error();
    if identity > 1e-9 {
        return Err(format!("total identity off by {identity:e}"));
    }
    Ok(format!(
        "sce {sce}, contrastive {con:.6}, identity error {identity:.1e} over {} steps",
        report.steps.len()
    ))
}

fn ablation() -> Result<(AblationReport, Duration), String> {
    let start = Instant::now();
    let cfg = experiment_config();
    let mut merged: Option<AblationReport> = None;
    for seed in 0..5u64 {
        let tag = planted(seed);
        let r =
            run_ablation(&tag.graph, &tag.codebook, None, &cfg, &Variant::ALL, &[seed]).map_err(|e| e.to_string())?;
        match merged.as_mut() {
            None => merged = Some(r),
            Some(m) => {
                m.raw_probe_accuracy.extend(r.raw_probe_accuracy);
                m.rows.extend(r.rows);
            }
        }
    }
    Ok((merged.unwrap(), start.elapsed()))
}

fn row(r: &AblationReport, v: Variant, seed: u64) -> Result<&stag_core::eval::AblationRow, String> {
    r.row(v, seed)
        .ok_or_else(|| format!("missing {} row for seed {seed}", v.name()))
}

fn end_to_end(r: &AblationReport, elapsed: Duration) -> Outcome {
    let mut gain = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for &(seed, raw) in &r.raw_probe_accuracy {
        let full = row(r, Variant::Full, seed)?;
        gain += full.probe_accuracy - raw;
        worst_ratio = worst_ratio.max(full.final_loss / full.initial_loss);
    }
    gain /= r.raw_probe_accuracy.len() as f64;
    let detail = format!(
        "worst loss ratio {worst_ratio:.3}, mean probe gain over raw {:.2} points",
        100.0 * gain
    );
    if worst_ratio >= 0.7 || gain < 0.02 {
        return Err(detail);
    }
    within(elapsed, 600, detail)
}

fn ordering(r: &AblationReport) -> Outcome {
    let mut chain = 0;
    let mut fusion_lowest = 0;
    let mut lines = Vec::new();
    for seed in r.seeds() {
        let acc = |v| row(r, v, seed).map(|x| x.probe_accuracy);
        let (full, no_kl, no_soft, no_fusion) = (
            acc(Variant::Full)?,
            acc(Variant::NoKl)?,
            acc(Variant::NoSoft)?,
            acc(Variant::NoFusion)?,
        );
        if full >= no_kl && no_kl >= no_soft {
            chain += 1;
        }
        if no_fusion < full.min(no_kl).min(no_soft) {
            fusion_lowest += 1;
        }
        lines.push(format!("s{seed} {full:.3}/{no_kl:.3}/{no_soft:.3}/{no_fusion:.3}"));
    }
    let detail = format!(
        "full>=nokl>=nosoft in {chain}/5, nofusion lowest in {fusion_lowest}/5 [{}]",
        lines.join(" ")
    );
    if chain >= 4 && fusion_lowest >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn kl_efficacy(r: &AblationReport) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in r.seeds() {
        let full = row(r, Variant::Full, seed)?;
        let no_kl = row(r, Variant::NoKl, seed)?;
        ok &= full.mean_kl < no_kl.mean_kl && full.mean_jaccard > no_kl.mean_jaccard;
        lines.push(format!(
            "s{seed} kl {:.3}<{:.3} jaccard {:.3}>{:.3}",
            full.mean_kl, no_kl.mean_kl, full.mean_jaccard, no_kl.mean_jaccard
        ));
    }
    let detail = lines.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn prompt_fidelity() -> Outcome {
    let task = FewShotTask {
        n_way: 3,
        k_shot: 1,
        classes: vec![4, 9, 2],
        class_names: s(&["Research Paper", "Dataset", "Software"]),
        support: vec![(10, 0), (11, 1), (12, 2)],
        query: vec![(13, 0)],
    };
    let support = vec![
        s(&["research", "methodology", "experiment"]),
        s(&["benchmark", "statistics", "collection"]),
        s(&["implementation", "code", "library"]),
    ];
    let query = s(&["algorithm", "computation", "optimization"]);
    let few = render_fewshot_prompt(&task, &support, &query)
        .map_err(|e| e.to_string())?
        .render();
    let classes = s(&["Research Paper", "Dataset", "Software", "Survey Paper"]);
    let zero = render_zeroshot_prompt(&classes, &query)
        .map_err(|e| e.to_string())?
        .render();
    let phrase = "Output only the category name and nothing else";
    if few != include_str!("golden/fewshot_3way_1shot.txt") {
        return Err("few-shot prompt differs from golden".into());
    }
    if zero != include_str!("golden/zeroshot_4way.txt") {
        return Err("zero-shot prompt differs from golden".into());
    }
    if !few.contains(phrase) || !zero.contains(phrase) {
        return Err("output instruction missing".into());
    }
    Ok("both prompts byte-identical".into())
}

fn stub_pipeline() -> Outcome {
    let zero = stub_orthogonal_accuracy(4).map_err(|e| e.to_string())?;
    let a = five_way_stub_report(0).map_err(|e| e.to_string())?;
    let b = five_way_stub_report(0).map_err(|e| e.to_string())?;
    let detail = format!(
        "zero-shot {zero:.3}; 5-way 5-shot {} tasks, {} queries, mean {:.3}",
        a.task_accuracies.len(),
        a.total_queries,
        a.mean
    );
    if zero != 1.0 || a != b || a.task_accuracies.len() != 20 {
        return Err(format!("{detail}; reruns identical: {}", a == b));
    }
    Ok(detail)
}

fn scaling() -> Outcome {
    let start = Instant::now();
    let report = bench_quantize(&BenchGrid::default()).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for axis in ["batch", "codebook", "dim"] {
        let fit = report.fit(axis).ok_or_else(|| format!("no fit for {axis}"))?;
        ok &= fit.r_squared >= 0.95;
        parts.push(format!("{axis} R2 {:.3}", fit.r_squared));
    }
    let detail = parts.join(", ");
    if !ok {
        return Err(detail);
    }
    within(start.elapsed(), 300, detail)
}

fn prompt_tuning() -> Outcome {
    let trials = skewed_prompt_trials(0..5).map_err(|e| e.to_string())?;
    let n = trials.len() as f64;
    let before = trials.iter().map(|t| t.before).sum::<f64>() / n;
    let after = trials.iter().map(|t| t.after).sum::<f64>() / n;
    let frozen = trials.iter().all(|t| t.frozen);
    let detail = format!("held-out accuracy {before:.3} -> {after:.3}, frozen state intact: {frozen}");
    if frozen && after > before {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient correctness", guarded(gradients)),
        (2, "quantizer invariants", guarded(quantizer_invariants)),
        (3, "loss values", guarded(loss_values)),
    ];
    let runs = catch_unwind(ablation).unwrap_or_else(|_| Err("panicked".into()));
    match &runs {
        Ok((r, elapsed)) => {
            results.push((4, "end-to-end training", end_to_end(r, *elapsed)));
            results.push((5, "ablation ordering", ordering(r)));
            results.push((6, "kl efficacy", kl_efficacy(r)));
        }
        Err(e) => {
            for (n, name) in [(4, "end-to-end training"), (5, "ablation ordering"), (6, "kl efficacy")] {
                results.push((n, name, Err(e.clone())));
            }
        }
    }
    results.push((7, "prompt fidelity", guarded(prompt_fidelity)));
    results.push((8, "stub pipeline", guarded(stub_pipeline)));
    results.push((9, "quantization scaling", guarded(scaling)));
    results.push((10, "prompt tuning", guarded(prompt_tuning)));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("PASS criterion {n} {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n} {name}: {d}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var("STAG_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
