//! Quantizer invariants as proptest properties, shared by the regular test
//! target and the acceptance runner.

use ndarray::Array1;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use stag_core::codebook::Codebook;
use stag_core::quantizer::{commitment_loss, hard_assign, kl_alignment_loss, soft_assign, top_k_indices};
use stag_core::{linalg, Mat};

pub fn codebook(seed: u64, k: usize, d: usize) -> Codebook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = Mat::from_shape_fn((k, d), |_| rng.random_range(-1.0..1.0));
    Codebook::new((0..k).map(|i| format!("t{i}")).collect(), emb, json!({})).unwrap()
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn report<T: std::fmt::Debug>(name: &str, r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| format!("{name}: {e}"))
}

pub fn simplex(cases: u32) -> Result<(), String> {
    let strategy = (any::<u64>(), 2usize..40, vector(8), 0.01f64..2.0);
    report(
        "simplex",
        runner(cases).run(&strategy, |(seed, k, z, tau)| {
            let cb = codebook(seed, k, 8);
            let attn = soft_assign(Array1::from(z).view(), &cb, tau).unwrap();
            prop_assert_eq!(attn.len(), k);
            prop_assert!((attn.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            prop_assert!(attn.iter().all(|&a| a >= 0.0));
            Ok(())
        }),
    )
}

pub fn scale_invariance(cases: u32) -> Result<(), String> {
    let strategy = (any::<u64>(), vector(8), 1e-3f64..1e3);
    report(
        "scale invariance",
        runner(cases).run(&strategy, |(seed, z, c)| {
            let cb = codebook(seed, 16, 8);
            let z = Array1::from(z);
            let a = soft_assign(z.view(), &cb, 0.1).unwrap();
            let b = soft_assign((&z * c).view(), &cb, 0.1).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            Ok(())
        }),
    )
}

pub fn commitment_range(cases: u32) -> Result<(), String> {
    let strategy = (vector(6), vector(6), 0.01f64..=2.0);
    report(
        "commitment range",
        runner(cases).run(&strategy, |(z, q, beta)| {
            let v = commitment_loss(Array1::from(z).view(), Array1::from(q).view(), beta).unwrap();
            prop_assert!(v >= -1e-15 && v <= 2.0 * beta + 1e-12);
            Ok(())
        }),
    )
}

fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

pub fn kl_nonnegative(cases: u32) -> Result<(), String> {
    let strategy = (distribution(7), distribution(7));
    report(
        "kl",
        runner(cases).run(&strategy, |(p, q)| {
            let self_kl = kl_alignment_loss(&p, &p).unwrap();
            prop_assert!(self_kl.abs() <= 1e-12);
            let v = kl_alignment_loss(&p, &q).unwrap();
            let differ = p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-9);
            prop_assert!(v >= 0.0);
            if differ {
                prop_assert!(v > 0.0);
            }
            Ok(())
        }),
    )
}

/// Soft and hard assignment pick the same codeword for `n` random vectors.
pub fn soft_hard_agreement(n: usize) -> Result<(), String> {
    let cb = codebook(7, 50, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..n {
        let z = Array1::from_shape_fn(12, |_| rng.random_range(-1.0..1.0));
        let soft = soft_assign(z.view(), &cb, 0.1).unwrap();
        let hard = hard_assign(z.view(), &cb).unwrap();
        let h = hard.iter().position(|&x| x == 1.0).unwrap();
        if linalg::argmax(&soft) != h {
            return Err(format!("vector {i}: soft argmax {} vs hard {h}", linalg::argmax(&soft)));
        }
    }
    Ok(())
}

pub fn topk_ties(cases: u32) -> Result<(), String> {
    // Few distinct levels so ties are common.
    let strategy = (prop::collection::vec(0u8..4, 1..30), 1usize..30);
    report(
        "top-k ties",
        runner(cases).run(&strategy, |(levels, k)| {
            let attn: Vec<f64> = levels.iter().map(|&l| l as f64 * 0.25).collect();
            let k = k.min(attn.len());
            let a = top_k_indices(&attn, k).unwrap();
            let b = top_k_indices(&attn, k).unwrap();
            prop_assert_eq!(&a, &b);
            let mut oracle: Vec<usize> = (0..attn.len()).collect();
            oracle.sort_by(|&x, &y| attn[y].total_cmp(&attn[x]).then(x.cmp(&y)));
            oracle.truncate(k);
            prop_assert_eq!(a, oracle);
            Ok(())
        }),
    )
}

/// Every quantizer property, as `(name, outcome)`.
pub fn quantizer_suite(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("simplex", simplex(cases)),
        ("scale invariance", scale_invariance(cases)),
        ("commitment range", commitment_range(cases)),
        ("kl", kl_nonnegative(cases)),
        ("soft/hard agreement", soft_hard_agreement(1000)),
        ("top-k ties", topk_ties(cases)),
    ]
}
