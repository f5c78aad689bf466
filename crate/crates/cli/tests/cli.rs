use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stag_core::synthetic::{planted_tag, SyntheticConfig};
use stag_core::tagdata::save_dataset;
use tempfile::TempDir;

const CONFIG: &str = r#"
seed = 1

[model]
hidden_dim = 8
num_layers = 1
num_heads = 2

[train]
epochs = 1
learning_rate = 5e-3
num_neg = 3
batch_subgraphs = 64

[eval]
n_way = 3
k_shot = 2
num_tasks = 3
total_queries = 60

[prompt]
steps = 20

[ablation]
probe_repeats = 2

[ablation.stub]
n_way = 3
k_shot = 0
num_tasks = 2
total_queries = 30

[bench]
batch = [8, 16]
codebook = [16, 32]
dim = [4, 8]
base = [8, 16, 4]
repeats = 3
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// A small planted graph with its codebooks, a config and a checkpoint.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let tag = planted_tag(&SyntheticConfig {
            num_nodes: 120,
            feature_dim: 16,
            seed: 3,
            ..SyntheticConfig::default()
        })
        .unwrap();
        save_dataset(&tag.graph, &dir.path().join("data")).unwrap();
        tag.codebook.save(&dir.path().join("codebook")).unwrap();
        tag.class_codebook.save(&dir.path().join("classes")).unwrap();
        fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        let ws = Workspace { dir };
        let out = ws.stag(&["pretrain", "--data", "data", "--codebook", "codebook", "--out", "ckpt"]);
        assert_success(&out);
        ws
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn stag(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_stag"))
            .current_dir(self.dir.path())
            .args(["--config", "run.toml"])
            .args(args)
            .env_remove("LLM_ENDPOINT")
            .env_remove("EMBED_ENDPOINT")
            .output()
            .unwrap()
    }

    fn json(&self, p: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(p)).unwrap()).unwrap()
    }
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const MODEL: [&str; 6] = ["--data", "data", "--codebook", "codebook", "--checkpoint", "ckpt"];

fn with_model<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(MODEL);
    v.extend(rest);
    v
}

#[test]
fn pretrain_writes_checkpoint_and_report() {
    let ws = Workspace::new();
    assert!(ws.path("ckpt/config.json").exists());
    assert!(ws.path("ckpt/epochs.csv").exists());
    let report = ws.json("ckpt/report.json");
    assert_eq!(report["epochs"].as_array().unwrap().len(), 1);
}

#[test]
fn tokenize_emits_weighted_top_tokens() {
    let ws = Workspace::new();
    assert_success(&ws.stag(&with_model("tokenize", &["--nodes", "0,5,7", "--out", "tokens.jsonl"])));
    let text = fs::read_to_string(ws.path("tokens.jsonl")).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1]["node"], 5);
    let weights: Vec<f64> = lines[0]["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w.as_f64().unwrap())
        .collect();
    assert_eq!(weights.len(), lines[0]["tokens"].as_array().unwrap().len());
    assert!(weights.windows(2).all(|w| w[0] >= w[1]));
    assert!(weights.iter().sum::<f64>() <= 1.0 + 1e-9);
}

#[test]
fn stub_fewshot_eval_is_reproducible() {
    let ws = Workspace::new();
    let args = |out| with_model("eval-fewshot", &["--classes", "classes", "--out", out]);
    for out in ["a", "b"] {
        let mut a = vec!["--llm", "stub"];
        a.extend(args(out));
        assert_success(&ws.stag(&a));
    }
    let (a, b) = (ws.json("a/report.json"), ws.json("b/report.json"));
    assert_eq!(a, b);
    assert_eq!(a["path"], "stub");
    assert_eq!(a["task_accuracies"].as_array().unwrap().len(), 3);
    assert!(ws.path("a/tasks.csv").exists());
}

#[test]
fn zeroshot_paths() {
    let ws = Workspace::new();
    let out = ws.stag(&with_model(
        "eval-zeroshot",
        &["--classes", "classes", "--path", "class-codebook", "--out", "zs"],
    ));
    assert_success(&out);
    assert_eq!(ws.json("zs/report.json")["config"]["k_shot"], 0);
    // Linear probing has nothing to fit without support labels.
    let out = ws.stag(&with_model("eval-zeroshot", &["--path", "linear", "--out", "zl"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn prompt_tune_reports_both_accuracies() {
    let ws = Workspace::new();
    assert_success(&ws.stag(&with_model(
        "prompt-tune",
        &["--classes", "classes", "--shots", "3", "--out", "prompt"],
    )));
    let r = ws.json("prompt/report.json");
    assert_eq!(r["support"], 12);
    assert!(r["tuned_accuracy"].as_f64().unwrap() >= 0.0);
    assert!(ws.path("prompt/prompt.f32").exists());
    assert!(ws.path("prompt/heldout.csv").exists());
}

#[test]
fn link_edge_and_subgraph_heads() {
    let ws = Workspace::new();
    assert_success(&ws.stag(&with_model("linkpred", &["--pairs", "20", "--out", "lp"])));
    let lp = ws.json("lp/report.json");
    assert_eq!(lp["pairs"], 40);

    let edges: String = (0..40)
        .map(|i| format!("{i}\t{}\t{}\n", i + 40, if i % 2 == 0 { "cites" } else { "extends" }))
        .collect();
    fs::write(ws.path("edges.tsv"), edges).unwrap();
    assert_success(&ws.stag(&with_model("edgecls", &["--edges", "edges.tsv", "--out", "ec"])));
    let ec = ws.json("ec/report.json");
    assert_eq!(ec["test"], 20);
    assert_eq!(ec["relations"], serde_json::json!(["cites", "extends"]));

    let subgraphs: String = (0..20)
        .map(|i| format!("{{\"nodes\": [{}, {}], \"label\": \"s{}\"}}\n", i, i + 4, i % 4))
        .collect();
    fs::write(ws.path("subgraphs.jsonl"), subgraphs).unwrap();
    assert_success(&ws.stag(&with_model(
        "subgraphcls",
        &["--subgraphs", "subgraphs.jsonl", "--out", "sg"],
    )));
    assert!(ws.path("sg/predictions.csv").exists());
}

#[test]
fn ablate_and_bench_write_reports() {
    let ws = Workspace::new();
    let out = ws.stag(&[
        "ablate",
        "--data",
        "data",
        "--codebook",
        "codebook",
        "--classes",
        "classes",
        "--seeds",
        "1",
        "--out",
        "abl",
    ]);
    assert_success(&out);
    let rows = ws.json("abl/ablation.json")["rows"].as_array().unwrap().len();
    assert_eq!(rows, 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("full"));

    assert_success(&ws.stag(&["bench-quantize", "--out", "bench"]));
    let fits = ws.json("bench/bench.json")["fits"].as_array().unwrap().len();
    assert_eq!(fits, 3);
}

fn write_vectors(dir: &Path) {
    let mut v = String::new();
    for (i, t) in ["cat", "dog", "bird", "a furry pet", "a flying animal"]
        .iter()
        .enumerate()
    {
        let row: Vec<String> = (0..4)
            .map(|j| if j == i % 4 { "1" } else { "0.1" }.to_string())
            .collect();
        v.push_str(&format!("{t}\t{}\n", row.join(" ")));
    }
    fs::write(dir.join("vectors.tsv"), v).unwrap();
    fs::write(dir.join("vocab.txt"), "cat\n cat\ndog\nλx\nbird1\nbird\n").unwrap();
    fs::write(
        dir.join("classes.json"),
        r#"[{"name": "Pet", "explanation": "a furry pet"}, {"name": "Bird", "explanation": "a flying animal"}]"#,
    )
    .unwrap();
}

#[test]
fn build_codebook_from_vectors() {
    let dir = tempfile::tempdir().unwrap();
    write_vectors(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_stag"))
        .current_dir(dir.path())
        .args(["build-codebook", "--vocab", "vocab.txt", "--vectors", "vectors.tsv"])
        .args(["--classes", "classes.json", "--out", "cb"])
        .output()
        .unwrap();
    assert_success(&out);
    let tokens = fs::read_to_string(dir.path().join("cb/tokens.txt")).unwrap();
    assert_eq!(tokens, "cat\ndog\nbird\n");
    assert!(dir.path().join("cb/classes/classes.json").exists());
}

#[test]
fn exit_codes_separate_bad_input_from_runtime_failure() {
    let ws = Workspace::new();
    let missing = ws.stag(&["pretrain", "--data", "nope", "--codebook", "codebook", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(1));
    let unknown_flag = ws.stag(&["pretrain", "--bogus"]);
    assert_eq!(unknown_flag.status.code(), Some(1));
    let no_endpoint = ws.stag(&with_model("eval-fewshot", &["--out", "e"]));
    assert_eq!(no_endpoint.status.code(), Some(1));
    // Nothing listens on port 9; the request fails at run time.
    let unreachable = ws.stag(&{
        let mut a = vec!["--llm", "http://127.0.0.1:9/v1/chat/completions"];
        a.extend(with_model(
            "eval-fewshot",
            &["--classes", "classes", "--num-tasks", "1", "--out", "e"],
        ));
        a
    });
    assert_eq!(
        unreachable.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&unreachable.stderr)
    );
    let help = Command::new(env!("CARGO_BIN_EXE_stag")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}
