use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use stag_core::codebook::{
    build_class_codebook, build_codebook, filter_vocabulary, Embedder, FnEmbedder, RemoteEmbedder,
};
use stag_core::eval::{bench_quantize, run_ablation, run_fewshot_eval, run_zeroshot_eval, EvalContext, Variant};
use stag_core::gnn::embed_nodes;
use stag_core::infer::{
    edge_features, link_predict, llm_link_predict, predict_linear_batch, subgraph_embed, train_linear_probe, AuditLog,
    ChatClient, LlmConfig, NodeClassifier,
};
use stag_core::prompting::{class_codebook_accuracy, classify_by_class_codebook, tune_prompt};
use stag_core::quantizer::quantize_vector;
use stag_core::tagdata::load_dataset;
use stag_core::{
    tensor_io, ClassCodebook, Codebook, InferencePath, Mat, Result, StagError, StagModel, TextAttributedGraph,
};

use crate::config::RunConfig;
use crate::{Cli, Command, Episodes, Model};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_seed(cli.seed);
    let llm = cli.llm.as_deref();
    match cli.command {
        Command::BuildCodebook {
            vocab,
            vectors,
            classes,
            out,
            class_out,
        } => build_codebooks(
            &vocab,
            vectors.as_deref(),
            classes.as_deref(),
            &out,
            class_out.as_deref(),
        ),
        Command::Pretrain { data, codebook, out } => pretrain(&cfg, &data, &codebook, &out),
        Command::Tokenize { model, nodes, out } => tokenize(&cfg, &model, nodes, &out),
        Command::EvalFewshot { episodes, k_shot } => {
            if let Some(k) = k_shot {
                cfg.eval.k_shot = k;
            }
            evaluate(&cfg, &episodes, llm, false)
        }
        Command::EvalZeroshot { episodes } => evaluate(&cfg, &episodes, llm, true),
        Command::PromptTune {
            model,
            classes,
            shots,
            out,
        } => prompt_tune(&cfg, &model, &classes, shots, &out),
        Command::Linkpred {
            model,
            pairs,
            threshold,
            out,
        } => linkpred(&cfg, &model, llm, pairs, threshold, &out),
        Command::Edgecls {
            model,
            edges,
            train_fraction,
            out,
        } => edgecls(&cfg, &model, &edges, train_fraction, &out),
        Command::Subgraphcls {
            model,
            subgraphs,
            train_fraction,
            out,
        } => subgraphcls(&cfg, &model, &subgraphs, train_fraction, &out),
        Command::Ablate {
            data,
            codebook,
            classes,
            seeds,
            out,
        } => ablate(&cfg, &data, &codebook, classes.as_deref(), seeds, &out),
        Command::BenchQuantize { repeats, out } => {
            if let Some(r) = repeats {
                cfg.bench.repeats = r;
            }
            let report = bench_quantize(&cfg.bench)?;
            report.save(&out)?;
            for f in &report.fits {
                println!("{:<9} slope {:.3e} s/unit  R² {:.4}", f.axis, f.slope, f.r_squared);
            }
            Ok(())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| StagError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| StagError::io(path, e))
}

struct Loaded {
    graph: TextAttributedGraph,
    codebook: Codebook,
    model: StagModel,
}

fn load(model: &Model) -> Result<Loaded> {
    let graph = load_dataset(&model.data)?;
    let codebook = Codebook::load(&model.codebook)?;
    let checkpoint = StagModel::load(&model.checkpoint)?;
    if checkpoint.config.feature_dim != graph.feature_dim() {
        return Err(StagError::dims(
            "checkpoint feature_dim",
            graph.feature_dim(),
            checkpoint.config.feature_dim,
        ));
    }
    log::info!("loaded {} ({} nodes)", graph.name(), graph.num_nodes());
    Ok(Loaded {
        graph,
        codebook,
        model: checkpoint,
    })
}

fn embed_all(cfg: &RunConfig, loaded: &Loaded, nodes: &[usize]) -> Result<Mat> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    embed_nodes(
        &loaded.model,
        &loaded.graph,
        nodes,
        cfg.eval.num_hops,
        cfg.eval.fanout,
        &mut rng,
    )
}

/// Lookup table from a `text<TAB>floats` file.
fn vector_table(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let mut table = HashMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (text, values) = line
            .split_once('\t')
            .ok_or_else(|| StagError::parse("vectors", format!("line {}: missing tab", i + 1)))?;
        let v = values
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| StagError::parse("vectors", format!("line {}: {e}", i + 1)))?;
        table.insert(text.to_string(), v);
    }
    Ok(table)
}

#[derive(Deserialize)]
struct ClassEntry {
    name: String,
    explanation: String,
}

fn build_codebooks(
    vocab: &Path,
    vectors: Option<&Path>,
    classes: Option<&Path>,
    out: &Path,
    class_out: Option<&Path>,
) -> Result<()> {
    let raw: Vec<String> = read_text(vocab)?.lines().map(str::to_string).collect();
    let tokens = filter_vocabulary(&raw);
    let embedder: Box<dyn Embedder> = match vectors {
        Some(path) => {
            let table = vector_table(path)?;
            Box::new(FnEmbedder(move |t: &str| {
                table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| StagError::invalid(format!("no vector for {t:?}")))
            }))
        }
        None => Box::new(RemoteEmbedder::from_env()?),
    };
    let codebook = build_codebook(tokens, embedder.as_ref())?;
    codebook.save(out)?;
    println!(
        "{} of {} tokens kept, dim {}",
        codebook.len(),
        raw.len(),
        codebook.dim()
    );
    if let Some(path) = classes {
        let entries: Vec<ClassEntry> = tensor_io::read_json(path)?;
        let (names, explanations) = entries.into_iter().map(|e| (e.name, e.explanation)).unzip();
        let cc = build_class_codebook(names, explanations, embedder.as_ref())?;
        if cc.dim() != codebook.dim() {
            return Err(StagError::dims("class embedding dim", codebook.dim(), cc.dim()));
        }
        let dir = class_out.map(Path::to_path_buf).unwrap_or_else(|| out.join("classes"));
        cc.save(&dir)?;
        println!("{} classes", cc.len());
    }
    Ok(())
}

fn pretrain(cfg: &RunConfig, data: &Path, codebook: &Path, out: &Path) -> Result<()> {
    let graph = load_dataset(data)?;
    let codebook = Codebook::load(codebook)?;
    let (model, train) = cfg.training(graph.feature_dim())?;
    let (_, report) = stag_core::pretrain::run_pretraining(&graph, &codebook, &model, &train, Some(out))?;
    if let (Some(first), Some(last)) = (report.epochs.first(), report.epochs.last()) {
        println!(
            "{} epochs, total loss {:.4} -> {:.4}, {:.1}s",
            report.epochs.len(),
            first.mean.total,
            last.mean.total,
            report.wall_time_secs
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TokenLine<'a> {
    node: usize,
    tokens: Vec<&'a str>,
    weights: Vec<f64>,
}

fn tokenize(cfg: &RunConfig, model: &Model, nodes: Option<Vec<usize>>, out: &Path) -> Result<()> {
    let loaded = load(model)?;
    let nodes = nodes.unwrap_or_else(|| (0..loaded.graph.num_nodes()).collect());
    if let Some(&bad) = nodes.iter().find(|&&n| n >= loaded.graph.num_nodes()) {
        return Err(StagError::OutOfRange {
            context: "--nodes".into(),
            index: bad,
            bound: loaded.graph.num_nodes(),
        });
    }
    let z = embed_all(cfg, &loaded, &nodes)?;
    let mut text = String::new();
    for (&node, row) in nodes.iter().zip(z.rows()) {
        let q = quantize_vector(row, &loaded.codebook, &cfg.eval.quantizer)?;
        let idx = q.token_indices.unwrap_or_default();
        let line = TokenLine {
            node,
            tokens: idx.iter().map(|&i| loaded.codebook.token(i)).collect(),
            weights: idx.iter().map(|&i| q.attn[i]).collect(),
        };
        text.push_str(&serde_json::to_string(&line).map_err(|e| StagError::parse("token line", e))?);
        text.push('\n');
    }
    write_text(out, &text)
}

fn chat_client(cfg: &RunConfig, endpoint: &str) -> Result<ChatClient> {
    let env = LlmConfig::from_env().ok();
    let mut llm = cfg.llm.clone();
    llm.endpoint = endpoint.to_string();
    if llm.model.is_empty() {
        llm.model = env.as_ref().map(|e| e.model.clone()).unwrap_or_default();
    }
    if llm.api_key.is_none() {
        llm.api_key = env.and_then(|e| e.api_key);
    }
    ChatClient::new(llm)
}

fn evaluate(cfg: &RunConfig, ep: &Episodes, llm: Option<&str>, zero_shot: bool) -> Result<()> {
    let loaded = load(&ep.model)?;
    let classes = ep.classes.as_deref().map(ClassCodebook::load).transpose()?;
    let mut eval = cfg.eval.clone();
    if let Some(n) = ep.n_way {
        eval.n_way = n;
    }
    if let Some(t) = ep.num_tasks {
        eval.num_tasks = t;
    }
    let mut path = ep.path;
    let mut client = None;
    if path == InferencePath::Llm {
        match llm {
            Some("stub") => path = InferencePath::Stub,
            Some(url) => client = Some(chat_client(cfg, url)?),
            None => {
                if let Ok(env) = LlmConfig::from_env() {
                    client = Some(chat_client(cfg, &env.endpoint)?);
                }
            }
        }
    }
    let audit = ep.audit.as_deref().map(AuditLog::create).transpose()?;
    let ctx = EvalContext {
        model: &loaded.model,
        graph: &loaded.graph,
        codebook: &loaded.codebook,
        classes: classes.as_ref(),
        classifier: client.as_ref().map(|c| c as &dyn NodeClassifier),
        audit: audit.as_ref(),
    };
    let report = if zero_shot {
        run_zeroshot_eval(&ctx, path, &eval)?
    } else {
        run_fewshot_eval(&ctx, path, &eval)?
    };
    report.save(&ep.out)?;
    println!(
        "{} tasks, {} queries: {:.2} ± {:.2}",
        report.task_accuracies.len(),
        report.total_queries,
        100.0 * report.mean,
        100.0 * report.std
    );
    Ok(())
}

fn labeled_nodes(graph: &TextAttributedGraph) -> Result<Vec<Vec<usize>>> {
    if graph.labels().is_none() {
        return Err(StagError::invalid("the dataset has no labels"));
    }
    Ok(graph.nodes_by_class())
}

fn prompt_tune(cfg: &RunConfig, model: &Model, classes: &Path, shots: usize, out: &Path) -> Result<()> {
    let loaded = load(model)?;
    let classes = ClassCodebook::load(classes)?.subset(loaded.graph.class_names())?;
    if shots == 0 {
        return Err(StagError::invalid("--shots must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.prompt.seed);
    let (mut support, mut held_out) = (Vec::new(), Vec::new());
    for (c, mut nodes) in labeled_nodes(&loaded.graph)?.into_iter().enumerate() {
        if nodes.len() <= shots {
            return Err(StagError::invalid(format!(
                "class {} has {} labeled nodes, need more than {shots}",
                loaded.graph.class_names()[c],
                nodes.len()
            )));
        }
        nodes.shuffle(&mut rng);
        support.extend_from_slice(&nodes[..shots]);
        held_out.extend_from_slice(&nodes[shots..]);
    }
    let label = |ids: &[usize]| ids.iter().map(|&i| loaded.graph.label(i).unwrap()).collect::<Vec<_>>();
    let z_s = embed_all(cfg, &loaded, &support)?;
    let z_h = embed_all(cfg, &loaded, &held_out)?;
    let net = tune_prompt(&z_s, &label(&support), &loaded.codebook, &classes, &cfg.prompt)?;
    net.save(out, Some(&cfg.prompt))?;
    let z_p = net.forward_batch(&z_h)?;
    let gold = label(&held_out);
    let before = class_codebook_accuracy(&z_h, &gold, &classes)?;
    let after = class_codebook_accuracy(&z_p, &gold, &classes)?;
    let mut csv = String::from("node,gold,untuned,tuned\n");
    for (i, &node) in held_out.iter().enumerate() {
        let name = |k: usize| classes.class_names()[k].as_str();
        let b = classify_by_class_codebook(z_h.row(i), &classes)?;
        let a = classify_by_class_codebook(z_p.row(i), &classes)?;
        let _ = writeln!(csv, "{node},{},{},{}", name(gold[i]), name(b), name(a));
    }
    write_text(&out.join("heldout.csv"), &csv)?;
    tensor_io::write_json(
        &out.join("report.json"),
        &json!({
            "support": support.len(),
            "held_out": held_out.len(),
            "untuned_accuracy": before,
            "tuned_accuracy": after,
            "config": cfg.prompt,
        }),
    )?;
    println!("held-out accuracy {:.2} -> {:.2}", 100.0 * before, 100.0 * after);
    Ok(())
}

fn save_classification(out: &Path, report: serde_json::Value, csv: &str) -> Result<()> {
    tensor_io::ensure_dir(out)?;
    tensor_io::write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("predictions.csv"), csv)
}

fn linkpred(cfg: &RunConfig, model: &Model, llm: Option<&str>, pairs: usize, threshold: f64, out: &Path) -> Result<()> {
    let loaded = load(model)?;
    let g = &loaded.graph;
    if g.edges().is_empty() || g.num_nodes() < 2 {
        return Err(StagError::invalid("link prediction needs at least one edge"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let mut positives = g.edges().to_vec();
    positives.shuffle(&mut rng);
    positives.truncate(pairs.max(1));
    let mut samples: Vec<(usize, usize, bool)> = positives.iter().map(|&(u, v)| (u, v, true)).collect();
    let mut attempts = 0;
    while samples.len() < 2 * positives.len() && attempts < 100 * positives.len() {
        attempts += 1;
        let (u, v) = (rng.random_range(0..g.num_nodes()), rng.random_range(0..g.num_nodes()));
        if u != v && !g.has_edge(u, v) {
            samples.push((u, v, false));
        }
    }
    let nodes: Vec<usize> = samples.iter().flat_map(|&(u, v, _)| [u, v]).collect();
    let z = embed_all(cfg, &loaded, &nodes)?;
    let client = match llm {
        Some("stub") | None => None,
        Some(url) => Some(chat_client(cfg, url)?),
    };
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let mut csv = String::from("u,v,edge,predicted\n");
    for (i, &(u, v, edge)) in samples.iter().enumerate() {
        let (zu, zv) = (z.row(2 * i), z.row(2 * i + 1));
        let predicted = match &client {
            Some(c) => {
                let tokens = |row| -> Result<Vec<String>> {
                    let q = quantize_vector(row, &loaded.codebook, &cfg.eval.quantizer)?;
                    Ok(q.token_indices
                        .unwrap_or_default()
                        .iter()
                        .map(|&k| loaded.codebook.token(k).to_string())
                        .collect())
                };
                llm_link_predict(&tokens(zu)?, &tokens(zv)?, c)?
            }
            None => link_predict(zu, zv, threshold)?,
        };
        match (edge, predicted) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
        let _ = writeln!(csv, "{u},{v},{edge},{predicted}");
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let accuracy = ratio(tp + tn, samples.len());
    save_classification(
        out,
        json!({
            "pairs": samples.len(),
            "threshold": threshold,
            "llm": client.is_some(),
            "accuracy": accuracy,
            "precision": ratio(tp, tp + fp),
            "recall": ratio(tp, tp + fn_),
            "seed": cfg.eval.seed,
        }),
        &csv,
    )?;
    println!("{} pairs, accuracy {:.2}", samples.len(), 100.0 * accuracy);
    Ok(())
}

/// Names to dense indices in order of first appearance.
fn index_labels(names: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut order = Vec::new();
    let idx = names
        .iter()
        .map(|n| {
            *seen.entry(n).or_insert_with(|| {
                order.push(n.clone());
                order.len() - 1
            })
        })
        .collect();
    (idx, order)
}

fn split<R: Rng>(n: usize, train_fraction: f64, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(StagError::invalid("--train-fraction must lie in (0, 1)"));
    }
    if n < 2 {
        return Err(StagError::invalid("need at least two labeled examples"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let cut = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let test = order.split_off(cut);
    Ok((order, test))
}

/// Trains a probe on the `train` rows of `x` and scores the `test` rows.
fn probe_split(
    cfg: &RunConfig,
    x: &Mat,
    labels: &[usize],
    names: &[String],
    train: &[usize],
    test: &[usize],
) -> Result<(f64, Vec<usize>)> {
    let pick = |ids: &[usize]| Mat::from_shape_fn((ids.len(), x.ncols()), |(r, c)| x[[ids[r], c]]);
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let probe = train_linear_probe(&pick(train), &train_labels, names, &cfg.eval.probe)?;
    let predicted = predict_linear_batch(&probe, &pick(test))?;
    let correct = test.iter().zip(&predicted).filter(|(&i, &p)| labels[i] == p).count();
    Ok((correct as f64 / test.len() as f64, predicted))
}

fn edgecls(cfg: &RunConfig, model: &Model, edges: &Path, train_fraction: f64, out: &Path) -> Result<()> {
    let loaded = load(model)?;
    let mut triples = Vec::new();
    for (i, line) in read_text(edges)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [h, t, r] = parts[..] else {
            return Err(StagError::parse(
                "edges",
                format!("line {}: expected head, tail, relation", i + 1),
            ));
        };
        let id = |s: &str| -> Result<usize> {
            let v: usize = s
                .trim()
                .parse()
                .map_err(|e| StagError::parse("edges", format!("line {}: {e}", i + 1)))?;
            if v >= loaded.graph.num_nodes() {
                return Err(StagError::OutOfRange {
                    context: "edge endpoint".into(),
                    index: v,
                    bound: loaded.graph.num_nodes(),
                });
            }
            Ok(v)
        };
        triples.push((id(h)?, id(t)?, r.trim().to_string()));
    }
    let nodes: Vec<usize> = triples.iter().flat_map(|&(h, t, _)| [h, t]).collect();
    let z = embed_all(cfg, &loaded, &nodes)?;
    let d = z.ncols();
    let mut x = Mat::zeros((triples.len(), 2 * d));
    for i in 0..triples.len() {
        x.row_mut(i).assign(&edge_features(z.row(2 * i), z.row(2 * i + 1)));
    }
    let (labels, names) = index_labels(&triples.iter().map(|t| t.2.clone()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let (train, test) = split(triples.len(), train_fraction, &mut rng)?;
    let (accuracy, predicted) = probe_split(cfg, &x, &labels, &names, &train, &test)?;
    let mut csv = String::from("head,tail,gold,predicted\n");
    for (&i, &p) in test.iter().zip(&predicted) {
        let (h, t, ref r) = triples[i];
        let _ = writeln!(csv, "{h},{t},{r},{}", names[p]);
    }
    save_classification(
        out,
        json!({
            "relations": names,
            "train": train.len(),
            "test": test.len(),
            "accuracy": accuracy,
            "seed": cfg.eval.seed,
        }),
        &csv,
    )?;
    println!("{} relations, test accuracy {:.2}", names.len(), 100.0 * accuracy);
    Ok(())
}

#[derive(Deserialize)]
struct SubgraphLine {
    nodes: Vec<usize>,
    label: String,
}

fn subgraphcls(cfg: &RunConfig, model: &Model, path: &Path, train_fraction: f64, out: &Path) -> Result<()> {
    let loaded = load(model)?;
    let mut items = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: SubgraphLine =
            serde_json::from_str(line).map_err(|e| StagError::parse("subgraphs", format!("line {}: {e}", i + 1)))?;
        if let Some(&bad) = item.nodes.iter().find(|&&n| n >= loaded.graph.num_nodes()) {
            return Err(StagError::OutOfRange {
                context: format!("subgraph on line {}", i + 1),
                index: bad,
                bound: loaded.graph.num_nodes(),
            });
        }
        items.push(item);
    }
    let d = loaded.model.config.feature_dim;
    let mut x = Mat::zeros((items.len(), d));
    for (i, item) in items.iter().enumerate() {
        let z = embed_all(cfg, &loaded, &item.nodes)?;
        x.row_mut(i).assign(&subgraph_embed(&z)?);
    }
    let (labels, names) = index_labels(&items.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let (train, test) = split(items.len(), train_fraction, &mut rng)?;
    let (accuracy, predicted) = probe_split(cfg, &x, &labels, &names, &train, &test)?;
    let mut csv = String::from("subgraph,gold,predicted\n");
    for (&i, &p) in test.iter().zip(&predicted) {
        let _ = writeln!(csv, "{i},{},{}", items[i].label, names[p]);
    }
    save_classification(
        out,
        json!({
            "labels": names,
            "train": train.len(),
            "test": test.len(),
            "accuracy": accuracy,
            "seed": cfg.eval.seed,
        }),
        &csv,
    )?;
    println!("{} subgraphs, test accuracy {:.2}", items.len(), 100.0 * accuracy);
    Ok(())
}

fn ablate(cfg: &RunConfig, data: &Path, codebook: &Path, classes: Option<&Path>, seeds: u64, out: &Path) -> Result<()> {
    let graph = load_dataset(data)?;
    let codebook = Codebook::load(codebook)?;
    let classes = classes.map(ClassCodebook::load).transpose()?;
    let mut config = cfg.ablation.clone();
    if cfg.preset.is_some() || cfg.model.is_some() || cfg.train.is_some() {
        (config.model, config.train) = cfg.training(graph.feature_dim())?;
    }
    config.model.feature_dim = graph.feature_dim();
    if seeds == 0 {
        return Err(StagError::invalid("--seeds must be at least 1"));
    }
    let base = cfg.seed.unwrap_or(0);
    let seeds: Vec<u64> = (base..base + seeds).collect();
    let report = run_ablation(&graph, &codebook, classes.as_ref(), &config, &Variant::ALL, &seeds)?;
    report.save(out)?;
    for (v, acc) in report.ordered() {
        println!("{:<10} probe {:.2}", v.name(), 100.0 * acc);
    }
    Ok(())
}
