//! Frozen token codebook and class codebook.
//!
//! A codebook directory contains `tokens.txt` (one token per line, line
//! number = index), `embeddings.f32` (`K × d` little-endian `f32`) and
//! `meta.json`. A class codebook directory contains `classes.json`
//! (`[{"name", "explanation"}, ...]`) and `embeddings.f32`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::Mat;
use crate::error::{Result, StagError};
use crate::http::{HttpConfig, JsonClient};
use crate::tensor_io;

/// Maps strings to fixed-length vectors, one row per input, order preserved.
pub trait Embedder {
    fn embed(&self, texts: &[String]) -> Result<Mat>;
}

/// Adapts a per-string function into an [`Embedder`].
pub struct FnEmbedder<F>(pub F);

impl<F> Embedder for FnEmbedder<F>
where
    F: Fn(&str) -> Result<Vec<f64>>,
{
    fn embed(&self, texts: &[String]) -> Result<Mat> {
        let rows = texts.iter().map(|t| (self.0)(t)).collect::<Result<Vec<_>>>()?;
        stack_rows(rows)
    }
}

fn stack_rows(rows: Vec<Vec<f64>>) -> Result<Mat> {
    let Some(first) = rows.first() else {
        return Ok(Mat::zeros((0, 0)));
    };
    let d = first.len();
    let mut flat = Vec::with_capacity(rows.len() * d);
    for r in &rows {
        if r.len() != d {
            return Err(StagError::dims("embedding length", d, r.len()));
        }
        flat.extend_from_slice(r);
    }
    Ok(Mat::from_shape_vec((rows.len(), d), flat).expect("lengths checked"))
}

/// Strips surrounding whitespace and leading subword markers (`▁`, `##`).
pub fn canonical_token(raw: &str) -> &str {
    let mut s = raw.trim();
    loop {
        let before = s.len();
        s = s.trim_start_matches('\u{2581}');
        if let Some(rest) = s.strip_prefix("##") {
            s = rest;
        }
        s = s.trim();
        if s.len() == before {
            return s;
        }
    }
}

/// Keeps tokens made only of ASCII letters (after canonicalization),
/// dropping later duplicates. Case is significant.
pub fn filter_vocabulary<S: AsRef<str>>(raw_tokens: &[S]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for raw in raw_tokens {
        let t = canonical_token(raw.as_ref());
        if t.is_empty() || !t.bytes().all(|b| b.is_ascii_alphabetic()) {
            continue;
        }
        if seen.insert(t.to_string()) {
            out.push(t.to_string());
        }
    }
    out
}

fn check_rows(embeddings: &Mat, what: &str) -> Result<()> {
    for (i, row) in embeddings.rows().into_iter().enumerate() {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(StagError::NonFinite(format!("{what} row {i}")));
        }
        if row.dot(&row) == 0.0 {
            return Err(StagError::Degenerate(format!("{what} row {i} has zero norm")));
        }
    }
    Ok(())
}

fn normalized(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|x| x / n);
    }
    out
}

/// Ordered tokens with their frozen embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    tokens: Vec<String>,
    embeddings: Mat,
    unit: Mat,
    source_meta: Value,
}

impl Codebook {
    pub fn new(tokens: Vec<String>, embeddings: Mat, source_meta: Value) -> Result<Self> {
        if tokens.is_empty() {
            return Err(StagError::invalid("codebook needs at least one token"));
        }
        if tokens.len() != embeddings.nrows() {
            return Err(StagError::dims("codebook rows", tokens.len(), embeddings.nrows()));
        }
        let mut seen = HashSet::new();
        for t in &tokens {
            if t.contains('\n') || t.contains('\r') {
                return Err(StagError::invalid(format!("token {t:?} contains a line break")));
            }
            if !seen.insert(canonical_token(t)) {
                return Err(StagError::invalid(format!("duplicate token {t:?}")));
            }
        }
        check_rows(&embeddings, "codebook")?;
        let unit = normalized(&embeddings);
        Ok(Codebook {
            tokens,
            embeddings,
            unit,
            source_meta,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, k: usize) -> &str {
        &self.tokens[k]
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }

    /// Rows scaled to unit norm.
    pub fn unit_embeddings(&self) -> &Mat {
        &self.unit
    }

    pub fn source_meta(&self) -> &Value {
        &self.source_meta
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        tensor_io::ensure_dir(dir)?;
        let mut text = self.tokens.join("\n");
        text.push('\n');
        let p = dir.join("tokens.txt");
        fs::write(&p, text).map_err(|e| StagError::io(&p, e))?;
        tensor_io::write_matrix(&dir.join("embeddings.f32"), &self.embeddings)?;
        tensor_io::write_json(
            &dir.join("meta.json"),
            &CodebookMeta {
                num_tokens: self.len(),
                dim: self.dim(),
                source: self.source_meta.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: CodebookMeta = tensor_io::read_json(&dir.join("meta.json"))?;
        let p = dir.join("tokens.txt");
        let text = fs::read_to_string(&p).map_err(|e| StagError::io(&p, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() != meta.num_tokens {
            return Err(StagError::dims("tokens.txt lines", meta.num_tokens, tokens.len()));
        }
        let embeddings = tensor_io::read_matrix(&dir.join("embeddings.f32"), meta.num_tokens, meta.dim)?;
        Codebook::new(tokens, embeddings, meta.source)
    }
}

#[derive(Serialize, Deserialize)]
struct CodebookMeta {
    num_tokens: usize,
    dim: usize,
    #[serde(default)]
    source: Value,
}

/// Embeds every token; row `k` is the embedding of `tokens[k]`.
pub fn build_codebook(tokens: Vec<String>, embedder: &dyn Embedder) -> Result<Codebook> {
    if tokens.is_empty() {
        return Err(StagError::invalid("no tokens to embed"));
    }
    let embeddings = embedder.embed(&tokens)?;
    if embeddings.nrows() != tokens.len() {
        return Err(StagError::dims(
            "embedder output rows",
            tokens.len(),
            embeddings.nrows(),
        ));
    }
    let meta = json!({ "num_input_tokens": tokens.len() });
    Codebook::new(tokens, embeddings, meta)
}

/// Frozen embeddings of class explanations, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCodebook {
    class_names: Vec<String>,
    explanations: Vec<String>,
    embeddings: Mat,
    unit: Mat,
}

#[derive(Serialize, Deserialize)]
struct ClassEntry {
    name: String,
    explanation: String,
}

impl ClassCodebook {
    pub fn new(class_names: Vec<String>, explanations: Vec<String>, embeddings: Mat) -> Result<Self> {
        if class_names.is_empty() {
            return Err(StagError::invalid("class codebook needs at least one class"));
        }
        if explanations.len() != class_names.len() {
            return Err(StagError::dims(
                "class explanations",
                class_names.len(),
                explanations.len(),
            ));
        }
        if embeddings.nrows() != class_names.len() {
            return Err(StagError::dims(
                "class embedding rows",
                class_names.len(),
                embeddings.nrows(),
            ));
        }
        check_rows(&embeddings, "class codebook")?;
        let unit = normalized(&embeddings);
        Ok(ClassCodebook {
            class_names,
            explanations,
            embeddings,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn explanations(&self) -> &[String] {
        &self.explanations
    }

    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }

    pub fn unit_embeddings(&self) -> &Mat {
        &self.unit
    }

    /// Sub-codebook restricted to `names`, in that order.
    pub fn subset(&self, names: &[String]) -> Result<ClassCodebook> {
        let idx = names
            .iter()
            .map(|n| {
                self.class_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| StagError::invalid(format!("class {n:?} not in class codebook")))
            })
            .collect::<Result<Vec<_>>>()?;
        ClassCodebook::new(
            idx.iter().map(|&i| self.class_names[i].clone()).collect(),
            idx.iter().map(|&i| self.explanations[i].clone()).collect(),
            self.embeddings.select(ndarray::Axis(0), &idx),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        tensor_io::ensure_dir(dir)?;
        let entries: Vec<ClassEntry> = self
            .class_names
            .iter()
            .zip(&self.explanations)
            .map(|(n, e)| ClassEntry {
                name: n.clone(),
                explanation: e.clone(),
            })
            .collect();
        tensor_io::write_json(&dir.join("classes.json"), &entries)?;
        tensor_io::write_matrix(&dir.join("embeddings.f32"), &self.embeddings)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let entries: Vec<ClassEntry> = tensor_io::read_json(&dir.join("classes.json"))?;
        let path = dir.join("embeddings.f32");
        let n = entries.len().max(1);
        let values = tensor_io::read_f32(&path)?.len();
        if values % n != 0 {
            return Err(StagError::dims("class embeddings per class", n, values));
        }
        let embeddings = tensor_io::read_matrix(&path, entries.len(), values / n)?;
        let (names, explanations) = entries.into_iter().map(|e| (e.name, e.explanation)).unzip();
        ClassCodebook::new(names, explanations, embeddings)
    }
}

/// Row `n` is the embedding of `explanations[n]`.
pub fn build_class_codebook(
    class_names: Vec<String>,
    explanations: Vec<String>,
    embedder: &dyn Embedder,
) -> Result<ClassCodebook> {
    if class_names.len() != explanations.len() {
        return Err(StagError::dims(
            "class explanations",
            class_names.len(),
            explanations.len(),
        ));
    }
    let embeddings = embedder.embed(&explanations)?;
    if embeddings.nrows() != explanations.len() {
        return Err(StagError::dims(
            "embedder output rows",
            explanations.len(),
            embeddings.nrows(),
        ));
    }
    ClassCodebook::new(class_names, explanations, embeddings)
}

/// Client for an HTTP embedding service: `POST {"texts": [...]}` answered by
/// `{"vectors": [[...], ...]}`.
pub struct RemoteEmbedder {
    client: JsonClient,
    batch_size: usize,
}

impl RemoteEmbedder {
    pub fn new(config: HttpConfig) -> Self {
        RemoteEmbedder {
            client: JsonClient::new(config),
            batch_size: 256,
        }
    }

    /// Reads `EMBED_ENDPOINT` and `EMBED_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var("EMBED_ENDPOINT").map_err(|_| StagError::invalid("EMBED_ENDPOINT is not set"))?;
        let mut config = HttpConfig::new(endpoint);
        config.api_key = std::env::var("EMBED_API_KEY").ok();
        Ok(Self::new(config))
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let reply = self.client.post(&json!({ "texts": texts }))?;
        let vectors = reply
            .get("vectors")
            .and_then(Value::as_array)
            .ok_or_else(|| StagError::MalformedResponse("missing \"vectors\" array".into()))?;
        if vectors.len() != texts.len() {
            return Err(StagError::MalformedResponse(format!(
                "expected {} vectors, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        vectors
            .iter()
            .map(|v| {
                v.as_array()
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
                    .ok_or_else(|| StagError::MalformedResponse("vector is not a number array".into()))
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Mat> {
        embed_remote(self, texts)
    }
}

/// One vector per input text, order preserved; an empty input makes no
/// request.
pub fn embed_remote(embedder: &RemoteEmbedder, texts: &[String]) -> Result<Mat> {
    if texts.is_empty() {
        return Ok(Mat::zeros((0, 0)));
    }
    let mut rows = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(embedder.batch_size) {
        rows.extend(embedder.embed_batch(chunk)?);
    }
    stack_rows(rows).map_err(|e| StagError::MalformedResponse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_stub(t: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; 4];
        v[t.len() % 4] = 1.0;
        Ok(v)
    }

    #[test]
    fn filter_examples() {
        let raw = ["cat", " cat", "Cat", "λx", "dog1"];
        assert_eq!(filter_vocabulary(&raw), vec!["cat", "Cat"]);
        assert!(filter_vocabulary::<&str>(&[]).is_empty());
        assert_eq!(
            filter_vocabulary(&["\u{2581}the", "the", "##ing", "ing", "", "  "]),
            vec!["the", "ing"]
        );
    }

    #[test]
    fn build_keeps_embedder_order() {
        let toks = vec!["a".to_string(), "bb".into(), "ccc".into()];
        let cb = build_codebook(toks.clone(), &FnEmbedder(unit_stub)).unwrap();
        assert_eq!(cb.len(), 3);
        for (k, t) in toks.iter().enumerate() {
            assert_eq!(cb.embeddings().row(k).to_vec(), unit_stub(t).unwrap());
        }
        let one = build_codebook(vec!["x".into()], &FnEmbedder(unit_stub)).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn duplicate_and_degenerate_codebooks_rejected() {
        let dup = vec!["a".to_string(), "a".into()];
        assert!(build_codebook(dup, &FnEmbedder(unit_stub)).is_err());
        let zero = FnEmbedder(|_: &str| Ok(vec![0.0, 0.0]));
        assert!(matches!(
            build_codebook(vec!["a".into()], &zero),
            Err(StagError::Degenerate(_))
        ));
        let ragged = FnEmbedder(|t: &str| Ok(vec![1.0; t.len()]));
        assert!(build_codebook(vec!["a".into(), "bb".into()], &ragged).is_err());
        let failing = FnEmbedder(|_: &str| Err(StagError::Network("down".into())));
        assert!(build_codebook(vec!["a".into()], &failing).is_err());
    }

    #[test]
    fn class_codebook_rows_follow_explanations() {
        let names = vec!["A".to_string()];
        let cc = build_class_codebook(names.clone(), names.clone(), &FnEmbedder(unit_stub)).unwrap();
        assert_eq!(cc.len(), 1);
        assert_eq!(cc.embeddings().row(0).to_vec(), unit_stub("A").unwrap());
        assert!(build_class_codebook(names, vec![], &FnEmbedder(unit_stub)).is_err());
    }

    #[test]
    fn codebook_files_round_trip_byte_identically() {
        let toks: Vec<String> = ["alpha", "beta", "gamma"].iter().map(|s| s.to_string()).collect();
        let emb = Mat::from_shape_fn((3, 5), |(i, j)| 0.1 + i as f64 * 0.37 - j as f64 * 0.11);
        let cb = Codebook::new(toks, emb, json!({"vocab": "fixture"})).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        cb.save(a.path()).unwrap();
        Codebook::load(a.path()).unwrap().save(b.path()).unwrap();
        for f in ["tokens.txt", "embeddings.f32", "meta.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
        let cc = ClassCodebook::new(
            vec!["x".into(), "y".into()],
            vec!["about x".into(), "about y".into()],
            Mat::from_shape_fn((2, 3), |(i, j)| (i + j + 1) as f64),
        )
        .unwrap();
        cc.save(a.path()).unwrap();
        let back = ClassCodebook::load(a.path()).unwrap();
        assert_eq!(back, cc);
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent(raw in proptest::collection::vec("[ a-zA-Z0-9▁#λ]{0,6}", 0..30)) {
            let once = filter_vocabulary(&raw);
            prop_assert_eq!(filter_vocabulary(&once), once.clone());
            for t in &once {
                prop_assert!(t.bytes().all(|b| b.is_ascii_alphabetic()));
            }
        }
    }
}
