//! Criterion benchmarks for soft assignment and quantization live in
//! `benches/`; run them with `cargo bench -p stag-bench`.
