//! Criterion benchmarks for `epics-anomaly`; see `benches/`.
