//! Empty library target; this crate exists to host the criterion
//! benchmarks under `benches/`.
