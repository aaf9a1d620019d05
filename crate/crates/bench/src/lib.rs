//! Criterion benches for the kernel live under `benches/`; run them with
//! `cargo bench -p caaf-bench`.
