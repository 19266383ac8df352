//! Holds no code. The criteria live in `tests/acceptance.rs`; run them
//! with `cargo test -p rxndp-acceptance --test acceptance`.
