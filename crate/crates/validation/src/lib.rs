//! Acceptance gate for the workspace. The checks live in `tests/acceptance.rs`
//! and run with `cargo test -p refpts-validation --test acceptance`.
