//! Holds the acceptance run as a test target (`tests/acceptance.rs`). It lives in its
//! own package so that `cargo test --workspace` reaches it after every other suite.
