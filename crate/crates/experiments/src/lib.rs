//! Holds the `acceptance` test target (see `tests/acceptance.rs`). The
//! package has no library code; it exists so the long experiment suite
//! runs after every unit and integration test of the other crates.
