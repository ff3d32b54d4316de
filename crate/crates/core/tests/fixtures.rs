//! Reference container files committed to the repository load to their
//! documented shapes.

use std::path::PathBuf;

use frontdoor_core::planted::load_model;
use frontdoor_core::sae::load_checkpoint;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn sae_fixture_loads_to_documented_dims() {
    let params = load_checkpoint(&fixture("sae_d32_k64.sae1")).unwrap();
    assert_eq!(params.d(), 32);
    assert_eq!(params.k(), 64);
    params.validate().unwrap();
}

#[test]
fn planted_fixture_loads_to_documented_dims() {
    let model = load_model(&fixture("planted_default.plm1")).unwrap();
    assert_eq!(model.cfg.d_model, 32);
    assert_eq!(model.cfg.n_task, 4);
    assert_eq!(model.vocab.len(), 64);
    model.validate().unwrap();
}
