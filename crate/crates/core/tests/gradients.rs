use eegfm_core::selfcheck::{run_component, COMPONENTS};

#[test]
fn every_component_passes_on_three_seeds() {
    for c in COMPONENTS {
        for seed in [11, 12, 13] {
            let check = run_component(c, seed).unwrap();
            assert!(check.passed(), "{c} seed {seed}:\n{}", check.report);
        }
    }
}

#[test]
fn unknown_component_is_rejected() {
    assert!(run_component("lstm", 1).is_err());
}
