#[path = "support/hetcons.rs"]
mod hetcons;

#[test]
fn single_chain_never_decides_two_values() {
    // The suite should exercise decisions, not only stalemates.
    let decided = hetcons::single_chain();
    assert!(decided > 100, "only {decided} decisions");
}

#[test]
fn meet_against_single_chain_is_atomic() {
    let decided = hetcons::meet_against_single();
    assert!(decided > 20, "only {decided} decisions");
}
