use paul_core::suite;

#[test]
fn full_suite_passes_over_100_seeds() {
    let entries = suite::run(100);
    for e in &entries {
        println!(
            "{:<40} {:>10.3e} (tol {:.0e})",
            e.name, e.max_relative_error, e.tolerance
        );
    }
    let failed: Vec<_> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| e.name.as_str())
        .collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
