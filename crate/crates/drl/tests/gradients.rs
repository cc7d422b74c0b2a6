use expolab_drl::gradcheck::check_all;

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in [0, 1, 2] {
        for report in check_all(seed) {
            println!("seed {seed} {:<16} n={:<5} max rel err {:.2e}", report.name, report.checked, report.max_rel_error);
            assert!(report.passes(1e-3), "{report:?}");
        }
    }
}
