use caliper::segnet::gradcheck::{check_all, TOLERANCE};

#[test]
fn every_layer_matches_finite_differences() {
    for rep in check_all(30, 0x5eed).unwrap() {
        assert!(rep.checked > 0, "{}: nothing checked", rep.layer);
        assert!(
            rep.max_rel_err < TOLERANCE,
            "{}: max relative error {:.3e} over {} coordinates",
            rep.layer,
            rep.max_rel_err,
            rep.checked
        );
        eprintln!("{:24} checked {:5} skipped {:3} max rel {:.2e}", rep.layer, rep.checked, rep.skipped, rep.max_rel_err);
    }
}
