mod suites;

use suites::{gradient_suite, GRAD_TOLERANCE};

#[test]
fn every_layer_and_loss_passes_grad_check() {
    let rep = gradient_suite(100, 0x9e3779b9).unwrap();
    eprintln!("{rep:?}");
    assert!(
        rep.max_rel_error < GRAD_TOLERANCE,
        "max relative error {} in {}",
        rep.max_rel_error,
        rep.worst_case
    );
    assert!(rep.entries > 1000);
    assert!(rep.elapsed.as_secs_f64() < 60.0, "took {:?}", rep.elapsed);
}
