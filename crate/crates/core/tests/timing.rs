//! Wall-clock scaling of in-loop augmentation. Kept in its own binary so no
//! other test competes for the CPU while it measures.

use rpn_core::throughput::{time_augment_batches, BenchSetup};
use rpn_core::Method;

#[test]
fn doubling_batches_doubles_augment_time() {
    let setup = BenchSetup::default();
    for method in [Method::Rpn, Method::FreeLb] {
        let one = time_augment_batches(method, 2000, 40, 7, &setup).unwrap();
        let two = time_augment_batches(method, 2000, 80, 7, &setup).unwrap();
        let ratio = two / one;
        assert!(
            (1.7..=2.3).contains(&ratio),
            "{method}: {one} s vs {two} s, ratio {ratio}"
        );
    }
}
