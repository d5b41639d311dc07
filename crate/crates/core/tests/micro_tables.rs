mod support;

use kextract::verify::{verify, verify_exhaustive, RectMode, VerifyOptions};
use support::balanced_micro_table;

#[test]
fn repair_yields_balanced_tables() {
    for seed in 0..10 {
        let t = balanced_micro_table(seed).expect("repair converges");
        assert!(verify_exhaustive(&t, 2, 2).unwrap().passed);
    }
}

#[test]
fn balance_is_monotone_in_s() {
    for seed in 0..10 {
        let t = balanced_micro_table(seed).unwrap();
        for s in 2..=3 {
            assert!(
                verify(&t, s, 2, RectMode::Exhaustive, &VerifyOptions::default())
                    .unwrap()
                    .passed
            );
        }
    }
}

#[test]
fn exhaustive_pass_implies_sampled_pass() {
    let t = balanced_micro_table(3).unwrap();
    for seed in 0..5 {
        let rep = verify(
            &t,
            2,
            2,
            RectMode::Sampled { samples: 500, seed },
            &VerifyOptions::default(),
        )
        .unwrap();
        assert!(rep.passed);
    }
}
