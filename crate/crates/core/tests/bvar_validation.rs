use boop_core::bvar::{geweke_test, ConjugateBvar, GewekeConfig};
use boop_core::chib::{chib_logml, ChibOptions, LagPolicy};
use boop_core::seeded_rng;

#[test]
fn geweke_moments_agree() {
    let report = geweke_test(&GewekeConfig::default(), &mut seeded_rng(2024, 0)).unwrap();
    for (name, z) in report.names.iter().zip(&report.z) {
        eprintln!("{name}: {z:.3}");
    }
    assert!(report.max_abs_z() < 4.0);
}

#[test]
fn chib_tracks_conjugate_evidence_across_seeds() {
    let opts = ChibOptions { g1: 5000, g2: 5000, burn: 500, lag: LagPolicy::default() };
    let mut hits = 0;
    for seed in 0..20u64 {
        let model = ConjugateBvar::reference(60, 100 + seed).unwrap();
        let exact = model.log_ml_oracle().unwrap();
        let (est, _) = chib_logml(&model, &opts, &mut seeded_rng(seed, 7)).unwrap();
        let dev = (est.log_ml - exact) / est.se;
        eprintln!("seed {seed}: exact {exact:.4} chib {:.4} se {:.4} z {dev:.2} q {}", est.log_ml, est.se, est.lag.q);
        hits += usize::from(dev.abs() <= 3.0);
    }
    assert!(hits >= 18, "{hits}/20");
}
