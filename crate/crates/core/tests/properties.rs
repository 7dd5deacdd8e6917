use proptest::prelude::*;

use clustervar::{
    analyze, arm_moments, bread, delta_arm_variance, fit, invert2, meat, validate, AnalysisOptions,
    Arm, MomentMode, UnitRecord, ValidatedExperiment, VarianceReport,
};

/// Clusters as (arm, outcomes); both arms always present.
fn clusters() -> impl Strategy<Value = Vec<(u8, Vec<f64>)>> {
    let outcome = prop_oneof![
        (0u8..=1).prop_map(f64::from),
        -100.0..100.0f64,
        (0u32..50).prop_map(f64::from),
    ];
    let cluster = (0u8..=1, prop::collection::vec(outcome, 1..12));
    prop::collection::vec(cluster, 2..24).prop_filter("both arms", |cs| {
        cs.iter().any(|c| c.0 == 0) && cs.iter().any(|c| c.0 == 1)
    })
}

fn records(cs: &[(u8, Vec<f64>)], map: impl Fn(f64) -> f64) -> Vec<UnitRecord> {
    cs.iter()
        .enumerate()
        .flat_map(|(i, (w, ys))| {
            let map = &map;
            ys.iter()
                .map(move |&y| UnitRecord::new(format!("k{i}"), *w, map(y)).unwrap())
        })
        .collect()
}

fn experiment(cs: &[(u8, Vec<f64>)]) -> ValidatedExperiment {
    validate(records(cs, |y| y)).unwrap()
}

fn variances(r: &VarianceReport) -> Vec<f64> {
    let mut v = vec![r.var_sandwich, r.var_simplified, r.var_delta_pop];
    v.extend(r.var_delta_sample);
    v
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn three_routes_agree(cs in clusters()) {
        let r = analyze(&experiment(&cs), &AnalysisOptions::default()).unwrap();
        prop_assert!(r.max_rel_discrepancy <= 1e-12, "{}", r.max_rel_discrepancy);
        prop_assert!(rel(r.var_sandwich, r.var_simplified) <= 1e-12);
        for v in variances(&r) {
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn meat_matches_closed_form(cs in clusters()) {
        let aggs = fit(&experiment(&cs)).aggregates;
        let m = meat(&aggs);
        let st: f64 = aggs.iter().map(|g| g.s_gt * g.s_gt).sum();
        let sc: f64 = aggs.iter().map(|g| g.s_gc * g.s_gc).sum();
        let scale = m.max_abs().max(1e-300);
        prop_assert!(m.is_symmetric());
        prop_assert!((m.a11 - (st + sc)).abs() <= 1e-12 * scale);
        prop_assert!((m.a12 - st).abs() <= 1e-12 * scale);
        prop_assert!((m.a22 - st).abs() <= 1e-12 * scale);
    }

    #[test]
    fn bread_inverse_closed_form(cs in clusters()) {
        let exp = experiment(&cs);
        let inv = invert2(&bread(&exp)).unwrap();
        let (nt, nc) = (exp.n_treat() as f64, exp.n_control() as f64);
        prop_assert!(rel(inv.a11, 1.0 / nc) <= 1e-14);
        prop_assert!(rel(inv.a12, -1.0 / nc) <= 1e-14);
        prop_assert!(rel(inv.a21, -1.0 / nc) <= 1e-14);
        prop_assert!(rel(inv.a22, 1.0 / nt + 1.0 / nc) <= 1e-14);
    }

    #[test]
    fn structural_invariants(cs in clusters()) {
        let exp = experiment(&cs);
        let f = fit(&exp);
        let abs_y: f64 = exp.units().iter().map(|u| u.y.abs()).sum();
        let (mut et, mut ec) = (0.0, 0.0);
        for (u, e) in exp.units().iter().zip(&f.residuals) {
            if u.w == 1 { et += e } else { ec += e }
        }
        prop_assert!(et.abs() <= 1e-10 * abs_y.max(1e-300));
        prop_assert!(ec.abs() <= 1e-10 * abs_y.max(1e-300));
        for g in &f.aggregates {
            prop_assert_eq!(g.s_gt * g.s_gc, 0.0);
            if g.w_g == 1 { prop_assert_eq!(g.s_gc, 0.0) } else { prop_assert_eq!(g.s_gt, 0.0) }
        }
        let n = |arm: Option<Arm>| f.aggregates.iter()
            .filter(|g| arm.is_none_or(|a| g.arm() == a)).map(|g| g.n_g).sum::<usize>();
        prop_assert_eq!(n(None), exp.n_units());
        prop_assert_eq!(n(Some(Arm::Treatment)), exp.n_treat());
        prop_assert_eq!(n(Some(Arm::Control)), exp.n_control());
    }

    #[test]
    fn shift_invariance(cs in clusters(), c in -1e3..1e3f64) {
        let base = analyze(&experiment(&cs), &AnalysisOptions::default()).unwrap();
        let shifted = validate(records(&cs, |y| y + c)).unwrap();
        let moved = analyze(&shifted, &AnalysisOptions::default()).unwrap();
        for (a, b) in variances(&base).into_iter().zip(variances(&moved)) {
            prop_assert!(rel(a, b) <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn scale_equivariance(cs in clusters(), k in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
        let base = analyze(&experiment(&cs), &AnalysisOptions::default()).unwrap();
        let scaled = validate(records(&cs, |y| k * y)).unwrap();
        let moved = analyze(&scaled, &AnalysisOptions::default()).unwrap();
        for (a, b) in variances(&base).into_iter().zip(variances(&moved)) {
            prop_assert!(rel(a * k * k, b) <= 1e-10, "{a} * {k}^2 vs {b}");
        }
    }

    #[test]
    fn row_permutation_is_exact(cs in clusters(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let recs = records(&cs, |y| y);
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = analyze(&validate(recs).unwrap(), &AnalysisOptions::default()).unwrap();
        let b = analyze(&validate(shuffled).unwrap(), &AnalysisOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sample_mode_rescales_each_arm(cs in clusters()) {
        let aggs = fit(&experiment(&cs)).aggregates;
        for arm in [Arm::Treatment, Arm::Control] {
            let mine: Vec<_> = aggs.iter().filter(|g| g.arm() == arm).cloned().collect();
            let g = mine.len() as f64;
            if mine.len() < 2 { continue; }
            let pop = delta_arm_variance(&arm_moments(&mine, MomentMode::Population).unwrap()).unwrap();
            let sample = delta_arm_variance(&arm_moments(&mine, MomentMode::Sample).unwrap()).unwrap();
            prop_assert!(rel(sample, pop * g / (g - 1.0)) <= 1e-12);
        }
    }
}
