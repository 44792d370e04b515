mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rkfusion::agent::{local_update, psi_norm, tbar_norm_at};
use rkfusion::fusion::{build_targets, fuse, reconstruct_targets, ridge_fit};
use rkfusion::linalg;
use rkfusion::maea3::{product_constants, select_bounded_subsequence, SelectionVerdict};
use rkfusion::spaces::*;
use rkfusion::transfer::{build_transfer, download, upload, RANK_TOL};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn kernels_symmetric_and_grams_psd(seed in any::<u64>()) {
        let Some(fs) = random_fusion(seed, true) else { return Ok(()) };
        let mut r = rng(seed ^ 1);
        for _ in 0..10 {
            let (x, y) = (point(&mut r), point(&mut r));
            for s in [fs.agent(1), fs.agent(2)] {
                prop_assert_eq!(kernel_eval(s, &x, &y).unwrap(), kernel_eval(s, &y, &x).unwrap());
            }
            prop_assert_eq!(kernel_eval(&fs, &x, &y).unwrap(), kernel_eval(&fs, &y, &x).unwrap());
        }
        for g in [&fs.gram_full, &fs.agent(1).gram_local, &fs.agent(2).gram_local] {
            prop_assert!((g - g.transpose()).amax() == 0.0);
            prop_assert!(linalg::lambda_min(g) >= -1e-12 * g.amax());
        }
    }

    #[test]
    fn fusion_kernel_is_the_sum(seed in any::<u64>()) {
        let Some(fs) = random_fusion(seed, seed % 2 == 0) else { return Ok(()) };
        let mut r = rng(seed ^ 2);
        for _ in 0..10 {
            let (x, y) = (point(&mut r), point(&mut r));
            let sum = kernel_eval(fs.agent(1), &x, &y).unwrap() + kernel_eval(fs.agent(2), &x, &y).unwrap();
            prop_assert!((kernel_eval(&fs, &x, &y).unwrap() - sum).abs() <= 1e-14 * sum.abs().max(1.0));
        }
    }

    #[test]
    fn reproducing_property(seed in any::<u64>()) {
        let Some(fs) = random_fusion(seed, true) else { return Ok(()) };
        let mut r = rng(seed ^ 3);
        let s = fs.agent(1);
        let f = RkhsFunction::new(s.tag(), vector(&mut r, s.basis_count())).unwrap();
        let g = RkhsFunction::new(SpaceTag::Fusion, vector(&mut r, fs.basis_count())).unwrap();
        for _ in 0..5 {
            let x = point(&mut r);
            let kx = section_function(s, &x).unwrap();
            let lhs = rkhs_inner(s, &f, &kx).unwrap();
            prop_assert!((lhs - evaluate(s, &f, &x).unwrap()).abs() <= 1e-7 * (1.0 + lhs.abs()));
            let kx = section_function(&fs, &x).unwrap();
            let lhs = rkhs_inner(&fs, &g, &kx).unwrap();
            prop_assert!((lhs - evaluate(&fs, &g, &x).unwrap()).abs() <= 1e-7 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn upload_preserves_values_and_contracts(seed in any::<u64>()) {
        let Some(fs) = random_fusion(seed, true) else { return Ok(()) };
        let mut r = rng(seed ^ 4);
        for i in 1..=2 {
            let s = fs.agent(i);
            let f = RkhsFunction::new(s.tag(), vector(&mut r, s.basis_count())).unwrap();
            let up = upload(&fs, &f).unwrap();
            for _ in 0..20 {
                let x = point(&mut r);
                let (a, b) = (evaluate(s, &f, &x).unwrap(), evaluate(&fs, &up, &x).unwrap());
                prop_assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()), "{a} vs {b}");
            }
            let (nh, ni) = (rkhs_norm(&fs, &up).unwrap(), rkhs_norm(s, &f).unwrap());
            prop_assert!(nh <= ni * (1.0 + 1e-8) + 1e-12);
        }
    }

    #[test]
    fn targets_round_trip(seed in any::<u64>(), log_rho in -3.0f64..6.0) {
        let Some(fs) = random_fusion(seed, true) else { return Ok(()) };
        let mut r = rng(seed ^ 5);
        let rho = 10f64.powf(log_rho);
        for i in 1..=2 {
            let s = fs.agent(i);
            let a = vector(&mut r, s.basis_count());
            let f = RkhsFunction::new(s.tag(), a.clone()).unwrap();
            let y = reconstruct_targets(s, &f, rho).unwrap();
            let back = ridge_fit(&s.gram_local, &y, rho).unwrap();
            prop_assert!((back - &a).amax() <= 1e-8 * a.amax().max(1.0));
        }
    }

    #[test]
    fn fuse_solves_normal_equations(seed in any::<u64>(), log_rho in -2.0f64..6.0) {
        let Some(fs) = random_fusion(seed, true) else { return Ok(()) };
        let mut r = rng(seed ^ 6);
        let rho = 10f64.powf(log_rho);
        let ups: Vec<RkhsFunction> = (1..=2).map(|i| {
            let s = fs.agent(i);
            upload(&fs, &RkhsFunction::new(s.tag(), vector(&mut r, s.basis_count())).unwrap()).unwrap()
        }).collect();
        let t = build_targets(&fs, [&ups[0], &ups[1]], [rho, rho]).unwrap();
        let beta = fuse(&fs, &t, rho).unwrap().coefficients;
        let n = fs.basis_count();
        let y = t.stacked();
        let resid = (&fs.gram_full + DMatrix::identity(n, n) * rho) * &beta - &y;
        prop_assert!(resid.amax() <= 1e-9 * y.amax().max(1.0));
    }

    #[test]
    fn lbar_sum_is_identity_and_download_isometric(seed in any::<u64>()) {
        let Some(fs) = random_fusion(seed, true) else { return Ok(()) };
        let ops = build_transfer(&fs, RANK_TOL).unwrap();
        let sum = fs.metric.op_coords(&(&ops.lbar[0] + &ops.lbar[1]));
        let r_h = fs.metric.rank;
        prop_assert!((sum - DMatrix::<f64>::identity(r_h, r_h)).amax() <= 1e-8);
        prop_assert!((ops.c_d - 1.0).abs() <= 1e-8);
        let mut r = rng(seed ^ 7);
        for _ in 0..5 {
            let f = RkhsFunction::new(SpaceTag::Fusion, vector(&mut r, fs.basis_count())).unwrap();
            let [d1, d2] = download(&fs, &ops, &f).unwrap();
            let lhs = rkhs_norm(fs.agent(1), &d1).unwrap().powi(2) + rkhs_norm(fs.agent(2), &d2).unwrap().powi(2);
            let rhs = rkhs_norm(&fs, &f).unwrap().powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1.0));
        }
    }

    #[test]
    fn local_update_bounded_by_exact_norm(seed in any::<u64>(), log_rho in -2.0f64..6.0, y in -3.0f64..3.0) {
        let Some(fs) = random_fusion(seed, true) else { return Ok(()) };
        let mut r = rng(seed ^ 8);
        let rho = 10f64.powf(log_rho);
        let s = fs.agent(1);
        let prev = RkhsFunction::new(s.tag(), vector(&mut r, s.basis_count())).unwrap();
        let x = point(&mut r);
        let out = local_update(s, &prev, &x, y, rho).unwrap();
        let input = (rkhs_norm(s, &prev).unwrap().powi(2) + psi_norm(s, &x, y).unwrap().powi(2)).sqrt();
        let bound = tbar_norm_at(s, rho, &x).unwrap() * input;
        prop_assert!(rkhs_norm(s, &out).unwrap() <= bound * (1.0 + 1e-8) + 1e-12);
    }

    #[test]
    fn selection_is_increasing_and_converges_to_c5(norms in prop::collection::vec(0.0f64..3.0, 1..200)) {
        let s = select_bounded_subsequence(&norms).unwrap();
        prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
        if s.verdict == SelectionVerdict::Selected {
            for (l, &i) in s.indices.iter().enumerate() {
                prop_assert!((norms[i] / s.c5 - 1.0).abs() <= 2f64.powi(-(l as i32 + 1)));
            }
            let sel: Vec<f64> = s.indices.iter().map(|&i| norms[i]).collect();
            prop_assert_eq!((s.c_m1, s.c_m2), product_constants(&sel));
        } else {
            prop_assert!(s.indices.is_empty());
        }
    }

    #[test]
    fn product_constants_dominate_every_product(a in prop::collection::vec(0.0f64..2.0, 1..30)) {
        let (c1, c2) = product_constants(&a);
        let mut prefix = 1.0;
        for (k, v) in a.iter().enumerate() {
            prefix *= v;
            prop_assert!(prefix <= c1 * (1.0 + 1e-12));
            let mut w = 1.0;
            for u in &a[k..] {
                w *= u;
                prop_assert!(w <= c2 * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn psi_norm_matches_embedding() {
    let fs = fixture();
    let s = fs.agent(2);
    let p = rkfusion::agent::psi_embed(s, &[1.3], -0.7).unwrap();
    let direct = rkhs_norm(s, &p.function).unwrap();
    assert!((direct - psi_norm(s, &[1.3], -0.7).unwrap()).abs() <= 1e-12);
    let _ = DVector::<f64>::zeros(0);
}
