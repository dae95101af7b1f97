//! Estimator checks against brute-force reference computations.

use choicebench_stats::bh::bh_step_up;
use choicebench_stats::lpm::{fit_lpm, ModelSpec};
use choicebench_stats::vcov::{cluster_vcov, one_way, SmallSample};
use choicebench_stats::Frame;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random two-option trials with binary regressors.
fn random_design(rng: &mut ChaCha8Rng, trials: usize) -> (Frame, Vec<usize>) {
    let mut c = Vec::new();
    let mut p = Vec::new();
    let mut n = Vec::new();
    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut codes = Vec::new();
    for trial in 0..trials {
        let cheaper_first = rng.random_bool(0.5);
        let nudge = rng.random_range(0..3);
        let chosen = rng.random_range(0..2);
        for slot in 0..2 {
            c.push(((slot == 0) == cheaper_first) as u8 as f64);
            p.push((slot == 0) as u8 as f64);
            n.push((nudge == slot + 1) as u8 as f64);
            y.push((chosen == slot) as u8 as f64);
            t.push(format!("t{trial:03}"));
            codes.push(trial);
        }
    }
    let mut f = Frame::new();
    f.add_numeric("y", y).unwrap();
    f.add_numeric("c", c).unwrap();
    f.add_numeric("p", p).unwrap();
    f.add_numeric("n", n).unwrap();
    f.add_factor("trial", &t).unwrap();
    (f, codes)
}

/// OLS with one dummy per trial, solved by SVD.
fn dummy_ols(x: &DMatrix<f64>, y: &DVector<f64>, trials: &[usize], n_trials: usize) -> DVector<f64> {
    let k = x.ncols();
    let full = DMatrix::from_fn(x.nrows(), k + n_trials, |i, j| {
        if j < k {
            x[(i, j)]
        } else {
            (trials[i] == j - k) as u8 as f64
        }
    });
    let svd = full.svd(true, true);
    let beta = svd.solve(y, 1e-12).unwrap();
    beta.rows(0, k).into_owned()
}

#[test]
fn demeaned_fit_matches_dummy_variable_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 200 {
        let trials = rng.random_range(6..20);
        let (frame, codes) = random_design(&mut rng, trials);
        let spec = ModelSpec::new("y", &["c", "p", "n"]).order(Some(2)).absorb("trial");
        let Ok(fit) = fit_lpm(&frame, &spec) else { continue };
        let raw = fit.design.matrix(&frame).select_columns(&fit.retained);
        let y = DVector::from_column_slice(frame.numeric("y").unwrap());
        let oracle = dummy_ols(&raw, &y, &codes, trials);
        let diff = (&fit.coef - oracle).abs().max();
        assert!(diff <= 1e-8, "max coefficient difference {diff}");
        checked += 1;
    }
}

#[test]
fn six_trial_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (frame, codes) = random_design(&mut rng, 6);
    let fit = fit_lpm(&frame, &ModelSpec::new("y", &["c", "p", "n"]).absorb("trial")).unwrap();
    let raw = fit.design.matrix(&frame).select_columns(&fit.retained);
    let y = DVector::from_column_slice(frame.numeric("y").unwrap());
    assert!((&fit.coef - dummy_ols(&raw, &y, &codes, 6)).abs().max() <= 1e-8);
}

/// Sum over clusters of score outer products, accumulated row by row.
fn brute_sandwich(x: &DMatrix<f64>, e: &DVector<f64>, cluster: &[usize]) -> DMatrix<f64> {
    let k = x.ncols();
    let bread = (x.transpose() * x).try_inverse().unwrap();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    let max = *cluster.iter().max().unwrap();
    for g in 0..=max {
        let mut s = DVector::<f64>::zeros(k);
        for i in 0..x.nrows() {
            if cluster[i] == g {
                for j in 0..k {
                    s[j] += x[(i, j)] * e[i];
                }
            }
        }
        meat += &s * s.transpose();
    }
    &bread * meat * &bread
}

#[test]
fn one_way_matches_brute_force_on_ten_rows() {
    let x: Vec<f64> = vec![0.3, 1.2, -0.7, 2.2, 0.0, 1.1, -1.4, 0.8, 2.9, -0.2];
    let y: Vec<f64> = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let g = ["a", "a", "b", "b", "b", "c", "c", "d", "d", "d"];
    let mut f = Frame::new();
    f.add_numeric("x", x).unwrap();
    f.add_numeric("y", y).unwrap();
    f.add_factor("g", &g).unwrap();
    let fit = fit_lpm(&f, &ModelSpec::new("y", &["x"])).unwrap();
    let codes: Vec<usize> = g.iter().map(|s| (s.as_bytes()[0] - b'a') as usize).collect();
    let (v, n) = one_way(&fit, &codes, SmallSample::None).unwrap();
    assert_eq!(n, 4);
    let oracle = brute_sandwich(&fit.x, &fit.residuals, &codes);
    assert!((v - oracle).abs().max() <= 1e-10);
}

#[test]
fn two_way_identity_on_three_by_three_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut f = Frame::new();
    let (mut x, mut y, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..36 {
        x.push(rng.random_range(-1.0..1.0));
        y.push(rng.random_range(0..2) as f64);
        a.push(["a0", "a1", "a2"][i % 3]);
        b.push(["b0", "b1", "b2"][(i / 3) % 3]);
    }
    f.add_numeric("x", x).unwrap();
    f.add_numeric("y", y).unwrap();
    f.add_factor("a", &a).unwrap();
    f.add_factor("b", &b).unwrap();
    let fit = fit_lpm(&f, &ModelSpec::new("y", &["x"])).unwrap();
    let ca: Vec<usize> = (0..36).map(|i| i % 3).collect();
    let cb: Vec<usize> = (0..36).map(|i| (i / 3) % 3).collect();
    let cab: Vec<usize> = (0..36).map(|i| ca[i] * 3 + cb[i]).collect();
    let (n, k) = (36.0, 2.0);
    let scale = |g: f64| g / (g - 1.0) * (n - 1.0) / (n - k);
    let va = brute_sandwich(&fit.x, &fit.residuals, &ca) * scale(3.0);
    let vb = brute_sandwich(&fit.x, &fit.residuals, &cb) * scale(3.0);
    let vab = brute_sandwich(&fit.x, &fit.residuals, &cab) * scale(9.0);
    let expected = va + vb - vab;
    let v = cluster_vcov(&fit, &f, &["a", "b"], SmallSample::Cgm).unwrap();
    assert!((&v.raw - &expected).abs().max() <= 1e-10);
    if !v.repaired {
        assert!((v.matrix - expected).abs().max() <= 1e-10);
    }
}

/// Adjusted value = min over p_j >= p_i of m p_j / rank_j.
fn bh_textbook(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p.iter()
        .map(|pi| {
            let first = sorted.iter().position(|s| s == pi).unwrap();
            (first..m)
                .map(|j| sorted[j] * (m as f64 / (j + 1) as f64))
                .fold(f64::INFINITY, f64::min)
                .min(1.0)
        })
        .collect()
}

#[test]
fn bh_matches_textbook_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let m = rng.random_range(1..30);
        let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powi(3)).collect();
        let ours = bh_step_up(&p).unwrap();
        for (a, b) in ours.iter().zip(bh_textbook(&p)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
