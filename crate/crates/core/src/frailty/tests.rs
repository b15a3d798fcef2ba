use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use super::*;
use crate::coxph::{
    breslow_hazard, split_episodes, BoundaryRule, IntervalPartition, TieMethod,
};
use crate::data::{Dataset, SubjectRecord};
use crate::testutil::table1;

fn dataset(rows: &[(f64, bool, &str, f64)], followup: f64) -> Dataset {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, &(time, event, cluster, x))| SubjectRecord {
            id: (i + 1).to_string(),
            time,
            event,
            cluster: cluster.into(),
            covariates: vec![x],
        })
        .collect();
    Dataset::from_records(records, vec!["x".into()], Some(followup))
}

fn partition(taus: &[f64], followup: f64) -> IntervalPartition {
    IntervalPartition::new(taus.to_vec(), followup, BoundaryRule::LeftClosed).unwrap()
}

fn random_clustered(rng: &mut ChaCha8Rng, n: usize, clusters: usize) -> Dataset {
    loop {
        let rows: Vec<(f64, bool, String, f64)> = (0..n)
            .map(|i| {
                let x = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
                let time = (rng.gen_range(1..=95) as f64).min(99.0);
                let cl = format!("c{}", i % clusters);
                (time, rng.gen_bool(0.75), cl, x)
            })
            .collect();
        let refs: Vec<(f64, bool, &str, f64)> =
            rows.iter().map(|(t, e, c, x)| (*t, *e, c.as_str(), *x)).collect();
        let ds = dataset(&refs, 100.0);
        let times = ds.event_times();
        if times.len() >= 6 {
            return ds;
        }
    }
}

/// Median event time as a change point leaving events on both sides.
fn middle_tau(ds: &Dataset) -> f64 {
    let times = ds.event_times();
    times[times.len() / 2]
}

#[test]
fn e_step_shape_is_exact() {
    let ds = table1();
    let p = partition(&[50.0], 100.0);
    let ep = split_episodes(&ds, &p).unwrap();
    let beta = vec![vec![0.2], vec![-0.5]];
    let theta = [0.3, 2.5];
    let h = breslow_hazard(&ep, &beta, TieMethod::Breslow).unwrap();
    let st = e_step(&ep, &beta, &theta, &h).unwrap();
    for k in 0..2 {
        for m in 0..3 {
            assert!((st.a[k][m] - st.d[k][m] as f64 - 1.0 / theta[k]).abs() < 1e-12);
            assert!(st.b[k][m] >= 1.0 / theta[k]);
            assert_eq!(st.v_hat[k][m], st.a[k][m] / st.b[k][m]);
        }
    }
}

#[test]
fn event_counts_match_table1() {
    let ds = table1();
    let ep = split_episodes(&ds, &partition(&[50.0], 100.0)).unwrap();
    assert_eq!(ep.event_counts(), vec![vec![3, 3, 0], vec![3, 3, 5]]);
    let right = IntervalPartition::new(vec![50.0], 100.0, BoundaryRule::RightClosed).unwrap();
    let ep = split_episodes(&ds, &right).unwrap();
    assert_eq!(ep.event_counts(), vec![vec![3, 4, 0], vec![3, 2, 5]]);
}

#[test]
fn unexposed_cluster_has_unit_frailty() {
    // Cluster b leaves before the first event, so it has no exposure.
    let ds = dataset(
        &[
            (1.0, false, "b", 0.0),
            (2.0, true, "a", 1.0),
            (3.0, true, "a", 0.0),
            (6.0, true, "a", 1.0),
            (8.0, false, "a", 0.0),
        ],
        10.0,
    );
    let ep = split_episodes(&ds, &partition(&[4.0], 10.0)).unwrap();
    let beta = vec![vec![0.4], vec![0.1]];
    let h = breslow_hazard(&ep, &beta, TieMethod::Breslow).unwrap();
    let st = e_step(&ep, &beta, &[0.7, 0.7], &h).unwrap();
    assert_eq!(st.v_hat[0][1], 1.0);
    assert_eq!(st.v_hat[1][1], 1.0);
}

#[test]
fn e_step_rate_matches_hand_summation() {
    // Two clusters, change point at 4, β = 0 so every jump is 1/|risk set|.
    let ds = dataset(
        &[
            (2.0, true, "a", 0.0),
            (3.0, true, "b", 1.0),
            (5.0, false, "a", 1.0),
            (6.0, true, "b", 0.0),
            (8.0, true, "a", 1.0),
        ],
        10.0,
    );
    let ep = split_episodes(&ds, &partition(&[4.0], 10.0)).unwrap();
    let beta = vec![vec![0.0], vec![0.0]];
    let h = breslow_hazard(&ep, &beta, TieMethod::Breslow).unwrap();
    let theta = [0.5, 2.0];
    let st = e_step(&ep, &beta, &theta, &h).unwrap();
    // Interval 1 jumps: t=2 (5 at risk), t=3 (4 at risk).
    let (j2, j3) = (1.0 / 5.0, 1.0 / 4.0);
    // Interval 2 jumps: t=6 (s4, s5 at risk), t=8 (s5).
    let (j6, j8) = (1.0 / 2.0, 1.0);
    let b1a = 2.0 + j2 + (j2 + j3) + (j2 + j3); // s1, s3, s5
    let b1b = 2.0 + (j2 + j3) + (j2 + j3); // s2, s4
    let b2a = 0.5 + 0.0 + (j6 + j8); // s3 (censored at 5), s5
    let b2b = 0.5 + j6; // s4
    assert!((st.b[0][0] - b1a).abs() < 1e-12);
    assert!((st.b[0][1] - b1b).abs() < 1e-12);
    assert!((st.b[1][0] - b2a).abs() < 1e-12);
    assert!((st.b[1][1] - b2b).abs() < 1e-12);
}

#[test]
fn design_exposure_agrees_with_pooled_hazard_under_breslow() {
    let ds = table1();
    for tau in [30.0, 50.0, 80.0] {
        let mut ep = split_episodes(&ds, &partition(&[tau], 100.0)).unwrap();
        let v = vec![vec![1.3, 0.7, 1.1], vec![0.6, 1.4, 0.9]];
        ep.set_frailty_offsets(&v);
        let beta = vec![vec![-0.3], vec![0.8]];
        let h = breslow_hazard(&ep, &beta, TieMethod::Breslow).unwrap();
        let pooled = e_step(&ep, &beta, &[0.4, 0.4], &h).unwrap();
        let designs = crate::coxph::interval_designs(&ep, false);
        let direct = estep::e_step_designs(
            &designs,
            &beta,
            &[0.4, 0.4],
            TieMethod::Breslow,
            ep.event_counts(),
            3,
        )
        .unwrap();
        for k in 0..2 {
            for m in 0..3 {
                assert!((pooled.b[k][m] - direct.b[k][m]).abs() < 1e-12, "{tau} {k} {m}");
            }
        }
    }
}

#[test]
fn homogeneous_frailties_give_floor() {
    let st = FrailtyState {
        theta: vec![1.0],
        a: vec![vec![3.0, 5.0, 2.0]],
        b: vec![vec![3.0, 5.0, 2.0]],
        v_hat: vec![vec![1.0; 3]],
        d: vec![vec![2, 4, 1]],
    };
    assert_eq!(m_step_theta(&st, 0), THETA_FLOOR);
}

fn grid_argmax(v: &[f64], d: &[usize], points: usize) -> (f64, f64) {
    let step = (THETA_MAX - THETA_FLOOR) / (points - 1) as f64;
    let mut best = (THETA_FLOOR, f64::NEG_INFINITY);
    for i in 0..points {
        let t = THETA_FLOOR + step * i as f64;
        let f = conditional_theta_loglik(t, v, d);
        if f > best.1 {
            best = (t, f);
        }
    }
    best
}

#[test]
fn theta_update_matches_dense_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut interior = 0;
    for _ in 0..12 {
        let m = rng.gen_range(2..6);
        let v: Vec<f64> = (0..m).map(|_| (rng.gen_range(-2.5..1.5f64)).exp()).collect();
        let d: Vec<usize> = (0..m).map(|_| rng.gen_range(0..6)).collect();
        let st = FrailtyState {
            theta: vec![1.0],
            a: vec![vec![1.0; m]],
            b: vec![vec![1.0; m]],
            v_hat: vec![v.clone()],
            d: vec![d.clone()],
        };
        let got = m_step_theta(&st, 0);
        let (grid_t, grid_f) = grid_argmax(&v, &d, 1_000_000);
        let f = conditional_theta_loglik(got, &v, &d);
        assert!(f >= grid_f - 1e-9, "{got} {grid_t}");
        assert!((got - grid_t).abs() <= 1e-4, "{got} vs grid {grid_t}");
        if got > 1e-3 && got < THETA_MAX {
            interior += 1;
        }
    }
    assert!(interior > 0);
}

#[test]
fn conditional_loglik_matches_textbook_form() {
    let v = [1.7_f64, 0.4, 0.95];
    let d = [3, 0, 2];
    for theta in [0.05, 0.8, 3.0, 40.0] {
        let nu: f64 = 1.0 / theta;
        let textbook = -3.0 * (nu * f64::ln(theta) + ln_gamma(nu))
            + v.iter()
                .zip(&d)
                .map(|(&vm, &dm)| (nu + dm as f64 - 1.0) * vm.ln() - vm / theta)
                .sum::<f64>();
        let stable = conditional_theta_loglik(theta, &v, &d);
        assert!((textbook - stable).abs() < 1e-9 * (1.0 + textbook.abs()), "{theta}");
    }
}

#[test]
fn table1_frailty_fit_at_80() {
    let ds = table1();
    let fit = em_fit(&ds, &partition(&[80.0], 100.0), &EmOptions::default()).unwrap();
    let theta = fit.theta.as_ref().unwrap();
    assert!(theta[0] <= 0.005);
    assert!((theta[1] - 1.7735).abs() < 2e-3, "{theta:?}");
    assert!((fit.beta[0][0] + 0.3518).abs() < 5e-4);
    assert!((fit.beta[1][0] + 1.5395).abs() < 5e-4);
    assert!(fit.converged);
    assert_eq!(fit.loglik_total, fit.loglik_l1 + fit.loglik_l2);
}

#[test]
fn marginal_fit_is_a_posterior_fixed_point() {
    // At the fitted θ, refitting with θ held fixed reproduces the same
    // coefficients and frailties through the plain EM iteration.
    let ds = table1();
    let p = partition(&[80.0], 100.0);
    let fit = em_fit(&ds, &p, &EmOptions::default()).unwrap();
    let theta = fit.theta.clone().unwrap();
    // Only interval 2 carries frailty; use a 1-interval problem restricted to it.
    let second: Vec<SubjectRecord> = ds
        .subjects
        .iter()
        .filter(|s| s.time >= 80.0)
        .map(|s| SubjectRecord {
            id: s.id.clone(),
            time: s.time - 80.0,
            event: s.event,
            cluster: ds.cluster_labels[s.cluster].clone(),
            covariates: s.covariates.clone(),
        })
        .collect();
    let tail = Dataset::from_records(second, ds.covariate_names.clone(), Some(20.0));
    let opts = EmOptions {
        theta_update: ThetaUpdate::Fixed(theta[1]),
        tol: 1e-10,
        max_iter: 5000,
        ..Default::default()
    };
    let em = em_fit(&tail, &partition(&[], 20.0), &opts).unwrap();
    assert!(em.converged);
    assert!((em.beta[0][0] - fit.beta[1][0]).abs() < 1e-6);
    let v_em = &em.v_hat.as_ref().unwrap()[0];
    let v_fit = &fit.v_hat.as_ref().unwrap()[1];
    for (a, b) in v_em.iter().zip(v_fit) {
        assert!((a - b).abs() < 1e-6, "{v_em:?} {v_fit:?}");
    }
}

#[test]
fn pinned_theta_reduces_to_cox_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sets = vec![(table1(), 50.0), (table1(), 80.0)];
    for _ in 0..20 {
        let ds = random_clustered(&mut rng, 30, 3);
        let tau = middle_tau(&ds);
        sets.push((ds, tau));
    }
    let opts = EmOptions {
        theta_update: ThetaUpdate::Fixed(THETA_FLOOR),
        ..Default::default()
    };
    for (ds, tau) in &sets {
        let p = partition(&[*tau], ds.followup);
        let plain = match fit_no_frailty(ds, &p, TieMethod::Efron) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let frail = em_fit(ds, &p, &opts).unwrap();
        for (a, b) in plain.beta.iter().flatten().zip(frail.beta.iter().flatten()) {
            assert!((a - b).abs() < 1e-4);
        }
        for v in frail.v_hat.as_ref().unwrap().iter().flatten() {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn em_iterations_never_decrease_full_loglik() {
    let ds = table1();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut cases: Vec<(Dataset, f64)> = ds
        .event_times()
        .into_iter()
        .filter(|&t| t > 25.0)
        .map(|t| (ds.clone(), t))
        .collect();
    for _ in 0..10 {
        let r = random_clustered(&mut rng, 40, 4);
        let tau = middle_tau(&r);
        cases.push((r, tau));
    }
    for update in [
        ThetaUpdate::Conditional,
        ThetaUpdate::Fixed(0.5),
        ThetaUpdate::Fixed(2.0),
    ] {
        let opts = EmOptions {
            theta_update: update,
            trace: true,
            ..Default::default()
        };
        for (d, tau) in &cases {
            let Ok(fit) = em_fit(d, &partition(&[*tau], d.followup), &opts) else {
                continue;
            };
            for w in fit.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-6, "{update:?} τ={tau}: {} → {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn full_loglik_matches_hand_expansion() {
    let ds = dataset(
        &[
            (2.0, true, "a", 0.0),
            (3.0, true, "b", 1.0),
            (5.0, false, "a", 1.0),
            (6.0, true, "b", 0.0),
            (8.0, true, "a", 1.0),
        ],
        10.0,
    );
    let p = partition(&[4.0], 10.0);
    let (b1, b2) = (0.3_f64, -0.2_f64);
    let v = vec![vec![1.2, 0.8], vec![0.9, 1.1]];
    let theta = vec![0.5, 2.0];
    let fit = FitResult {
        taus: vec![4.0],
        beta: vec![vec![b1], vec![b2]],
        theta: Some(theta.clone()),
        v_hat: Some(v.clone()),
        partial_loglik: 0.0,
        loglik_l1: 0.0,
        loglik_l2: 0.0,
        loglik_total: 0.0,
        marginal_loglik: None,
        iterations: 0,
        converged: true,
        trace: vec![],
        warnings: vec![],
    };
    let got = full_loglik(&ds, &p, &fit, TieMethod::Breslow).unwrap();

    // Interval 1: all five at risk until 4.
    let w1 = [v[0][0], v[0][1] * b1.exp(), v[0][0] * b1.exp(), v[0][1], v[0][0] * b1.exp()];
    let j2 = 1.0 / w1.iter().sum::<f64>();
    let j3 = 1.0 / w1[1..].iter().sum::<f64>();
    let l1_first = j2.ln() + j3.ln() + b1 - w1[0] * j2 - (w1[1] + w1[2] + w1[3] + w1[4]) * (j2 + j3);
    // Interval 2: s3 censored at 5, s4 fails at 6, s5 at 8.
    let w2 = [v[1][0] * b2.exp(), v[1][1], v[1][0] * b2.exp()];
    let j6 = 1.0 / (w2[1] + w2[2]);
    let j8 = 1.0 / w2[2];
    let l1_second = j6.ln() + j8.ln() + b2 - w2[1] * j6 - w2[2] * (j6 + j8);
    let d = [[1.0, 1.0], [1.0, 1.0]];
    let l2: f64 = (0..2)
        .map(|k| {
            let t = theta[k];
            -2.0 * (f64::ln(t) / t + ln_gamma(1.0 / t))
                + (0..2)
                    .map(|m| (1.0 / t + d[k][m] - 1.0) * v[k][m].ln() - v[k][m] / t)
                    .sum::<f64>()
        })
        .sum();
    assert!((got.l1 - (l1_first + l1_second)).abs() < 1e-10);
    assert!((got.l2 - l2).abs() < 1e-10);
    assert_eq!(got.total, got.l1 + got.l2);
}

#[test]
fn constant_covariate_gives_zero_coefficient() {
    let ds = table1();
    let flat: Vec<SubjectRecord> = ds
        .subjects
        .iter()
        .map(|s| SubjectRecord {
            id: s.id.clone(),
            time: s.time,
            event: s.event,
            cluster: ds.cluster_labels[s.cluster].clone(),
            covariates: vec![1.0],
        })
        .collect();
    let flat = Dataset::from_records(flat, vec!["one".into()], Some(100.0));
    let fit = em_fit(&flat, &partition(&[50.0], 100.0), &EmOptions::default()).unwrap();
    for b in fit.beta.iter().flatten() {
        assert!(b.abs() < 1e-8);
    }
    assert!(fit.theta.unwrap().iter().all(|&t| t >= THETA_FLOOR));
}

#[test]
fn single_cluster_is_rejected() {
    let ds = dataset(&[(2.0, true, "a", 0.0), (3.0, true, "a", 1.0)], 10.0);
    let err = em_fit(&ds, &partition(&[], 10.0), &EmOptions::default()).unwrap_err();
    assert_eq!(err, crate::FitError::TooFewClusters(1));
}

#[test]
fn pinned_fixed_theta_is_validated() {
    let opts = EmOptions {
        theta_update: ThetaUpdate::Fixed(0.0),
        ..Default::default()
    };
    assert!(em_fit(&table1(), &partition(&[50.0], 100.0), &opts).is_err());
}
