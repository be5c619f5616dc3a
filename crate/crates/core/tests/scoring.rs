mod common;

use chrono::NaiveDate;
use common::{es_oracle, lrv_oracle, random_matrix, rng};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use vcg_core::forecast::ForecastEnsemble;
use vcg_core::scoring::*;
use vcg_core::spec::ModelSpec;

fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

proptest! {
    #[test]
    fn energy_score_matches_definition(seed in any::<u64>(), n in 2usize..=8, d in 1usize..=6) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, n, d, 10.0);
        let y: Vec<f64> = random_matrix(&mut r, 1, d, 10.0).remove(0);
        let got = energy_score(&flat(&x), d, &y).unwrap();
        prop_assert!((got - es_oracle(&x, &y)).abs() <= 1e-12);
    }

    #[test]
    fn crps_is_one_dimensional_es(seed in any::<u64>(), n in 2usize..=8) {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
        let y = r.random::<f64>();
        prop_assert_eq!(crps(&x, y).unwrap(), energy_score(&x, 1, &[y]).unwrap());
    }

    #[test]
    fn translation_and_scaling(seed in any::<u64>(), shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, 6, 3, 2.0);
        let y = vec![0.3, -0.2, 0.9];
        let base = energy_score(&flat(&x), 3, &y).unwrap();
        let moved: Vec<Vec<f64>> = x.iter().map(|v| v.iter().map(|a| a + shift).collect()).collect();
        let ym: Vec<f64> = y.iter().map(|a| a + shift).collect();
        prop_assert!((energy_score(&flat(&moved), 3, &ym).unwrap() - base).abs() < 1e-9);
        let scaled: Vec<Vec<f64>> = x.iter().map(|v| v.iter().map(|a| a * scale).collect()).collect();
        let ys: Vec<f64> = y.iter().map(|a| a * scale).collect();
        prop_assert!((energy_score(&flat(&scaled), 3, &ys).unwrap() - scale * base).abs() < 1e-9 * scale.max(1.0));
    }

    #[test]
    fn dm_is_antisymmetric(seed in any::<u64>(), h in 1usize..6) {
        let mut r = rng(seed);
        let a: Vec<f64> = (0..40).map(|_| r.random::<f64>()).collect();
        let b: Vec<f64> = (0..40).map(|_| r.random::<f64>()).collect();
        let ab = dm_test(&a, &b, h).unwrap();
        let ba = dm_test(&b, &a, h).unwrap();
        prop_assert_eq!(ab.statistic, -ba.statistic);
        prop_assert_eq!(ab.p_value, ba.p_value);
    }
}

#[test]
fn degenerate_forecast_at_the_observation_scores_zero() {
    let x = vec![vec![1.0, 2.0]; 5];
    assert_eq!(energy_score(&flat(&x), 2, &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(crps(&[4.0, 4.0], 1.5).unwrap(), 2.5);
}

#[test]
fn harvey_factor_values() {
    assert!((harvey_factor(100, 1) - (0.99f64).sqrt()).abs() < 1e-15);
    for (t, h) in [(100usize, 1usize), (50, 5), (250, 30)] {
        let (tf, hf) = (t as f64, h as f64);
        let expect = ((tf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / tf) / tf).sqrt();
        assert!((harvey_factor(t, h) - expect).abs() < 1e-12);
    }
}

#[test]
fn dm_matches_bartlett_oracle() {
    let mut r = rng(17);
    let a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() + r.random::<f64>()).collect();
    let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos() * 0.5 + r.random::<f64>()).collect();
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let h = 5;
    let lrv = lrv_oracle(&d, h - 1);
    assert!((bartlett_lrv(&d, h - 1) - lrv).abs() < 1e-14);
    let mean = d.iter().sum::<f64>() / 50.0;
    let expect = ((50.0 + 1.0 - 10.0 + 20.0 / 50.0) / 50.0f64).sqrt() * mean / (lrv / 50.0).sqrt();
    let got = dm_test(&a, &b, h).unwrap();
    assert!((got.statistic - expect).abs() < 1e-10, "{} vs {expect}", got.statistic);
    assert!(got.p_value > 0.0 && got.p_value <= 1.0);
    assert!(dm_test(&a[..9], &b[..9], 1).is_err());
}

#[test]
fn propriety_smoke_test() {
    // Batches of 20 forecast cases; the true N(0,1) forecast should beat a
    // shifted N(1,1) forecast on average in nearly every batch.
    let mut r = rng(2024);
    let batches = 200;
    let mut wins = 0;
    for _ in 0..batches {
        let (mut s_true, mut s_shift) = (0.0, 0.0);
        for _ in 0..20 {
            let y: [f64; 2] = [StandardNormal.sample(&mut r), StandardNormal.sample(&mut r)];
            let mut a = Vec::with_capacity(64);
            let mut b = Vec::with_capacity(64);
            for _ in 0..32 {
                let z: [f64; 2] = [StandardNormal.sample(&mut r), StandardNormal.sample(&mut r)];
                a.extend_from_slice(&z);
                b.extend_from_slice(&[z[0] + 1.0, z[1] + 1.0]);
            }
            s_true += energy_score(&a, 2, &y).unwrap();
            s_shift += energy_score(&b, 2, &y).unwrap();
        }
        if s_true < s_shift {
            wins += 1;
        }
    }
    assert!(wins as f64 >= 0.95 * batches as f64, "{wins}/{batches}");
}

fn ensemble(values: Vec<f64>, n: usize, h: usize, k: usize) -> ForecastEnsemble {
    ForecastEnsemble {
        origin_date: NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
        spec: ModelSpec::random_walk(true, false),
        seed: 0,
        n,
        horizon: h,
        dim: k,
        values,
        cap_applied: 0,
        exponentiated: false,
    }
}

#[test]
fn multiscope_reductions() {
    let mut r = rng(5);
    let (n, h, k) = (16, 30, 4);
    let origins: Vec<ForecastEnsemble> = (0..3)
        .map(|_| ensemble((0..n * h * k).map(|_| r.random::<f64>()).collect(), n, h, k))
        .collect();
    let realized: Vec<Vec<f64>> = (0..3).map(|_| (0..h * k).map(|_| r.random::<f64>()).collect()).collect();

    // One variable at one step is the CRPS averaged over origins.
    let (v, per) = multiscope_es(&origins, &realized, &Scope::single(2, vec![5])).unwrap();
    let mut expect = 0.0;
    for (e, y) in origins.iter().zip(&realized) {
        expect += crps(&e.cell(4, 2), y[4 * k + 2]).unwrap();
    }
    assert!((v - expect / 3.0).abs() < 1e-14);
    assert_eq!(per.len(), 3);

    // All variables at step 1 is a 4-dimensional ES.
    let (v1, _) = multiscope_es(&origins[..1], &realized[..1], &Scope::all(vec![1])).unwrap();
    let rows: Vec<Vec<f64>> = (0..n).map(|j| (0..k).map(|i| origins[0].get(j, 0, i)).collect()).collect();
    assert!((v1 - es_oracle(&rows, &realized[0][..k])).abs() < 1e-12);

    // The full block is 120-dimensional.
    let (v2, _) = multiscope_es(&origins[..1], &realized[..1], &Scope::all(Scope::range(1, 30))).unwrap();
    let rows: Vec<Vec<f64>> = (0..n).map(|j| origins[0].trajectory(j).to_vec()).collect();
    assert_eq!(rows[0].len(), 120);
    assert!((v2 - es_oracle(&rows, &realized[0])).abs() < 1e-12);

    assert!(multiscope_es(&origins, &realized, &Scope::all(vec![31])).is_err());
    assert!(multiscope_es(&origins, &realized, &Scope::single(4, vec![1])).is_err());
}

fn report(model: &str, scope: &str, value: f64, losses: Vec<f64>) -> ScoreReport {
    ScoreReport {
        model_id: model.into(),
        metric: Metric::Es,
        scope: scope.into(),
        horizon: 1,
        value,
        losses,
    }
}

#[test]
fn improvement_table_fixture() {
    let base_a: Vec<f64> = (0..12).map(|i| 1.0 + 0.1 * i as f64).collect();
    let base_b: Vec<f64> = (0..12).map(|i| 2.0 - 0.05 * i as f64).collect();
    let m1: Vec<f64> = base_a.iter().enumerate().map(|(i, v)| v - 0.02 * (i % 3) as f64).collect();
    let m2: Vec<f64> = base_b.iter().map(|v| v * 1.1).collect();
    let reports = vec![
        report("base", "A", 100.0, base_a.clone()),
        report("base", "B", 50.0, base_b.clone()),
        report("m1", "A", 88.0, m1.clone()),
        report("m1", "B", 55.0, base_b.clone()),
        report("m2", "A", 100.0, base_a.clone()),
        report("m2", "B", 40.0, m2.clone()),
    ];
    let t = improvement_table(&reports, "base", Metric::Es).unwrap();
    assert_eq!(t.scopes, vec!["A", "B"]);
    let ids: Vec<&str> = t.rows.iter().map(|r| r.model_id.as_str()).collect();
    assert_eq!(ids, vec!["base", "m1", "m2"]);
    let pct = |r: usize, c: usize| t.rows[r].cells[c].improvement_pct.unwrap();
    let dm = |r: usize, c: usize| t.rows[r].cells[c].dm_stat.unwrap();
    assert_eq!(pct(0, 0), 0.0);
    assert_eq!(dm(0, 0), 0.0);
    assert!((pct(1, 0) - 12.0).abs() < 1e-12);
    assert!((pct(1, 1) + 10.0).abs() < 1e-12);
    assert_eq!(pct(2, 0), 0.0);
    assert!((pct(2, 1) - 20.0).abs() < 1e-12);
    assert_eq!(dm(1, 1), 0.0);
    assert_eq!(dm(1, 0), dm_test(&m1, &base_a, 1).unwrap().statistic);
    assert_eq!(dm(2, 1), dm_test(&m2, &base_b, 1).unwrap().statistic);
    assert!(dm(2, 1) > 0.0);

    let md = t.to_markdown();
    assert!(md.contains("| base | 100.0000 | 50.0000 |"), "{md}");
    assert!(md.lines().count() == 5);
    let mut csv = Vec::new();
    t.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 7);

    assert!(improvement_table(&reports[2..], "base", Metric::Es).is_err());
}
