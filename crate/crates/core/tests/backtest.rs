mod common;

use common::{rw_params, sim};
use vcg_core::backtest::*;
use vcg_core::data::{Panel, Transform};
use vcg_core::spec::ModelSpec;

fn small_config(specs: &[ModelSpec]) -> StudyConfig {
    let mut c = StudyConfig::new(specs, 11);
    c.window = 220;
    c.horizon = 5;
    c.n_origins = 3;
    c.n_trajectories = 64;
    c
}

fn data() -> Panel {
    let spec = ModelSpec::random_walk(true, false);
    sim(&spec, &rw_params(2, 0.1, 0.1, 0.8, 8.0, 0.5, 8.0), 260, 17)
}

fn specs() -> Vec<ModelSpec> {
    vec![ModelSpec::random_walk(true, false), ModelSpec::random_walk(false, false)]
}

#[test]
fn smallest_study_writes_everything() {
    let panel = data();
    let cfg = small_config(&specs());
    let dir = tempfile::tempdir().unwrap();
    let res = run_study(&panel, &cfg, Some(dir.path())).unwrap();
    res.check().unwrap();
    assert_eq!(res.total(), 6);
    assert_eq!(res.failed(), 0);
    let m = &res.manifest;
    assert_eq!(m.origins.len(), 3);
    assert!(m.origins.iter().all(|&o| (220..=260 - 1 - 5).contains(&o)));
    // All and each series, crossed with 1..h, 1 and 5 (= h).
    assert_eq!(m.scopes.len(), 3 * 3);

    for t in &m.tasks {
        let (fit, ens) = task_paths(dir.path(), &t.spec, t.origin);
        assert!(fit.exists() && ens.exists());
    }
    for f in ["scores.csv", "table_es.csv", "table_es.md", "table_rmse.csv", "table_rmse.md", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let back = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(&back, m);

    let base = &res.es_table.rows[0];
    assert_eq!(base.model_id, cfg.baseline_id().unwrap());
    assert!(base.cells.iter().all(|c| c.improvement_pct == Some(0.0)));
    assert_eq!(res.es_table.rows.len(), 2);
    // RMSE at steps 1 and 5 (= h) per series.
    assert_eq!(res.rmse_table.scopes.len(), 4);
}

#[test]
fn replay_is_bit_identical() {
    let panel = data();
    let cfg = small_config(&specs());
    let a = run_study(&panel, &cfg, None).unwrap();
    let b = replay(&a.manifest, &panel, None).unwrap();
    assert_eq!(a.manifest.tasks, b.manifest.tasks);
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.es_table, b.es_table);
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| run_study(&panel, &cfg, None).unwrap());
        assert_eq!(a.manifest.tasks, c.manifest.tasks);
    }

    let mut other = data();
    other = Panel::with_weekdays(
        other.dates()[0],
        other.labels().to_vec(),
        other.values().iter().map(|v| v + 1.0).collect(),
        Transform::Levels,
    )
    .unwrap();
    assert!(replay(&a.manifest, &other, None).is_err());
}

#[test]
fn future_rows_are_never_read() {
    let panel = data();
    let cfg = small_config(&specs());
    let origin = 230;
    let mut poisoned = panel.values().to_vec();
    for v in &mut poisoned[(origin + 1) * 2..] {
        *v = 1e12;
    }
    let poisoned = Panel::with_weekdays(panel.dates()[0], panel.labels().to_vec(), poisoned, Transform::Levels).unwrap();
    for spec in specs() {
        let (fa, ea) = forecast_at_origin(&panel, &spec, origin, &cfg, None).unwrap();
        let (fb, eb) = forecast_at_origin(&poisoned, &spec, origin, &cfg, None).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(ea, eb);
    }
}

#[test]
fn tasks_do_not_depend_on_the_other_specs() {
    let panel = data();
    let mut both = small_config(&specs());
    both.warm_start = false;
    let mut alone = small_config(&specs()[..1]);
    alone.warm_start = false;
    let a = run_study(&panel, &both, None).unwrap();
    let b = run_study(&panel, &alone, None).unwrap();
    let id = specs()[0].id();
    let pick = |r: &StudyResult| r.manifest.tasks.iter().filter(|t| t.spec == id).cloned().collect::<Vec<_>>();
    assert_eq!(pick(&a), pick(&b));
}

#[test]
fn failure_threshold() {
    let panel = data();
    let cfg = small_config(&specs());
    let mut res = run_study(&panel, &cfg, None).unwrap();
    res.manifest.tasks[0].ok = false;
    // 1 of 6 exceeds the default 10%.
    let err = res.check().unwrap_err();
    assert_eq!(err.kind(), vcg_core::ErrorKind::PartialStudy);
    res.manifest.config.max_failure_rate = 0.2;
    res.check().unwrap();
}

#[test]
fn config_validation() {
    let panel = data();
    let mut cfg = small_config(&specs());
    cfg.n_origins = 100;
    assert!(run_study(&panel, &cfg, None).is_err());
    let mut cfg = small_config(&specs());
    cfg.baseline = Some("vecm1_st_r".into());
    assert!(cfg.baseline_id().is_err());
}
