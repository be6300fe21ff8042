use labelinfer::harness::{
    emit_report, load_report, prepare, run_multiclass, run_oversampling_study, run_sweep, select_training, shadow_plan,
    shadows, ExperimentConfig, SUMMARY_COLUMNS,
};
use labelinfer::par::Parallelism;
use labelinfer::shadow::save_records;
use labelinfer::simplex::LabelDistribution;
use labelinfer::{Error, ErrorKind};

const SMALL: &str = r#"
    seed = 9
    sweep = [0.1, 0.2, 0.5]
    aux_per_class = 30
    [data]
    source = "synthetic"
    per_class = 400
    classes = [{ mean = [1.5, 1.5] }, { mean = [-1.5, -1.5] }]
    [arch]
    layers = [4, 2]
    [train]
    optimizer = "sgd"
    epochs = 2
    learning_rate = 0.05
    [shadows]
    step = 0.1
    replicas = 3
    train_replicas = 2
    samples_per_set = 60
    [meta.proposed]
    epochs = 5
    [meta.baseline]
    epochs = 5
"#;

fn small(overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::from_toml_with(SMALL, &o).unwrap()
}

#[test]
fn two_variants_times_three_steps_gives_six_rows() {
    let config = small(&[]);
    let report = run_sweep(&config, Parallelism::Parallel).unwrap();
    assert_eq!(report.rows.len(), 6);
    let n_test = 11; // 11 grid points, one test replica each
    for r in &report.rows {
        assert_eq!(r.n_test, n_test);
        assert!(r.avg_mse >= 0.0);
        let k = &r.kl;
        assert!(k.min <= k.q1 && k.q1 <= k.median && k.median <= k.q3 && k.q3 <= k.max);
    }
    for s in &report.scatter {
        assert_eq!(s.true_p.len(), n_test);
        assert_eq!(s.est_p.len(), n_test);
    }
    // both rows of a step share the relative improvement computed from their MSEs
    for pair in report.rows.chunks(2) {
        let (p, b) = (&pair[0], &pair[1]);
        assert_eq!(p.rel_improvement, b.rel_improvement);
        assert!((p.rel_improvement - (b.avg_mse - p.avg_mse) / b.avg_mse).abs() < 1e-12);
    }
    assert_eq!(
        report.rows.iter().map(|r| r.n_train).collect::<Vec<_>>(),
        vec![22, 22, 12, 12, 6, 6]
    );
}

#[test]
fn sweeping_only_the_generation_step_uses_the_whole_train_split() {
    let config = small(&["sweep=[0.1]"]);
    let prepared = prepare(&config).unwrap();
    let plan = shadow_plan(&config, false);
    let run = shadows(&config, &prepared, &plan, Parallelism::Parallel).unwrap();
    let points = plan.points(2).unwrap();
    let selected = select_training(&config, &plan, &points, &run.records, 0.1).unwrap();
    let train: Vec<_> = run.records.iter().filter(|r| plan.is_train(r)).cloned().collect();
    assert_eq!(selected, train);
}

#[test]
fn missing_grid_point_is_reported() {
    let config = small(&[]);
    let prepared = prepare(&config).unwrap();
    let plan = shadow_plan(&config, false);
    let run = shadows(&config, &prepared, &plan, Parallelism::Parallel).unwrap();
    let points = plan.points(2).unwrap();
    let half = points.iter().position(|p| (p[0] - 0.5).abs() < 1e-12).unwrap();
    let records: Vec<_> = run.records.into_iter().filter(|r| r.point != half).collect();
    let err = select_training(&config, &plan, &points, &records, 0.5).unwrap_err();
    assert!(
        matches!(&err, Error::MissingRecords(p) if p == &vec![0.5, 0.5]),
        "{err}"
    );
    assert_eq!(err.kind(), ErrorKind::Data);
}

#[test]
fn reports_are_identical_across_parallelism_and_reruns() {
    let config = small(&[]);
    let dir = tempfile::tempdir().unwrap();
    let a = run_sweep(&config, Parallelism::Parallel).unwrap();
    let b = run_sweep(&config, Parallelism::Sequential).unwrap();
    let c = run_sweep(&config, Parallelism::Parallel).unwrap();
    for (name, r) in [("a", &a), ("b", &b), ("c", &c)] {
        emit_report(r, dir.path().join(name)).unwrap();
    }
    for file in ["summary.csv", "scatter_proposed_0.1.csv", "scatter_baseline_0.5.csv"] {
        let read = |d: &str| std::fs::read(dir.path().join(d).join(file)).unwrap();
        assert_eq!(read("a"), read("b"), "{file}");
        assert_eq!(read("a"), read("c"), "{file}");
    }
}

#[test]
fn emitted_files_have_the_documented_layout() {
    let config = small(&["sweep=[0.2]"]);
    let report = run_sweep(&config, Parallelism::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();

    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let header = summary.lines().next().unwrap();
    assert_eq!(header, SUMMARY_COLUMNS.join(","));
    assert_eq!(summary.lines().count(), 3);

    let scatter = std::fs::read_to_string(dir.path().join("scatter_proposed_0.2.csv")).unwrap();
    assert_eq!(scatter.lines().next().unwrap(), "true_p1,true_p2,est_p1,est_p2");
    assert_eq!(scatter.lines().count(), 1 + report.rows[0].n_test);

    let back = load_report(dir.path().join("run.json")).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.seeds.master, 9);
}

#[test]
fn records_file_replaces_generation() {
    let config = small(&["sweep=[0.2]"]);
    let prepared = prepare(&config).unwrap();
    let plan = shadow_plan(&config, false);
    let run = shadows(&config, &prepared, &plan, Parallelism::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    save_records(&path, &run.records, Some(&plan)).unwrap();

    let quoted = format!("shadows.records={:?}", path.to_str().unwrap());
    let from_file = run_sweep(&small(&["sweep=[0.2]", &quoted]), Parallelism::Parallel).unwrap();
    let fresh = run_sweep(&config, Parallelism::Parallel).unwrap();
    for (x, y) in from_file.rows.iter().zip(&fresh.rows) {
        assert_eq!((x.avg_mse, &x.kl, x.n_train), (y.avg_mse, &y.kl, y.n_train));
    }

    // a file generated under another seed is refused
    let other = small(&["sweep=[0.2]", "seed=10", &quoted]);
    let err = run_sweep(&other, Parallelism::Parallel).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
}

#[test]
fn multiclass_emits_heatmaps_over_the_grid() {
    let config = ExperimentConfig::from_toml_with(
        &SMALL.replace(
            "classes = [{ mean = [1.5, 1.5] }, { mean = [-1.5, -1.5] }]",
            "classes = [{ mean = [2.0, 0.0] }, { mean = [-1.0, 1.7] }, { mean = [-1.0, -1.7] }]",
        ),
        &[
            "arch.layers=[4, 3]".into(),
            "sweep=[0.1]".into(),
            "shadows.scheme={kind=\"region\", tau=0.1}".into(),
        ],
    )
    .unwrap();
    let report = run_multiclass(&config, Parallelism::Parallel).unwrap();
    assert_eq!(report.heatmaps.len(), 2);
    // 66 grid points; training used only the interior but the heatmap covers the edges too
    for h in &report.heatmaps {
        assert_eq!(h.cells.len(), 66);
        assert!(h.cells.iter().any(|c| c.p1 == 0.0));
        assert!(h.cells.iter().all(|c| c.n == 1 && c.mean_kl >= 0.0));
    }
    // points with every coordinate >= 0.1: compositions of 10 into 3 positive parts, C(9, 2)
    assert_eq!(report.rows[0].n_train, 2 * 36);

    let err = run_multiclass(&small(&[]), Parallelism::Parallel).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
}

#[test]
fn oversampling_targets_are_the_imbalanced_points() {
    let report = run_oversampling_study(&small(&[]), Parallelism::Parallel).unwrap();
    let o = report.oversample.unwrap();
    // 0.1 and 0.2 on both sides; the grid ends are dropped because oversampling needs both classes
    let mut ps: Vec<f64> = o.cases.iter().map(|c| c.p[0]).collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    assert_eq!(ps.len(), 4);
    for c in &o.cases {
        let p = LabelDistribution::new(c.p.clone()).unwrap();
        let half = LabelDistribution::uniform(2);
        assert!((c.kl_balanced - labelinfer::simplex::kl_divergence(&p, &half).unwrap()).abs() < 1e-15);
    }
    assert!(report.seeds.oversampled_shadows.is_some());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert_eq!(seen, 4);
}
