use memefier::dataset::{generate_synthetic, DatasetManifest, Split};
use memefier::model::{save_checkpoint, Ablations, ModelConfig};
use memefier::training::{
    ablate, evaluate, grid_search, primary_metric, train, GridStatus, History, TrainConfig, ABLATION_ROWS,
};
use memefier::Error;

fn data() -> DatasetManifest {
    generate_synthetic(60, 8, 2, 2, 4).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_reproducible_and_logs_schedule() {
    let m = data();
    let tc = TrainConfig {
        epochs: 4,
        batch_size: 7,
        ..TrainConfig::default()
    };
    let a = train(&ModelConfig::default(), &tc, &m).unwrap();
    let b = train(&ModelConfig::default(), &tc, &m).unwrap();
    assert_eq!(a.history.to_jsonl().unwrap(), b.history.to_jsonl().unwrap());
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&a.final_model, dir.path().join("a")).unwrap();
    save_checkpoint(&b.final_model, dir.path().join("b")).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("a")).unwrap(),
        std::fs::read(dir.path().join("b")).unwrap()
    );

    let lrs: Vec<f64> = a.history.epochs.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, vec![1e-3, 1e-3, 1e-4, 1e-4]);
    let path = dir.path().join("h.jsonl");
    a.history.save(&path).unwrap();
    assert_eq!(History::load(&path).unwrap(), a.history);
}

#[test]
fn best_model_is_the_best_validation_epoch() {
    let m = data();
    let out = train(&ModelConfig::default(), &quick(5), &m).unwrap();
    let config = out.best_model.config().clone();
    let scores: Vec<f64> = out
        .history
        .epochs
        .iter()
        .map(|r| primary_metric(&config, &r.val_metrics))
        .collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // earliest epoch reaching the maximum
    let want = scores.iter().position(|&s| s == best).unwrap() + 1;
    assert_eq!(out.best_epoch, want);
    let val = evaluate(&out.best_model, &m.split(Split::Val)).unwrap();
    assert_eq!(val.report, out.history.epochs[want - 1].val_metrics);
}

#[test]
fn empty_validation_split_is_rejected() {
    let mut m = data();
    m.samples.retain(|s| s.split != Split::Val);
    assert!(matches!(
        train(&ModelConfig::default(), &quick(1), &m),
        Err(Error::Input(_))
    ));
}

#[test]
fn one_point_grid_equals_plain_training() {
    let m = data();
    let tc = quick(2);
    let out = train(&ModelConfig::default(), &tc, &m).unwrap();
    let report = grid_search(&[(ModelConfig::default(), tc)], &m, None).unwrap();
    let GridStatus::Done { val_metric, best_epoch, history } = &report.outcomes[0].status else {
        panic!("point failed");
    };
    assert_eq!(*best_epoch, out.best_epoch);
    assert_eq!(history, &out.history.epochs);
    let config = out.best_model.config().clone();
    assert_eq!(*val_metric, primary_metric(&config, &out.history.epochs[out.best_epoch - 1].val_metrics));
}

#[test]
fn invalid_point_stops_the_grid_before_training() {
    let m = data();
    let grid = vec![(ModelConfig::default(), quick(1)), (ModelConfig::default(), quick(0))];
    let err = grid_search(&grid, &m, None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("point 1"), "{err}");
}

#[test]
fn failing_point_is_recorded_and_ranked_last() {
    let m = data();
    // valid on its own, but the encoder sequence is longer than 4 positions
    let short = ModelConfig {
        max_positions: 4,
        ..ModelConfig::default()
    };
    let grid = vec![(short, quick(1)), (ModelConfig::default(), quick(1))];
    let report = grid_search(&grid, &m, None).unwrap();
    assert!(matches!(report.outcomes[0].status, GridStatus::Done { .. }));
    let GridStatus::Failed { error } = &report.outcomes[1].status else {
        panic!("expected failure");
    };
    assert!(error.contains("max_positions"), "{error}");
    assert_eq!(report.best().unwrap().model.max_positions, 64);
}

#[test]
fn grid_cache_resumes_and_tracks_dataset() {
    let m = data();
    let dir = tempfile::tempdir().unwrap();
    let grid = vec![(ModelConfig::default(), quick(1)), (ModelConfig::default(), quick(2))];
    let first = grid_search(&grid, &m, Some(dir.path())).unwrap();
    assert!(first.outcomes.iter().all(|o| !o.cached));
    let second = grid_search(&grid, &m, Some(dir.path())).unwrap();
    assert!(second.outcomes.iter().all(|o| o.cached));
    assert_eq!(
        serde_json::to_string(&first.outcomes).unwrap(),
        serde_json::to_string(&second.outcomes).unwrap()
    );

    // a different dataset never reuses those entries
    let other = generate_synthetic(60, 8, 2, 2, 5).unwrap();
    let third = grid_search(&grid[..1], &other, Some(dir.path())).unwrap();
    assert!(!third.outcomes[0].cached);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
}

#[test]
fn ablation_rows_follow_their_flags() {
    let m = data();
    let table = ablate(&ModelConfig::default(), &quick(1), &m).unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    let want: Vec<&str> = ABLATION_ROWS.iter().map(|(l, _)| *l).collect();
    assert_eq!(labels, want);
    assert_eq!(table.full().ablations, Ablations::default());
    for row in &table.rows {
        let config = ModelConfig::default().with_ablations(row.ablations);
        assert!(row.parameters <= table.full().parameters);
        assert_eq!(row.alpha, if row.ablations.no_caption { 0.0 } else { config.alpha });
    }
    let caption = table.row("- Caption supervision").unwrap();
    assert!(caption.ablations.no_caption);

    let already = ModelConfig::default().with_ablations(Ablations {
        no_external: true,
        ..Ablations::default()
    });
    assert!(ablate(&already, &quick(1), &m).is_err());
}
