mod common;

use common::*;
use radtrain::data::{Purpose, Split};
use radtrain::model::{Model, ModelConfig};
use radtrain::optim::{LrPolicy, SgdmState};
use radtrain::pipeline::artifacts::{read_metrics, read_report, read_text, ABLATION_TABLE, CONFIG_FILE, METRICS_FILE, SCHEDULE_SVG, SWEEP_CSV, TRACE_FILE};
use radtrain::pipeline::{
    load_checkpoint, parse_trace_csv, run_ablation, run_training, save_checkpoint, stage_policy, steps_per_epoch,
    trace_csv, Checkpoint, PipelineConfig, RunOptions, RunOutcome, RunReport, TrainedRun, Variant,
    CHECKPOINT_VERSION, MODEL_CHECKPOINT, RESUME_CHECKPOINT,
};
use radtrain::Error;

fn train(cfg: &PipelineConfig, ds: &radtrain::data::Dataset, splits: &radtrain::data::SplitAssignment) -> TrainedRun {
    run_training(cfg, ds, splits, &RunOptions::default()).unwrap().finished().unwrap()
}

fn same_run(a: &RunReport, b: &RunReport) {
    assert_eq!(a.trace, b.trace);
    assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
    assert_eq!(a.base_lr, b.base_lr);
    assert_eq!(a.sweep, b.sweep);
    assert_eq!(a.stages, b.stages);
    assert_eq!(a.test, b.test);
}

#[test]
fn same_seed_same_trace_and_parameters() {
    let (ds, splits) = small_dataset(60, 32, 1);
    let cfg = small_config(Variant::Proposed);
    let a = train(&cfg, &ds, &splits);
    let b = train(&cfg, &ds, &splits);
    same_run(&a.report, &b.report);
    assert_eq!(a.model, b.model);
    assert!(a.report.sweep.is_some());
    let other = train(&PipelineConfig { seed: 4, ..cfg }, &ds, &splits);
    assert_ne!(other.report.trace, a.report.trace);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (ds, splits) = small_dataset(60, 32, 2);
    let cfg = small_config(Variant::Proposed);
    let full = train(&cfg, &ds, &splits);
    let total = full.report.trace.len();
    let per_epoch = steps_per_epoch(&ds, &splits, cfg.batch_size);
    let dir = tempfile::tempdir().unwrap();
    for k in [1, per_epoch, 2 * per_epoch, 2 * per_epoch + 1, total - 1] {
        let opts = RunOptions {
            run_dir: Some(dir.path().join(format!("stop{k}"))),
            stop_after_steps: Some(k),
            ..RunOptions::default()
        };
        let ck = match run_training(&cfg, &ds, &splits, &opts).unwrap() {
            RunOutcome::Interrupted(ck) => ck,
            RunOutcome::Finished(_) => panic!("run did not stop at step {k}"),
        };
        let on_disk = load_checkpoint(&opts.run_dir.as_ref().unwrap().join(RESUME_CHECKPOINT)).unwrap();
        assert_eq!(&on_disk, ck.as_ref());
        let resumed = run_training(
            &cfg,
            &ds,
            &splits,
            &RunOptions {
                resume: Some(on_disk),
                ..RunOptions::default()
            },
        )
        .unwrap()
        .finished()
        .unwrap();
        same_run(&resumed.report, &full.report);
        assert_eq!(resumed.model, full.model, "stop at {k}");
    }
}

#[test]
fn periodic_checkpoints_resume_too() {
    let (ds, splits) = small_dataset(60, 32, 3);
    let cfg = small_config(Variant::V1);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        run_dir: Some(dir.path().to_path_buf()),
        checkpoint_every: Some(3),
        ..RunOptions::default()
    };
    let full = run_training(&cfg, &ds, &splits, &opts).unwrap().finished().unwrap();
    let ck = load_checkpoint(&dir.path().join(RESUME_CHECKPOINT)).unwrap();
    let at = ck.progress.as_ref().unwrap().global_step;
    assert_eq!(at % 3, 0);
    assert!(at > 0);
    let resumed = run_training(
        &cfg,
        &ds,
        &splits,
        &RunOptions {
            resume: Some(ck),
            ..RunOptions::default()
        },
    )
    .unwrap()
    .finished()
    .unwrap();
    same_run(&resumed.report, &full.report);
}

#[test]
fn proposed_lr_trace_is_the_analytic_schedule() {
    let (ds, splits) = small_dataset(60, 32, 4);
    let cfg = small_config(Variant::Proposed);
    let dir = tempfile::tempdir().unwrap();
    let run = run_training(
        &cfg,
        &ds,
        &splits,
        &RunOptions {
            run_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        },
    )
    .unwrap()
    .finished()
    .unwrap();
    let exported = parse_trace_csv(&read_text(&dir.path().join(TRACE_FILE)).unwrap()).unwrap();
    assert_eq!(exported, run.report.trace);
    let per_epoch = steps_per_epoch(&ds, &splits, cfg.batch_size);
    let mut expected = Vec::new();
    for stage in &run.report.stages {
        let LrPolicy::Sgdr(s) = stage_policy(&cfg, run.report.base_lr, per_epoch).unwrap() else {
            panic!("Proposed must anneal");
        };
        expected.extend(s.trace(stage.steps).into_iter().map(|(_, lr)| lr));
    }
    let got: Vec<f64> = exported.iter().map(|r| r.lr).collect();
    assert_eq!(got, expected);
    // the first step of every stage restarts at the base rate
    let mut step = 0;
    for stage in &run.report.stages {
        assert_eq!(exported[step].lr, run.report.base_lr);
        step += stage.steps;
    }
    assert_eq!(step, exported.len());
}

#[test]
fn constant_variants_hold_the_base_rate() {
    let (ds, splits) = small_dataset(60, 32, 5);
    for v in [Variant::V2, Variant::V3] {
        let run = train(&small_config(v), &ds, &splits);
        assert!(run.report.trace.iter().all(|r| r.lr == run.report.base_lr), "{v}");
    }
}

#[test]
fn stage_layout_per_variant() {
    let (ds, splits) = small_dataset(60, 32, 6);
    let per_epoch = steps_per_epoch(&ds, &splits, 10);
    for v in Variant::ALL {
        let run = train(&with_fixed_lr(small_config(v), 0.05), &ds, &splits);
        let sides: Vec<usize> = run.report.stages.iter().map(|s| s.side).collect();
        if v.progressive() {
            assert_eq!(sides, vec![16, 32]);
        } else {
            assert_eq!(sides, vec![32]);
            assert_eq!(run.report.stages[0].epochs, 4);
        }
        assert!(sides.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(run.report.trace.len(), 4 * per_epoch);
        assert!(run.report.sweep.is_none());
        assert_eq!(run.report.base_lr, 0.05);
    }
}

#[test]
fn test_split_never_trains() {
    let (ds, splits) = small_dataset(80, 32, 7);
    ds.clear_access_log();
    train(&small_config(Variant::Proposed), &ds, &splits);
    let log = ds.access_log();
    let split_of = |i: usize| splits.split_of(&ds.records()[i].patient_id).unwrap();
    let mut tested = 0;
    for a in &log {
        match a.purpose {
            Purpose::Train | Purpose::LrFind | Purpose::NormStats => assert_eq!(split_of(a.record), Split::Train),
            Purpose::Validate => assert_eq!(split_of(a.record), Split::Val),
            Purpose::Test => {
                assert_eq!(split_of(a.record), Split::Test);
                tested += 1;
            }
        }
    }
    assert_eq!(tested, splits.record_indices(ds.records(), Split::Test).len());
    assert!(log.iter().any(|a| a.purpose == Purpose::LrFind));
    // test images are read only at the very end
    let first_test = log.iter().position(|a| a.purpose == Purpose::Test).unwrap();
    assert!(log[first_test..].iter().all(|a| a.purpose == Purpose::Test));
}

#[test]
fn divergence_carries_the_trace() {
    let (ds, splits) = small_dataset(60, 32, 8);
    let cfg = with_fixed_lr(small_config(Variant::V3), 1e300);
    match run_training(&cfg, &ds, &splits, &RunOptions::default()) {
        Err(Error::Diverged { step, trace }) => {
            assert_eq!(trace.len(), step + 1);
            assert_eq!(trace.last().unwrap().step, step);
        }
        other => panic!("{:?}", other.map(|_| ())),
    }
}

#[test]
fn run_directory_contents() {
    let (ds, splits) = small_dataset(60, 32, 9);
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Variant::Proposed);
    let run = run_training(
        &cfg,
        &ds,
        &splits,
        &RunOptions {
            run_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        },
    )
    .unwrap()
    .finished()
    .unwrap();
    for f in [CONFIG_FILE, TRACE_FILE, METRICS_FILE, SCHEDULE_SVG, SWEEP_CSV, MODEL_CHECKPOINT] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap(), run.report.test);
    let report = read_report(&dir.path().join(radtrain::pipeline::artifacts::REPORT_FILE)).unwrap();
    assert_eq!(report, run.report);
    let echoed: PipelineConfig = serde_json::from_str(&read_text(&dir.path().join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(echoed, cfg.resolved());
    let model = load_checkpoint(&dir.path().join(MODEL_CHECKPOINT)).unwrap().model().unwrap();
    assert_eq!(model, run.model);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let cfg = ModelConfig {
        stem_channels: 3,
        stage_widths: vec![3, 5],
        blocks_per_stage: 1,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg).unwrap();
    let opt = SgdmState::new(model.params(), 0.9, 1e-4).unwrap();
    let ck = Checkpoint::new(&model, &opt, LrPolicy::Constant(0.3));
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&ck, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded, ck);
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let bytes = ck.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut wrong = bytes.clone();
    wrong[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&wrong),
        Err(Error::CheckpointVersion { found, .. }) if found == CHECKPOINT_VERSION + 1
    ));

    let mut other = Model::new(ModelConfig::default()).unwrap();
    match ck.restore_into(&mut other) {
        Err(Error::ArchitectureMismatch { name, .. }) => assert_eq!(name, "stem.weight"),
        r => panic!("{r:?}"),
    }
}

#[test]
fn ablation_runs_all_variants_on_identical_data() {
    let (ds, splits) = small_dataset(60, 32, 10);
    let dir = tempfile::tempdir().unwrap();
    let base = small_config(Variant::Proposed);
    let rep = run_ablation(&base, &ds, &splits, Some(dir.path()), None).unwrap();
    assert_eq!(rep.runs.len(), 4);
    assert_eq!(rep.table.columns, vec!["Proposed", "V1", "V2", "V3"]);
    assert_eq!(rep.table.rows.len(), 15);
    assert!(rep.table.rows.iter().all(|(_, cells)| cells.len() == 4));
    let proposed = rep.report(Variant::Proposed).unwrap();
    for v in Variant::ALL {
        let r = rep.report(v).unwrap();
        assert_eq!(r.variant, v);
        assert_eq!(r.config.seed, base.seed);
        for (x, y) in r.test.classes.iter().zip(&proposed.test.classes) {
            assert_eq!((x.positives, x.negatives), (y.positives, y.negatives));
        }
        assert!(dir.path().join(v.name()).join(TRACE_FILE).exists());
    }
    let csv = read_text(&dir.path().join(ABLATION_TABLE)).unwrap();
    assert_eq!(csv, rep.table.csv());
    assert_eq!(csv.lines().count(), 16);

    assert!(run_ablation(&base.with_variant(Variant::V2), &ds, &splits, None, None).is_err());
}

#[test]
fn failing_variant_does_not_stop_the_rest() {
    let (ds, splits) = small_dataset(60, 32, 11);
    // a rate of 1e300 overflows the forward pass; failed columns read "-"
    let base = with_fixed_lr(small_config(Variant::Proposed), 1e300);
    let rep = run_ablation(&base, &ds, &splits, None, None).unwrap();
    assert_eq!(rep.runs.len(), 4);
    for ((v, r), k) in rep.runs.iter().zip(0..) {
        if r.is_err() {
            assert!(rep.table.rows.iter().all(|(_, cells)| cells[k] == "-"), "{v}");
        }
    }
    assert!(rep.runs.iter().any(|(_, r)| r.is_err()));
}
