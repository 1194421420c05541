use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tgn_bench::{sweep, BENCH_SCHEMA_VERSION};
use tgn_core::aggregators::AggregatorKind;
use tgn_core::config::Config;
use tgn_core::engine::{self, Engine, Mutation};
use tgn_core::evaluation::{
    causality_audit, evaluate_both, order_invariance_audit, score_test, select_probes, summarize, EvalMode,
    EvalReport, AUDIT_SCHEMA_VERSION, EVAL_SCHEMA_VERSION,
};
use tgn_core::events::{load_stream, parse_csv, save_stream, stream_stats, synth_stream, EventStream, SynthSpec};
use tgn_core::numcore::Rng;
use tgn_core::pipeline::prepare;
use tgn_core::report::{format_f64, render, Record};
use tgn_core::Error;

use crate::manifest::Manifest;
use crate::{AuditArgs, AuditKind, BenchArgs, Common, CompareArgs, EvalArgs, Failure, IngestArgs, ModeArg};
use crate::{ReportArgs, TrainArgs, OUTPUT_ROOT_VAR};

type Outcome = Result<(), Failure>;

pub const TRAIN_LOG_SCHEMA_VERSION: u32 = 1;
pub const COMPARE_SCHEMA_VERSION: u32 = 1;

fn run_dir(common: &Common, command: &str) -> Result<PathBuf, Failure> {
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("tgn-out"), PathBuf::from);
    let dir = root.join(common.run.as_deref().unwrap_or(command));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn start(command: &str, dir: &Path, config: &Config, inputs: &[(&str, &Path)], outputs: &[(&str, &Path)]) -> Outcome {
    let own = |v: &[(&str, &Path)]| v.iter().map(|(n, p)| (n.to_string(), p.to_path_buf())).collect();
    Manifest {
        command: command.into(),
        inputs: own(inputs),
        outputs: own(outputs),
        config: config.clone(),
    }
    .write(dir)?;
    Ok(())
}

fn emit(path: &Path, records: &[Record]) -> Outcome {
    let text = render(records);
    fs::write(path, &text)?;
    print!("{text}");
    Ok(())
}

fn read_stream(path: &Path) -> Result<EventStream, Failure> {
    load_stream(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// The stream must describe the same graph the checkpoint was built for.
fn check_compatible(engine: &Engine, stream: &EventStream) -> Outcome {
    let s = engine.space();
    let pairs = [
        ("attackers", s.n_attackers(), stream.n_attackers()),
        ("victims", s.n_victims(), stream.n_victims()),
        ("feature width", s.feature_width(), stream.feature_width()),
        ("categories", s.n_categories(), stream.n_categories()),
    ];
    for (what, want, got) in pairs {
        if want != got {
            return Err(Error::Dimension(format!("checkpoint expects {want} {what}, stream has {got}")).into());
        }
    }
    Ok(())
}

pub fn ingest(common: &Common, args: &IngestArgs) -> Outcome {
    let cfg = common.resolve()?;
    let dir = run_dir(common, "ingest")?;
    let out = dir.join(&args.output);
    let stats_path = dir.join("stats.txt");
    let inputs: Vec<(&str, &Path)> = args.input.iter().map(|p| ("csv", p.as_path())).collect();
    start("ingest", &dir, &cfg, &inputs, &[("stream", &out), ("stats", &stats_path)])?;

    let stream = match (&args.input, args.synthetic) {
        (_, Some(seed)) => synth_stream(&SynthSpec::default(), &mut Rng::new(seed))?,
        (Some(path), None) => parse_csv(path, &cfg.schema).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?,
        (None, None) => return Err(Failure::input("ingest needs --input or --synthetic")),
    };
    if stream.is_empty() {
        eprintln!("warning: the input holds no events");
    }
    save_stream(&out, &stream)?;
    emit(&stats_path, &stream_stats(&stream, cfg.stats_bin).to_records())
}

pub fn train(common: &Common, args: &TrainArgs) -> Outcome {
    let cfg = common.resolve()?;
    let dir = run_dir(common, "train")?;
    let ckpt = dir.join("checkpoint.bin");
    let log_path = dir.join("train_log.txt");
    start("train", &dir, &cfg, &[("stream", &args.stream)], &[("checkpoint", &ckpt), ("log", &log_path)])?;

    let stream = read_stream(&args.stream)?;
    if stream.is_empty() {
        return Err(Failure::input("cannot train on an empty stream"));
    }
    let split = prepare(&stream, &cfg)?;
    let mut e = Engine::new(&cfg, &stream)?;
    let log = engine::train(&mut e, &split.train, &split.validation).map_err(|err| Failure {
        code: 3,
        message: format!("training failed: {err}"),
    })?;
    e.save(&ckpt)?;

    let mut records = vec![Record::header("train_log", TRAIN_LOG_SCHEMA_VERSION)];
    for ep in &log.epochs {
        records.push(
            Record::new("epoch")
                .with("epoch", ep.epoch)
                .with_f64("train_loss", ep.train_loss)
                .with_f64("validation_loss", ep.validation_loss)
                .with("improved", ep.improved),
        );
    }
    records.push(
        Record::new("summary")
            .with("aggregator", cfg.aggregator)
            .with("train_events", split.train.len())
            .with("validation_events", split.validation.len())
            .with("test_events", split.test.len())
            .with("new_nodes", split.spec.new_nodes.len())
            .with("epochs_run", log.epochs.len())
            .with("best_epoch", log.best_epoch)
            .with_f64("best_validation_loss", log.best_validation_loss)
            .with("stopped_early", log.stopped_early),
    );
    emit(&log_path, &records)
}

fn write_curve(path: &Path, report: &EvalReport) -> Outcome {
    let mut s = String::from("threshold,fpr,tpr,precision\n");
    for p in report.curve()? {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            format_f64(p.threshold),
            format_f64(p.fpr),
            format_f64(p.tpr),
            format_f64(p.precision)
        );
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn eval(common: &Common, args: &EvalArgs) -> Outcome {
    common.warn_ignored();
    let engine = Engine::load(&args.checkpoint)?;
    let cfg = engine.config().clone();
    let dir = run_dir(common, "eval")?;
    let modes: Vec<EvalMode> = match args.mode {
        ModeArg::Transductive => vec![EvalMode::Transductive],
        ModeArg::Inductive => vec![EvalMode::Inductive],
        ModeArg::Both => vec![EvalMode::Transductive, EvalMode::Inductive],
    };
    let report_path = dir.join("eval.txt");
    let curves: Vec<PathBuf> = modes.iter().map(|m| dir.join(format!("curve_{m}.csv"))).collect();
    let mut outputs: Vec<(&str, &Path)> = vec![("report", &report_path)];
    outputs.extend(curves.iter().map(|p| ("curve", p.as_path())));
    start(
        "eval",
        &dir,
        &cfg,
        &[("checkpoint", &args.checkpoint), ("stream", &args.stream)],
        &outputs,
    )?;

    let stream = read_stream(&args.stream)?;
    check_compatible(&engine, &stream)?;
    let split = prepare(&stream, &cfg)?;
    let scored = score_test(&engine, &split)?;
    let mut records = vec![Record::header("eval", EVAL_SCHEMA_VERSION)];
    for (mode, curve) in modes.iter().zip(&curves) {
        let report = summarize(&scored, *mode, engine.space().n_categories())?;
        if report.is_empty() {
            eprintln!("warning: no {mode} test events");
        } else {
            write_curve(curve, &report)?;
        }
        records.extend(report.to_records());
    }
    emit(&report_path, &records)
}

pub fn audit(common: &Common, args: &AuditArgs) -> Outcome {
    let stream = read_stream(&args.stream)?;
    let (mut engine, cfg) = match &args.checkpoint {
        Some(p) => {
            common.warn_ignored();
            let e = Engine::load(p)?;
            let cfg = e.config().clone();
            (Some(e), cfg)
        }
        None => (None, common.resolve()?),
    };
    let dir = run_dir(common, "audit")?;
    let report_path = dir.join(format!("audit_{}.txt", kind_name(args.kind)));
    let mut inputs: Vec<(&str, &Path)> = vec![("stream", &args.stream)];
    if let Some(p) = &args.checkpoint {
        inputs.push(("checkpoint", p));
    }
    start("audit", &dir, &cfg, &inputs, &[("report", &report_path)])?;

    if let Some(e) = &engine {
        check_compatible(e, &stream)?;
    }
    let split = prepare(&stream, &cfg)?;
    let header = Record::header(&format!("audit_{}", kind_name(args.kind)), AUDIT_SCHEMA_VERSION);
    let (passed, records) = match args.kind {
        AuditKind::Causality => {
            let mut e = match engine.take() {
                Some(e) => e,
                None => Engine::new(&cfg, &stream)?,
            };
            if args.inject_leak {
                e.set_mutation(Mutation::FlushBeforePredict);
            }
            let probes = select_probes(stream.events(), cfg.batch_size, split.spec.t_test, args.probes);
            let report = causality_audit(&e, &stream, &probes, args.tolerance)?;
            (report.passed, report.to_records())
        }
        AuditKind::Order => {
            let seeds: Vec<u64> = (0..args.runs as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
            let report = order_invariance_audit(&cfg, &split, &seeds)?;
            let passed = report.mean_variance < args.max_mean_variance && report.max_variance < args.max_variance;
            let mut records = report.to_records();
            records.push(
                Record::new("verdict")
                    .with_f64("max_mean_variance", args.max_mean_variance)
                    .with_f64("max_variance", args.max_variance)
                    .with("result", if passed { "pass" } else { "fail" }),
            );
            (passed, records)
        }
    };
    let mut all = vec![header];
    all.extend(records);
    emit(&report_path, &all)?;
    if passed {
        Ok(())
    } else {
        Err(Failure {
            code: 4,
            message: format!("{} audit failed", kind_name(args.kind)),
        })
    }
}

fn kind_name(k: AuditKind) -> &'static str {
    match k {
        AuditKind::Causality => "causality",
        AuditKind::Order => "order",
    }
}

pub fn bench(common: &Common, args: &BenchArgs) -> Outcome {
    let cfg = common.resolve()?;
    if args.batch_sizes.contains(&0) {
        return Err(Failure::input("batch sizes must be positive"));
    }
    let dir = run_dir(common, "bench")?;
    let report_path = dir.join("bench.txt");
    start("bench", &dir, &cfg, &[], &[("report", &report_path)])?;

    let rows = sweep(&cfg, &args.batch_sizes, &args.graph_sizes, args.edges)?;
    let mut records = vec![Record::header("bench", BENCH_SCHEMA_VERSION)];
    for r in &rows {
        if !r.consistent() {
            eprintln!(
                "warning: {} sweep at batch size {}: throughput {:.1} differs from batch latency by more than 5%",
                r.sweep, r.batch_size, r.throughput
            );
        }
        records.push(r.to_record());
    }
    emit(&report_path, &records)
}

pub fn compare(common: &Common, args: &CompareArgs) -> Outcome {
    let kinds = args
        .aggregators
        .iter()
        .map(|t| t.parse::<AggregatorKind>())
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.len() < 2 {
        return Err(Failure::input("compare needs at least two aggregators"));
    }
    let cfg = common.resolve()?;
    let dir = run_dir(common, "compare")?;
    let report_path = dir.join("compare.txt");
    start("compare", &dir, &cfg, &[("stream", &args.stream)], &[("report", &report_path)])?;

    let stream = read_stream(&args.stream)?;
    let split = prepare(&stream, &cfg)?;
    let mut records = vec![Record::header("compare", COMPARE_SCHEMA_VERSION)];
    for kind in kinds {
        let mut c = cfg.clone();
        c.aggregator = kind;
        let mut e = Engine::new(&c, &stream)?;
        let log = engine::train(&mut e, &split.train, &split.validation).map_err(|err| Failure {
            code: 3,
            message: format!("training {kind} failed: {err}"),
        })?;
        let [t, i] = evaluate_both(&e, &split)?;
        let mut r = Record::new("row")
            .with("aggregator", kind)
            .with("parameters", e.model.params.scalar_count())
            .with("best_epoch", log.best_epoch);
        for rep in [&t, &i] {
            let m = rep.mode;
            let na = |v: Option<f64>| v.map_or("N/A".to_string(), format_f64);
            let link = rep.link.as_ref();
            let rank = link.and_then(|l| l.ranking.as_ref());
            r = r
                .with(&format!("{m}_events"), rep.events)
                .with(&format!("{m}_auc"), na(link.map(|l| l.auc)))
                .with(&format!("{m}_ap"), na(link.map(|l| l.average_precision)))
                .with(&format!("{m}_mrr"), na(rank.map(|r| r.mrr)))
                .with(&format!("{m}_hits_at_1"), na(rank.and_then(|r| r.hits_at(1))))
                .with(&format!("{m}_hits_at_3"), na(rank.and_then(|r| r.hits_at(3))))
                .with(&format!("{m}_macro_f1"), na(rep.classes.as_ref().map(|c| c.macro_f1)))
                .with(&format!("{m}_macro_recall"), na(rep.classes.as_ref().map(|c| c.macro_recall)));
        }
        records.push(r);
    }
    records.push(Record::new("note").with(
        "parameters",
        "all aggregators share the configured widths; counts differ only by each aggregator's own weights",
    ));
    emit(&report_path, &records)
}

pub fn report(common: &Common, args: &ReportArgs) -> Outcome {
    let cfg = common.resolve()?;
    let dir = run_dir(common, "report")?;
    let report_path = dir.join("report.txt");
    start("report", &dir, &cfg, &[("stream", &args.stream)], &[("report", &report_path)])?;
    let stream = read_stream(&args.stream)?;
    emit(&report_path, &stream_stats(&stream, cfg.stats_bin).to_records())
}
