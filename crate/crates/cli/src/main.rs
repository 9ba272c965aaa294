//! `dsn` — batch pipeline for learning truss-design strategies.
//!
//! Subcommands: `generate` synthetic demonstration corpora, `train` the
//! hierarchical policy or the imitation baseline (single fold or full cross
//! validation), `evaluate` checkpoints against held-out trajectories with
//! optional exit-code assertions for CI gating, `predict` ranked actions for
//! a replayed state, and `import` loose external CSV exports.

mod manifest;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dsn_core::baseline::ImitationNet;
use dsn_core::config::{load_config, AppConfig};
use dsn_core::data::{
    build_d1, build_d2, build_imitation, import_csv_text, ingest, raw_step_of, split_kfold,
    write_trajectory_file, SplitMode, TrajectoryHeader, TrajectoryRecord,
};
use dsn_core::demogen::{builtin_problem, generate_corpus, HeuristicPolicy, PolicyKind};
use dsn_core::env::{render, DesignAction, ProblemConfig, TrussState};
use dsn_core::eval::{emit_report, evaluate_model, write_svg, EvalModel, EvalReport};
use dsn_core::nn::{dsn_forward, load_network, save_network, DsnModel};
use dsn_core::sampler::sample_feasible;
use dsn_core::train::{
    cross_validate, train_dsn, train_imitation, ModelKind, TrainedModel,
};
use manifest::RunManifest;

const EXIT_ASSERT_FAILED: i32 = 3;

#[derive(Parser)]
#[command(name = "dsn", version, about = "Truss design strategy pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration corpus.
    Generate(GenerateArgs),
    /// Train a model on a trajectory corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out trajectories.
    Evaluate(EvaluateArgs),
    /// Rank the next actions for a replayed design state.
    Predict(PredictArgs),
    /// Convert an external CSV export into the trajectory format.
    Import(ImportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Built-in problem name (default, bridge) or a config TOML path.
    #[arg(long)]
    problem: String,
    /// Number of trajectories.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "mixed")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Node-placement noise.
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
    #[arg(long, default_value_t = 2.5)]
    target_fos: f64,
    #[arg(long, default_value_t = 40)]
    max_steps: usize,
    /// Output trajectory file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Trajectory corpus produced by `generate` or `import`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "dsn")]
    model: String,
    /// Config TOML (problem + sampler + train + eval sections).
    #[arg(long)]
    config: PathBuf,
    /// Fold index to train, or "all" for full cross validation.
    #[arg(long, default_value = "0")]
    fold: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Also evaluate a baseline: "random" or "none".
    #[arg(long, default_value = "none")]
    baseline: String,
    #[arg(long)]
    out: PathBuf,
    /// Exit nonzero unless e.g. `top1>=0.5`, `spatial0.1>=0.3`, `mse<=0.05`
    /// (accuracies as fractions). Repeatable.
    #[arg(long = "assert")]
    assertions: Vec<String>,
    /// Also write a stacked-bar SVG.
    #[arg(long, default_value_t = false)]
    svg: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trajectory file; the chosen trajectory is replayed to its final
    /// state, which becomes the prediction input.
    #[arg(long)]
    state_file: PathBuf,
    /// Trajectory id to replay (default: the lowest id in the file).
    #[arg(long)]
    trajectory: Option<u64>,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    #[arg(long)]
    config: PathBuf,
    /// Write a rendered overlay (state + predicted region) as PNG.
    #[arg(long)]
    render: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    problem: String,
    #[arg(long)]
    out: PathBuf,
    /// Endpoint snapping tolerance for member actions.
    #[arg(long, default_value_t = 0.02)]
    snap_tol: f64,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args).map(|()| 0),
        Command::Train(args) => cmd_train(args).map(|()| 0),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args).map(|()| 0),
        Command::Import(args) => cmd_import(args).map(|()| 0),
    }
}

/// Resolve a --problem value: built-in name or config file path.
fn resolve_problem(spec: &str) -> Result<(Arc<ProblemConfig>, String)> {
    if let Some(p) = builtin_problem(spec) {
        return Ok((Arc::new(p), spec.to_owned()));
    }
    let path = Path::new(spec);
    let cfg = load_config(path).with_context(|| format!("loading problem config {spec}"))?;
    Ok((Arc::new(cfg.problem), spec.to_owned()))
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let kind = PolicyKind::from_name(&args.policy)
        .ok_or_else(|| anyhow!("unknown policy '{}'", args.policy))?;
    let (problem, problem_ref) = resolve_problem(&args.problem)?;
    let policy = HeuristicPolicy {
        kind,
        noise: args.noise,
        seed: args.seed,
        target_fos: args.target_fos,
        max_steps: args.max_steps,
    };
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let n_records = generate_corpus(&problem, &problem_ref, args.n, &[policy], &args.out)?;
    println!(
        "wrote {} trajectories ({n_records} records) to {}",
        args.n,
        args.out.display()
    );
    let mut m = RunManifest::new("generate", vec![problem_ref], args.seed);
    m.record(&args.out);
    m.write(&args.out.with_extension("manifest.toml"))?;
    Ok(())
}

fn load_records(data: &Path, problem: &Arc<ProblemConfig>) -> Result<Vec<TrajectoryRecord>> {
    let records =
        ingest(data, problem).with_context(|| format!("ingesting {}", data.display()))?;
    if records.is_empty() {
        bail!("no records in {}", data.display());
    }
    Ok(records)
}

fn model_kind(name: &str) -> Result<ModelKind> {
    match name {
        "dsn" => Ok(ModelKind::Dsn),
        "imitation" => Ok(ModelKind::Imitation),
        other => bail!("unknown model '{other}' (expected dsn or imitation)"),
    }
}

fn save_trained(model: &mut TrainedModel, path: &Path) -> Result<()> {
    match model {
        TrainedModel::Dsn(m) => save_network(path, m.as_mut())?,
        TrainedModel::Imitation(m) => save_network(path, m.as_mut())?,
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let kind = model_kind(&args.model)?;
    let mut cfg: AppConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let problem = Arc::new(cfg.problem.clone());
    let records = load_records(&args.data, &problem)?;
    std::fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new(
        "train",
        vec![args.config.display().to_string(), args.data.display().to_string()],
        cfg.train.seed,
    );

    if args.fold == "all" {
        let outcome = cross_validate(&records, kind, &cfg.train, &cfg.sampler, &cfg.eval)?;
        for fold in &outcome.folds {
            let dir = args.out.join(format!("fold{}", fold.fold));
            std::fs::create_dir_all(&dir)?;
            let ckpt = dir.join("checkpoint.ckpt");
            let mut model = match &fold.model {
                TrainedModel::Dsn(m) => TrainedModel::Dsn(m.clone()),
                TrainedModel::Imitation(m) => TrainedModel::Imitation(m.clone()),
            };
            save_trained(&mut model, &ckpt)?;
            manifest.record(&ckpt);
            std::fs::write(
                dir.join("train_report.txt"),
                fold.train_report.to_text(&args.model),
            )?;
            emit_report(&fold.eval, &dir.join("eval_report.txt"))?;
        }
        let summary = outcome.summary_table(&args.model);
        std::fs::write(args.out.join("cv_summary.txt"), &summary)?;
        manifest.record(&args.out.join("cv_summary.txt"));
        print!("{summary}");
    } else {
        let fold_index: usize =
            args.fold.parse().map_err(|_| anyhow!("--fold expects an index or 'all'"))?;
        let mode = if cfg.train.split_by_trajectory {
            SplitMode::ByTrajectory
        } else {
            SplitMode::ByRecord
        };
        let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let folds = split_kfold(
            &records,
            cfg.train.n_folds,
            cfg.train.val_fraction,
            mode,
            &mut split_rng,
        );
        let fold = folds
            .get(fold_index)
            .ok_or_else(|| anyhow!("fold {fold_index} out of range (k={})", folds.len()))?;
        let pick = |idx: &[usize]| -> Vec<TrajectoryRecord> {
            idx.iter().map(|&i| records[i].clone()).collect()
        };
        let (train_recs, val_recs, test_recs) =
            (pick(&fold.train), pick(&fold.val), pick(&fold.test));
        let mut d2_rng = ChaCha8Rng::seed_from_u64(cfg.sampler.rng_seed);
        let d2_train = build_d2(&train_recs, &cfg.sampler, &mut d2_rng);
        let d2_val = build_d2(&val_recs, &cfg.sampler, &mut d2_rng);
        let d2_test = build_d2(&test_recs, &cfg.sampler, &mut d2_rng);
        let ckpt = args.out.join("checkpoint.ckpt");

        let (mut trained, report, eval) = match kind {
            ModelKind::Dsn => {
                let (mut model, report) = train_dsn(
                    &build_d1(&train_recs),
                    &d2_train,
                    &build_d1(&val_recs),
                    &d2_val,
                    &cfg.train,
                )?;
                let eval = evaluate_model(EvalModel::Dsn(&mut model), &d2_test, &cfg.eval);
                (TrainedModel::Dsn(Box::new(model)), report, eval)
            }
            ModelKind::Imitation => {
                let (net, report) = train_imitation(
                    &build_imitation(&train_recs),
                    &build_imitation(&val_recs),
                    &d2_val,
                    &cfg.train,
                )?;
                let eval = evaluate_model(EvalModel::Imitation(&net), &d2_test, &cfg.eval);
                (TrainedModel::Imitation(Box::new(net)), report, eval)
            }
        };
        save_trained(&mut trained, &ckpt)?;
        manifest.record(&ckpt);
        std::fs::write(args.out.join("train_report.txt"), report.to_text(&args.model))?;
        emit_report(&eval, &args.out.join("eval_report.txt"))?;
        println!(
            "fold {fold_index}: best epoch {} | test spatial@0.1 {:.2}% | test top1 {:.2}%",
            report.best_epoch + 1,
            eval.spatial_accuracy_at(eval.spatial_thresholds[0]),
            eval.topk_accuracy(1)
        );
    }
    manifest.write(&args.out.join("manifest.toml"))?;
    Ok(())
}

/// Load a checkpoint as either model kind, resolved by architecture hash.
fn load_any_checkpoint(path: &Path) -> Result<TrainedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut dsn = DsnModel::new(&mut rng);
    match load_network(path, &mut dsn) {
        Ok(()) => return Ok(TrainedModel::Dsn(Box::new(dsn))),
        Err(dsn_core::nn::CheckpointError::ArchMismatch) => {}
        Err(e) => return Err(e.into()),
    }
    let mut imitation = ImitationNet::new(&mut rng);
    load_network(path, &mut imitation).context("checkpoint matches no known architecture")?;
    Ok(TrainedModel::Imitation(Box::new(imitation)))
}

/// `metric op value` assertion over a report; accuracies are fractions.
fn check_assertion(expr: &str, report: &EvalReport) -> Result<bool> {
    let (op_pos, op_len, ge) = match (expr.find(">="), expr.find("<=")) {
        (Some(p), _) => (p, 2, true),
        (None, Some(p)) => (p, 2, false),
        _ => bail!("assertion '{expr}' needs >= or <="),
    };
    let metric = &expr[..op_pos];
    let value: f64 = expr[op_pos + op_len..]
        .parse()
        .map_err(|_| anyhow!("bad assertion value in '{expr}'"))?;
    let actual = match metric {
        "mse" => report.mse,
        "bce" => report.bce,
        m if m.starts_with("top") => {
            let k: usize = m[3..].parse().map_err(|_| anyhow!("bad metric '{m}'"))?;
            report.topk_accuracy(k) / 100.0
        }
        m if m.starts_with("spatial") => {
            let t: f64 = m[7..].parse().map_err(|_| anyhow!("bad metric '{m}'"))?;
            report.spatial_accuracy_at(t) / 100.0
        }
        m => bail!("unknown metric '{m}'"),
    };
    let ok = if ge { actual >= value } else { actual <= value };
    if !ok {
        eprintln!("assertion failed: {expr} (actual {actual:.6})");
    }
    Ok(ok)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    let cfg = load_config(&args.config)?;
    let problem = Arc::new(cfg.problem.clone());
    let records = load_records(&args.data, &problem)?;
    let mut d2_rng = ChaCha8Rng::seed_from_u64(cfg.sampler.rng_seed);
    let samples = build_d2(&records, &cfg.sampler, &mut d2_rng);
    std::fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new(
        "evaluate",
        vec![args.config.display().to_string(), args.data.display().to_string()],
        cfg.sampler.rng_seed,
    );

    let mut model = load_any_checkpoint(&args.checkpoint)?;
    let report = match &mut model {
        TrainedModel::Dsn(m) => evaluate_model(EvalModel::Dsn(m.as_mut()), &samples, &cfg.eval),
        TrainedModel::Imitation(m) => {
            evaluate_model(EvalModel::Imitation(m.as_ref()), &samples, &cfg.eval)
        }
    };
    let report_path = args.out.join(format!("report_{}.txt", report.model));
    emit_report(&report, &report_path)?;
    manifest.record(&report_path);
    println!(
        "{}: {} samples | mse {:.6} | bce {:.6}{} | spatial@{} {:.2}% | top1 {:.2}%",
        report.model,
        report.samples,
        report.mse,
        report.bce,
        if report.bce_comparable { "" } else { " (label bce, not comparable)" },
        report.spatial_thresholds[0],
        report.spatial_accuracy_at(report.spatial_thresholds[0]),
        report.topk_accuracy(1)
    );

    let mut all_reports = vec![report];
    match args.baseline.as_str() {
        "none" => {}
        "random" => {
            let random = evaluate_model(
                EvalModel::Random { seed: cfg.sampler.rng_seed },
                &samples,
                &cfg.eval,
            );
            let p = args.out.join("report_random.txt");
            emit_report(&random, &p)?;
            manifest.record(&p);
            println!(
                "random: top1 {:.2}% | top10 {:.2}%",
                random.topk_accuracy(1),
                random.topk_accuracy(10)
            );
            all_reports.push(random);
        }
        other => bail!("unknown baseline '{other}' (expected random or none)"),
    }
    if args.svg {
        let refs: Vec<&EvalReport> = all_reports.iter().collect();
        let p = args.out.join("report.svg");
        write_svg(&refs, &p)?;
        manifest.record(&p);
    }
    manifest.write(&args.out.join("manifest.toml"))?;

    let mut failed = false;
    for expr in &args.assertions {
        if !check_assertion(expr, &all_reports[0])? {
            failed = true;
        }
    }
    Ok(if failed { EXIT_ASSERT_FAILED } else { 0 })
}

fn replay_to_final_state(
    records: &[TrajectoryRecord],
    trajectory: Option<u64>,
) -> Result<(u64, TrussState)> {
    let tid = match trajectory {
        Some(t) => t,
        None => records.iter().map(|r| r.trajectory_id).min().unwrap(),
    };
    let mut last: Option<&TrajectoryRecord> = None;
    for r in records.iter().filter(|r| r.trajectory_id == tid) {
        last = Some(r);
    }
    let last = last.ok_or_else(|| anyhow!("trajectory {tid} not found in state file"))?;
    let state = dsn_core::env::apply_action(&last.state, &last.action)?;
    Ok((tid, state))
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let problem = Arc::new(cfg.problem.clone());
    let records = load_records(&args.state_file, &problem)?;
    let (tid, state) = replay_to_final_state(&records, args.trajectory)?;
    let model = load_any_checkpoint(&args.checkpoint)?;
    let TrainedModel::Dsn(mut model) = model else {
        bail!("predict requires a dsn checkpoint");
    };

    let image = render(&state);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampler.rng_seed);
    let (region, set, dist) = dsn_forward(&mut model, &image, &state, |s, r| {
        sample_feasible(s, r, &cfg.sampler, &mut rng)
    })?;

    let mut ranked: Vec<(f64, &DesignAction)> =
        dist.iter().copied().zip(set.actions.iter()).collect();
    ranked.sort_by(|(pa, a), (pb, b)| pb.total_cmp(pa).then_with(|| a.cmp_key(b)));
    println!(
        "trajectory {tid} | region ({:+.3}, {:+.3}) ({:+.3}, {:+.3})",
        region[0], region[1], region[2], region[3]
    );
    for (rank, (p, a)) in ranked.iter().take(args.topk).enumerate() {
        println!(
            "{} {:.4} {} {} {} {} {}",
            rank + 1,
            p,
            a.label.name(),
            a.params[0],
            a.params[1],
            a.params[2],
            a.params[3]
        );
    }

    if let Some(path) = &args.render {
        let mut overlay = render(&state);
        let to_px = |x: f64, y: f64| -> (i64, i64) {
            (((1.0 - y) / 2.0 * 127.0).round() as i64, ((x + 1.0) / 2.0 * 127.0).round() as i64)
        };
        for (cx, cy) in [(region[0], region[1]), (region[2], region[3])] {
            let (r, c) = to_px(cx, cy);
            for d in -3i64..=3 {
                for (rr, cc) in [(r + d, c), (r, c + d)] {
                    if (0..128).contains(&rr) && (0..128).contains(&cc) {
                        for (ch, v) in [(0usize, 255u8), (1, 0), (2, 255)] {
                            overlay.pixels[(ch, rr as usize, cc as usize)] = v;
                        }
                    }
                }
            }
        }
        overlay.save_png(path)?;
        println!("overlay written to {}", path.display());
    }
    Ok(())
}

fn cmd_import(args: ImportArgs) -> Result<()> {
    let (problem, problem_ref) = resolve_problem(&args.problem)?;
    let text = std::fs::read_to_string(&args.csv)?;
    let outcome = import_csv_text(&text, &problem, args.snap_tol)?;
    let steps: Vec<_> = outcome.records.iter().map(raw_step_of).collect();
    let header = TrajectoryHeader {
        problem_ref,
        manifest: vec![
            ("source".into(), args.csv.display().to_string()),
            ("imported_records".into(), outcome.records.len().to_string()),
            ("skipped".into(), outcome.skipped.len().to_string()),
            ("subtractive_dropped".into(), outcome.subtractive_dropped.to_string()),
        ],
    };
    write_trajectory_file(&args.out, &header, &steps)?;
    println!(
        "imported {} records ({} skipped, {} subtractive dropped) to {}",
        outcome.records.len(),
        outcome.skipped.len(),
        outcome.subtractive_dropped,
        args.out.display()
    );
    for (tid, step, reason) in outcome.skipped.iter().take(10) {
        eprintln!("  skipped trajectory {tid} step {step}: {reason}");
    }
    Ok(())
}
