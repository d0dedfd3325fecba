//! `petct` — command-line front end for the PET/CT segmentation pipeline
//! toolkit: phantom generation, dataset preparation, patch sampling,
//! two-step assembly, manifest splitting, evaluation, significance
//! testing, leaderboard ranking, loss verification, and output auditing.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use petct_core::geometry::ZAnchor;
use petct_core::metrics::{rank_leaderboard, EmptyPolicy};
use petct_core::nifti::{read_nifti, write_nifti, Datatype};
use petct_core::numerics::{
    dice_focal_loss, dice_loss, finite_difference_gradient, focal_loss, lr_at,
    max_relative_error, LossConfig, ScheduleConfig,
};
use petct_core::pipeline::config::RunConfig;
use petct_core::pipeline::evaluate::{evaluate_manifest, model_pairs};
use petct_core::pipeline::manifest::{read_manifest, write_manifest, DatasetKind, Manifest};
use petct_core::pipeline::patches::export_patches;
use petct_core::pipeline::phantom::{synth_phantom, PhantomConfig};
use petct_core::pipeline::prep::{assemble_two_step, prep_autopet, prep_hecktor, PrepOutcome};
use petct_core::pipeline::report::{
    read_aggregate_table, render_eval_summary, render_rank_table, render_stat_header,
    write_eval_report, write_rank_table, write_stat_report,
};
use petct_core::pipeline::split::split_manifest;
use petct_core::pipeline::verify::verify_prep_dir;
use petct_core::pipeline::{config as run_config, resolve_manifest_paths};
use petct_core::rng::derive_rng;
use petct_core::stats::{pvalue_matrix, pvalue_matrix_percase};
use petct_core::volume::split_mask;
use rand::Rng;

#[derive(Parser)]
#[command(name = "petct", version, about = "PET/CT tumor-segmentation pipeline toolkit")]
struct Cli {
    /// Run configuration file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for case-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Which z-index end of a scan is the anatomical top.
    #[arg(long, global = true, value_parser = parse_z_anchor)]
    z_anchor: Option<ZAnchor>,
    /// Score when truth and prediction are both empty: one, zero, exclude.
    #[arg(long = "empty-empty", global = true, value_parser = parse_empty_policy)]
    empty_empty: Option<EmptyPolicy>,
    #[command(subcommand)]
    command: Command,
}

fn parse_z_anchor(s: &str) -> Result<ZAnchor, String> {
    ZAnchor::parse(s).ok_or_else(|| format!("expected high or low, got {s:?}"))
}

fn parse_empty_policy(s: &str) -> Result<EmptyPolicy, String> {
    EmptyPolicy::parse(s).ok_or_else(|| format!("expected one, zero or exclude, got {s:?}"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate deterministic synthetic phantom cases with a manifest.
    Synth(SynthArgs),
    /// Prepare a head-and-neck manifest: resample, crop, normalize, split masks.
    PrepHecktor(PrepArgs),
    /// Prepare a whole-body manifest: normalize intensities, optional crop.
    PrepAutopet(PrepAutopetArgs),
    /// Split one label map into the two structure masks.
    SplitMasks(SplitMasksArgs),
    /// Draw training patches from a prepared directory.
    SamplePatches(SamplePatchesArgs),
    /// Reinsert first-stage predictions as a third input channel.
    AssembleTwoStep(TwoStepArgs),
    /// Split a manifest into train and test manifests.
    Split(SplitArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Pairwise significance tests between prediction sets.
    Stats(StatsArgs),
    /// Rank leaderboard entries by mean aggregated Dice.
    Rank(RankArgs),
    /// Check loss gradients against finite differences and print the schedule.
    Losscheck(LosscheckArgs),
    /// Re-open prepared outputs and check every contract.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    kind: DatasetKind,
    #[arg(long)]
    cases: usize,
    #[arg(long, default_value_t = 0.0)]
    negative_fraction: f64,
    /// Voxel grid, e.g. 48,48,64
    #[arg(long, value_parser = parse_usize3)]
    shape: Option<(usize, usize, usize)>,
    /// Voxel spacing in mm, e.g. 2,2,2
    #[arg(long, value_parser = parse_f64x3)]
    spacing: Option<(f64, f64, f64)>,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PrepAutopetArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Exclude cases with an empty ground-truth mask.
    #[arg(long)]
    tumor_only: bool,
}

#[derive(Args)]
struct SplitMasksArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_gtvp: PathBuf,
    #[arg(long)]
    out_gtvn: PathBuf,
}

#[derive(Args)]
struct SamplePatchesArgs {
    #[arg(long)]
    prep: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    kind: DatasetKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    epoch: u32,
}

#[derive(Args)]
struct TwoStepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    prep: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_test: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Shuffle and split each acquisition center separately.
    #[arg(long)]
    by_center: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory searched for <case_id>.nii.gz when the manifest has no
    /// prediction column.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    /// Prep directory holding per-case reinsertion metadata.
    #[arg(long)]
    meta_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Repeatable NAME=DIR prediction sets to compare.
    #[arg(long = "pred", required = true)]
    preds: Vec<String>,
    #[arg(long)]
    meta_dir: Option<PathBuf>,
    /// bootstrap (aggregated-Dice resampling) or per-case (paired scores).
    #[arg(long, default_value = "bootstrap")]
    protocol: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    /// Tab-separated table: name column plus one column per structure.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LosscheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Cubic grid edge for the random instances.
    #[arg(long, default_value_t = 4)]
    grid: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    dir: PathBuf,
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    DatasetKind::parse(s).ok_or_else(|| format!("expected hecktor or autopet, got {s:?}"))
}

fn parse_usize3(s: &str) -> Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad integer in {s:?}")))
        .collect::<Result<_, _>>()?;
    if v.len() != 3 {
        return Err(format!("expected three values, got {s:?}"));
    }
    Ok((v[0], v[1], v[2]))
}

fn parse_f64x3(s: &str) -> Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad number in {s:?}")))
        .collect::<Result<_, _>>()?;
    if v.len() != 3 {
        return Err(format!("expected three values, got {s:?}"));
    }
    Ok((v[0], v[1], v[2]))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => run_config::parse_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(anchor) = cli.z_anchor {
        cfg.prep.z_anchor = anchor;
    }
    if let Some(policy) = cli.empty_empty {
        cfg.empty_policy = policy;
    }
    Ok(cfg)
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let mut manifest =
        read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))?;
    // canonical base so derived manifests carry location-independent paths
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
    resolve_manifest_paths(&mut manifest, &base);
    Ok(manifest)
}

fn report_prep(outcome: &PrepOutcome, input: usize) -> Result<()> {
    println!(
        "prepared {}  excluded {}  failed {}  (of {input})",
        outcome.prepared.len(),
        outcome.excluded.len(),
        outcome.failed.len()
    );
    for failure in &outcome.failed {
        eprintln!("failed {}: {}", failure.case_id, failure.message);
    }
    if outcome.total() != input {
        bail!(
            "case accounting broken: {} of {input} cases reported",
            outcome.total()
        );
    }
    if !outcome.failed.is_empty() {
        bail!("{} case(s) failed", outcome.failed.len());
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    let cfg = load_config(&cli)?;

    match &cli.command {
        Command::Synth(args) => {
            let mut pcfg = PhantomConfig {
                negative_fraction: args.negative_fraction,
                ..PhantomConfig::default()
            };
            if let Some(shape) = args.shape {
                pcfg.shape = shape;
            }
            if let Some(spacing) = args.spacing {
                pcfg.spacing = spacing;
            }
            let (manifest, cases) =
                synth_phantom(&args.out, args.kind, args.cases, &pcfg, cfg.seed)?;
            let negatives = cases.iter().filter(|c| !c.has_tumor).count();
            println!(
                "wrote {} cases ({negatives} negative) under {}",
                manifest.cases.len(),
                args.out.display()
            );
        }
        Command::PrepHecktor(args) => {
            let manifest = load_manifest(&args.manifest)?;
            let outcome = prep_hecktor(&manifest, &cfg, &args.out)?;
            report_prep(&outcome, manifest.cases.len())?;
        }
        Command::PrepAutopet(args) => {
            let manifest = load_manifest(&args.manifest)?;
            let outcome = prep_autopet(&manifest, &cfg, &args.out, args.tumor_only)?;
            report_prep(&outcome, manifest.cases.len())?;
        }
        Command::SplitMasks(args) => {
            let label_map = read_nifti(&args.input)?;
            let pair = split_mask(&label_map, cfg.prep.label_gtvp, cfg.prep.label_gtvn)?;
            write_nifti(&pair.gtvp, &args.out_gtvp, Datatype::Uint8)?;
            write_nifti(&pair.gtvn, &args.out_gtvn, Datatype::Uint8)?;
            println!(
                "gtvp voxels {}  gtvn voxels {}",
                pair.gtvp.foreground_count(),
                pair.gtvn.foreground_count()
            );
        }
        Command::SamplePatches(args) => {
            let n = export_patches(&args.prep, args.kind, &cfg, args.epoch, &args.out)?;
            println!("wrote {n} patches under {}", args.out.display());
        }
        Command::AssembleTwoStep(args) => {
            let manifest = load_manifest(&args.manifest)?;
            let outcome = assemble_two_step(&manifest, &cfg, &args.prep, &args.out)?;
            report_prep(&outcome, manifest.cases.len())?;
        }
        Command::Split(args) => {
            let manifest = load_manifest(&args.manifest)?;
            let (train, test) =
                split_manifest(&manifest, args.train_fraction, cfg.seed, args.by_center)?;
            write_manifest(&train, &args.out_train)?;
            write_manifest(&test, &args.out_test)?;
            println!(
                "train {} cases -> {}\ntest {} cases -> {}",
                train.cases.len(),
                args.out_train.display(),
                test.cases.len(),
                args.out_test.display()
            );
        }
        Command::Eval(args) => {
            let manifest = load_manifest(&args.manifest)?;
            let report = evaluate_manifest(
                &manifest,
                &cfg,
                args.pred_dir.as_deref(),
                args.meta_dir.as_deref(),
            )?;
            write_eval_report(&report, &args.out)?;
            print!("{}", render_eval_summary(&report));
        }
        Command::Stats(args) => {
            let manifest = load_manifest(&args.manifest)?;
            let mut models = Vec::new();
            for spec in &args.preds {
                let (name, dir) = spec
                    .split_once('=')
                    .with_context(|| format!("--pred expects NAME=DIR, got {spec:?}"))?;
                let pairs = model_pairs(
                    &manifest,
                    &cfg,
                    Some(Path::new(dir)),
                    args.meta_dir.as_deref(),
                )?;
                models.push((name.to_string(), pairs));
            }
            let report = match args.protocol.as_str() {
                "bootstrap" => pvalue_matrix(&models, &cfg.stats)?,
                "per-case" => {
                    let scored = per_case_score_vectors(&models, cfg.empty_policy)?;
                    pvalue_matrix_percase(&scored, &cfg.stats)?
                }
                other => bail!("unknown protocol {other:?} (bootstrap or per-case)"),
            };
            write_stat_report(&report, &args.out)?;
            print!("{}\n{}", render_stat_header(&report), report.render_matrix());
        }
        Command::Rank(args) => {
            let entries = read_aggregate_table(&args.input)?;
            let rows = rank_leaderboard(&entries)?;
            if let Some(out) = &args.out {
                write_rank_table(&rows, out)?;
            }
            print!("{}", render_rank_table(&rows));
        }
        Command::Losscheck(args) => {
            losscheck(&cfg, args)?;
        }
        Command::Verify(args) => {
            let report = verify_prep_dir(&args.dir)?;
            println!("checked {} case(s)", report.cases_checked);
            for violation in &report.violations {
                eprintln!("violation: {violation}");
            }
            if !report.ok() {
                bail!("{} contract violation(s)", report.violations.len());
            }
            println!("all contracts hold");
        }
    }
    Ok(())
}

/// Aligned per-case score vectors for the paired per-case protocol. Slots
/// are ordered by (case, structure) identically for every model; under the
/// exclude policy, slots whose ground truth is empty are dropped (the
/// truth is shared, so alignment survives).
fn per_case_score_vectors(
    models: &[(String, Vec<petct_core::metrics::EvalPair>)],
    policy: EmptyPolicy,
) -> Result<Vec<(String, Vec<f64>)>> {
    use petct_core::metrics::dsc_from_counts;
    let mut out = Vec::new();
    let reference: Vec<(String, petct_core::metrics::Structure)> = {
        let mut keys: Vec<_> = models[0]
            .1
            .iter()
            .map(|p| (p.case_id.clone(), p.structure))
            .collect();
        keys.sort();
        keys
    };
    for (name, pairs) in models {
        let mut sorted: Vec<_> = pairs.iter().collect();
        sorted.sort_by(|a, b| (&a.case_id, a.structure).cmp(&(&b.case_id, b.structure)));
        let keys: Vec<_> = sorted
            .iter()
            .map(|p| (p.case_id.clone(), p.structure))
            .collect();
        if keys != reference {
            bail!("model {name:?} evaluates a different (case, structure) set");
        }
        let scores: Vec<f64> = sorted
            .iter()
            .filter(|p| !(policy == EmptyPolicy::Exclude && p.counts.truth == 0))
            .map(|p| {
                dsc_from_counts(p.counts, policy)
                    .unwrap_or_else(|| dsc_from_counts(p.counts, EmptyPolicy::One).unwrap())
            })
            .collect();
        out.push((name.clone(), scores));
    }
    Ok(out)
}

/// Gradient verification over seeded random instances plus a schedule
/// spot-check; exits nonzero when any check exceeds the tolerance.
fn losscheck(cfg: &RunConfig, args: &LosscheckArgs) -> Result<()> {
    let loss_cfg = cfg.loss.clone();
    let n = args.grid * args.grid * args.grid;
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    let mut worst_kind = "";
    type LossFn = fn(
        &[f64],
        &[f64],
        &LossConfig,
    ) -> Result<petct_core::numerics::LossOutput, petct_core::numerics::NumericsError>;
    let kernels: [(&str, LossFn); 3] = [
        ("dice", dice_loss as LossFn),
        ("focal", focal_loss as LossFn),
        ("dice-focal", dice_focal_loss as LossFn),
    ];
    for instance in 0..args.instances {
        let mut rng = derive_rng(cfg.seed, "losscheck", instance as u64);
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let target: Vec<f64> = (0..n).map(|_| f64::from(rng.random::<bool>())).collect();
        for (kind, f) in kernels {
            let out = f(&pred, &target, &loss_cfg)?;
            let fd = finite_difference_gradient(
                |p| f(p, &target, &loss_cfg).unwrap().loss,
                &pred,
                step,
            );
            let err = max_relative_error(&out.grad, &fd);
            if err > worst {
                worst = err;
                worst_kind = kind;
            }
            if instance == 0 {
                println!("{kind}: loss {:.6}  max grad rel err {err:.3e}", out.loss);
            }
        }
    }
    println!(
        "{} instances checked  worst {worst_kind} gradient rel err {worst:.3e}  tolerance {:.1e}",
        args.instances, args.tolerance
    );

    let schedule = cfg.schedule.clone().unwrap_or(ScheduleConfig {
        eta_max: 0.1,
        eta_min: 0.0,
        t_0: 10,
        t_mult: 2,
    });
    let lr0 = lr_at(0, &schedule)?;
    let lr_restart = lr_at(schedule.t_0, &schedule)?;
    println!(
        "schedule: eta(0) = {lr0}  eta(T_0) = {lr_restart}  (eta_max {})",
        schedule.eta_max
    );
    if (lr0 - schedule.eta_max).abs() > 1e-12 || (lr_restart - schedule.eta_max).abs() > 1e-12 {
        bail!("schedule restart check failed");
    }
    if worst > args.tolerance {
        bail!(
            "gradient verification failed: {worst:.3e} > {:.1e}",
            args.tolerance
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
