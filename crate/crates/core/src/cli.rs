//! Command-line front end. Every command writes its artifacts plus a
//! `manifest.json` into `--out`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{
    ablation_study, feature_importance, fit_plmr, run_experiment, run_sweep, write_reports_csv,
    write_reports_json, CohortKind, ExperimentSpec, ModelKind, PreparedCourse, Protocol,
    SweepMetric, SweepTable,
};
use crate::eventlog::{ingest_log, CourseCatalog, GradingKind, DEFAULT_MAX_DROP_FRACTION};
use crate::features::{build_feature_matrix, observations, FeatureConfig, FeatureGroup};
use crate::plmr::LossKind;
use crate::simgen::{simulate, MembershipKind, SimConfig};

pub const SEED_ENV: &str = "PLMR_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "plmr",
    version,
    about = "MOOC grade prediction from click-stream logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic course, event log and truth table.
    Simulate(SimulateArgs),
    /// Extract the raw feature matrix.
    Featurize(FeaturizeArgs),
    /// Fit PLMR on the protocol's training rows and save the model.
    Train(ExperimentArgs),
    /// Run one experiment and report its metrics.
    Evaluate(ExperimentArgs),
    /// Rerun an experiment once per left-out feature group.
    Ablate(ExperimentArgs),
    /// Per-feature importance of a fitted PLMR model on the test rows.
    Importance(ExperimentArgs),
    /// Grid of experiments over targets, models, l and gamma.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// TOML file with defaults for this command.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed; overrides PLMR_SEED and the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct Inputs {
    #[arg(long, default_value = "events.jsonl")]
    log: PathBuf,
    #[arg(long, default_value = "catalog.json")]
    catalog: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GradingArg {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MembershipArg {
    Dense,
    OneHot,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    homeworks: Option<usize>,
    #[arg(long)]
    quizzes: Option<usize>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long, value_enum)]
    grading: Option<GradingArg>,
    /// Standard deviation of the grade noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Number of planted regressions.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long, value_enum)]
    memberships: Option<MembershipArg>,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long = "remove-group")]
    remove_group: Vec<FeatureGroup>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Squared,
    Logistic,
}

#[derive(Debug, Args)]
struct SpecFlags {
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    target: Option<usize>,
    #[arg(long)]
    cohort: Option<CohortKind>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Drop a feature group; repeatable. For `ablate`, the groups to leave
    /// out one at a time (default: all).
    #[arg(long = "remove-group")]
    remove_group: Vec<FeatureGroup>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    spec: SpecFlags,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    spec: SpecFlags,
    /// Target ordinals, e.g. `2-6` or `2,4`. Default: every valid ordinal.
    #[arg(long)]
    targets: Option<String>,
    /// Comma-separated models.
    #[arg(long, value_delimiter = ',', default_value = "plmr,meanscore")]
    models: Vec<ModelKind>,
    /// Comma-separated l grid for PLMR.
    #[arg(long = "ls", value_delimiter = ',')]
    ls: Vec<usize>,
    /// Comma-separated gamma grid for PLMR.
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    command: Vec<String>,
    config: serde_json::Value,
    seed: u64,
    version: &'static str,
    inputs: Vec<FileDigest>,
    /// Relative to the output directory.
    outputs: Vec<FileDigest>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects files written into one output directory.
struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(
        self,
        argv: &[String],
        config: serde_json::Value,
        seed: u64,
        inputs: &[&Path],
    ) -> Result<()> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        let outputs = self
            .written
            .iter()
            .map(|name| {
                Ok(FileDigest {
                    path: name.clone(),
                    sha256: sha256_file(&self.dir.join(name))?,
                })
            })
            .collect::<Result<_>>()?;
        let manifest = RunManifest {
            command: argv.to_vec(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Config file contents as a TOML table, with a top-level `seed` split off.
fn read_config(path: Option<&Path>) -> Result<(toml::Table, Option<u64>)> {
    let Some(path) = path else {
        return Ok((toml::Table::new(), None));
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let seed = match table.remove("seed") {
        None => None,
        Some(toml::Value::Integer(s)) if s >= 0 => Some(s as u64),
        Some(other) => {
            return Err(Error::Config(format!(
                "seed must be a non-negative integer, got {other}"
            )))
        }
    };
    Ok((table, seed))
}

/// Flag, then the `PLMR_SEED` environment variable, then the config file,
/// then zero.
fn resolve_seed(flag: Option<u64>, from_file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        return v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")));
    }
    Ok(from_file.unwrap_or(0))
}

fn table_into<T: serde::de::DeserializeOwned>(table: toml::Table) -> Result<T> {
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn experiment_spec(common: &Common, flags: &SpecFlags) -> Result<(ExperimentSpec, u64)> {
    let (table, file_seed) = read_config(common.config.as_deref())?;
    let mut spec: ExperimentSpec = table_into(table)?;
    let seed = resolve_seed(common.seed, file_seed)?;
    spec.train.seed = seed;
    spec.kt.seed = seed;
    if let Some(p) = flags.protocol {
        spec.protocol = p;
    }
    if let Some(t) = flags.target {
        spec.target = t;
    }
    if let Some(c) = flags.cohort {
        spec.cohort = c;
    }
    if let Some(m) = flags.model {
        spec.model = m;
    }
    if let Some(l) = flags.l {
        spec.train.l = l;
    }
    if let Some(g) = flags.gamma {
        spec.train.gamma = g;
    }
    if let Some(loss) = flags.loss {
        spec.train.loss = match loss {
            LossArg::Squared => LossKind::Squared,
            LossArg::Logistic => LossKind::Logistic,
        };
    }
    Ok((spec, seed))
}

fn without_groups(mut features: FeatureConfig, groups: &[FeatureGroup]) -> FeatureConfig {
    for g in groups {
        features = features.without(*g);
    }
    features
}

fn cmd_simulate(argv: &[String], args: SimulateArgs) -> Result<()> {
    let (table, file_seed) = read_config(args.common.config.as_deref())?;
    let mut config: SimConfig = table_into(table)?;
    config.seed = resolve_seed(args.common.seed, file_seed)?;
    if let Some(v) = args.students {
        config.students = v;
    }
    if let Some(v) = args.homeworks {
        config.homeworks = v;
    }
    if let Some(v) = args.quizzes {
        config.quizzes_per_homework = v;
    }
    if let Some(v) = args.videos {
        config.videos_per_quiz = v;
    }
    if let Some(g) = args.grading {
        config.grading = match g {
            GradingArg::Continuous => GradingKind::Continuous,
            GradingArg::Binary => GradingKind::Binary,
        };
    }
    if let Some(v) = args.noise {
        config.noise = v;
    }
    if let Some(v) = args.l {
        config.planted.l = v;
    }
    if let Some(m) = args.memberships {
        config.planted.memberships = match m {
            MembershipArg::Dense => MembershipKind::Dense,
            MembershipArg::OneHot => MembershipKind::OneHot,
        };
    }
    let out = simulate(&config)?;
    let mut dir = OutDir::create(&args.common.out)?;
    for path in out.write_to(&args.common.out)? {
        let name = path
            .file_name()
            .expect("file path")
            .to_string_lossy()
            .into_owned();
        dir.written.push(name);
    }
    eprintln!(
        "simulated {} students, {} events, {} graded submissions",
        config.students,
        out.events.len(),
        out.truth.rows.len()
    );
    dir.finish(argv, serde_json::to_value(&config)?, config.seed, &[])
}

fn cmd_featurize(argv: &[String], args: FeaturizeArgs) -> Result<()> {
    let (table, file_seed) = read_config(args.common.config.as_deref())?;
    let features: FeatureConfig = table_into(table)?;
    let features = without_groups(features, &args.remove_group);
    let seed = resolve_seed(args.common.seed, file_seed)?;
    let catalog = CourseCatalog::load(&args.inputs.catalog)?;
    let log = ingest_log(&args.inputs.log, &catalog, DEFAULT_MAX_DROP_FRACTION)?;
    let obs = observations(&log, &catalog);
    let (matrix, report) = build_feature_matrix(&log, &catalog, &obs, &features)?;
    let mut buf = Vec::new();
    matrix.write_csv(&mut buf)?;
    let mut dir = OutDir::create(&args.common.out)?;
    dir.write("features.csv", &buf)?;
    eprintln!(
        "{} rows, {} columns, {} unsubmitted observations, {} dropped lines",
        matrix.rows.len(),
        matrix.width(),
        report.unsubmitted.len(),
        log.report.dropped.len()
    );
    dir.finish(
        argv,
        serde_json::to_value(&features)?,
        seed,
        &[&args.inputs.log, &args.inputs.catalog],
    )
}

fn load_course(inputs: &Inputs, features: &FeatureConfig) -> Result<PreparedCourse> {
    let catalog = CourseCatalog::load(&inputs.catalog)?;
    let log = ingest_log(&inputs.log, &catalog, DEFAULT_MAX_DROP_FRACTION)?;
    PreparedCourse::new(log, catalog, features.session_timeout)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_experiment(argv: &[String], which: &str, args: ExperimentArgs) -> Result<()> {
    let (mut spec, seed) = experiment_spec(&args.common, &args.spec)?;
    if which != "ablate" {
        spec.features = without_groups(spec.features, &args.spec.remove_group);
    }
    let course = load_course(&args.inputs, &spec.features)?;
    let mut dir = OutDir::create(&args.common.out)?;
    match which {
        "train" => {
            spec.model = ModelKind::Plmr;
            let run = fit_plmr(&course, &spec)?;
            dir.write("model.json", run.model.to_json().as_bytes())?;
            eprintln!(
                "trained on {} rows in {} epochs",
                run.train_rows,
                run.model.train_log().len().saturating_sub(1)
            );
        }
        "evaluate" => {
            let report = run_experiment(&course, &spec)?;
            print_json(&report)?;
            dir.json("metrics.json", &report)?;
            let mut csv = Vec::new();
            write_reports_csv(&mut csv, std::slice::from_ref(&report))?;
            dir.write("metrics.csv", &csv)?;
        }
        "ablate" => {
            let groups: Vec<FeatureGroup> = if args.spec.remove_group.is_empty() {
                spec.features.groups.iter().copied().collect()
            } else {
                args.spec.remove_group.clone()
            };
            let report = ablation_study(&course, &spec, &groups)?;
            print_json(&report)?;
            dir.json("ablation.json", &report)?;
        }
        "importance" => {
            spec.model = ModelKind::Plmr;
            let run = fit_plmr(&course, &spec)?;
            let report = feature_importance(
                &run.model,
                run.test.iter().map(|r| (&r.student, r.features.as_slice())),
            )?;
            print_json(&report)?;
            dir.json("importance.json", &report)?;
        }
        _ => unreachable!("experiment command {which}"),
    }
    dir.finish(
        argv,
        serde_json::to_value(&spec)?,
        seed,
        &[&args.inputs.log, &args.inputs.catalog],
    )
}

/// `a-b` or a comma list.
fn parse_targets(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse targets {text:?}"));
    if let Some((a, b)) = text.split_once('-') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|t| t.trim().parse().map_err(|_| bad()))
        .collect()
}

fn cmd_sweep(argv: &[String], args: SweepArgs) -> Result<()> {
    let (mut base, seed) = experiment_spec(&args.common, &args.spec)?;
    base.features = without_groups(base.features, &args.spec.remove_group);
    let course = load_course(&args.inputs, &base.features)?;
    let n = course.catalog.num_homeworks();
    let first = if base.protocol.is_sequential() { 2 } else { 1 };
    let targets = match &args.targets {
        Some(t) => parse_targets(t)?,
        None => (first..=n).collect(),
    };
    let ls = if args.ls.is_empty() {
        vec![base.train.l]
    } else {
        args.ls.clone()
    };
    let gammas = if args.gammas.is_empty() {
        vec![base.train.gamma]
    } else {
        args.gammas.clone()
    };
    let mut specs = Vec::new();
    for &target in &targets {
        for &model in &args.models {
            let mut s = base.clone();
            s.target = target;
            s.model = model;
            if model == ModelKind::Plmr {
                for &l in &ls {
                    for &g in &gammas {
                        let mut p = s.clone();
                        p.train.l = l;
                        p.train.gamma = g;
                        specs.push(p);
                    }
                }
            } else {
                specs.push(s);
            }
        }
    }
    let reports = run_sweep(&course, &specs, args.jobs)?;
    let mut dir = OutDir::create(&args.common.out)?;
    let mut json = Vec::new();
    write_reports_json(&mut json, &reports)?;
    dir.write("sweep.json", &json)?;
    let mut csv = Vec::new();
    write_reports_csv(&mut csv, &reports)?;
    dir.write("sweep.csv", &csv)?;
    let mut metrics = vec![SweepMetric::Rmse];
    if course.catalog.grading() == GradingKind::Binary {
        metrics.extend([SweepMetric::Accuracy, SweepMetric::F1]);
    }
    let mut text = String::new();
    for metric in metrics {
        let table = SweepTable::from_reports(&reports, metric);
        let name = serde_json::to_value(metric)?
            .as_str()
            .unwrap_or("metric")
            .to_string();
        let mut buf = Vec::new();
        table.write_csv(&mut buf)?;
        dir.write(&format!("table_{name}.csv"), &buf)?;
        text.push_str(&format!("{name}\n{}\n", table.to_text()));
    }
    print!("{text}");
    dir.write("table.txt", text.as_bytes())?;

    #[derive(Serialize)]
    struct SweepConfig<'a> {
        base: &'a ExperimentSpec,
        targets: &'a [usize],
        models: &'a [ModelKind],
        ls: &'a [usize],
        gammas: &'a [f64],
    }
    let config = SweepConfig {
        base: &base,
        targets: &targets,
        models: &args.models,
        ls: &ls,
        gammas: &gammas,
    };
    dir.finish(
        argv,
        serde_json::to_value(&config)?,
        seed,
        &[&args.inputs.log, &args.inputs.catalog],
    )
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_DIVERGENCE
    } else {
        EXIT_DATA
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let recorded: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&recorded, a),
        Command::Featurize(a) => cmd_featurize(&recorded, a),
        Command::Train(a) => cmd_experiment(&recorded, "train", a),
        Command::Evaluate(a) => cmd_experiment(&recorded, "evaluate", a),
        Command::Ablate(a) => cmd_experiment(&recorded, "ablate", a),
        Command::Importance(a) => cmd_experiment(&recorded, "importance", a),
        Command::Sweep(a) => cmd_sweep(&recorded, a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_ranges() {
        assert_eq!(parse_targets("2-5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_targets("3, 6").unwrap(), vec![3, 6]);
        assert!(parse_targets("x").is_err());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(cli_dispatch(["plmr", "evaluate", "--bogus"]), EXIT_USAGE);
        assert_eq!(cli_dispatch(["plmr"]), EXIT_USAGE);
        assert_eq!(cli_dispatch(["plmr", "--help"]), EXIT_OK);
    }

    #[test]
    fn divergence_maps_to_its_own_code() {
        assert_eq!(exit_code(&Error::Divergence { epoch: 3 }), EXIT_DIVERGENCE);
        assert_eq!(exit_code(&Error::Dataset("x".into())), EXIT_DATA);
    }

    #[test]
    fn config_seed_is_read_and_removed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 9\ntarget = 4\n[train]\nl = 2\n").unwrap();
        let (table, seed) = read_config(Some(&path)).unwrap();
        assert_eq!(seed, Some(9));
        let spec: ExperimentSpec = table_into(table).unwrap();
        assert_eq!((spec.target, spec.train.l), (4, 2));
    }
}
