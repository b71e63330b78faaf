//! Command-line verbs: simulate, fit, evaluate, bounds, bench.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, CommandFactory, Parser, Subcommand};
use ivregime_core::bench::{render_table, run_bench, BenchConfig};
use ivregime_core::data::validate;
use ivregime_core::evaluation::{
    bin_table, bp_bounds_for_actions, complier_value, fit_eif, majority_actions, value_ipw, value_mr, value_one_step,
    value_plugin, ValueReport,
};
use ivregime_core::learn::{learn_policy, BandwidthGrid, KernelKind, LearnConfig};
use ivregime_core::nuisance::{fit_mr, fit_nuisances, orient_instrument, Basis, NuisanceConfig, NuisanceSet};
use ivregime_core::rng::{stream, streams};
use ivregime_core::synth::{generate_scenario, ScenarioSpec};
use ivregime_core::{Dataset, WeightScheme};

use crate::config::parse_config;
use crate::csvio::{read_csv, write_dataset, write_latent};
use crate::error::{CliError, Within};
use crate::fmt::num;
use crate::modelfile::{self, FitInfo, ModelFile};
use crate::par::{with_threads, Rayon};

#[derive(Parser, Debug)]
#[command(name = "ivregime", version, about = "Learn and evaluate treatment regimes with a binary instrument")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Subcommand, Debug)]
pub enum Verb {
    /// Draw a simulation scenario and write it as CSV with latent columns.
    Simulate(SimulateArgs),
    /// Learn a regime from a CSV dataset and write a model file.
    Fit(FitArgs),
    /// Estimate the value of a stored regime on a CSV dataset.
    Evaluate(EvaluateArgs),
    /// IV bounds on the value of a stored regime (binary outcomes).
    Bounds(BoundsArgs),
    /// Replicated simulation study; writes a TSV table.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Flat `key = value` file supplying defaults for any flag below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario 1-4.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Instrument coefficient in the treatment model [default: 2.5].
    #[arg(long)]
    pub iv_coef: Option<String>,
    /// Bridge-distribution parameter of the confounder [default: 0.5].
    #[arg(long)]
    pub phi: Option<String>,
    /// Drop the latent `u,y1,ym1` columns.
    #[arg(long)]
    pub observable_only: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// IV_IW_A, IV_IW_Z, IV_MR_A, IV_MR_Z, OWL, COMPLIER_A or COMPLIER_Z.
    #[arg(long)]
    pub scheme: Option<String>,
    /// linear or gaussian [default: linear].
    #[arg(long)]
    pub kernel: Option<String>,
    /// Comma-separated penalties [default: 2^-10..2^4].
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// Comma-separated multiples of the median pairwise distance; prefix with `abs:` for absolute bandwidths.
    #[arg(long)]
    pub bandwidth_grid: Option<String>,
    #[arg(long)]
    pub folds: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub max_passes: Option<String>,
    #[arg(long)]
    pub solver_tol: Option<String>,
    #[arg(long)]
    pub delta_floor: Option<String>,
    #[arg(long)]
    pub instrument_floor: Option<String>,
    /// Center and scale covariates by training moments.
    #[arg(long)]
    pub standardize: bool,
    /// Read labels as 0/1 instead of -1/+1.
    #[arg(long)]
    pub recode: bool,
    #[arg(long)]
    pub threads: Option<String>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Estimator: IV_IW, IV_MR, EIF, OWL or COMPLIER (weight-scheme names map to their family).
    #[arg(long)]
    pub scheme: Option<String>,
    /// Also report IV bounds (binary outcomes only).
    #[arg(long)]
    pub bounds: bool,
    /// Quantile bins per covariate for the bounds [default: 5].
    #[arg(long)]
    pub bins: Option<String>,
    /// Mixing weight of the bounds [default: 0.5].
    #[arg(long)]
    pub omega: Option<String>,
    /// `refit` fits nuisances on the evaluation data; `model` uses the training fits [default: refit].
    #[arg(long)]
    pub nuisance: Option<String>,
    #[arg(long)]
    pub delta_floor: Option<String>,
    #[arg(long)]
    pub instrument_floor: Option<String>,
    #[arg(long)]
    pub recode: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<String>,
    #[arg(long)]
    pub max_strata: Option<String>,
    #[arg(long)]
    pub omega: Option<String>,
    #[arg(long)]
    pub recode: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated scenario list [default: 1,2,3,4].
    #[arg(long)]
    pub scenarios: Option<String>,
    /// Replications per scenario [default: 100].
    #[arg(long)]
    pub reps: Option<String>,
    /// Use 500 replications unless `--reps` is given.
    #[arg(long)]
    pub full_scale: bool,
    /// Comma-separated weight schemes [default: IV_IW_A,IV_MR_A,OWL].
    #[arg(long)]
    pub schemes: Option<String>,
    /// Comma-separated kernels [default: linear].
    #[arg(long)]
    pub kernels: Option<String>,
    #[arg(long)]
    pub iv_coef: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub n_train: Option<String>,
    #[arg(long)]
    pub n_test: Option<String>,
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub bandwidth_grid: Option<String>,
    #[arg(long)]
    pub folds: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flag values backed by an optional config file; flags win.
struct Settings {
    cfg: BTreeMap<String, String>,
}

impl Settings {
    fn load(verb: &str, path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings { cfg: BTreeMap::new() });
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = parse_config(&text, &path.display().to_string())?;
        let cmd = Cli::command();
        let sub = cmd.find_subcommand(verb).expect("known verb");
        let allowed: Vec<&str> = sub.get_arguments().filter_map(|a| a.get_long()).filter(|l| *l != "config").collect();
        if let Some(k) = cfg.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::Usage(format!("{}: unknown key `{k}` for `{verb}`", path.display())));
        }
        Ok(Settings { cfg })
    }

    fn raw(&self, cli: &Option<String>, key: &str) -> Option<String> {
        cli.clone().or_else(|| self.cfg.get(key).cloned())
    }

    fn get<T: FromStr>(&self, cli: &Option<String>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(cli, key)
            .map(|v| v.trim().parse::<T>().map_err(|e| CliError::Usage(format!("invalid value `{v}` for --{key}: {e}"))))
            .transpose()
    }

    fn req<T: FromStr>(&self, cli: &Option<String>, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(cli, key)?.ok_or_else(|| CliError::Usage(format!("missing required --{key}")))
    }

    fn path(&self, cli: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        cli.clone().or_else(|| self.cfg.get(key).map(PathBuf::from))
    }

    fn req_path(&self, cli: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        self.path(cli, key).ok_or_else(|| CliError::Usage(format!("missing required --{key}")))
    }

    fn flag(&self, cli: bool, key: &str) -> Result<bool, CliError> {
        if cli {
            return Ok(true);
        }
        Ok(self.get::<bool>(&None, key)?.unwrap_or(false))
    }

    fn list<T: FromStr>(&self, cli: &Option<String>, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(cli, key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(|t| t.trim().parse::<T>().map_err(|e| CliError::Usage(format!("invalid entry `{}` in --{key}: {e}", t.trim()))))
            .collect::<Result<Vec<T>, _>>()?;
        if items.is_empty() {
            return Err(CliError::Usage(format!("--{key} is empty")));
        }
        Ok(Some(items))
    }

    fn bandwidths(&self, cli: &Option<String>) -> Result<Option<BandwidthGrid>, CliError> {
        let Some(v) = self.raw(cli, "bandwidth-grid") else {
            return Ok(None);
        };
        let (abs, body) = match v.trim().strip_prefix("abs:") {
            Some(rest) => (true, rest.to_string()),
            None => (false, v),
        };
        let vals = Settings { cfg: BTreeMap::new() }.list::<f64>(&Some(body), "bandwidth-grid")?.unwrap_or_default();
        Ok(Some(if abs { BandwidthGrid::Absolute(vals) } else { BandwidthGrid::MedianMultiples(vals) }))
    }
}

/// Writes through a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn nuisance_config(s: &Settings, delta: &Option<String>, inst: &Option<String>) -> Result<NuisanceConfig, CliError> {
    let mut cfg = NuisanceConfig::default();
    if let Some(v) = s.get(delta, "delta-floor")? {
        cfg.delta_floor = v;
    }
    if let Some(v) = s.get(inst, "instrument-floor")? {
        cfg.instrument_floor = v;
    }
    Ok(cfg)
}

fn learn_config(
    s: &Settings,
    lambda: &Option<String>,
    bandwidth: &Option<String>,
    folds: &Option<String>,
) -> Result<LearnConfig, CliError> {
    let mut cfg = LearnConfig::default();
    if let Some(v) = s.list(lambda, "lambda-grid")? {
        cfg.lambda_grid = v;
    }
    if let Some(v) = s.bandwidths(bandwidth)? {
        cfg.bandwidth_grid = v;
    }
    if let Some(v) = s.get(folds, "folds")? {
        cfg.folds = v;
    }
    Ok(cfg)
}

fn read_data(path: &Path, recode: bool) -> Result<Dataset, CliError> {
    let table = read_csv(path, recode)?;
    for msg in validate(&table.data).messages() {
        eprintln!("warning: {}: {msg}", path.display());
    }
    Ok(table.data)
}

fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    modelfile::parse(&text, &path.display().to_string())
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let s = Settings::load("simulate", a.config.as_deref())?;
    let scenario: u8 = s.req(&a.scenario, "scenario")?;
    let n: usize = s.req(&a.n, "n")?;
    let seed: u64 = s.get(&a.seed, "seed")?.unwrap_or(0);
    let out = s.req_path(&a.out, "out")?;
    let mut spec = ScenarioSpec::new(scenario, n, seed);
    if let Some(v) = s.get(&a.iv_coef, "iv-coef")? {
        spec.iv_coef = v;
    }
    if let Some(v) = s.get(&a.phi, "phi")? {
        spec.bridge_phi = v;
    }
    let latent = generate_scenario(&spec, &mut stream(seed, streams::TRAIN)).within("synth")?;
    let text = if s.flag(a.observable_only, "observable-only")? { write_dataset(latent.observable()) } else { write_latent(&latent) };
    write_atomic(&out, &text)
}

fn fit(a: &FitArgs) -> Result<(), CliError> {
    let s = Settings::load("fit", a.config.as_deref())?;
    let scheme: WeightScheme = s.req(&a.scheme, "scheme")?;
    let data = s.req_path(&a.data, "data")?;
    let model_out = s.req_path(&a.model_out, "model-out")?;
    let kernel: KernelKind = s.get(&a.kernel, "kernel")?.unwrap_or(KernelKind::Linear);
    let mut cfg = learn_config(&s, &a.lambda_grid, &a.bandwidth_grid, &a.folds)?.with_kernel(kernel);
    cfg.seed = s.get(&a.seed, "seed")?.unwrap_or(0);
    if let Some(v) = s.get(&a.max_passes, "max-passes")? {
        cfg.max_passes = v;
    }
    cfg.solver_tol = s.get(&a.solver_tol, "solver-tol")?;
    cfg.standardize = s.flag(a.standardize, "standardize")?;
    cfg.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let ncfg = nuisance_config(&s, &a.delta_floor, &a.instrument_floor)?;
    let threads: usize = s.get(&a.threads, "threads")?.unwrap_or(0);
    let raw = read_data(&data, s.flag(a.recode, "recode")?)?;
    let (ds, flipped) = orient_instrument(&raw);
    let ns = fit_nuisances(&ds, &ncfg).within("nuisance")?;
    let learned = with_threads(threads, || learn_policy(&ds, &ns, scheme, &cfg, &Rayon)).within("policy_learn")?;
    let info = FitInfo {
        scheme,
        kernel,
        lambda: learned.cv.lambda,
        bandwidth: learned.cv.bandwidth,
        duality_gap: learned.report.duality_gap,
        tolerance: learned.report.tolerance,
        instrument_flipped: flipped,
    };
    let m = ModelFile { rule: learned.rule, fit: Some(info.clone()), nuisance: Some(ns) };
    write_atomic(&model_out, &modelfile::render(&m))?;
    println!("scheme\tkernel\tlambda\tbandwidth\tduality_gap\ttolerance");
    println!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        scheme.name(),
        kernel.name(),
        num(info.lambda),
        info.bandwidth.map_or("NA".into(), num),
        num(info.duality_gap),
        num(info.tolerance)
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Estimator {
    Plugin,
    Mr,
    Eif,
    Ipw,
    Complier,
}

impl FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let u = s.trim().to_ascii_uppercase();
        Ok(match u.as_str() {
            "IV_IW" | "IV_IW_A" | "IV_IW_Z" => Estimator::Plugin,
            "IV_MR" | "IV_MR_A" | "IV_MR_Z" => Estimator::Mr,
            "EIF" => Estimator::Eif,
            "OWL" => Estimator::Ipw,
            "COMPLIER" | "COMPLIER_A" | "COMPLIER_Z" => Estimator::Complier,
            _ => return Err(format!("unknown estimator `{s}`; expected IV_IW, IV_MR, EIF, OWL, COMPLIER or a weight-scheme name")),
        })
    }
}

/// Data and nuisances for evaluation, oriented consistently.
fn evaluation_inputs(
    s: &Settings,
    model: &ModelFile,
    raw: &Dataset,
    source: &Option<String>,
    ncfg: &NuisanceConfig,
) -> Result<(Dataset, NuisanceSet), CliError> {
    match s.raw(source, "nuisance").as_deref().unwrap_or("refit") {
        "refit" => {
            let (ds, _) = orient_instrument(raw);
            let ns = fit_nuisances(&ds, ncfg).within("nuisance")?;
            Ok((ds, ns))
        }
        "model" => {
            let ns = model.nuisance.clone().ok_or_else(|| CliError::Usage("model file has no [nuisance] section".into()))?;
            let flipped = model.fit.as_ref().is_some_and(|f| f.instrument_flipped);
            let ds = if flipped { raw.with_flipped_instrument() } else { raw.clone() };
            Ok((ds, ns))
        }
        other => Err(CliError::Usage(format!("invalid value `{other}` for --nuisance: expected refit or model"))),
    }
}

fn check_dims(model: &ModelFile, ds: &Dataset) -> Result<(), CliError> {
    if model.rule.p() != ds.p() {
        return Err(CliError::Core {
            module: "evaluation",
            source: ivregime_core::Error::DimensionMismatch { expected: model.rule.p(), found: ds.p() },
        });
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let s = Settings::load("evaluate", a.config.as_deref())?;
    let model = read_model(&s.req_path(&a.model, "model")?)?;
    let data = s.req_path(&a.data, "data")?;
    let est: Estimator = s.req(&a.scheme, "scheme")?;
    let bins: usize = s.get(&a.bins, "bins")?.unwrap_or(5);
    let omega: f64 = s.get(&a.omega, "omega")?.unwrap_or(0.5);
    let ncfg = nuisance_config(&s, &a.delta_floor, &a.instrument_floor)?;
    let raw = read_data(&data, s.flag(a.recode, "recode")?)?;
    check_dims(&model, &raw)?;
    let (ds, ns) = evaluation_inputs(&s, &model, &raw, &a.nuisance, &ncfg)?;
    let rule = &model.rule;
    let report: ValueReport = match est {
        Estimator::Plugin => value_plugin(rule, &ds, &ns),
        Estimator::Mr => fit_mr(&ds, rule, &ns, Basis::Affine).and_then(|m| value_mr(rule, &ds, &m)),
        Estimator::Eif => fit_eif(&ds, rule, &ns, Basis::Affine).and_then(|m| value_one_step(rule, &ds, &m)),
        Estimator::Ipw => value_ipw(rule, &ds, &ns),
        Estimator::Complier => complier_value(rule, &ds, &ns),
    }
    .within("evaluation")?;
    let (lower, upper) = if s.flag(a.bounds, "bounds")? {
        let binned = bin_table(&ds, bins, 64).within("evaluation")?;
        let actions = majority_actions(&binned, &ds, rule).within("evaluation")?;
        let w = vec![omega; actions.len()];
        let b = bp_bounds_for_actions(&binned.table, &actions, &w).within("evaluation")?;
        (num(b.aggregate.lower), num(b.aggregate.upper))
    } else {
        ("NA".into(), "NA".into())
    };
    let se = report.std_error.map_or("NA".into(), num);
    emit(&a.out, &format!("estimate\tstd_error\tlower\tupper\n{}\t{se}\t{lower}\t{upper}\n", num(report.estimate)))
}

fn bounds(a: &BoundsArgs) -> Result<(), CliError> {
    let s = Settings::load("bounds", a.config.as_deref())?;
    let model = read_model(&s.req_path(&a.model, "model")?)?;
    let data = s.req_path(&a.data, "data")?;
    let bins: usize = s.get(&a.bins, "bins")?.unwrap_or(5);
    let max_strata: usize = s.get(&a.max_strata, "max-strata")?.unwrap_or(64);
    let omega: f64 = s.get(&a.omega, "omega")?.unwrap_or(0.5);
    let raw = read_data(&data, s.flag(a.recode, "recode")?)?;
    check_dims(&model, &raw)?;
    let (ds, _) = orient_instrument(&raw);
    let binned = bin_table(&ds, bins, max_strata).within("evaluation")?;
    let actions = majority_actions(&binned, &ds, &model.rule).within("evaluation")?;
    let rep = bp_bounds_for_actions(&binned.table, &actions, &vec![omega; actions.len()]).within("evaluation")?;
    let mut out = String::from("stratum\tweight\taction\tL\tU\tL1\tU1\tLm1\tUm1\n");
    for (k, (st, b)) in binned.table.strata.iter().zip(&rep.strata).enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            k + 1,
            num(st.weight),
            rep.actions[k],
            num(b.lower),
            num(b.upper),
            num(b.lower_pos),
            num(b.upper_pos),
            num(b.lower_neg),
            num(b.upper_neg)
        );
    }
    out.push_str("\nbound\tomega\tlower\tupper\n");
    for (name, w, agg) in [
        ("aggregate", num(omega), rep.aggregate),
        ("aggregate", "1".into(), rep.omega_one),
        ("aggregate", "0".into(), rep.omega_zero),
        ("direct", "NA".into(), rep.direct),
    ] {
        let _ = writeln!(out, "{name}\t{w}\t{}\t{}", num(agg.lower), num(agg.upper));
    }
    if binned.dropped_cells > 0 {
        eprintln!("warning: {} covariate cells lacked an instrument arm and were dropped", binned.dropped_cells);
    }
    emit(&a.out, &out)
}

fn bench(a: &BenchArgs) -> Result<(), CliError> {
    let s = Settings::load("bench", a.config.as_deref())?;
    let mut cfg = BenchConfig::default();
    if let Some(v) = s.list(&a.scenarios, "scenarios")? {
        cfg.scenarios = v;
    }
    cfg.replications = match s.get(&a.reps, "reps")? {
        Some(r) => r,
        None if s.flag(a.full_scale, "full-scale")? => 500,
        None => cfg.replications,
    };
    if let Some(v) = s.list(&a.schemes, "schemes")? {
        cfg.schemes = v;
    }
    if let Some(v) = s.list(&a.kernels, "kernels")? {
        cfg.kernels = v;
    }
    if let Some(v) = s.get(&a.iv_coef, "iv-coef")? {
        cfg.iv_coef = v;
    }
    if let Some(v) = s.get(&a.seed, "seed")? {
        cfg.seed = v;
    }
    if let Some(v) = s.get(&a.n_train, "n-train")? {
        cfg.n_train = v;
    }
    if let Some(v) = s.get(&a.n_test, "n-test")? {
        cfg.n_test = v;
    }
    cfg.learn = learn_config(&s, &a.lambda_grid, &a.bandwidth_grid, &a.folds)?;
    cfg.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let threads: usize = s.get(&a.threads, "threads")?.unwrap_or(0);
    let result = with_threads(threads, || run_bench(&cfg, &Rayon)).within("bench")?;
    for c in result.cells.iter().filter(|c| c.failures > 0) {
        eprintln!(
            "warning: scenario {} {}:{}: {} failed replications excluded",
            c.scenario,
            c.kernel.name(),
            c.scheme.name(),
            c.failures
        );
    }
    emit(&a.out, &render_table(&result))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.verb {
        Verb::Simulate(a) => simulate(a),
        Verb::Fit(a) => fit(a),
        Verb::Evaluate(a) => evaluate(a),
        Verb::Bounds(a) => bounds(a),
        Verb::Bench(a) => bench(a),
    }
}

pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// Parses, runs and maps the outcome to an exit status.
pub fn main_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_commands() {
        let c = parse_args(["ivregime", "simulate", "--scenario", "2", "--n", "500", "--seed", "7", "--out", "d.csv"]).unwrap();
        assert!(matches!(c.verb, Verb::Simulate(ref a) if a.scenario.as_deref() == Some("2")));
        let c = parse_args([
            "ivregime", "fit", "--data", "d.csv", "--scheme", "IV_MR_A", "--kernel", "gaussian", "--model-out", "m.txt",
        ])
        .unwrap();
        assert!(matches!(c.verb, Verb::Fit(ref a) if a.kernel.as_deref() == Some("gaussian")));
        assert!(parse_args(["ivregime", "frobnicate"]).is_err());
        assert!(parse_args(["ivregime", "fit", "--nope", "1"]).is_err());
    }

    #[test]
    fn bad_scheme_lists_all_seven() {
        let c = parse_args(["ivregime", "fit", "--scheme", "NOPE"]).unwrap();
        let e = run(&c).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let msg = e.to_string();
        for s in WeightScheme::ALL {
            assert!(msg.contains(s.name()), "{msg}");
        }
    }

    #[test]
    fn missing_required_flag_is_usage_error() {
        let c = parse_args(["ivregime", "simulate", "--n", "5", "--out", "x.csv"]).unwrap();
        let e = run(&c).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("--scenario"));
    }

    #[test]
    fn estimator_names() {
        assert_eq!("iv_mr_z".parse::<Estimator>().unwrap(), Estimator::Mr);
        assert_eq!("EIF".parse::<Estimator>().unwrap(), Estimator::Eif);
        assert!("x".parse::<Estimator>().is_err());
    }
}
