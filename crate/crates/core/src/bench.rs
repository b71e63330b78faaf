//! Replicated simulation runs over scenarios, weight schemes and kernels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::evaluation::classification_agreement;
use crate::exec::{Executor, Serial};
use crate::learn::{learn_policy, KernelKind, LearnConfig};
use crate::math::mean_sd;
use crate::nuisance::{fit_nuisances, orient_instrument, NuisanceConfig};
use crate::rng::{replication_seed, stream, streams};
use crate::synth::{generate_scenario, realized_value, true_rule, ScenarioSpec};
use crate::weights::WeightScheme;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub scenarios: Vec<u8>,
    pub replications: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub schemes: Vec<WeightScheme>,
    pub kernels: Vec<KernelKind>,
    pub iv_coef: f64,
    pub seed: u64,
    /// Largest tolerated share of failed replications per cell.
    pub max_failure_rate: f64,
    pub learn: LearnConfig,
    pub nuisance: NuisanceConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scenarios: alloc::vec![1, 2, 3, 4],
            replications: 100,
            n_train: 500,
            n_test: 10_000,
            schemes: alloc::vec![WeightScheme::IV_IW_A, WeightScheme::IV_MR_A, WeightScheme::OWL],
            kernels: alloc::vec![KernelKind::Linear],
            iv_coef: 2.5,
            seed: 2024,
            max_failure_rate: 0.05,
            learn: LearnConfig::default(),
            nuisance: NuisanceConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn check(&self) -> Result<()> {
        if self.replications == 0 || self.n_test == 0 {
            return Err(Error::InvalidParameter("replications and n_test must be at least 1".into()));
        }
        if self.scenarios.iter().any(|s| !(1..=4).contains(s)) {
            return Err(Error::InvalidParameter("scenarios must lie in 1..=4".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::InvalidParameter("max_failure_rate must lie in [0,1]".into()));
        }
        self.learn.check()
    }
}

/// Summary for one `(scenario, kernel, scheme)` combination.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchCell {
    pub scenario: u8,
    pub kernel: KernelKind,
    pub scheme: WeightScheme,
    /// Per successful replication, in replication order.
    pub values: Vec<f64>,
    pub agreements: Vec<f64>,
    pub failures: usize,
    pub value_mean: f64,
    pub value_sd: f64,
    pub agreement_mean: f64,
    pub agreement_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct BenchResult {
    /// Ordered by scenario, then kernel, then scheme as configured.
    pub cells: Vec<BenchCell>,
}

impl BenchResult {
    pub fn cell(&self, scenario: u8, kernel: KernelKind, scheme: WeightScheme) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.scenario == scenario && c.kernel == kernel && c.scheme == scheme)
    }
}

type Outcome = Result<(f64, f64)>;

/// One replication of one scenario: value on the test draw and agreement
/// with the optimal regime for every kernel and scheme.
fn replicate(cfg: &BenchConfig, scenario: u8, rep: usize) -> Vec<Outcome> {
    let combos = cfg.kernels.len() * cfg.schemes.len();
    let seed = replication_seed(cfg.seed, rep as u64);
    let prepared = (|| -> Result<_> {
        let train_spec = ScenarioSpec::new(scenario, cfg.n_train, seed).with_iv_coef(cfg.iv_coef);
        let test_spec = ScenarioSpec::new(scenario, cfg.n_test, seed).with_iv_coef(cfg.iv_coef);
        let train = generate_scenario(&train_spec, &mut stream(seed, streams::TRAIN))?;
        let test = generate_scenario(&test_spec, &mut stream(seed, streams::TEST))?;
        let (ds, _) = orient_instrument(train.observable());
        let ns = fit_nuisances(&ds, &cfg.nuisance)?;
        Ok((ds, ns, test))
    })();
    let (ds, ns, test) = match prepared {
        Ok(v) => v,
        Err(e) => return (0..combos).map(|_| Err(e.clone())).collect(),
    };
    let reference = true_rule();
    let mut out = Vec::with_capacity(combos);
    for &kernel in &cfg.kernels {
        let mut learn = cfg.learn.clone().with_kernel(kernel);
        learn.seed = seed;
        for &scheme in &cfg.schemes {
            out.push(learn_policy(&ds, &ns, scheme, &learn, &Serial).and_then(|p| {
                let value = realized_value(&p.rule, &test)?;
                let agree = classification_agreement(&p.rule, &reference, test.observable().covariates())?;
                Ok((value, agree))
            }));
        }
    }
    out
}

/// Runs every replication of every scenario; replications fan out over `exec`.
///
/// Failed replications are excluded from a cell and counted; a cell whose
/// failure share exceeds `max_failure_rate` fails the run.
pub fn run_bench<E: Executor>(cfg: &BenchConfig, exec: &E) -> Result<BenchResult> {
    cfg.check()?;
    let reps = cfg.replications;
    let tasks = cfg.scenarios.len() * reps;
    let runs = exec.map(tasks, |t| replicate(cfg, cfg.scenarios[t / reps], t % reps));
    let mut cells = Vec::new();
    for (si, &scenario) in cfg.scenarios.iter().enumerate() {
        for (ki, &kernel) in cfg.kernels.iter().enumerate() {
            for (ci, &scheme) in cfg.schemes.iter().enumerate() {
                let combo = ki * cfg.schemes.len() + ci;
                let mut values = Vec::new();
                let mut agreements = Vec::new();
                let mut failures = 0;
                for rep in 0..reps {
                    match &runs[si * reps + rep][combo] {
                        Ok((v, a)) => {
                            values.push(*v);
                            agreements.push(*a);
                        }
                        Err(_) => failures += 1,
                    }
                }
                if failures as f64 > cfg.max_failure_rate * reps as f64 {
                    return Err(Error::TooManyFailures { failed: failures, total: reps });
                }
                let (value_mean, value_sd) = mean_sd(&values);
                let (agreement_mean, agreement_sd) = mean_sd(&agreements);
                cells.push(BenchCell {
                    scenario,
                    kernel,
                    scheme,
                    values,
                    agreements,
                    failures,
                    value_mean,
                    value_sd,
                    agreement_mean,
                    agreement_sd,
                });
            }
        }
    }
    Ok(BenchResult { cells })
}

/// `mean (sd)` scaled by 100 with one decimal.
pub fn format_cell(mean: f64, sd: f64) -> String {
    format!("{:.1} ({:.1})", 100.0 * mean, 100.0 * sd)
}

/// TSV with one column per `kernel:scheme` and a `value` and `agreement`
/// row per scenario.
pub fn render_table(result: &BenchResult) -> String {
    let mut columns: Vec<(KernelKind, WeightScheme)> = Vec::new();
    let mut scenarios: Vec<u8> = Vec::new();
    for c in &result.cells {
        if !columns.contains(&(c.kernel, c.scheme)) {
            columns.push((c.kernel, c.scheme));
        }
        if !scenarios.contains(&c.scenario) {
            scenarios.push(c.scenario);
        }
    }
    let mut out = String::from("metric\tscenario");
    for (k, s) in &columns {
        let _ = write!(out, "\t{}:{}", k.name(), s.name());
    }
    out.push('\n');
    for &sc in &scenarios {
        for metric in ["value", "agreement"] {
            let _ = write!(out, "{metric}\t{sc}");
            for &(k, s) in &columns {
                out.push('\t');
                match result.cell(sc, k, s) {
                    Some(c) if metric == "value" => out.push_str(&format_cell(c.value_mean, c.value_sd)),
                    Some(c) => out.push_str(&format_cell(c.agreement_mean, c.agreement_sd)),
                    None => out.push_str("NA"),
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_format() {
        assert_eq!(format_cell(0.915, 0.076), "91.5 (7.6)");
        assert_eq!(format_cell(3.491, 0.121), "349.1 (12.1)");
    }

    #[test]
    fn empty_result_is_header_only() {
        assert_eq!(render_table(&BenchResult::default()), "metric\tscenario\n");
    }

    fn tiny() -> BenchConfig {
        BenchConfig {
            scenarios: alloc::vec![1],
            replications: 1,
            n_train: 120,
            n_test: 200,
            schemes: alloc::vec![WeightScheme::IV_IW_A],
            learn: LearnConfig { lambda_grid: alloc::vec![0.01, 0.1], folds: 2, ..LearnConfig::default() },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = run_bench(&tiny(), &Serial).unwrap();
        let b = run_bench(&tiny(), &Serial).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 1);
        let t = render_table(&a);
        assert_eq!(t.lines().count(), 3);
        assert!(t.starts_with("metric\tscenario\tlinear:IV_IW_A\n"));
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = tiny();
        c.replications = 0;
        assert!(run_bench(&c, &Serial).is_err());
        let mut c = tiny();
        c.scenarios = alloc::vec![5];
        assert!(run_bench(&c, &Serial).is_err());
    }
}
