//! Plain-text model files: `[section]` headers followed by `key = value` lines.
//!
//! Numeric vectors are space-separated. `#` starts a comment line.

use std::collections::BTreeMap;
use std::str::FromStr;

use ivregime_core::data::Standardizer;
use ivregime_core::learn::KernelKind;
use ivregime_core::nuisance::{DesignKind, LinearFit, LogisticFit, NuisanceSet, OutcomeFit};
use ivregime_core::{DecisionRule, KernelRule, WeightScheme};

use crate::error::CliError;
use crate::fmt::num;

#[derive(Clone, Debug, PartialEq)]
pub struct FitInfo {
    pub scheme: WeightScheme,
    pub kernel: KernelKind,
    pub lambda: f64,
    pub bandwidth: Option<f64>,
    pub duality_gap: f64,
    pub tolerance: f64,
    /// The training instrument was relabeled so that it raises uptake.
    pub instrument_flipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub rule: DecisionRule,
    pub fit: Option<FitInfo>,
    /// Training-sample nuisance fits, for evaluation without a refit.
    pub nuisance: Option<NuisanceSet>,
}

fn vector(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" ")
}

struct Writer(String);

impl Writer {
    fn section(&mut self, name: &str) {
        if !self.0.is_empty() {
            self.0.push('\n');
        }
        self.0.push_str(&format!("[{name}]\n"));
    }
    fn kv(&mut self, key: &str, value: impl AsRef<str>) {
        self.0.push_str(&format!("{key} = {}\n", value.as_ref()));
    }
}

fn write_logistic(w: &mut Writer, name: &str, f: &LogisticFit) {
    w.section(name);
    w.kv("model", "logistic");
    w.kv("design", f.design.join(" "));
    w.kv("coefficients", vector(&f.coefficients));
    w.kv("converged", f.converged.to_string());
    w.kv("iterations", f.iterations.to_string());
}

pub fn render(m: &ModelFile) -> String {
    let mut w = Writer(String::new());
    w.section("rule");
    match &m.rule {
        DecisionRule::Affine { intercept, coefficients } => {
            w.kv("kind", "affine");
            w.kv("p", coefficients.len().to_string());
            w.kv("intercept", num(*intercept));
            w.kv("coefficients", vector(coefficients));
        }
        DecisionRule::Kernel(k) => {
            w.kv("kind", "kernel");
            w.kv("p", k.support[0].len().to_string());
            w.kv("intercept", num(k.intercept));
            w.kv("bandwidth", num(k.bandwidth));
            if let Some(s) = &k.scaling {
                w.kv("scaling_means", vector(&s.means));
                w.kv("scaling_scales", vector(&s.scales));
            }
            w.kv("dual_coefficients", vector(&k.dual_coefficients));
            w.kv("support_count", k.support.len().to_string());
            for (i, s) in k.support.iter().enumerate() {
                w.kv(&format!("support.{}", i + 1), vector(s));
            }
        }
    }
    if let Some(f) = &m.fit {
        w.section("fit");
        w.kv("scheme", f.scheme.name());
        w.kv("kernel", f.kernel.name());
        w.kv("lambda", num(f.lambda));
        if let Some(b) = f.bandwidth {
            w.kv("bandwidth", num(b));
        }
        w.kv("duality_gap", num(f.duality_gap));
        w.kv("tolerance", num(f.tolerance));
        w.kv("instrument_flipped", f.instrument_flipped.to_string());
    }
    if let Some(ns) = &m.nuisance {
        w.section("nuisance");
        w.kv("delta_floor", num(ns.delta_floor));
        w.kv("instrument_floor", num(ns.instrument_floor));
        w.kv("outcome_design", ns.outcome_design.tag());
        write_logistic(&mut w, "treatment", &ns.fit_a_given_lz);
        write_logistic(&mut w, "instrument", &ns.fit_z_given_l);
        match &ns.fit_y_given_lz {
            OutcomeFit::Logistic(f) => write_logistic(&mut w, "outcome", f),
            OutcomeFit::Linear(f) => {
                w.section("outcome");
                w.kv("model", "linear");
                w.kv("design", f.design.join(" "));
                w.kv("coefficients", vector(&f.coefficients));
            }
        }
    }
    w.0
}

/// One parsed section; keys are consumed as they are read so leftovers can be reported.
struct Section<'a> {
    name: String,
    source: &'a str,
    entries: BTreeMap<String, String>,
}

impl Section<'_> {
    fn err(&self, reason: String) -> CliError {
        CliError::Format { path: self.source.to_string(), reason: format!("[{}] {reason}", self.name) }
    }

    fn take(&mut self, key: &str) -> Result<String, CliError> {
        self.entries.remove(key).ok_or_else(|| self.err(format!("missing key `{key}`")))
    }

    fn take_opt(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn parse<T: FromStr>(&self, key: &str, v: &str) -> Result<T, CliError> {
        v.trim().parse().map_err(|_| self.err(format!("invalid value for `{key}`: `{v}`")))
    }

    fn real(&mut self, key: &str) -> Result<f64, CliError> {
        let v = self.take(key)?;
        self.parse(key, &v)
    }

    fn list(&mut self, key: &str) -> Result<Vec<f64>, CliError> {
        let v = self.take(key)?;
        v.split_whitespace().map(|t| self.parse(key, t)).collect()
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.keys().next() {
            Some(k) => Err(self.err(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn sections<'a>(text: &str, source: &'a str) -> Result<Vec<Section<'a>>, CliError> {
    let fail = |line: usize, reason: String| CliError::Format { path: source.to_string(), reason: format!("line {line}: {reason}") };
    let mut out: Vec<Section<'a>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            if out.iter().any(|s| s.name == name) {
                return Err(fail(i + 1, format!("duplicate section [{name}]")));
            }
            out.push(Section { name: name.trim().to_string(), source, entries: BTreeMap::new() });
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| fail(i + 1, "expected `key = value`".into()))?;
        let sec = out.last_mut().ok_or_else(|| fail(i + 1, "key outside any section".into()))?;
        if sec.entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(fail(i + 1, format!("duplicate key `{}`", k.trim())));
        }
    }
    Ok(out)
}

fn read_rule(s: &mut Section<'_>) -> Result<DecisionRule, CliError> {
    let kind = s.take("kind")?;
    let p: usize = {
        let v = s.take("p")?;
        s.parse("p", &v)?
    };
    let intercept = s.real("intercept")?;
    let rule = match kind.as_str() {
        "affine" => {
            let coefficients = s.list("coefficients")?;
            if coefficients.len() != p {
                return Err(s.err(format!("expected {p} coefficients, found {}", coefficients.len())));
            }
            DecisionRule::affine(intercept, coefficients)
        }
        "kernel" => {
            let bandwidth = s.real("bandwidth")?;
            let scaling = match s.take_opt("scaling_means") {
                Some(m) => {
                    let means = m.split_whitespace().map(|t| s.parse("scaling_means", t)).collect::<Result<Vec<f64>, _>>()?;
                    let scales = s.list("scaling_scales")?;
                    Some(Standardizer { means, scales })
                }
                None => None,
            };
            let dual_coefficients = s.list("dual_coefficients")?;
            let count: usize = {
                let v = s.take("support_count")?;
                s.parse("support_count", &v)?
            };
            let mut support = Vec::with_capacity(count);
            for i in 1..=count {
                let v = s.list(&format!("support.{i}"))?;
                if v.len() != p {
                    return Err(s.err(format!("support.{i} has {} values, expected {p}", v.len())));
                }
                support.push(v);
            }
            let kr = KernelRule { support, dual_coefficients, intercept, bandwidth, scaling };
            DecisionRule::kernel(kr).map_err(|e| s.err(e.to_string()))?
        }
        other => return Err(s.err(format!("unknown rule kind `{other}`"))),
    };
    Ok(rule)
}

fn flag(s: &Section<'_>, key: &str, v: &str) -> Result<bool, CliError> {
    s.parse(key, v)
}

fn read_logistic(s: &mut Section<'_>) -> Result<LogisticFit, CliError> {
    let design: Vec<String> = s.take("design")?.split_whitespace().map(str::to_string).collect();
    let coefficients = s.list("coefficients")?;
    if coefficients.len() != design.len() {
        return Err(s.err("one coefficient per design column".into()));
    }
    let c = s.take("converged")?;
    let converged = flag(s, "converged", &c)?;
    let it = s.take("iterations")?;
    let iterations = s.parse("iterations", &it)?;
    Ok(LogisticFit { coefficients, converged, separated: false, iterations, design })
}

pub fn parse(text: &str, source: &str) -> Result<ModelFile, CliError> {
    let mut secs = sections(text, source)?;
    let mut find = |name: &str| secs.iter().position(|s| s.name == name).map(|i| secs.remove(i));
    let mut rs = find("rule").ok_or_else(|| CliError::Format { path: source.into(), reason: "missing [rule] section".into() })?;
    let rule = read_rule(&mut rs)?;
    rs.finish()?;
    let fit = match find("fit") {
        Some(mut s) => {
            let sc = s.take("scheme")?;
            let scheme: WeightScheme = sc.parse().map_err(|e: ivregime_core::Error| s.err(e.to_string()))?;
            let k = s.take("kernel")?;
            let kernel: KernelKind = k.parse().map_err(|e: ivregime_core::Error| s.err(e.to_string()))?;
            let lambda = s.real("lambda")?;
            let bandwidth = match s.take_opt("bandwidth") {
                Some(v) => Some(s.parse("bandwidth", &v)?),
                None => None,
            };
            let duality_gap = s.real("duality_gap")?;
            let tolerance = s.real("tolerance")?;
            let f = s.take("instrument_flipped")?;
            let instrument_flipped = flag(&s, "instrument_flipped", &f)?;
            s.finish()?;
            Some(FitInfo { scheme, kernel, lambda, bandwidth, duality_gap, tolerance, instrument_flipped })
        }
        None => None,
    };
    let nuisance = match find("nuisance") {
        Some(mut s) => {
            let delta_floor = s.real("delta_floor")?;
            let instrument_floor = s.real("instrument_floor")?;
            let od = s.take("outcome_design")?;
            let outcome_design = DesignKind::from_tag(&od).ok_or_else(|| s.err(format!("unknown design `{od}`")))?;
            s.finish()?;
            let missing = |n: &str| CliError::Format { path: source.into(), reason: format!("missing [{n}] section") };
            let mut t = find("treatment").ok_or_else(|| missing("treatment"))?;
            let fa = read_logistic(&mut t)?;
            t.take("model")?;
            t.finish()?;
            let mut i = find("instrument").ok_or_else(|| missing("instrument"))?;
            let fz = read_logistic(&mut i)?;
            i.take("model")?;
            i.finish()?;
            let mut o = find("outcome").ok_or_else(|| missing("outcome"))?;
            let fy = match o.take("model")?.as_str() {
                "logistic" => OutcomeFit::Logistic(read_logistic(&mut o)?),
                "linear" => {
                    let design: Vec<String> = o.take("design")?.split_whitespace().map(str::to_string).collect();
                    let coefficients = o.list("coefficients")?;
                    OutcomeFit::Linear(LinearFit { coefficients, design })
                }
                other => return Err(o.err(format!("unknown outcome model `{other}`"))),
            };
            o.finish()?;
            Some(NuisanceSet {
                fit_a_given_lz: fa,
                fit_z_given_l: fz,
                fit_y_given_lz: fy,
                outcome_design,
                delta_floor,
                instrument_floor,
            })
        }
        None => None,
    };
    if let Some(s) = secs.first() {
        return Err(s.err("unknown section".into()));
    }
    Ok(ModelFile { rule, fit, nuisance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_round_trip() {
        let m = ModelFile { rule: DecisionRule::affine(0.1, vec![1.0 / 3.0, -2.0]), fit: None, nuisance: None };
        let text = render(&m);
        assert!(text.starts_with("[rule]\nkind = affine\np = 2\n"));
        assert_eq!(parse(&text, "m").unwrap(), m);
    }

    #[test]
    fn kernel_round_trip() {
        let k = KernelRule {
            support: vec![vec![0.5, 1.0], vec![-0.25, 0.125]],
            dual_coefficients: vec![0.3, -0.7],
            intercept: -0.01,
            bandwidth: 0.9,
            scaling: Some(Standardizer { means: vec![0.0, 1.0], scales: vec![2.0, 0.5] }),
        };
        let fit = FitInfo {
            scheme: WeightScheme::IV_MR_A,
            kernel: KernelKind::Gaussian,
            lambda: 0.125,
            bandwidth: Some(0.9),
            duality_gap: 1e-9,
            tolerance: 1e-6,
            instrument_flipped: false,
        };
        let m = ModelFile { rule: DecisionRule::kernel(k).unwrap(), fit: Some(fit), nuisance: None };
        assert_eq!(parse(&render(&m), "m").unwrap(), m);
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        let base = "[rule]\nkind = affine\np = 1\nintercept = 0\ncoefficients = 1\n";
        assert!(parse(base, "m").is_ok());
        assert!(parse(&format!("{base}colour = red\n"), "m").unwrap_err().to_string().contains("unknown key `colour`"));
        assert!(parse(&format!("{base}[extra]\nx = 1\n"), "m").is_err());
        assert!(parse("[rule]\nkind = affine\np = 2\nintercept = 0\ncoefficients = 1\n", "m").is_err());
    }
}
