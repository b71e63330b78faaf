//! Simulation scenarios with a bridge-distributed unmeasured confounder.

use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, DecisionRule, LatentDataset, Observation};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::math::{exp, expit, log, sin, PI};

/// Covariate dimension of every scenario.
pub const SCENARIO_DIM: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: u8,
    pub n: usize,
    pub seed: u64,
    pub iv_coef: f64,
    pub bridge_phi: f64,
}

impl ScenarioSpec {
    pub fn new(scenario: u8, n: usize, seed: u64) -> Self {
        ScenarioSpec { scenario, n, seed, iv_coef: 2.5, bridge_phi: 0.5 }
    }

    pub fn with_iv_coef(mut self, iv_coef: f64) -> Self {
        self.iv_coef = iv_coef;
        self
    }

    pub fn check(&self) -> Result<()> {
        if !(1..=4).contains(&self.scenario) {
            return Err(Error::InvalidParameter(alloc::format!("scenario must be 1..=4, got {}", self.scenario)));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("scenario sample size must be at least 1".into()));
        }
        check_phi(self.bridge_phi)?;
        if !self.iv_coef.is_finite() {
            return Err(Error::InvalidParameter("iv_coef must be finite".into()));
        }
        Ok(())
    }
}

fn check_phi(phi: f64) -> Result<()> {
    if phi > 0.0 && phi < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(alloc::format!("bridge parameter must lie in (0,1), got {phi}")))
    }
}

/// Inverse CDF of the bridge law evaluated at `v` in (0,1).
pub fn bridge_quantile(phi: f64, v: f64) -> f64 {
    log(sin(phi * PI * v) / sin(phi * PI * (1.0 - v))) / phi
}

pub fn sample_bridge<R: Rng + ?Sized>(phi: f64, rng: &mut R) -> Result<f64> {
    check_phi(phi)?;
    Ok(draw_bridge(phi, rng))
}

fn draw_bridge<R: Rng + ?Sized>(phi: f64, rng: &mut R) -> f64 {
    // Open interval: a zero draw would map to -inf.
    let v = loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            break v;
        }
    };
    bridge_quantile(phi, v)
}

pub fn baseline(l: &[f64]) -> f64 {
    0.5 + 0.5 * l[0] + 0.8 * l[1] + 0.3 * l[2] - 0.5 * l[3] + 0.7 * l[4]
}

/// Treatment-interaction term; its sign is the optimal action.
pub fn contrast(l: &[f64]) -> f64 {
    0.2 - 0.6 * l[0] - 0.8 * l[1]
}

/// Structural potential outcome `Y_a` given covariates, confounder and noise.
pub fn potential_outcome(scenario: u8, l: &[f64], a: Label, u: f64, eps: f64) -> f64 {
    let lin = baseline(l) + contrast(l) * a.value();
    match scenario {
        1 => lin + eps,
        2 => lin + 0.5 * u + eps,
        3 => exp(lin) + eps,
        _ => exp(lin) + u + eps,
    }
}

/// One unit drawn from a scenario, with both potential outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub l: [f64; SCENARIO_DIM],
    pub z: Label,
    pub u: f64,
    pub a: Label,
    pub y_pos: f64,
    pub y_neg: f64,
}

impl Unit {
    pub fn y(&self) -> f64 {
        match self.a {
            Label::Pos => self.y_pos,
            Label::Neg => self.y_neg,
        }
    }
}

fn draw_unit<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Unit {
    let mut l = [0.0; SCENARIO_DIM];
    for v in &mut l {
        *v = rng.random_range(-1.0..1.0);
    }
    let z = if rng.random_bool(0.5) { Label::Pos } else { Label::Neg };
    let u = draw_bridge(spec.bridge_phi, rng);
    let pa = expit(2.0 * l[0] + spec.iv_coef * z.value() - 0.5 * u);
    let a = if rng.random::<f64>() < pa { Label::Pos } else { Label::Neg };
    // Both potential outcomes share one noise draw.
    let eps: f64 = StandardNormal.sample(rng);
    Unit {
        l,
        z,
        u,
        a,
        y_pos: potential_outcome(spec.scenario, &l, Label::Pos, u, eps),
        y_neg: potential_outcome(spec.scenario, &l, Label::Neg, u, eps),
    }
}

pub fn generate_scenario<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<LatentDataset> {
    spec.check()?;
    let mut rows = Vec::with_capacity(spec.n);
    let mut u = Vec::with_capacity(spec.n);
    let mut y_pos = Vec::with_capacity(spec.n);
    let mut y_neg = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let d = draw_unit(spec, rng);
        rows.push(Observation::new(d.y(), d.a, d.z, d.l.to_vec()));
        u.push(d.u);
        y_pos.push(d.y_pos);
        y_neg.push(d.y_neg);
    }
    LatentDataset::new(Dataset::new(rows)?, u, y_pos, y_neg)
}

/// Monte Carlo value `E[Y_{D(L)}]` from `m` fresh units, streamed without storage.
pub fn oracle_value<R: Rng + ?Sized>(rule: &DecisionRule, spec: &ScenarioSpec, m: usize, rng: &mut R) -> Result<f64> {
    Ok(oracle_value_with_error(rule, spec, m, rng)?.0)
}

/// As [`oracle_value`], also returning the Monte Carlo standard error.
pub fn oracle_value_with_error<R: Rng + ?Sized>(
    rule: &DecisionRule,
    spec: &ScenarioSpec,
    m: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let mut probe = spec.clone();
    probe.n = m;
    probe.check()?;
    if rule.p() != SCENARIO_DIM {
        return Err(Error::DimensionMismatch { expected: SCENARIO_DIM, found: rule.p() });
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..m {
        let d = draw_unit(spec, rng);
        let y = match rule.decide(&d.l)? {
            Label::Pos => d.y_pos,
            Label::Neg => d.y_neg,
        };
        let delta = y - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (y - mean);
    }
    let se = if m > 1 { crate::math::sqrt(m2 / (m - 1) as f64 / m as f64) } else { 0.0 };
    Ok((mean, se))
}

/// Value of a rule on stored potential outcomes.
pub fn realized_value(rule: &DecisionRule, latent: &LatentDataset) -> Result<f64> {
    let ds = latent.observable();
    let d = rule.decide_all(ds)?;
    let total: f64 = d.iter().enumerate().map(|(i, a)| latent.potential_outcome(i, *a)).sum();
    Ok(total / ds.len() as f64)
}

/// `sign(q(L))`, the optimal regime of every scenario.
pub fn true_rule() -> DecisionRule {
    DecisionRule::affine(0.2, alloc::vec![-0.6, -0.8, 0.0, 0.0, 0.0])
}
