//! Observations, datasets and decision rules.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::label::Label;
use crate::math::{exp, sq_dist, sqrt};

/// One observed unit: outcome, treatment, instrument and covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub a: Label,
    pub z: Label,
    pub l: Vec<f64>,
}

impl Observation {
    pub fn new(y: f64, a: Label, z: Label, l: Vec<f64>) -> Self {
        Observation { y, a, z, l }
    }
}

/// Ordered rows sharing a covariate dimension.
///
/// Optional case weights turn every empirical mean into a weighted mean;
/// with probability masses as weights the same code evaluates population
/// expectations over a finite support.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    rows: Vec<Observation>,
    p: usize,
    case_weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        let p = rows.first().map(|r| r.l.len()).ok_or(Error::EmptyDataset)?;
        Self::with_dimension(rows, p)
    }

    /// Like [`Dataset::new`] but admits zero rows.
    pub fn with_dimension(rows: Vec<Observation>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter("covariate dimension must be at least 1".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.l.len() != p {
                return Err(Error::DimensionMismatch { expected: p, found: r.l.len() });
            }
            if !r.y.is_finite() {
                return Err(Error::InvalidObservation { row: i + 1, reason: "outcome is not finite" });
            }
            if r.l.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidObservation { row: i + 1, reason: "covariate is not finite" });
            }
        }
        Ok(Dataset { rows, p, case_weights: None })
    }

    pub fn with_case_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.rows.len() {
            return Err(Error::InvalidParameter("case weights must align with rows".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidParameter("case weights must be finite, nonnegative and not all zero".into()));
        }
        self.case_weights = Some(weights);
        Ok(self)
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn case_weights(&self) -> Option<&[f64]> {
        self.case_weights.as_deref()
    }

    #[inline]
    pub fn case_weight(&self, i: usize) -> f64 {
        self.case_weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn total_weight(&self) -> f64 {
        self.case_weights.as_ref().map_or(self.rows.len() as f64, |w| w.iter().sum())
    }

    /// Weighted mean of `f(row)` over the rows.
    pub fn mean_of<F: FnMut(usize, &Observation) -> f64>(&self, mut f: F) -> f64 {
        let mut s = 0.0;
        for (i, r) in self.rows.iter().enumerate() {
            let c = self.case_weight(i);
            if c != 0.0 {
                s += c * f(i, r);
            }
        }
        s / self.total_weight()
    }

    /// Rows at the given indices, keeping case weights.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            p: self.p,
            case_weights: self.case_weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
        }
    }

    /// The same data with the instrument relabeled `Z <- -Z`.
    pub fn with_flipped_instrument(&self) -> Dataset {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.z = -r.z;
        }
        out
    }

    pub fn covariates(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(|r| r.l.as_slice())
    }
}

/// A dataset together with the unmeasured confounder and both potential outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDataset {
    data: Dataset,
    pub u: Vec<f64>,
    pub y_pos: Vec<f64>,
    pub y_neg: Vec<f64>,
}

impl LatentDataset {
    pub fn new(data: Dataset, u: Vec<f64>, y_pos: Vec<f64>, y_neg: Vec<f64>) -> Result<Self> {
        let n = data.len();
        if u.len() != n || y_pos.len() != n || y_neg.len() != n {
            return Err(Error::InvalidParameter("latent columns must align with rows".into()));
        }
        for (i, r) in data.rows().iter().enumerate() {
            let expected = match r.a {
                Label::Pos => y_pos[i],
                Label::Neg => y_neg[i],
            };
            if r.y.to_bits() != expected.to_bits() {
                return Err(Error::InvalidObservation { row: i + 1, reason: "outcome inconsistent with potential outcomes" });
            }
        }
        Ok(LatentDataset { data, u, y_pos, y_neg })
    }

    /// The observable projection `(Y, A, Z, L)`.
    pub fn observable(&self) -> &Dataset {
        &self.data
    }

    pub fn into_observable(self) -> Dataset {
        self.data
    }

    pub fn potential_outcome(&self, i: usize, a: Label) -> f64 {
        match a {
            Label::Pos => self.y_pos[i],
            Label::Neg => self.y_neg[i],
        }
    }
}

/// Per-coordinate centering and scaling applied before a kernel is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Training-sample moments; constant columns keep scale 1.
    pub fn fit(ds: &Dataset) -> Self {
        let p = ds.p();
        let n = ds.len().max(1) as f64;
        let mut means = alloc::vec![0.0; p];
        for r in ds.rows() {
            for (m, v) in means.iter_mut().zip(&r.l) {
                *m += v / n;
            }
        }
        let mut scales = alloc::vec![0.0; p];
        for r in ds.rows() {
            for j in 0..p {
                scales[j] += (r.l[j] - means[j]) * (r.l[j] - means[j]) / n;
            }
        }
        for s in &mut scales {
            *s = if *s > 0.0 { sqrt(*s) } else { 1.0 };
        }
        Standardizer { means, scales }
    }

    pub fn apply(&self, l: &[f64]) -> Vec<f64> {
        l.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Gaussian-kernel expansion `g(x) = b + sum_j c_j K(s_j, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelRule {
    pub support: Vec<Vec<f64>>,
    pub dual_coefficients: Vec<f64>,
    pub intercept: f64,
    pub bandwidth: f64,
    /// Applied to the query point; the support is stored already transformed.
    pub scaling: Option<Standardizer>,
}

/// A regime `D(L) = sign(g(L))`.
#[derive(Clone, Debug, PartialEq)]
pub enum DecisionRule {
    Affine { intercept: f64, coefficients: Vec<f64> },
    Kernel(KernelRule),
}

impl DecisionRule {
    pub fn affine(intercept: f64, coefficients: Vec<f64>) -> Self {
        DecisionRule::Affine { intercept, coefficients }
    }

    /// Constant rule: `g = c`. Needs the covariate dimension.
    pub fn constant(value: f64, p: usize) -> Self {
        DecisionRule::Affine { intercept: value, coefficients: alloc::vec![0.0; p] }
    }

    pub fn kernel(rule: KernelRule) -> Result<Self> {
        if !(rule.bandwidth > 0.0) || !rule.bandwidth.is_finite() {
            return Err(Error::InvalidParameter("kernel bandwidth must be positive".into()));
        }
        let p = rule.support.first().map(Vec::len).ok_or_else(|| Error::InvalidParameter("kernel support is empty".into()))?;
        if rule.support.iter().any(|s| s.len() != p) {
            return Err(Error::InvalidParameter("kernel support vectors differ in dimension".into()));
        }
        if rule.dual_coefficients.len() != rule.support.len() {
            return Err(Error::InvalidParameter("one dual coefficient per support vector".into()));
        }
        Ok(DecisionRule::Kernel(rule))
    }

    /// Covariate dimension the rule expects.
    pub fn p(&self) -> usize {
        match self {
            DecisionRule::Affine { coefficients, .. } => coefficients.len(),
            DecisionRule::Kernel(k) => k.support[0].len(),
        }
    }

    /// The decision function `g(l)`.
    pub fn decision_value(&self, l: &[f64]) -> Result<f64> {
        if l.len() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), found: l.len() });
        }
        Ok(self.decision_value_unchecked(l))
    }

    pub(crate) fn decision_value_unchecked(&self, l: &[f64]) -> f64 {
        match self {
            DecisionRule::Affine { intercept, coefficients } => intercept + crate::math::dot(coefficients, l),
            DecisionRule::Kernel(k) => {
                let scaled;
                let x = match &k.scaling {
                    Some(s) => {
                        scaled = s.apply(l);
                        scaled.as_slice()
                    }
                    None => l,
                };
                let denom = 2.0 * k.bandwidth * k.bandwidth;
                k.intercept
                    + k.support
                        .iter()
                        .zip(&k.dual_coefficients)
                        .map(|(s, c)| c * exp(-sq_dist(s, x) / denom))
                        .sum::<f64>()
            }
        }
    }

    /// `sign(g(l))` with `sign(0) = +1`.
    pub fn decide(&self, l: &[f64]) -> Result<Label> {
        self.decision_value(l).map(Label::sign_of)
    }

    /// The rule `-g`.
    pub fn negated(&self) -> DecisionRule {
        match self {
            DecisionRule::Affine { intercept, coefficients } => DecisionRule::Affine {
                intercept: -intercept,
                coefficients: coefficients.iter().map(|c| -c).collect(),
            },
            DecisionRule::Kernel(k) => DecisionRule::Kernel(KernelRule {
                support: k.support.clone(),
                dual_coefficients: k.dual_coefficients.iter().map(|c| -c).collect(),
                intercept: -k.intercept,
                bandwidth: k.bandwidth,
                scaling: k.scaling.clone(),
            }),
        }
    }

    /// Decisions for every row of a dataset.
    pub fn decide_all(&self, ds: &Dataset) -> Result<Vec<Label>> {
        if ds.p() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), found: ds.p() });
        }
        Ok(ds.rows().iter().map(|r| Label::sign_of(self.decision_value_unchecked(&r.l))).collect())
    }
}

/// Free-function form of [`DecisionRule::decide`].
pub fn decide(rule: &DecisionRule, l: &[f64]) -> Result<Label> {
    rule.decide(l)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Flag {
    SingleInstrumentLevel,
    SingleTreatmentLevel,
    /// An (a, z) cell without rows.
    EmptyCell { a: Label, z: Label },
    DegenerateCovariate { column: usize },
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flag::SingleInstrumentLevel => f.write_str("instrument has a single level"),
            Flag::SingleTreatmentLevel => f.write_str("treatment has a single level"),
            Flag::EmptyCell { a, z } => write!(f, "empty cell a={a}, z={z}"),
            Flag::DegenerateCovariate { column } => write!(f, "degenerate covariate l{}", column + 1),
        }
    }
}

/// Cell counts and screening flags from [`validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    /// `counts[a.index()][z.index()]`.
    pub counts: [[usize; 2]; 2],
    pub flags: Vec<Flag>,
}

impl Diagnostics {
    pub fn count(&self, a: Label, z: Label) -> usize {
        self.counts[a.index()][z.index()]
    }

    pub fn messages(&self) -> Vec<String> {
        self.flags.iter().map(|f| alloc::format!("{f}")).collect()
    }
}

/// Empirical screen for instrument positivity and degenerate inputs.
pub fn validate(ds: &Dataset) -> Diagnostics {
    let mut counts = [[0usize; 2]; 2];
    for r in ds.rows() {
        counts[r.a.index()][r.z.index()] += 1;
    }
    let mut flags = Vec::new();
    let z_pos = counts[0][1] + counts[1][1];
    let z_neg = counts[0][0] + counts[1][0];
    if ds.is_empty() || z_pos == 0 || z_neg == 0 {
        flags.push(Flag::SingleInstrumentLevel);
    }
    let a_pos = counts[1][0] + counts[1][1];
    let a_neg = counts[0][0] + counts[0][1];
    if ds.is_empty() || a_pos == 0 || a_neg == 0 {
        flags.push(Flag::SingleTreatmentLevel);
    }
    for a in Label::ALL {
        for z in Label::ALL {
            if counts[a.index()][z.index()] == 0 {
                flags.push(Flag::EmptyCell { a, z });
            }
        }
    }
    if let Some(first) = ds.rows().first() {
        for j in 0..ds.p() {
            if ds.rows().iter().all(|r| r.l[j] == first.l[j]) {
                flags.push(Flag::DegenerateCovariate { column: j });
            }
        }
    }
    Diagnostics { counts, flags }
}
