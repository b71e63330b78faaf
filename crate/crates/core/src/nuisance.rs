//! Nuisance models: logistic and linear fits, the compliance contrast
//! `delta(L)`, the Wald-type CATE and the doubly robust g-estimators.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, DecisionRule};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::linalg::{self, LstsqError, Matrix};
use crate::math::{dot, expit, log};

/// Linear predictors are clipped here so fitted probabilities stay inside (0,1).
const ETA_CLIP: f64 = 35.0;
/// Beyond this linear predictor a fit is treated as diverging.
const SEPARATION_ETA: f64 = 30.0;

/// Which covariate layout a fit uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignKind {
    /// `(1, L)`
    Affine,
    /// `(1, L, Z)`
    WithInstrument,
    /// `(1, L, Z, Z*L)`
    Interacted,
}

impl DesignKind {
    pub fn width(self, p: usize) -> usize {
        match self {
            DesignKind::Affine => 1 + p,
            DesignKind::WithInstrument => 2 + p,
            DesignKind::Interacted => 2 + 2 * p,
        }
    }

    pub fn row(self, l: &[f64], z: Label, out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        out.extend_from_slice(l);
        match self {
            DesignKind::Affine => {}
            DesignKind::WithInstrument => out.push(z.value()),
            DesignKind::Interacted => {
                out.push(z.value());
                out.extend(l.iter().map(|v| z.value() * v));
            }
        }
    }

    pub fn names(self, p: usize) -> Vec<String> {
        let mut names = vec![String::from("intercept")];
        names.extend((1..=p).map(|j| format!("l{j}")));
        match self {
            DesignKind::Affine => {}
            DesignKind::WithInstrument => names.push("z".into()),
            DesignKind::Interacted => {
                names.push("z".into());
                names.extend((1..=p).map(|j| format!("z*l{j}")));
            }
        }
        names
    }

    pub fn tag(self) -> &'static str {
        match self {
            DesignKind::Affine => "affine",
            DesignKind::WithInstrument => "with_instrument",
            DesignKind::Interacted => "interacted",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "affine" => Some(DesignKind::Affine),
            "with_instrument" => Some(DesignKind::WithInstrument),
            "interacted" => Some(DesignKind::Interacted),
            _ => None,
        }
    }
}

/// A design matrix with column names.
#[derive(Clone, Debug)]
pub struct Design {
    pub x: Matrix,
    pub names: Vec<String>,
}

impl Design {
    pub fn new(x: Matrix, names: Vec<String>) -> Result<Self> {
        if names.len() != x.cols() {
            return Err(Error::InvalidParameter("one name per design column".into()));
        }
        Ok(Design { x, names })
    }

    pub fn build(ds: &Dataset, kind: DesignKind) -> Self {
        let mut x = Matrix::zeros(ds.len(), kind.width(ds.p()));
        let mut buf = Vec::new();
        for (i, r) in ds.rows().iter().enumerate() {
            kind.row(&r.l, r.z, &mut buf);
            x.row_mut(i).copy_from_slice(&buf);
        }
        Design { x, names: kind.names(ds.p()) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IrlsOptions {
    /// Bound on the max-norm of the mean log-likelihood gradient.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions { tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub separated: bool,
    pub iterations: usize,
    pub design: Vec<String>,
}

impl LogisticFit {
    /// `Pr(label = +1 | x)`, strictly inside (0,1).
    pub fn predict(&self, x: &[f64]) -> f64 {
        expit(dot(&self.coefficients, x).clamp(-ETA_CLIP, ETA_CLIP))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub design: Vec<String>,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x)
    }
}

fn rank_error(names: &[String], col: usize) -> Error {
    Error::RankDeficient { column: names.get(col).cloned().unwrap_or_else(|| format!("column {}", col + 1)) }
}

fn check_design(design: &Design, n: usize, weights: Option<&[f64]>) -> Result<()> {
    if design.x.rows() != n {
        return Err(Error::DimensionMismatch { expected: design.x.rows(), found: n });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidParameter("case weights must align with design rows".into()));
    }
    Ok(())
}

fn weighted_loss(eta: &[f64], y: &[f64], w: &[f64], total: f64) -> f64 {
    // log(1 + exp(-y*eta)) in a form that neither overflows nor loses precision.
    let mut s = 0.0;
    for k in 0..eta.len() {
        if w[k] == 0.0 {
            continue;
        }
        let m = -y[k] * eta[k];
        let term = if m > 0.0 { m + log(1.0 + crate::math::exp(-m)) } else { log(1.0 + crate::math::exp(m)) };
        s += w[k] * term;
    }
    s / total
}

/// Maximum-likelihood logistic regression by Newton/IRLS with step-halving.
///
/// Each Newton direction is a weighted least-squares solve, so collinear
/// design columns surface as [`Error::RankDeficient`] naming the column.
/// Completely separated data (every row classified correctly with a margin,
/// or diverging linear predictors) come back with `separated = true` and
/// `converged = false`.
pub fn fit_logistic_irls(
    design: &Design,
    labels: &[Label],
    case_weights: Option<&[f64]>,
    opts: &IrlsOptions,
) -> Result<LogisticFit> {
    let n = labels.len();
    check_design(design, n, case_weights)?;
    let x = &design.x;
    let p = x.cols();
    let c: Vec<f64> = (0..n).map(|i| case_weights.map_or(1.0, |w| w[i])).collect();
    let total: f64 = c.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyDataset);
    }
    let y: Vec<f64> = labels.iter().map(|l| l.value()).collect();
    let mut beta = vec![0.0; p];
    let mut eta = vec![0.0; n];
    let mut loss = weighted_loss(&eta, &y, &c, total);
    let mut converged = false;
    let mut diverged = false;
    let mut iterations = 0;
    let mut work_w = vec![0.0; n];
    let mut work_z = vec![0.0; n];
    let mut grad = vec![0.0; p];
    for it in 0..=opts.max_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for k in 0..n {
            let pk = expit(eta[k]);
            let y01 = 0.5 * (1.0 + y[k]);
            let r = c[k] * (y01 - pk) / total;
            for (g, xv) in grad.iter_mut().zip(x.row(k)) {
                *g += r * xv;
            }
            let v = (pk * (1.0 - pk)).max(1e-300);
            work_w[k] = c[k] * v;
            work_z[k] = (y01 - pk) / v;
        }
        if grad.iter().all(|g| g.abs() <= opts.tol) {
            converged = true;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        iterations = it + 1;
        let step = match linalg::weighted_lstsq(x, &work_z, Some(&work_w)) {
            Ok(s) => s,
            Err(LstsqError::RankDeficient(col)) => {
                // At the start the working weights are case weights times 1/4,
                // so this is a genuine design problem; later it signals fitted
                // probabilities saturating at 0 or 1.
                if it == 0 {
                    return Err(rank_error(&design.names, col));
                }
                diverged = true;
                break;
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cand_eta = x.mul_vec(&cand);
            let cand_loss = weighted_loss(&cand_eta, &y, &c, total);
            if cand_loss <= loss {
                beta = cand;
                eta = cand_eta;
                loss = cand_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if eta.iter().zip(&c).any(|(e, w)| *w > 0.0 && e.abs() > SEPARATION_ETA) {
            diverged = true;
            break;
        }
    }
    let all_correct = (0..n).filter(|&k| c[k] > 0.0).all(|k| y[k] * eta[k] > 0.0);
    let separated = diverged || all_correct;
    Ok(LogisticFit {
        coefficients: beta,
        converged: converged && !separated,
        separated,
        iterations,
        design: design.names.clone(),
    })
}

/// Ordinary (case-weighted) least squares via orthogonal factorization.
pub fn fit_linear_ols(design: &Design, y: &[f64], case_weights: Option<&[f64]>) -> Result<LinearFit> {
    check_design(design, y.len(), case_weights)?;
    let coefficients = linalg::weighted_lstsq(&design.x, y, case_weights).map_err(|e| match e {
        LstsqError::RankDeficient(col) => rank_error(&design.names, col),
    })?;
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Singular("least squares"));
    }
    Ok(LinearFit { coefficients, design: design.names.clone() })
}

/// Model for `E[Y | L, Z]`.
#[derive(Clone, Debug, PartialEq)]
pub enum OutcomeFit {
    Linear(LinearFit),
    /// Binary outcomes in {0,1}: `Pr(Y = 1 | L, Z)`.
    Logistic(LogisticFit),
}

impl OutcomeFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            OutcomeFit::Linear(f) => f.predict(x),
            OutcomeFit::Logistic(f) => f.predict(x),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutcomeMode {
    /// Logistic when every outcome is 0 or 1, linear otherwise.
    #[default]
    Auto,
    Linear,
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NuisanceConfig {
    pub delta_floor: f64,
    pub instrument_floor: f64,
    pub irls: IrlsOptions,
    pub outcome: OutcomeMode,
    /// Layout of the outcome regression; the interaction lets `E[Y|L,Z=1] - E[Y|L,Z=-1]` vary with `L`.
    pub outcome_design: DesignKind,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            delta_floor: 0.01,
            instrument_floor: 0.01,
            irls: IrlsOptions::default(),
            outcome: OutcomeMode::Auto,
            outcome_design: DesignKind::Interacted,
        }
    }
}

/// The fitted nuisance models one training sample provides.
#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceSet {
    /// `f(A = 1 | L, Z)` on `(1, L, Z)`.
    pub fit_a_given_lz: LogisticFit,
    /// `f(Z = 1 | L)` on `(1, L)`.
    pub fit_z_given_l: LogisticFit,
    pub fit_y_given_lz: OutcomeFit,
    pub outcome_design: DesignKind,
    pub delta_floor: f64,
    pub instrument_floor: f64,
}

pub fn is_binary_outcome(ds: &Dataset) -> bool {
    ds.rows().iter().all(|r| r.y == 0.0 || r.y == 1.0)
}

/// Fits the treatment, instrument and outcome models on one dataset.
///
/// Separation in the treatment or instrument model is an error since the
/// resulting weights would be degenerate.
pub fn fit_nuisances(ds: &Dataset, cfg: &NuisanceConfig) -> Result<NuisanceSet> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.delta_floor > 0.0) || !(cfg.instrument_floor > 0.0 && cfg.instrument_floor < 0.5) {
        return Err(Error::InvalidParameter("nuisance floors must be positive (instrument floor below 1/2)".into()));
    }
    let cw = ds.case_weights();
    let a: Vec<Label> = ds.rows().iter().map(|r| r.a).collect();
    let z: Vec<Label> = ds.rows().iter().map(|r| r.z).collect();

    let fa = fit_logistic_irls(&Design::build(ds, DesignKind::WithInstrument), &a, cw, &cfg.irls)?;
    if fa.separated {
        return Err(Error::Separation("treatment"));
    }
    let fz = fit_logistic_irls(&Design::build(ds, DesignKind::Affine), &z, cw, &cfg.irls)?;
    if fz.separated {
        return Err(Error::Separation("instrument"));
    }
    let logistic = match cfg.outcome {
        OutcomeMode::Auto => is_binary_outcome(ds),
        OutcomeMode::Linear => false,
        OutcomeMode::Logistic => {
            if !is_binary_outcome(ds) {
                return Err(Error::InvalidParameter("logistic outcome model needs outcomes in {0,1}".into()));
            }
            true
        }
    };
    let yd = Design::build(ds, cfg.outcome_design);
    let fy = if logistic {
        let yl: Vec<Label> = ds.rows().iter().map(|r| if r.y == 1.0 { Label::Pos } else { Label::Neg }).collect();
        let f = fit_logistic_irls(&yd, &yl, cw, &cfg.irls)?;
        if f.separated {
            return Err(Error::Separation("outcome"));
        }
        OutcomeFit::Logistic(f)
    } else {
        let y: Vec<f64> = ds.rows().iter().map(|r| r.y).collect();
        OutcomeFit::Linear(fit_linear_ols(&yd, &y, cw)?)
    };
    Ok(NuisanceSet {
        fit_a_given_lz: fa,
        fit_z_given_l: fz,
        fit_y_given_lz: fy,
        outcome_design: cfg.outcome_design,
        delta_floor: cfg.delta_floor,
        instrument_floor: cfg.instrument_floor,
    })
}

/// Truncates a compliance contrast away from zero, keeping its sign.
pub fn truncate_delta(value: f64, floor: f64) -> f64 {
    if value.abs() < floor {
        floor * Label::sign_of(value).value()
    } else {
        value
    }
}

impl NuisanceSet {
    fn features(kind: DesignKind, l: &[f64], z: Label) -> Vec<f64> {
        let mut buf = Vec::with_capacity(kind.width(l.len()));
        kind.row(l, z, &mut buf);
        buf
    }

    /// `f(A = 1 | l, z)`.
    pub fn treatment_prob(&self, l: &[f64], z: Label) -> f64 {
        self.fit_a_given_lz.predict(&Self::features(DesignKind::WithInstrument, l, z))
    }

    /// `f(Z = 1 | l)` before any floor.
    pub fn instrument_prob(&self, l: &[f64]) -> f64 {
        self.fit_z_given_l.predict(&Self::features(DesignKind::Affine, l, Label::Pos))
    }

    pub fn outcome_mean(&self, l: &[f64], z: Label) -> f64 {
        self.fit_y_given_lz.predict(&Self::features(self.outcome_design, l, z))
    }
}

pub fn delta_hat(ns: &NuisanceSet, l: &[f64]) -> f64 {
    truncate_delta(ns.treatment_prob(l, Label::Pos) - ns.treatment_prob(l, Label::Neg), ns.delta_floor)
}

pub fn cate_hat(ns: &NuisanceSet, l: &[f64]) -> f64 {
    (ns.outcome_mean(l, Label::Pos) - ns.outcome_mean(l, Label::Neg)) / delta_hat(ns, l)
}

/// Nuisance components the weights and plug-in estimators consume.
///
/// Implementors return `None` for a component they do not provide; callers
/// requiring it fail with [`Error::MissingComponent`]. Tests implement this
/// with exact population functions or deliberately wrong ones.
pub trait NuisanceModel {
    /// `f(Z = 1 | l)`.
    fn instrument_prob(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    /// `f(A = 1 | l, z)`.
    fn treatment_prob(&self, _l: &[f64], _z: Label) -> Option<f64> {
        None
    }
    /// `delta(l)` before truncation.
    fn compliance(&self, l: &[f64]) -> Option<f64> {
        Some(self.treatment_prob(l, Label::Pos)? - self.treatment_prob(l, Label::Neg)?)
    }
    /// `Delta(l) = E[Y_1 - Y_-1 | l]`.
    fn cate(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    /// `E[Y | Z = -1, l]`.
    fn reference_outcome(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    /// `Pr(A = 1 | Z = -1, l)`.
    fn reference_treatment(&self, l: &[f64]) -> Option<f64> {
        self.treatment_prob(l, Label::Neg)
    }
    fn delta_floor(&self) -> f64 {
        0.01
    }
    fn instrument_floor(&self) -> f64 {
        0.01
    }
}

impl NuisanceModel for NuisanceSet {
    fn instrument_prob(&self, l: &[f64]) -> Option<f64> {
        Some(NuisanceSet::instrument_prob(self, l))
    }
    fn treatment_prob(&self, l: &[f64], z: Label) -> Option<f64> {
        Some(NuisanceSet::treatment_prob(self, l, z))
    }
    fn cate(&self, l: &[f64]) -> Option<f64> {
        Some(cate_hat(self, l))
    }
    fn reference_outcome(&self, l: &[f64]) -> Option<f64> {
        Some(self.outcome_mean(l, Label::Neg))
    }
    fn delta_floor(&self) -> f64 {
        self.delta_floor
    }
    fn instrument_floor(&self) -> f64 {
        self.instrument_floor
    }
}

pub(crate) fn need<T>(v: Option<T>, name: &'static str) -> Result<T> {
    v.ok_or(Error::MissingComponent(name))
}

/// `f(Z = z | l)` with `f(Z = 1 | l)` clipped to `[floor, 1 - floor]`.
pub fn instrument_density<N: NuisanceModel + ?Sized>(nm: &N, l: &[f64], z: Label) -> Result<f64> {
    let floor = nm.instrument_floor();
    let p = need(nm.instrument_prob(l), "instrument probability f(Z=1|L)")?.clamp(floor, 1.0 - floor);
    Ok(match z {
        Label::Pos => p,
        Label::Neg => 1.0 - p,
    })
}

/// Truncated compliance contrast.
pub fn compliance<N: NuisanceModel + ?Sized>(nm: &N, l: &[f64]) -> Result<f64> {
    Ok(truncate_delta(need(nm.compliance(l), "compliance contrast delta(L)")?, nm.delta_floor()))
}

/// Empirical `Pr(A=1|Z=1) - Pr(A=1|Z=-1)`.
pub fn marginal_compliance(ds: &Dataset) -> f64 {
    let mut num = [0.0; 2];
    let mut den = [0.0; 2];
    for (i, r) in ds.rows().iter().enumerate() {
        let c = ds.case_weight(i);
        den[r.z.index()] += c;
        num[r.z.index()] += c * r.a.indicator();
    }
    let rate = |k: usize| if den[k] > 0.0 { num[k] / den[k] } else { 0.0 };
    rate(Label::Pos.index()) - rate(Label::Neg.index())
}

/// Relabels `Z <- -Z` when the instrument lowers treatment uptake.
/// Returns the oriented data and whether a flip happened.
pub fn orient_instrument(ds: &Dataset) -> (Dataset, bool) {
    if marginal_compliance(ds) < 0.0 {
        (ds.with_flipped_instrument(), true)
    } else {
        (ds.clone(), false)
    }
}

/// Feature map for parametric working models such as `delta(L, beta) = beta^T psi(L)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Basis {
    Constant,
    /// `(1, l)`
    #[default]
    Affine,
}

impl Basis {
    pub fn dim(self, p: usize) -> usize {
        match self {
            Basis::Constant => 1,
            Basis::Affine => 1 + p,
        }
    }

    pub fn eval(self, l: &[f64]) -> Vec<f64> {
        let mut v = vec![1.0];
        if self == Basis::Affine {
            v.extend_from_slice(l);
        }
        v
    }
}

/// `theta^T psi(l)` for a fixed basis.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearIndex {
    pub basis: Basis,
    pub coefficients: Vec<f64>,
}

impl LinearIndex {
    pub fn eval(&self, l: &[f64]) -> f64 {
        dot(&self.coefficients, &self.basis.eval(l))
    }
}

fn check_basis(ds: &Dataset, basis: Basis) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if basis.dim(ds.p()) > ds.len() {
        return Err(Error::InvalidParameter("basis dimension exceeds the number of rows".into()));
    }
    Ok(())
}

/// Doubly robust g-estimation of `delta(L, beta)`.
///
/// Solves `P_n psi(L) [A01 - delta(L, beta) (1+Z)/2 - Pr(A=1|Z=-1,L)] Z / f(Z|L) = 0`
/// with the treatment coded 0/1 (`A01 = (1+A)/2`); that coding makes the
/// residual mean zero at the true contrast. The equation is linear in `beta`.
/// Uses `instrument_prob` and `reference_treatment`.
pub fn g_estimate_delta<N: NuisanceModel + ?Sized>(ds: &Dataset, basis: Basis, nm: &N) -> Result<LinearIndex> {
    check_basis(ds, basis)?;
    let k = basis.dim(ds.p());
    let mut m = Matrix::zeros(k, k);
    let mut rhs = vec![0.0; k];
    for (i, r) in ds.rows().iter().enumerate() {
        let c = ds.case_weight(i);
        if c == 0.0 {
            continue;
        }
        let psi = basis.eval(&r.l);
        let f = instrument_density(nm, &r.l, r.z)?;
        let p0 = need(nm.reference_treatment(&r.l), "reference treatment Pr(A=1|Z=-1,L)")?;
        let zf = c * r.z.value() / f;
        let resid = zf * (r.a.indicator() - p0);
        for a in 0..k {
            rhs[a] += psi[a] * resid;
        }
        if r.z == Label::Pos {
            for a in 0..k {
                for b in 0..k {
                    m.set(a, b, m.get(a, b) + zf * psi[a] * psi[b]);
                }
            }
        }
    }
    let coefficients = linalg::solve(&m, &rhs).ok_or(Error::Singular("g-estimation of delta"))?;
    Ok(LinearIndex { basis, coefficients })
}

/// Components of the multiply robust value estimator for a fixed regime.
pub trait MrModel {
    /// `f(Z = 1 | l)`.
    fn instrument_prob(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    /// `Pr(A = 1 | Z = -1, l)`.
    fn reference_treatment(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    /// `delta(l)` before truncation.
    fn compliance(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    /// `gamma(l) = sum_z z E[A Y I{A=D(L)} | Z=z, l] / delta(l)`.
    fn gamma(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    /// `gamma'(l) = E[A Y I{A=D(L)} | Z=-1, l]`.
    fn gamma_prime(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    fn delta_floor(&self) -> f64 {
        0.01
    }
    fn instrument_floor(&self) -> f64 {
        0.01
    }
}

/// Adapter exposing the instrument part of an [`MrModel`] as a [`NuisanceModel`].
struct InstrumentView<'a, M: ?Sized>(&'a M);

impl<M: MrModel + ?Sized> NuisanceModel for InstrumentView<'_, M> {
    fn instrument_prob(&self, l: &[f64]) -> Option<f64> {
        self.0.instrument_prob(l)
    }
    fn reference_treatment(&self, l: &[f64]) -> Option<f64> {
        self.0.reference_treatment(l)
    }
    fn instrument_floor(&self) -> f64 {
        self.0.instrument_floor()
    }
}

pub(crate) fn mr_instrument_density<M: MrModel + ?Sized>(m: &M, l: &[f64], z: Label) -> Result<f64> {
    instrument_density(&InstrumentView(m), l, z)
}

/// `A Y I{A = D(L)}` for one row.
pub(crate) fn regime_response(rule: &DecisionRule, r: &crate::data::Observation) -> f64 {
    if rule.decision_value_unchecked(&r.l) >= 0.0 {
        if r.a == Label::Pos {
            r.y
        } else {
            0.0
        }
    } else if r.a == Label::Neg {
        -r.y
    } else {
        0.0
    }
}

/// Doubly robust g-estimation of `gamma(L, eta)` for a regime.
///
/// Solves `P_n psi(L) [A Y I{A=D} - gamma'(L) - (A - E[A|Z=-1,L]) gamma(L, eta)/2] Z / f(Z|L) = 0`
/// with `A` in {-1,+1} and `E[A|Z=-1,L] = 2 Pr(A=1|Z=-1,L) - 1`.
/// Uses `instrument_prob`, `reference_treatment` and `gamma_prime`.
pub fn g_estimate_gamma<M: MrModel + ?Sized>(
    ds: &Dataset,
    rule: &DecisionRule,
    basis: Basis,
    comps: &M,
) -> Result<LinearIndex> {
    check_basis(ds, basis)?;
    if rule.p() != ds.p() {
        return Err(Error::DimensionMismatch { expected: rule.p(), found: ds.p() });
    }
    let k = basis.dim(ds.p());
    let mut m = Matrix::zeros(k, k);
    let mut rhs = vec![0.0; k];
    for (i, r) in ds.rows().iter().enumerate() {
        let c = ds.case_weight(i);
        if c == 0.0 {
            continue;
        }
        let psi = basis.eval(&r.l);
        let f = mr_instrument_density(comps, &r.l, r.z)?;
        let e0 = 2.0 * need(comps.reference_treatment(&r.l), "reference treatment Pr(A=1|Z=-1,L)")? - 1.0;
        let gp = need(comps.gamma_prime(&r.l), "gamma'(L)")?;
        let zf = c * r.z.value() / f;
        let resid = zf * (regime_response(rule, r) - gp);
        let slope = zf * (r.a.value() - e0) / 2.0;
        for a in 0..k {
            rhs[a] += psi[a] * resid;
            for b in 0..k {
                m.set(a, b, m.get(a, b) + slope * psi[a] * psi[b]);
            }
        }
    }
    let coefficients = linalg::solve(&m, &rhs).ok_or(Error::Singular("g-estimation of gamma"))?;
    Ok(LinearIndex { basis, coefficients })
}

/// `gamma'(L)`: least squares of `A Y I{A=D(L)}` on the basis among `Z = -1` rows.
pub fn fit_gamma_prime(ds: &Dataset, rule: &DecisionRule, basis: Basis) -> Result<LinearIndex> {
    if rule.p() != ds.p() {
        return Err(Error::DimensionMismatch { expected: rule.p(), found: ds.p() });
    }
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.rows()[i].z == Label::Neg).collect();
    let k = basis.dim(ds.p());
    let mut x = Matrix::zeros(idx.len(), k);
    let mut y = Vec::with_capacity(idx.len());
    let mut w = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        let r = &ds.rows()[i];
        x.row_mut(row).copy_from_slice(&basis.eval(&r.l));
        y.push(regime_response(rule, r));
        w.push(ds.case_weight(i));
    }
    let names = match basis {
        Basis::Constant => vec![String::from("intercept")],
        Basis::Affine => DesignKind::Affine.names(ds.p()),
    };
    let fit = fit_linear_ols(&Design::new(x, names)?, &y, Some(&w))?;
    Ok(LinearIndex { basis, coefficients: fit.coefficients })
}

/// Fitted components of the multiply robust value estimator for one regime.
#[derive(Clone, Debug, PartialEq)]
pub struct MrFits {
    pub fit_z_given_l: LogisticFit,
    pub fit_a_given_lz: LogisticFit,
    /// `delta(L, beta)`.
    pub delta: LinearIndex,
    pub gamma_prime: LinearIndex,
    /// `gamma(L, eta)`.
    pub gamma: LinearIndex,
    pub delta_floor: f64,
    pub instrument_floor: f64,
}

impl MrModel for MrFits {
    fn instrument_prob(&self, l: &[f64]) -> Option<f64> {
        Some(self.fit_z_given_l.predict(&NuisanceSet::features(DesignKind::Affine, l, Label::Pos)))
    }
    fn reference_treatment(&self, l: &[f64]) -> Option<f64> {
        Some(self.fit_a_given_lz.predict(&NuisanceSet::features(DesignKind::WithInstrument, l, Label::Neg)))
    }
    fn compliance(&self, l: &[f64]) -> Option<f64> {
        Some(self.delta.eval(l))
    }
    fn gamma(&self, l: &[f64]) -> Option<f64> {
        Some(self.gamma.eval(l))
    }
    fn gamma_prime(&self, l: &[f64]) -> Option<f64> {
        Some(self.gamma_prime.eval(l))
    }
    fn delta_floor(&self) -> f64 {
        self.delta_floor
    }
    fn instrument_floor(&self) -> f64 {
        self.instrument_floor
    }
}

struct PartialMr<'a> {
    ns: &'a NuisanceSet,
    gamma_prime: &'a LinearIndex,
}

impl MrModel for PartialMr<'_> {
    fn instrument_prob(&self, l: &[f64]) -> Option<f64> {
        Some(self.ns.instrument_prob(l))
    }
    fn reference_treatment(&self, l: &[f64]) -> Option<f64> {
        Some(self.ns.treatment_prob(l, Label::Neg))
    }
    fn gamma_prime(&self, l: &[f64]) -> Option<f64> {
        Some(self.gamma_prime.eval(l))
    }
    fn instrument_floor(&self) -> f64 {
        self.ns.instrument_floor
    }
}

/// Runs both g-estimators and the `gamma'` regression for one regime.
pub fn fit_mr(ds: &Dataset, rule: &DecisionRule, ns: &NuisanceSet, basis: Basis) -> Result<MrFits> {
    let delta = g_estimate_delta(ds, basis, ns)?;
    let gamma_prime = fit_gamma_prime(ds, rule, basis)?;
    let gamma = g_estimate_gamma(ds, rule, basis, &PartialMr { ns, gamma_prime: &gamma_prime })?;
    Ok(MrFits {
        fit_z_given_l: ns.fit_z_given_l.clone(),
        fit_a_given_lz: ns.fit_a_given_lz.clone(),
        delta,
        gamma_prime,
        gamma,
        delta_floor: ns.delta_floor,
        instrument_floor: ns.instrument_floor,
    })
}
