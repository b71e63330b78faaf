//! Value estimation and bounds for a fixed regime.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, DecisionRule};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::math::sqrt;
use crate::nuisance::{
    compliance, fit_linear_ols, instrument_density, mr_instrument_density, need, regime_response, truncate_delta,
    Basis, Design, DesignKind, LinearIndex, MrModel, NuisanceModel, NuisanceSet,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ValueReport {
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub n: usize,
    pub scheme: String,
}

/// Case-weighted mean of `terms` and the standard error of that mean.
fn mean_and_se(ds: &Dataset, terms: &[f64]) -> (f64, Option<f64>) {
    let total = ds.total_weight();
    let mean = (0..terms.len()).map(|i| ds.case_weight(i) * terms[i]).sum::<f64>() / total;
    let ss: f64 = (0..terms.len()).map(|i| ds.case_weight(i) * (terms[i] - mean) * (terms[i] - mean)).sum();
    let se = (total > 1.0).then(|| sqrt(ss / (total * (total - 1.0))));
    (mean, se)
}

fn check_rule(rule: &DecisionRule, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rule.p() != ds.p() {
        return Err(Error::DimensionMismatch { expected: rule.p(), found: ds.p() });
    }
    Ok(())
}

/// Per-row plug-in terms `Z A Y I{A = D(L)} / (delta(L) f(Z|L))`.
pub fn plugin_terms<N: NuisanceModel + ?Sized>(rule: &DecisionRule, ds: &Dataset, nm: &N) -> Result<Vec<f64>> {
    check_rule(rule, ds)?;
    ds.rows()
        .iter()
        .map(|r| {
            let d = compliance(nm, &r.l)?;
            let f = instrument_density(nm, &r.l, r.z)?;
            Ok(r.z.value() * regime_response(rule, r) / (d * f))
        })
        .collect()
}

/// Inverse-weighted IV value estimate; the standard error is `sd / sqrt(n)`.
pub fn value_plugin<N: NuisanceModel + ?Sized>(rule: &DecisionRule, ds: &Dataset, nm: &N) -> Result<ValueReport> {
    let terms = plugin_terms(rule, ds, nm)?;
    let (estimate, std_error) = mean_and_se(ds, &terms);
    Ok(ValueReport { estimate, std_error, n: ds.len(), scheme: "IV_IW".into() })
}

/// Inverse propensity value `P_n[Y I{A = D(L)} / f(A|L,Z)]`, valid only without unmeasured confounding.
pub fn value_ipw<N: NuisanceModel + ?Sized>(rule: &DecisionRule, ds: &Dataset, nm: &N) -> Result<ValueReport> {
    check_rule(rule, ds)?;
    let mut terms = Vec::with_capacity(ds.len());
    for r in ds.rows() {
        let p = need(nm.treatment_prob(&r.l, r.z), "treatment probability f(A=1|L,Z)")?;
        let fa = if r.a == Label::Pos { p } else { 1.0 - p };
        let hit = (rule.decision_value_unchecked(&r.l) >= 0.0) == (r.a == Label::Pos);
        terms.push(if hit { r.y / fa } else { 0.0 });
    }
    let (estimate, std_error) = mean_and_se(ds, &terms);
    Ok(ValueReport { estimate, std_error, n: ds.len(), scheme: "OWL".into() })
}

/// Per-row terms of the multiply robust value estimator.
pub fn mr_terms<M: MrModel + ?Sized>(rule: &DecisionRule, ds: &Dataset, m: &M) -> Result<Vec<f64>> {
    check_rule(rule, ds)?;
    ds.rows()
        .iter()
        .map(|r| {
            let f = mr_instrument_density(m, &r.l, r.z)?;
            let d = truncate_delta(need(m.compliance(&r.l), "compliance contrast delta(L)")?, m.delta_floor());
            let gamma = need(m.gamma(&r.l), "gamma(L)")?;
            let gp = need(m.gamma_prime(&r.l), "gamma'(L)")?;
            let e0 = 2.0 * need(m.reference_treatment(&r.l), "reference treatment Pr(A=1|Z=-1,L)")? - 1.0;
            let z = r.z.value();
            let fd = f * d;
            Ok(z * regime_response(rule, r) / fd - z * gp / fd + gamma - z * (r.a.value() - e0) / (2.0 * fd) * gamma)
        })
        .collect()
}

/// Multiply robust value estimate with an influence-function standard error.
pub fn value_mr<M: MrModel + ?Sized>(rule: &DecisionRule, ds: &Dataset, m: &M) -> Result<ValueReport> {
    let terms = mr_terms(rule, ds, m)?;
    let (estimate, std_error) = mean_and_se(ds, &terms);
    Ok(ValueReport { estimate, std_error, n: ds.len(), scheme: "IV_MR".into() })
}

/// Components of the efficient influence function of the value.
pub trait EifModel {
    /// `f(Z = 1 | l)`.
    fn instrument_prob(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    /// `delta(l)` before truncation.
    fn compliance(&self, _l: &[f64]) -> Option<f64> {
        None
    }
    /// `Pr(A = 1 | Z = z, l)`.
    fn treatment_prob(&self, _l: &[f64], _z: Label) -> Option<f64> {
        None
    }
    /// `E[A Y I{A = D(L)} | Z = z, l]` for the regime being evaluated.
    fn arm_mean(&self, _l: &[f64], _z: Label) -> Option<f64> {
        None
    }
    fn delta_floor(&self) -> f64 {
        0.01
    }
    fn instrument_floor(&self) -> f64 {
        0.01
    }
}

struct EifInstrument<'a, E: ?Sized>(&'a E);

impl<E: EifModel + ?Sized> NuisanceModel for EifInstrument<'_, E> {
    fn instrument_prob(&self, l: &[f64]) -> Option<f64> {
        self.0.instrument_prob(l)
    }
    fn compliance(&self, l: &[f64]) -> Option<f64> {
        self.0.compliance(l)
    }
    fn delta_floor(&self) -> f64 {
        self.0.delta_floor()
    }
    fn instrument_floor(&self) -> f64 {
        self.0.instrument_floor()
    }
}

/// `EIF + V` per row; the value cancels, so no estimate is needed.
fn eif_centered_terms<E: EifModel + ?Sized>(rule: &DecisionRule, ds: &Dataset, m: &E) -> Result<Vec<f64>> {
    check_rule(rule, ds)?;
    let view = EifInstrument(m);
    ds.rows()
        .iter()
        .map(|r| {
            let f = instrument_density(&view, &r.l, r.z)?;
            let d = compliance(&view, &r.l)?;
            let m_pos = need(m.arm_mean(&r.l, Label::Pos), "arm mean E[AYI{A=D}|Z,L]")?;
            let m_neg = need(m.arm_mean(&r.l, Label::Neg), "arm mean E[AYI{A=D}|Z,L]")?;
            let m_obs = if r.z == Label::Pos { m_pos } else { m_neg };
            let ea = 2.0 * need(m.treatment_prob(&r.l, r.z), "treatment probability Pr(A=1|Z,L)")? - 1.0;
            let gamma = (m_pos - m_neg) / d;
            let z = r.z.value();
            let fd = f * d;
            Ok(z * regime_response(rule, r) / fd - (z * m_obs / fd - gamma + z * (r.a.value() - ea) / (2.0 * fd) * gamma))
        })
        .collect()
}

/// Efficient influence function of the value at `value`, per row.
pub fn eif_value<E: EifModel + ?Sized>(rule: &DecisionRule, ds: &Dataset, m: &E, value: f64) -> Result<Vec<f64>> {
    Ok(eif_centered_terms(rule, ds, m)?.into_iter().map(|t| t - value).collect())
}

/// One-step estimator `P_n[EIF + V]` with standard error `sd(EIF) / sqrt(n)`.
pub fn value_one_step<E: EifModel + ?Sized>(rule: &DecisionRule, ds: &Dataset, m: &E) -> Result<ValueReport> {
    let terms = eif_centered_terms(rule, ds, m)?;
    let (estimate, std_error) = mean_and_se(ds, &terms);
    Ok(ValueReport { estimate, std_error, n: ds.len(), scheme: "EIF".into() })
}

/// Fitted EIF components: the nuisance set plus per-arm affine regressions
/// of `A Y I{A = D(L)}` on `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct EifFits {
    pub ns: NuisanceSet,
    /// Indexed by `Label::index()` of the instrument arm.
    pub arm_means: [LinearIndex; 2],
}

impl EifModel for EifFits {
    fn instrument_prob(&self, l: &[f64]) -> Option<f64> {
        Some(self.ns.instrument_prob(l))
    }
    fn compliance(&self, l: &[f64]) -> Option<f64> {
        Some(self.ns.treatment_prob(l, Label::Pos) - self.ns.treatment_prob(l, Label::Neg))
    }
    fn treatment_prob(&self, l: &[f64], z: Label) -> Option<f64> {
        Some(self.ns.treatment_prob(l, z))
    }
    fn arm_mean(&self, l: &[f64], z: Label) -> Option<f64> {
        Some(self.arm_means[z.index()].eval(l))
    }
    fn delta_floor(&self) -> f64 {
        self.ns.delta_floor
    }
    fn instrument_floor(&self) -> f64 {
        self.ns.instrument_floor
    }
}

pub fn fit_eif(ds: &Dataset, rule: &DecisionRule, ns: &NuisanceSet, basis: Basis) -> Result<EifFits> {
    check_rule(rule, ds)?;
    let mut arms = Vec::with_capacity(2);
    for z in [Label::Neg, Label::Pos] {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.rows()[i].z == z).collect();
        let k = basis.dim(ds.p());
        let mut x = crate::linalg::Matrix::zeros(idx.len(), k);
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
        arms.push(LinearIndex { basis, coefficients: fit.coefficients });
    }
    let pos = arms.pop().expect("two arms");
    let neg = arms.pop().expect("two arms");
    Ok(EifFits { ns: ns.clone(), arm_means: [neg, pos] })
}

/// Value among compliers: `P_n[Z A Y I{A=D} / f(Z|L)] / P_n[Z I{A=1} / f(Z|L)]`.
///
/// The denominator is the inverse-weighted marginal compliance, equal to
/// `Pr(A=1|Z=1) - Pr(A=1|Z=-1)` when the instrument does not depend on `L`.
pub fn complier_value<N: NuisanceModel + ?Sized>(rule: &DecisionRule, ds: &Dataset, nm: &N) -> Result<ValueReport> {
    check_rule(rule, ds)?;
    let mut num = Vec::with_capacity(ds.len());
    let mut den = Vec::with_capacity(ds.len());
    for r in ds.rows() {
        let f = instrument_density(nm, &r.l, r.z)?;
        num.push(r.z.value() * regime_response(rule, r) / f);
        den.push(r.z.value() * r.a.indicator() / f);
    }
    let (n_mean, _) = mean_and_se(ds, &num);
    let (c_mean, _) = mean_and_se(ds, &den);
    let floor = nm.delta_floor();
    if !(c_mean >= floor) {
        return Err(Error::WeakInstrument { compliance: c_mean, floor });
    }
    let estimate = n_mean / c_mean;
    let infl: Vec<f64> = num.iter().zip(&den).map(|(a, b)| (a - estimate * b) / c_mean).collect();
    let (_, se) = mean_and_se(ds, &infl);
    Ok(ValueReport { estimate, std_error: se, n: ds.len(), scheme: "COMPLIER".into() })
}

/// Fraction of points where two rules choose the same action.
pub fn classification_agreement<'a, I>(rule: &DecisionRule, reference: &DecisionRule, points: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut agree = 0usize;
    let mut total = 0usize;
    for l in points {
        total += 1;
        if rule.decide(l)? == reference.decide(l)? {
            agree += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidParameter("agreement needs at least one evaluation point".into()));
    }
    Ok(agree as f64 / total as f64)
}

/// `Pr(Y = y, A = a | Z = z, L = l)` for one covariate stratum.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    /// `Pr(L = l)`.
    pub weight: f64,
    /// Indexed `[y][a][z]` by `Label::index()`; `y = +1` is success.
    pub p: [[[f64; 2]; 2]; 2],
    /// Covariate value a rule is evaluated at.
    pub point: Vec<f64>,
}

impl Stratum {
    #[inline]
    pub fn prob(&self, y: Label, a: Label, z: Label) -> f64 {
        self.p[y.index()][a.index()][z.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbTable {
    pub strata: Vec<Stratum>,
}

const TABLE_TOL: f64 = 1e-9;

impl ProbTable {
    pub fn new(strata: Vec<Stratum>) -> Result<Self> {
        let t = ProbTable { strata };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<()> {
        if self.strata.is_empty() {
            return Err(Error::InvalidTable("no strata".into()));
        }
        let mut total = 0.0;
        for (k, s) in self.strata.iter().enumerate() {
            if !(s.weight >= 0.0) || !s.weight.is_finite() {
                return Err(Error::InvalidTable(alloc::format!("stratum {k} has an invalid weight")));
            }
            total += s.weight;
            for z in Label::ALL {
                let mut sum = 0.0;
                for y in Label::ALL {
                    for a in Label::ALL {
                        let v = s.prob(y, a, z);
                        if !(v >= -TABLE_TOL) || !v.is_finite() {
                            return Err(Error::InvalidTable(alloc::format!("stratum {k} has a negative or non-finite entry")));
                        }
                        sum += v;
                    }
                }
                if (sum - 1.0).abs() > TABLE_TOL {
                    return Err(Error::InvalidTable(alloc::format!("stratum {k}, z={z}: probabilities sum to {sum}")));
                }
            }
        }
        if (total - 1.0).abs() > TABLE_TOL {
            return Err(Error::InvalidTable(alloc::format!("stratum weights sum to {total}")));
        }
        Ok(())
    }
}

/// Sharp stratum-level bounds from one probability table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StratumBounds {
    /// Bounds on `E[Y_1 - Y_-1 | l]`.
    pub lower: f64,
    pub upper: f64,
    /// Bounds on `E[Y_1 | l]`.
    pub lower_pos: f64,
    pub upper_pos: f64,
    /// Bounds on `E[Y_-1 | l]`.
    pub lower_neg: f64,
    pub upper_neg: f64,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Evaluates every candidate expression of the IV bounds for one stratum.
pub fn stratum_bounds(s: &Stratum) -> StratumBounds {
    use Label::{Neg as M, Pos as P};
    let p = |y: Label, a: Label, z: Label| s.prob(y, a, z);
    let lower = max_of(&[
        p(M, M, M) + p(P, P, P) - 1.0,
        p(M, M, P) + p(P, P, P) - 1.0,
        p(P, P, M) + p(M, M, P) - 1.0,
        p(M, M, M) + p(P, P, M) - 1.0,
        2.0 * p(M, M, M) + p(P, P, M) + p(P, M, P) + p(P, P, P) - 2.0,
        p(M, M, M) + 2.0 * p(P, P, M) + p(M, M, P) + p(M, P, P) - 2.0,
        p(P, M, M) + p(P, P, M) + 2.0 * p(M, M, P) + p(P, P, P) - 2.0,
        p(M, M, M) + p(M, P, M) + p(M, M, P) + 2.0 * p(P, P, P) - 2.0,
    ]);
    let upper = min_of(&[
        1.0 - p(P, M, M) - p(M, P, P),
        1.0 - p(M, P, M) - p(P, M, P),
        1.0 - p(M, P, M) - p(P, M, M),
        1.0 - p(M, P, P) - p(P, M, P),
        2.0 - 2.0 * p(M, P, M) - p(P, M, M) - p(P, M, P) - p(P, P, P),
        2.0 - p(M, P, M) - 2.0 * p(P, M, M) - p(M, M, P) - p(M, P, P),
        2.0 - p(P, M, M) - p(P, P, M) - 2.0 * p(M, P, P) - p(P, M, P),
        2.0 - p(M, M, M) - p(M, P, M) - p(M, P, P) - 2.0 * p(P, M, P),
    ]);
    let lower_neg = max_of(&[
        p(P, M, P),
        p(P, M, M),
        p(P, M, M) + p(P, P, M) - p(M, M, P) - p(P, P, P),
        p(M, P, M) + p(P, M, M) - p(M, M, P) - p(M, P, P),
    ]);
    let upper_neg = min_of(&[
        1.0 - p(M, M, P),
        1.0 - p(M, M, M),
        p(M, P, M) + p(P, M, M) + p(P, M, P) + p(P, P, P),
        p(P, M, M) + p(P, P, M) + p(M, P, P) + p(P, M, P),
    ]);
    let lower_pos = max_of(&[
        p(P, P, M),
        p(P, P, P),
        -p(M, M, M) - p(M, P, M) + p(M, M, P) + p(P, P, P),
        -p(M, P, M) - p(P, M, M) + p(P, M, P) + p(P, P, P),
    ]);
    let upper_pos = min_of(&[
        1.0 - p(M, P, P),
        1.0 - p(M, P, M),
        p(M, M, M) + p(P, P, M) + p(P, M, P) + p(P, P, P),
        p(P, M, M) + p(P, P, M) + p(M, M, P) + p(P, P, P),
    ]);
    StratumBounds { lower, upper, lower_pos, upper_pos, lower_neg, upper_neg }
}

/// Aggregated value bounds at one choice of mixing weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateBounds {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport {
    pub strata: Vec<StratumBounds>,
    /// Action of the regime in each stratum.
    pub actions: Vec<Label>,
    /// Mixing weight on the `+1` decomposition, per stratum.
    pub omega: Vec<f64>,
    pub aggregate: AggregateBounds,
    /// `E[L_1 I{D=1} + L_-1 I{D=-1}]` and the matching upper bound.
    pub direct: AggregateBounds,
    /// Aggregates at `omega = 1` and `omega = 0`.
    pub omega_one: AggregateBounds,
    pub omega_zero: AggregateBounds,
}

fn aggregate(table: &ProbTable, sb: &[StratumBounds], actions: &[Label], omega: &[f64]) -> AggregateBounds {
    let mut lower = 0.0;
    let mut upper = 0.0;
    for k in 0..sb.len() {
        let b = &sb[k];
        let (w1, wm) = (omega[k], 1.0 - omega[k]);
        let d_pos = (actions[k] == Label::Pos) as u8 as f64;
        let d_neg = 1.0 - d_pos;
        let lo = w1 * (b.lower * d_pos + b.lower_neg) + wm * (-b.upper * d_neg + b.lower_pos);
        let hi = w1 * (b.upper * d_pos + b.upper_neg) + wm * (-b.lower * d_neg + b.upper_pos);
        lower += table.strata[k].weight * lo;
        upper += table.strata[k].weight * hi;
    }
    AggregateBounds { lower, upper }
}

/// Bounds on the value of the regime taking `actions[k]` in stratum `k`.
pub fn bp_bounds_for_actions(table: &ProbTable, actions: &[Label], omega: &[f64]) -> Result<BoundsReport> {
    table.check()?;
    let k = table.strata.len();
    if actions.len() != k || omega.len() != k {
        return Err(Error::InvalidParameter("one action and one mixing weight per stratum".into()));
    }
    if omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::InvalidParameter("mixing weights must lie in [0,1]".into()));
    }
    let sb: Vec<StratumBounds> = table.strata.iter().map(stratum_bounds).collect();
    let mut direct = AggregateBounds { lower: 0.0, upper: 0.0 };
    for (s, (b, a)) in table.strata.iter().zip(sb.iter().zip(actions)) {
        let (lo, hi) = if *a == Label::Pos { (b.lower_pos, b.upper_pos) } else { (b.lower_neg, b.upper_neg) };
        direct.lower += s.weight * lo;
        direct.upper += s.weight * hi;
    }
    Ok(BoundsReport {
        aggregate: aggregate(table, &sb, actions, omega),
        omega_one: aggregate(table, &sb, actions, &vec![1.0; k]),
        omega_zero: aggregate(table, &sb, actions, &vec![0.0; k]),
        direct,
        strata: sb,
        actions: actions.to_vec(),
        omega: omega.to_vec(),
    })
}

/// Bounds for `rule` evaluated at each stratum's point, with a common mixing weight.
pub fn bp_bounds(table: &ProbTable, rule: &DecisionRule, omega: f64) -> Result<BoundsReport> {
    let actions = table.strata.iter().map(|s| rule.decide(&s.point)).collect::<Result<Vec<_>>>()?;
    bp_bounds_for_actions(table, &actions, &vec![omega; table.strata.len()])
}

/// A probability table estimated from binary-outcome data by quantile binning.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedTable {
    pub table: ProbTable,
    /// Bins per coordinate after capping the number of strata.
    pub bins_per_coordinate: usize,
    /// Inner cut points per coordinate.
    pub cuts: Vec<Vec<f64>>,
    /// Stratum of each input row (`None` if its cell was dropped).
    pub row_stratum: Vec<Option<usize>>,
    /// Cells dropped for lacking one instrument arm.
    pub dropped_cells: usize,
}

/// Bins every covariate at its empirical quantiles into `bins` groups,
/// coarsening until at most `max_strata` cells exist, and tabulates
/// `Pr(Y, A | Z, cell)`. Outcomes must be 0/1 with 1 meaning success.
/// Cells without both instrument arms are dropped and the remaining
/// weights renormalized.
pub fn bin_table(ds: &Dataset, bins: usize, max_strata: usize) -> Result<BinnedTable> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bins == 0 || max_strata == 0 {
        return Err(Error::InvalidParameter("bins and max_strata must be positive".into()));
    }
    if let Some(i) = ds.rows().iter().position(|r| r.y != 0.0 && r.y != 1.0) {
        return Err(Error::InvalidObservation { row: i + 1, reason: "bounds need a binary 0/1 outcome" });
    }
    let p = ds.p();
    let mut k = bins;
    while k > 1 && k.checked_pow(p as u32).is_none_or(|c| c > max_strata) {
        k -= 1;
    }
    let mut cuts = Vec::with_capacity(p);
    for j in 0..p {
        let mut col: Vec<f64> = ds.rows().iter().map(|r| r.l[j]).collect();
        col.sort_by(f64::total_cmp);
        let mut c: Vec<f64> = (1..k).map(|q| crate::math::quantile_sorted(&col, q as f64 / k as f64)).collect();
        c.dedup();
        cuts.push(c);
    }
    let cell_of = |l: &[f64]| -> usize {
        let mut id = 0;
        for j in 0..p {
            let b = cuts[j].iter().filter(|c| l[j] > **c).count();
            id = id * k + b;
        }
        id
    };
    let n_cells = k.pow(p as u32);
    let mut counts = vec![[[[0.0f64; 2]; 2]; 2]; n_cells];
    let mut point_sum = vec![vec![0.0; p]; n_cells];
    let mut mass = vec![0.0; n_cells];
    let cells: Vec<usize> = ds.rows().iter().map(|r| cell_of(&r.l)).collect();
    for (i, r) in ds.rows().iter().enumerate() {
        let c = ds.case_weight(i);
        let y = if r.y == 1.0 { Label::Pos } else { Label::Neg };
        counts[cells[i]][y.index()][r.a.index()][r.z.index()] += c;
        mass[cells[i]] += c;
        for j in 0..p {
            point_sum[cells[i]][j] += c * r.l[j];
        }
    }
    let mut index = vec![None; n_cells];
    let mut strata = Vec::new();
    let mut dropped = 0;
    for cell in 0..n_cells {
        if mass[cell] == 0.0 {
            continue;
        }
        let arm = |z: Label| -> f64 { Label::ALL.iter().flat_map(|y| Label::ALL.iter().map(move |a| (y, a))).map(|(y, a)| counts[cell][y.index()][a.index()][z.index()]).sum() };
        let (npos, nneg) = (arm(Label::Pos), arm(Label::Neg));
        if npos == 0.0 || nneg == 0.0 {
            dropped += 1;
            continue;
        }
        let mut pr = [[[0.0; 2]; 2]; 2];
        for y in 0..2 {
            for a in 0..2 {
                pr[y][a][Label::Pos.index()] = counts[cell][y][a][Label::Pos.index()] / npos;
                pr[y][a][Label::Neg.index()] = counts[cell][y][a][Label::Neg.index()] / nneg;
            }
        }
        index[cell] = Some(strata.len());
        strata.push(Stratum { weight: mass[cell], p: pr, point: point_sum[cell].iter().map(|v| v / mass[cell]).collect() });
    }
    if strata.is_empty() {
        return Err(Error::InvalidTable("no covariate cell contains both instrument arms".into()));
    }
    let total: f64 = strata.iter().map(|s| s.weight).sum();
    for s in &mut strata {
        s.weight /= total;
    }
    Ok(BinnedTable {
        table: ProbTable { strata },
        bins_per_coordinate: k,
        cuts,
        row_stratum: cells.iter().map(|c| index[*c]).collect(),
        dropped_cells: dropped,
    })
}

/// Majority action of `rule` over the rows in each stratum (ties go to +1).
pub fn majority_actions(binned: &BinnedTable, ds: &Dataset, rule: &DecisionRule) -> Result<Vec<Label>> {
    let d = rule.decide_all(ds)?;
    let mut votes = vec![0.0f64; binned.table.strata.len()];
    for (i, s) in binned.row_stratum.iter().enumerate() {
        if let Some(s) = s {
            votes[*s] += ds.case_weight(i) * d[i].value();
        }
    }
    Ok(votes.into_iter().map(Label::sign_of).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;

    struct Perfect;

    impl NuisanceModel for Perfect {
        fn instrument_prob(&self, _l: &[f64]) -> Option<f64> {
            Some(0.5)
        }
        fn compliance(&self, _l: &[f64]) -> Option<f64> {
            Some(1.0)
        }
    }

    #[test]
    fn plugin_toy() {
        let ds = Dataset::new(vec![
            Observation::new(1.0, Label::Pos, Label::Pos, vec![0.0]),
            Observation::new(0.0, Label::Neg, Label::Neg, vec![0.0]),
        ])
        .unwrap();
        let rule = DecisionRule::constant(1.0, 1);
        let v = value_plugin(&rule, &ds, &Perfect).unwrap();
        assert_eq!(v.estimate, 1.0);
        assert!(v.std_error.unwrap() >= 0.0);
    }

    #[test]
    fn rule_and_negation_partition_weights() {
        let mut rows = Vec::new();
        for (i, y) in [0.3, -1.2, 2.0, 0.7, -0.4, 1.1].iter().enumerate() {
            let a = if i % 2 == 0 { Label::Pos } else { Label::Neg };
            let z = if i % 3 == 0 { Label::Pos } else { Label::Neg };
            rows.push(Observation::new(*y, a, z, vec![i as f64 - 2.5]));
        }
        let ds = Dataset::new(rows).unwrap();
        let rule = DecisionRule::affine(0.1, vec![1.0]);
        let a = value_plugin(&rule, &ds, &Perfect).unwrap().estimate;
        let b = value_plugin(&rule.negated(), &ds, &Perfect).unwrap().estimate;
        let full: f64 = ds.rows().iter().map(|r| r.z.value() * r.a.value() * r.y / 0.5).sum::<f64>() / 6.0;
        assert!((a + b - full).abs() < 1e-12);
    }

    #[test]
    fn perfect_compliance_bounds_point_identify() {
        // A = Z; Pr(Y=1|Z=1) = 0.7 and Pr(Y=1|Z=-1) = 0.4.
        let mut p = [[[0.0; 2]; 2]; 2];
        p[Label::Pos.index()][Label::Pos.index()][Label::Pos.index()] = 0.7;
        p[Label::Neg.index()][Label::Pos.index()][Label::Pos.index()] = 0.3;
        p[Label::Pos.index()][Label::Neg.index()][Label::Neg.index()] = 0.4;
        p[Label::Neg.index()][Label::Neg.index()][Label::Neg.index()] = 0.6;
        let s = Stratum { weight: 1.0, p, point: vec![0.0] };
        let b = stratum_bounds(&s);
        assert!((b.lower - 0.3).abs() < 1e-12 && (b.upper - 0.3).abs() < 1e-12);
        assert!((b.lower_pos - 0.7).abs() < 1e-12 && (b.upper_pos - 0.7).abs() < 1e-12);
        let rep = bp_bounds(&ProbTable::new(vec![s]).unwrap(), &DecisionRule::constant(1.0, 1), 0.5).unwrap();
        assert!((rep.aggregate.lower - 0.7).abs() < 1e-12 && (rep.aggregate.upper - 0.7).abs() < 1e-12);
    }

    #[test]
    fn null_instrument_cannot_sign_effect() {
        let joint = [[0.1, 0.35], [0.3, 0.25]];
        let mut p = [[[0.0; 2]; 2]; 2];
        for y in 0..2 {
            for a in 0..2 {
                p[y][a] = [joint[y][a]; 2];
            }
        }
        let b = stratum_bounds(&Stratum { weight: 1.0, p, point: vec![] });
        assert!(b.lower <= 0.0 && b.upper >= 0.0);
    }

    #[test]
    fn invalid_tables_rejected() {
        let s = Stratum { weight: 1.0, p: [[[0.3; 2]; 2]; 2], point: vec![] };
        assert!(matches!(ProbTable::new(vec![s]), Err(Error::InvalidTable(_))));
        let mut p = [[[0.25; 2]; 2]; 2];
        p[0][0][0] = -0.1;
        p[1][1][0] = 0.6;
        assert!(ProbTable::new(vec![Stratum { weight: 1.0, p, point: vec![] }]).is_err());
    }

    #[test]
    fn agreement_examples() {
        let r = DecisionRule::affine(0.05, vec![1.0]);
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 - 4.5]).collect();
        assert_eq!(classification_agreement(&r, &r, pts.iter().map(|v| v.as_slice())).unwrap(), 1.0);
        assert_eq!(classification_agreement(&r, &r.negated(), pts.iter().map(|v| v.as_slice())).unwrap(), 0.0);
        assert!(classification_agreement(&r, &r, core::iter::empty()).is_err());
    }

    #[test]
    fn complier_value_perfect_compliance_matches_plugin() {
        let mut rows = Vec::new();
        for i in 0..8 {
            let z = if i % 2 == 0 { Label::Pos } else { Label::Neg };
            rows.push(Observation::new(i as f64 * 0.3, z, z, vec![i as f64 - 3.5]));
        }
        let ds = Dataset::new(rows).unwrap();
        let rule = DecisionRule::affine(0.0, vec![1.0]);
        let c = complier_value(&rule, &ds, &Perfect).unwrap();
        let v = value_plugin(&rule, &ds, &Perfect).unwrap();
        assert!((c.estimate - v.estimate).abs() < 1e-12);
    }

    #[test]
    fn weak_instrument_error() {
        let rows = vec![
            Observation::new(1.0, Label::Pos, Label::Pos, vec![0.0]),
            Observation::new(1.0, Label::Pos, Label::Neg, vec![0.0]),
        ];
        let ds = Dataset::new(rows).unwrap();
        let e = complier_value(&DecisionRule::constant(1.0, 1), &ds, &Perfect).unwrap_err();
        assert!(alloc::format!("{e}").contains("weak instrument"));
    }

    #[test]
    fn binning_caps_strata() {
        let mut rows = Vec::new();
        for i in 0..200 {
            let l: Vec<f64> = (0..5).map(|j| ((i * (j + 3)) % 17) as f64).collect();
            let z = if i % 2 == 0 { Label::Pos } else { Label::Neg };
            let a = if i % 3 == 0 { z } else { -z };
            rows.push(Observation::new((i % 5 == 0) as u8 as f64, a, z, l));
        }
        let ds = Dataset::new(rows).unwrap();
        let b = bin_table(&ds, 5, 64).unwrap();
        assert_eq!(b.bins_per_coordinate, 2);
        assert!(b.table.strata.len() <= 64);
        b.table.check().unwrap();
    }
}
