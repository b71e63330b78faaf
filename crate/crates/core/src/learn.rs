//! Regularized weighted hinge-loss policy learning.
//!
//! For flipped (nonnegative) weights `W_i` and labels `y_i` the learner
//! minimizes `(1/n) sum_i W_i hinge(y_i g(L_i)) + (lambda/2) ||g||^2` over
//! affine or Gaussian-kernel `g` with an unpenalized intercept. The solver
//! works on the dual
//!
//! `min 1/2 a^T Q a - sum a   s.t.  0 <= a_i <= W_i / (n lambda),  sum y_i a_i = 0`
//!
//! by two-coordinate (SMO) steps with second-order working-set selection,
//! and certifies every returned rule by its duality gap.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, DecisionRule, KernelRule, Standardizer};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::label::Label;
use crate::math::{dot, exp, sq_dist, sqrt};
use crate::nuisance::NuisanceModel;
use crate::rng::{stream, streams};
use crate::weights::{compute_weights, flip_transform, WeightScheme, WeightVector};

/// Above this many active rows kernel rows are computed on demand.
pub const DENSE_GRAM_LIMIT: usize = 4096;
const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Linear,
    Gaussian,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Gaussian => "gaussian",
        }
    }
}

impl core::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(KernelKind::Linear),
            "gaussian" | "rbf" => Ok(KernelKind::Gaussian),
            _ => Err(Error::InvalidParameter(alloc::format!("unknown kernel `{s}`; valid kernels: linear, gaussian"))),
        }
    }
}

/// How the Gaussian bandwidth grid is specified.
#[derive(Clone, Debug, PartialEq)]
pub enum BandwidthGrid {
    /// Multiples of the median pairwise covariate distance.
    MedianMultiples(Vec<f64>),
    Absolute(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnConfig {
    pub kernel: KernelKind,
    pub lambda_grid: Vec<f64>,
    pub bandwidth_grid: BandwidthGrid,
    pub folds: usize,
    /// Duality-gap bound in objective units; `None` means `1e-6 * mean |W|`.
    pub solver_tol: Option<f64>,
    /// One pass is `n` two-coordinate updates.
    pub max_passes: usize,
    pub seed: u64,
    /// Center and scale covariates by training moments before fitting.
    pub standardize: bool,
}

pub fn default_lambda_grid() -> Vec<f64> {
    (-10..=4).map(|k| libm::pow(2.0, k as f64)).collect()
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            kernel: KernelKind::Linear,
            lambda_grid: default_lambda_grid(),
            bandwidth_grid: BandwidthGrid::MedianMultiples(vec![0.25, 0.5, 1.0, 2.0, 4.0]),
            folds: 5,
            solver_tol: None,
            max_passes: 100_000,
            seed: 0,
            standardize: false,
        }
    }
}

impl LearnConfig {
    pub fn with_kernel(mut self, kernel: KernelKind) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn check(&self) -> Result<()> {
        let bad = |v: &[f64]| v.is_empty() || v.iter().any(|x| !(*x > 0.0) || !x.is_finite());
        if bad(&self.lambda_grid) {
            return Err(Error::InvalidParameter("lambda grid must be nonempty and positive".into()));
        }
        let bw = match &self.bandwidth_grid {
            BandwidthGrid::MedianMultiples(v) | BandwidthGrid::Absolute(v) => v,
        };
        if self.kernel == KernelKind::Gaussian && bad(bw) {
            return Err(Error::InvalidParameter("bandwidth grid must be nonempty and positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidParameter("at least 2 folds".into()));
        }
        if self.solver_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::InvalidParameter("solver tolerance must be positive".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidParameter("max_passes must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// Primal objective in the units of the regularized problem.
    pub objective: f64,
    /// Primal minus dual objective, same units.
    pub duality_gap: f64,
    pub tolerance: f64,
    pub passes: usize,
    pub iterations: usize,
    pub support_count: usize,
    /// All weights were zero and `g = 0` was returned.
    pub degenerate: bool,
    /// Best primal value so far at each checkpoint (non-increasing).
    pub primal_history: Vec<f64>,
    /// Dual value at each checkpoint (non-decreasing).
    pub dual_history: Vec<f64>,
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidParameter("bandwidth must be positive".into()));
    }
    Ok(exp(-sq_dist(x, y) / (2.0 * bandwidth * bandwidth)))
}

#[inline]
fn kernel_value(kind: KernelKind, sigma: f64, x: &[f64], y: &[f64]) -> f64 {
    match kind {
        KernelKind::Linear => dot(x, y),
        KernelKind::Gaussian => exp(-sq_dist(x, y) / (2.0 * sigma * sigma)),
    }
}

/// Median Euclidean distance over pairs of (at most the first 2000) points.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let m = points.len().min(2000);
    let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            d.push(sqrt(sq_dist(&points[i], &points[j])));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, v, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *v > 0.0 {
        *v
    } else {
        1.0
    }
}

/// Kernel rows over a set of active points.
enum Gram<'a> {
    Dense { k: Vec<f64>, n: usize },
    Lazy { x: Vec<&'a [f64]>, kind: KernelKind, sigma: f64 },
}

impl Gram<'_> {
    fn row<'s>(&'s self, i: usize, buf: &'s mut [f64]) -> &'s [f64] {
        match self {
            Gram::Dense { k, n } => &k[i * n..(i + 1) * n],
            Gram::Lazy { x, kind, sigma } => {
                for (t, b) in buf.iter_mut().enumerate() {
                    *b = kernel_value(*kind, *sigma, x[i], x[t]);
                }
                buf
            }
        }
    }

    fn diag(&self, i: usize) -> f64 {
        match self {
            Gram::Dense { k, n } => k[i * n + i],
            Gram::Lazy { x, kind, sigma } => kernel_value(*kind, *sigma, x[i], x[i]),
        }
    }
}

/// Dual problem over the active rows.
struct Dual<'a> {
    y: Vec<f64>,
    c: Vec<f64>,
    gram: Gram<'a>,
}

struct DualSolution {
    alpha: Vec<f64>,
    intercept: f64,
    primal: f64,
    dual: f64,
    iterations: usize,
    primal_history: Vec<f64>,
    dual_history: Vec<f64>,
    converged: bool,
}

fn hinge_sum(u: &[f64], y: &[f64], c: &[f64], b: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..u.len() {
        let m = 1.0 - y[k] * (u[k] + b);
        if m > 0.0 {
            s += c[k] * m;
        }
    }
    s
}

/// Exact minimizer of `b -> sum_k c_k hinge(y_k (u_k + b))`, preferring `hint`
/// when it lies in the minimizing set.
fn best_intercept(u: &[f64], y: &[f64], c: &[f64], hint: Option<f64>) -> f64 {
    let n = u.len();
    if n == 0 {
        return hint.unwrap_or(0.0);
    }
    let mut bp: Vec<(f64, f64)> = (0..n).map(|k| (y[k] - u[k], c[k])).collect();
    bp.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = c.iter().sum();
    let eps = 1e-12 * total;
    let mut slope: f64 = -(0..n).filter(|&k| y[k] > 0.0).map(|k| c[k]).sum::<f64>();
    // Minimizing set [lo, hi], possibly unbounded.
    let (lo, hi) = if slope >= -eps {
        (f64::NEG_INFINITY, bp[0].0)
    } else {
        let mut found = (bp[n - 1].0, f64::INFINITY);
        for k in 0..n {
            slope += bp[k].1;
            if slope > eps {
                found = (bp[k].0, bp[k].0);
                break;
            }
            if slope >= -eps {
                found = (bp[k].0, if k + 1 < n { bp[k + 1].0 } else { f64::INFINITY });
                break;
            }
        }
        found
    };
    if let Some(h) = hint {
        if h.is_finite() && h >= lo && h <= hi {
            return h;
        }
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

impl Dual<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }

    /// Exact `G = Q a - e`.
    fn full_gradient(&self, alpha: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut g = vec![-1.0; n];
        let mut buf = vec![0.0; n];
        for i in 0..n {
            if alpha[i] > 0.0 {
                let row = self.gram.row(i, &mut buf);
                let s = alpha[i] * self.y[i];
                for k in 0..n {
                    g[k] += s * self.y[k] * row[k];
                }
            }
        }
        g
    }

    /// Primal and dual values, and the intercept achieving the primal, at `alpha`.
    fn objectives(&self, alpha: &[f64], g: &[f64]) -> (f64, f64, f64) {
        let n = self.n();
        let u: Vec<f64> = (0..n).map(|k| self.y[k] * (g[k] + 1.0)).collect();
        let quad: f64 = (0..n).map(|k| alpha[k] * (g[k] + 1.0)).sum();
        let lin: f64 = alpha.iter().sum();
        let mut free_sum = 0.0;
        let mut free_n = 0usize;
        for k in 0..n {
            if alpha[k] > 0.0 && alpha[k] < self.c[k] {
                free_sum += -self.y[k] * g[k];
                free_n += 1;
            }
        }
        let hint = (free_n > 0).then(|| free_sum / free_n as f64);
        let b = best_intercept(&u, &self.y, &self.c, hint);
        let primal = hinge_sum(&u, &self.y, &self.c, b) + 0.5 * quad;
        let dual = lin - 0.5 * quad;
        (primal, dual, b)
    }

    /// Second-order working-set selection. `None` once the maximal violating
    /// pair is within `eps`.
    fn select(&self, alpha: &[f64], g: &[f64], eps: f64, buf: &mut [f64]) -> Option<(usize, usize)> {
        let n = self.n();
        let mut gmax = f64::NEG_INFINITY;
        let mut imax = usize::MAX;
        for t in 0..n {
            if self.y[t] > 0.0 {
                if alpha[t] < self.c[t] && -g[t] >= gmax {
                    gmax = -g[t];
                    imax = t;
                }
            } else if alpha[t] > 0.0 && g[t] >= gmax {
                gmax = g[t];
                imax = t;
            }
        }
        if imax == usize::MAX {
            return None;
        }
        let i = imax;
        let qi = self.gram.row(i, buf);
        let kii = self.gram.diag(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut jmin = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            if self.y[t] > 0.0 {
                if alpha[t] > 0.0 {
                    let diff = gmax + g[t];
                    if g[t] >= gmax2 {
                        gmax2 = g[t];
                    }
                    if diff > 0.0 {
                        let quad = kii + self.gram_diag_cached(t) - 2.0 * self.y[i] * qi[t];
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= obj_min {
                            jmin = t;
                            obj_min = obj;
                        }
                    }
                }
            } else if alpha[t] < self.c[t] {
                let diff = gmax - g[t];
                if -g[t] >= gmax2 {
                    gmax2 = -g[t];
                }
                if diff > 0.0 {
                    let quad = kii + self.gram_diag_cached(t) + 2.0 * self.y[i] * qi[t];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        jmin = t;
                        obj_min = obj;
                    }
                }
            }
        }
        if gmax + gmax2 < eps || jmin == usize::MAX {
            None
        } else {
            Some((i, jmin))
        }
    }

    #[inline]
    fn gram_diag_cached(&self, t: usize) -> f64 {
        self.gram.diag(t)
    }

    /// Two-coordinate update on `(i, j)`; returns the changes in `alpha_i`, `alpha_j`.
    fn update(&self, alpha: &mut [f64], g: &[f64], i: usize, j: usize, kij: f64) -> (f64, f64) {
        let (ci, cj) = (self.c[i], self.c[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kii = self.gram.diag(i);
        let kjj = self.gram.diag(j);
        if self.y[i] != self.y[j] {
            let quad = kii + kjj - 2.0 * kij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = kii + kjj - 2.0 * kij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        (alpha[i] - old_i, alpha[j] - old_j)
    }

    /// Runs SMO, tightening the violation threshold until the duality gap
    /// (scaled by `scale`) is at most `tol` or the iteration budget is spent.
    fn solve(&self, tol: f64, scale: f64, max_iter: usize, warm: Option<Vec<f64>>) -> DualSolution {
        let n = self.n();
        let mut alpha = match warm {
            Some(a) if a.len() == n => a.iter().zip(&self.c).map(|(a, c)| a.clamp(0.0, *c)).collect(),
            _ => vec![0.0; n],
        };
        let mut g = if alpha.iter().any(|a| *a > 0.0) { self.full_gradient(&alpha) } else { vec![-1.0; n] };
        let mut buf_i = vec![0.0; n];
        let mut buf_j = vec![0.0; n];
        let mut primal_history = Vec::new();
        let mut dual_history = Vec::new();
        let mut best_primal = f64::INFINITY;
        let mut record = |p: f64, d: f64, ph: &mut Vec<f64>, dh: &mut Vec<f64>| {
            if p < best_primal {
                best_primal = p;
            }
            ph.push(best_primal);
            dh.push(d);
        };
        let checkpoint = n.max(1);
        let mut eps = 1e-3;
        let mut iterations = 0usize;
        loop {
            while iterations < max_iter {
                let Some((i, j)) = self.select(&alpha, &g, eps, &mut buf_i) else { break };
                let kij = self.gram.row(i, &mut buf_i)[j];
                let (di, dj) = self.update(&mut alpha, &g, i, j, kij);
                iterations += 1;
                if di != 0.0 || dj != 0.0 {
                    let ri = self.gram.row(i, &mut buf_i);
                    let rj = self.gram.row(j, &mut buf_j);
                    let (si, sj) = (di * self.y[i], dj * self.y[j]);
                    for k in 0..n {
                        g[k] += self.y[k] * (si * ri[k] + sj * rj[k]);
                    }
                }
                if iterations.is_multiple_of(checkpoint) {
                    let (p, d, _) = self.objectives(&alpha, &g);
                    record(p, d, &mut primal_history, &mut dual_history);
                }
            }
            g = self.full_gradient(&alpha);
            let (p, d, b) = self.objectives(&alpha, &g);
            record(p, d, &mut primal_history, &mut dual_history);
            let gap = scale * (p - d);
            if gap <= tol || iterations >= max_iter || eps < 1e-15 {
                return DualSolution {
                    alpha,
                    intercept: b,
                    primal: p,
                    dual: d,
                    iterations,
                    primal_history,
                    dual_history,
                    converged: gap <= tol,
                };
            }
            eps *= 0.1;
        }
    }
}

/// Flipped weights and the covariates a solve runs on.
struct TrainContext<'a> {
    x: Vec<Vec<f64>>,
    scaling: Option<Standardizer>,
    y: Vec<f64>,
    /// Flipped weight times case weight.
    w: Vec<f64>,
    /// Case weights, giving the sample size of a row subset.
    c: Vec<f64>,
    cfg: &'a LearnConfig,
}

impl<'a> TrainContext<'a> {
    fn new(ds: &Dataset, wv: &WeightVector, cfg: &'a LearnConfig) -> Result<Self> {
        if wv.len() != ds.len() {
            return Err(Error::InvalidParameter("weights must align with dataset rows".into()));
        }
        if !wv.is_nonnegative() {
            return Err(Error::InvalidParameter("hinge fitting needs flipped (nonnegative) weights".into()));
        }
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scaling = cfg.standardize.then(|| Standardizer::fit(ds));
        let x = ds
            .rows()
            .iter()
            .map(|r| match &scaling {
                Some(s) => s.apply(&r.l),
                None => r.l.clone(),
            })
            .collect();
        let c: Vec<f64> = (0..ds.len()).map(|i| ds.case_weight(i)).collect();
        Ok(TrainContext {
            x,
            scaling,
            y: wv.anchors.iter().map(|a| a.value()).collect(),
            w: wv.weights.iter().zip(&c).map(|(w, c)| w * c).collect(),
            c,
            cfg,
        })
    }

    fn full_gram(&self, sigma: f64) -> Option<Vec<f64>> {
        let n = self.x.len();
        if n > DENSE_GRAM_LIMIT {
            return None;
        }
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel_value(self.cfg.kernel, sigma, &self.x[i], &self.x[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Some(k)
    }

    /// Fits on the rows `rows`; `full` is the Gram over all rows if available.
    fn fit(
        &self,
        rows: &[usize],
        lambda: f64,
        sigma: f64,
        full: Option<&[f64]>,
        warm: Option<&[f64]>,
    ) -> (Result<(DecisionRule, SolveReport)>, Vec<f64>) {
        let p = self.x[0].len();
        let n_eff: f64 = rows.iter().map(|&i| self.c[i]).sum();
        let mean_w = rows.iter().map(|&i| self.w[i]).sum::<f64>() / n_eff;
        let tol = self.cfg.solver_tol.unwrap_or(1e-6 * mean_w);
        let active: Vec<usize> = rows.iter().copied().filter(|&i| self.w[i] > 0.0).collect();
        if active.is_empty() || !(n_eff > 0.0) {
            let report = SolveReport {
                objective: 0.0,
                duality_gap: 0.0,
                tolerance: tol,
                passes: 0,
                iterations: 0,
                support_count: 0,
                degenerate: true,
                primal_history: Vec::new(),
                dual_history: Vec::new(),
            };
            return (Ok((DecisionRule::constant(0.0, p), report)), Vec::new());
        }
        let m = active.len();
        let full_n = self.x.len();
        let gram = match full {
            Some(k) if m <= DENSE_GRAM_LIMIT => {
                let mut sub = vec![0.0; m * m];
                for (a, &i) in active.iter().enumerate() {
                    let src = &k[i * full_n..(i + 1) * full_n];
                    for (b, &j) in active.iter().enumerate() {
                        sub[a * m + b] = src[j];
                    }
                }
                Gram::Dense { k: sub, n: m }
            }
            _ if m <= DENSE_GRAM_LIMIT => {
                let mut sub = vec![0.0; m * m];
                for a in 0..m {
                    for b in a..m {
                        let v = kernel_value(self.cfg.kernel, sigma, &self.x[active[a]], &self.x[active[b]]);
                        sub[a * m + b] = v;
                        sub[b * m + a] = v;
                    }
                }
                Gram::Dense { k: sub, n: m }
            }
            _ => Gram::Lazy { x: active.iter().map(|&i| self.x[i].as_slice()).collect(), kind: self.cfg.kernel, sigma },
        };
        let dual = Dual {
            y: active.iter().map(|&i| self.y[i]).collect(),
            c: active.iter().map(|&i| self.w[i] / (n_eff * lambda)).collect(),
            gram,
        };
        let warm_alpha = warm.map(|w| w.to_vec());
        let max_iter = self.cfg.max_passes.saturating_mul(m);
        let sol = dual.solve(tol, lambda, max_iter, warm_alpha);
        let rule = self.build_rule(&active, &dual.y, &sol, sigma);
        let report = SolveReport {
            objective: lambda * sol.primal,
            duality_gap: lambda * (sol.primal - sol.dual),
            tolerance: tol,
            passes: sol.iterations.div_ceil(m),
            iterations: sol.iterations,
            support_count: sol.alpha.iter().filter(|a| **a > 0.0).count(),
            degenerate: false,
            primal_history: sol.primal_history.iter().map(|v| lambda * v).collect(),
            dual_history: sol.dual_history.iter().map(|v| lambda * v).collect(),
        };
        let result = if sol.converged {
            Ok((rule, report))
        } else {
            Err(Error::NonConvergence {
                passes: report.passes,
                gap: report.duality_gap,
                tol,
                best: alloc::boxed::Box::new((rule, report)),
            })
        };
        (result, sol.alpha)
    }

    fn build_rule(&self, active: &[usize], y: &[f64], sol: &DualSolution, sigma: f64) -> DecisionRule {
        let p = self.x[0].len();
        match self.cfg.kernel {
            KernelKind::Linear => {
                let mut beta = vec![0.0; p];
                for (a, &i) in active.iter().enumerate() {
                    if sol.alpha[a] > 0.0 {
                        let s = sol.alpha[a] * y[a];
                        for (bj, xj) in beta.iter_mut().zip(&self.x[i]) {
                            *bj += s * xj;
                        }
                    }
                }
                let mut intercept = sol.intercept;
                if let Some(s) = &self.scaling {
                    for j in 0..p {
                        beta[j] /= s.scales[j];
                        intercept -= beta[j] * s.means[j];
                    }
                }
                DecisionRule::affine(intercept, beta)
            }
            KernelKind::Gaussian => {
                let mut support = Vec::new();
                let mut coef = Vec::new();
                for (a, &i) in active.iter().enumerate() {
                    if sol.alpha[a] > 0.0 {
                        support.push(self.x[i].clone());
                        coef.push(sol.alpha[a] * y[a]);
                    }
                }
                if support.is_empty() {
                    return DecisionRule::constant(sol.intercept, p);
                }
                DecisionRule::Kernel(KernelRule {
                    support,
                    dual_coefficients: coef,
                    intercept: sol.intercept,
                    bandwidth: sigma,
                    scaling: self.scaling.clone(),
                })
            }
        }
    }

    fn decisions(&self, rule: &DecisionRule, rows: &[usize]) -> Vec<Label> {
        // Covariates in `x` may be standardized; rules take raw covariates,
        // so undo the scaling for evaluation.
        rows.iter()
            .map(|&i| {
                let raw = match &self.scaling {
                    Some(s) => self.x[i].iter().zip(s.means.iter().zip(&s.scales)).map(|(v, (m, sc))| v * sc + m).collect(),
                    None => self.x[i].clone(),
                };
                Label::sign_of(rule.decision_value_unchecked(&raw))
            })
            .collect()
    }
}

fn resolve_sigma(cfg: &LearnConfig, bandwidth: Option<f64>) -> Result<f64> {
    match cfg.kernel {
        KernelKind::Linear => Ok(0.0),
        KernelKind::Gaussian => match bandwidth {
            Some(s) if s > 0.0 && s.is_finite() => Ok(s),
            _ => Err(Error::InvalidParameter("gaussian kernel needs a positive bandwidth".into())),
        },
    }
}

/// Solves the regularized weighted hinge problem at one tuning point.
///
/// `wv` must already be flipped. Rows with zero weight are skipped by the
/// solver but still count toward `n`. Case weights on `ds` multiply the
/// weights and define `n` as their total.
pub fn fit_weighted_hinge(
    ds: &Dataset,
    wv: &WeightVector,
    cfg: &LearnConfig,
    lambda: f64,
    bandwidth: Option<f64>,
) -> Result<(DecisionRule, SolveReport)> {
    cfg.check()?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    let sigma = resolve_sigma(cfg, bandwidth)?;
    let ctx = TrainContext::new(ds, wv, cfg)?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    ctx.fit(&rows, lambda, sigma, None, None).0
}

/// Deterministic fold index per row.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, streams::FOLDS));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvPoint {
    pub lambda: f64,
    pub bandwidth: Option<f64>,
    /// Mean held-out weighted agreement over folds.
    pub score: f64,
    pub fold_scores: Vec<f64>,
    /// Folds whose solve hit the pass limit; their best iterate was scored.
    pub unconverged: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub lambda: f64,
    pub bandwidth: Option<f64>,
    pub table: Vec<CvPoint>,
}

fn bandwidths(cfg: &LearnConfig, ctx: &TrainContext<'_>) -> Vec<Option<f64>> {
    match (&cfg.kernel, &cfg.bandwidth_grid) {
        (KernelKind::Linear, _) => vec![None],
        (KernelKind::Gaussian, BandwidthGrid::Absolute(v)) => v.iter().map(|s| Some(*s)).collect(),
        (KernelKind::Gaussian, BandwidthGrid::MedianMultiples(v)) => {
            let med = median_pairwise_distance(&ctx.x);
            v.iter().map(|m| Some(m * med)).collect()
        }
    }
}

/// Held-out weighted agreement: `sum w I{anchor = D} / sum |w|`, zero for a weightless fold.
fn fold_score(ctx: &TrainContext<'_>, rule: &DecisionRule, rows: &[usize]) -> f64 {
    let d = ctx.decisions(rule, rows);
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &i) in rows.iter().enumerate() {
        den += ctx.w[i];
        if d[k].value() == ctx.y[i] {
            num += ctx.w[i];
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn run_cv<E: Executor>(ctx: &TrainContext<'_>, cfg: &LearnConfig, exec: &E) -> Result<(CvResult, Vec<Option<Vec<f64>>>)> {
    let n = ctx.x.len();
    let fold = fold_assignment(n, cfg.folds, cfg.seed);
    let mut members = vec![Vec::new(); cfg.folds];
    for (i, &f) in fold.iter().enumerate() {
        members[f].push(i);
    }
    if let Some(f) = members.iter().position(Vec::is_empty) {
        return Err(Error::EmptyFold { fold: f });
    }
    let sigmas = bandwidths(cfg, ctx);
    let grams: Vec<Option<Vec<f64>>> = sigmas.iter().map(|s| ctx.full_gram(s.unwrap_or(0.0))).collect();
    // Largest lambda first so each solve warm-starts from a smaller box.
    let mut order: Vec<usize> = (0..cfg.lambda_grid.len()).collect();
    order.sort_by(|&a, &b| cfg.lambda_grid[b].total_cmp(&cfg.lambda_grid[a]));
    let tasks = sigmas.len() * cfg.folds;
    let results: Vec<Result<Vec<(f64, bool)>>> = exec.map(tasks, |t| {
        let (s, f) = (t / cfg.folds, t % cfg.folds);
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let sigma = sigmas[s].unwrap_or(0.0);
        let mut out = vec![(0.0, false); cfg.lambda_grid.len()];
        let mut warm: Option<(Vec<f64>, f64)> = None;
        for &li in &order {
            let lambda = cfg.lambda_grid[li];
            let scaled = warm.as_ref().map(|(a, prev)| a.iter().map(|v| v * prev / lambda).collect::<Vec<_>>());
            let (res, alpha) = ctx.fit(&train, lambda, sigma, grams[s].as_deref(), scaled.as_deref());
            let (rule, ok) = match res {
                Ok((rule, _)) => (rule, true),
                Err(Error::NonConvergence { best, .. }) => (best.0, false),
                Err(e) => return Err(e),
            };
            out[li] = (fold_score(ctx, &rule, &members[f]), ok);
            warm = (!alpha.is_empty()).then_some((alpha, lambda));
        }
        Ok(out)
    });
    let mut per_task = Vec::with_capacity(tasks);
    for r in results {
        per_task.push(r?);
    }
    let mut table = Vec::new();
    for (s, sigma) in sigmas.iter().enumerate() {
        for (li, &lambda) in cfg.lambda_grid.iter().enumerate() {
            let fold_scores: Vec<f64> = (0..cfg.folds).map(|f| per_task[s * cfg.folds + f][li].0).collect();
            let unconverged = (0..cfg.folds).filter(|&f| !per_task[s * cfg.folds + f][li].1).count();
            let score = fold_scores.iter().sum::<f64>() / cfg.folds as f64;
            table.push(CvPoint { lambda, bandwidth: *sigma, score, fold_scores, unconverged });
        }
    }
    let best = table
        .iter()
        .reduce(|best, cand| {
            let better = cand.score > best.score
                || (cand.score == best.score
                    && (cand.lambda > best.lambda
                        || (cand.lambda == best.lambda && cand.bandwidth.unwrap_or(0.0) > best.bandwidth.unwrap_or(0.0))));
            if better {
                cand
            } else {
                best
            }
        })
        .expect("grid is nonempty");
    let (lambda, bandwidth) = (best.lambda, best.bandwidth);
    let sel = sigmas.iter().position(|s| *s == bandwidth).unwrap_or(0);
    let mut grams = grams;
    let chosen = core::mem::take(&mut grams[sel]);
    Ok((CvResult { lambda, bandwidth, table }, vec![chosen]))
}

/// Grid search by `folds`-fold cross-validation on the held-out weighted agreement.
///
/// `wv` must be flipped. Ties go to the larger `lambda`, then the larger bandwidth.
pub fn cross_validate<E: Executor>(ds: &Dataset, wv: &WeightVector, cfg: &LearnConfig, exec: &E) -> Result<CvResult> {
    cfg.check()?;
    let ctx = TrainContext::new(ds, wv, cfg)?;
    Ok(run_cv(&ctx, cfg, exec)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedPolicy {
    pub rule: DecisionRule,
    pub report: SolveReport,
    pub cv: CvResult,
}

/// Cross-validates on flipped weights, then refits on all rows at the selected point.
pub fn learn_from_weights<E: Executor>(ds: &Dataset, flipped: &WeightVector, cfg: &LearnConfig, exec: &E) -> Result<LearnedPolicy> {
    cfg.check()?;
    let ctx = TrainContext::new(ds, flipped, cfg)?;
    let (cv, grams) = run_cv(&ctx, cfg, exec)?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let sigma = cv.bandwidth.unwrap_or(0.0);
    let (rule, report) = ctx.fit(&rows, cv.lambda, sigma, grams[0].as_deref(), None).0?;
    Ok(LearnedPolicy { rule, report, cv })
}

/// Weights, flip, cross-validation and the final fit in one call.
pub fn learn_policy<N: NuisanceModel + ?Sized, E: Executor>(
    ds: &Dataset,
    nm: &N,
    scheme: WeightScheme,
    cfg: &LearnConfig,
    exec: &E,
) -> Result<LearnedPolicy> {
    let wv = compute_weights(ds, nm, scheme)?;
    learn_from_weights(ds, &flip_transform(&wv), cfg, exec)
}
