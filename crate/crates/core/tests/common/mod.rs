//! Enumerated discrete populations and independent oracles shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use ivregime_core::evaluation::EifModel;
use ivregime_core::nuisance::{MrModel, NuisanceModel};
use ivregime_core::rng::{stream, StreamRng};
use ivregime_core::{Dataset, DecisionRule, Label, Observation};
use rand::Rng;

/// A latent class within one covariate stratum.
#[derive(Clone, Debug)]
pub struct Class {
    /// `Pr(class | l)`.
    pub prob: f64,
    /// `Pr(A = 1 | Z = z, class, l)`, indexed by `Label::index()` of `z`.
    pub treat: [f64; 2],
    /// Potential outcome `Y_a` of the class, indexed by `Label::index()` of `a`.
    pub y: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct Stratum {
    pub weight: f64,
    pub point: Vec<f64>,
    /// `Pr(Z = 1 | l)`.
    pub fz: f64,
    pub classes: Vec<Class>,
}

#[derive(Clone, Debug)]
pub struct Population {
    pub strata: Vec<Stratum>,
}

/// Stratum `s` of `k` is the one-hot vector of length `k - 1` with stratum 0 at the origin,
/// so the affine basis `(1, L)` is saturated.
pub fn one_hot(k: usize, s: usize) -> Vec<f64> {
    let mut v = vec![0.0; k - 1];
    if s > 0 {
        v[s - 1] = 1.0;
    }
    v
}

pub fn rng(seed: u64) -> StreamRng {
    stream(seed, 99)
}

fn uniform(r: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

impl Population {
    /// Random confounded population with a compliance contrast that does not
    /// depend on the latent class, which identifies the CATE.
    pub fn random_identified(seed: u64, k: usize, classes: usize) -> Self {
        let mut r = rng(seed);
        let mut w: Vec<f64> = (0..k).map(|_| uniform(&mut r, 0.5, 1.5)).collect();
        normalize(&mut w);
        let strata = (0..k)
            .map(|s| {
                let delta = uniform(&mut r, 0.2, 0.6);
                let mut probs: Vec<f64> = (0..classes).map(|_| uniform(&mut r, 0.2, 1.0)).collect();
                normalize(&mut probs);
                let cls = probs
                    .iter()
                    .map(|&prob| {
                        let base = uniform(&mut r, 0.0, 1.0 - delta);
                        Class {
                            prob,
                            treat: [base, base + delta],
                            y: [uniform(&mut r, -2.0, 2.0), uniform(&mut r, -2.0, 2.0)],
                        }
                    })
                    .collect();
                Stratum { weight: w[s], point: one_hot(k, s), fz: uniform(&mut r, 0.25, 0.75), classes: cls }
            })
            .collect();
        Population { strata }
    }

    /// Random population with only never-takers, always-takers and compliers.
    pub fn random_monotone(seed: u64, k: usize, u_levels: usize) -> Self {
        let mut r = rng(seed);
        let mut w: Vec<f64> = (0..k).map(|_| uniform(&mut r, 0.5, 1.5)).collect();
        normalize(&mut w);
        let types = [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let strata = (0..k)
            .map(|s| {
                let mut cls = Vec::new();
                let mut pu: Vec<f64> = (0..u_levels).map(|_| uniform(&mut r, 0.3, 1.0)).collect();
                normalize(&mut pu);
                for &pu in &pu {
                    let mut pt: Vec<f64> = (0..3).map(|_| uniform(&mut r, 0.1, 1.0)).collect();
                    normalize(&mut pt);
                    for (t, treat) in types.iter().enumerate() {
                        cls.push(Class {
                            prob: pu * pt[t],
                            treat: *treat,
                            y: [uniform(&mut r, -2.0, 2.0), uniform(&mut r, -2.0, 2.0)],
                        });
                    }
                }
                Stratum { weight: w[s], point: one_hot(k, s), fz: uniform(&mut r, 0.25, 0.75), classes: cls }
            })
            .collect();
        Population { strata }
    }

    pub fn p(&self) -> usize {
        self.strata[0].point.len()
    }

    pub fn stratum_of(&self, l: &[f64]) -> &Stratum {
        self.strata.iter().find(|s| s.point == l).expect("point in support")
    }

    /// Case-weighted atoms `(y, a, z, l)` whose weights are the joint masses.
    pub fn dataset(&self) -> Dataset {
        let mut rows = Vec::new();
        let mut mass = Vec::new();
        for s in &self.strata {
            for c in &s.classes {
                for z in Label::ALL {
                    let fz = if z == Label::Pos { s.fz } else { 1.0 - s.fz };
                    for a in Label::ALL {
                        let pa = if a == Label::Pos { c.treat[z.index()] } else { 1.0 - c.treat[z.index()] };
                        let m = s.weight * fz * c.prob * pa;
                        if m > 0.0 {
                            rows.push(Observation::new(c.y[a.index()], a, z, s.point.clone()));
                            mass.push(m);
                        }
                    }
                }
            }
        }
        Dataset::new(rows).unwrap().with_case_weights(mass).unwrap()
    }

    /// `n` iid rows with `N(0, noise^2)` added to the outcome.
    pub fn sample(&self, n: usize, noise: f64, seed: u64) -> Dataset {
        use rand_distr::{Distribution, StandardNormal};
        let mut r = rng(seed);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pick = |probs: &mut dyn Iterator<Item = f64>| -> usize {
                let u: f64 = r.random();
                let mut acc = 0.0;
                let mut last = 0;
                for (i, p) in probs.enumerate() {
                    acc += p;
                    last = i;
                    if u < acc {
                        return i;
                    }
                }
                last
            };
            let s = &self.strata[pick(&mut self.strata.iter().map(|s| s.weight))];
            let c = &s.classes[pick(&mut s.classes.iter().map(|c| c.prob))];
            let z = if r.random::<f64>() < s.fz { Label::Pos } else { Label::Neg };
            let a = if r.random::<f64>() < c.treat[z.index()] { Label::Pos } else { Label::Neg };
            let eps: f64 = StandardNormal.sample(&mut r);
            rows.push(Observation::new(c.y[a.index()] + noise * eps, a, z, s.point.clone()));
        }
        Dataset::new(rows).unwrap()
    }

    pub fn treat_prob(&self, l: &[f64], z: Label) -> f64 {
        self.stratum_of(l).classes.iter().map(|c| c.prob * c.treat[z.index()]).sum()
    }

    pub fn delta(&self, l: &[f64]) -> f64 {
        self.treat_prob(l, Label::Pos) - self.treat_prob(l, Label::Neg)
    }

    pub fn potential_mean(&self, l: &[f64], a: Label) -> f64 {
        self.stratum_of(l).classes.iter().map(|c| c.prob * c.y[a.index()]).sum()
    }

    pub fn cate(&self, l: &[f64]) -> f64 {
        self.potential_mean(l, Label::Pos) - self.potential_mean(l, Label::Neg)
    }

    pub fn outcome_mean(&self, l: &[f64], z: Label) -> f64 {
        self.stratum_of(l)
            .classes
            .iter()
            .map(|c| {
                let p = c.treat[z.index()];
                c.prob * (p * c.y[1] + (1.0 - p) * c.y[0])
            })
            .sum()
    }

    /// `E[A Y I{A = D(l)} | Z = z, l]` with `A` in {-1,+1}.
    pub fn arm_mean(&self, l: &[f64], z: Label, d: Label) -> f64 {
        self.stratum_of(l)
            .classes
            .iter()
            .map(|c| {
                let p = c.treat[z.index()];
                match d {
                    Label::Pos => c.prob * p * c.y[1],
                    Label::Neg => -c.prob * (1.0 - p) * c.y[0],
                }
            })
            .sum()
    }

    pub fn value_of_actions(&self, actions: &[Label]) -> f64 {
        self.strata.iter().zip(actions).map(|(s, a)| s.weight * self.potential_mean(&s.point, *a)).sum()
    }

    pub fn value(&self, rule: &DecisionRule) -> f64 {
        let actions: Vec<Label> = self.strata.iter().map(|s| rule.decide(&s.point).unwrap()).collect();
        self.value_of_actions(&actions)
    }

    /// `E[Y_D | complier]` by summing over the complier classes directly.
    pub fn complier_value(&self, rule: &DecisionRule) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for s in &self.strata {
            let d = rule.decide(&s.point).unwrap();
            for c in &s.classes {
                if c.treat == [0.0, 1.0] {
                    num += s.weight * c.prob * c.y[d.index()];
                    den += s.weight * c.prob;
                }
            }
        }
        num / den
    }

    /// `E[Delta(L) D(L)]` for an action per stratum.
    pub fn cate_objective(&self, actions: &[Label]) -> f64 {
        self.strata.iter().zip(actions).map(|(s, a)| s.weight * self.cate(&s.point) * a.value()).sum()
    }
}

/// Every assignment of actions to `k` strata.
pub fn all_actions(k: usize) -> Vec<Vec<Label>> {
    (0..1usize << k)
        .map(|m| (0..k).map(|s| if m >> s & 1 == 1 { Label::Pos } else { Label::Neg }).collect())
        .collect()
}

/// A rule taking `actions[s]` at stratum `s` of a one-hot support.
pub fn rule_for_actions(actions: &[Label]) -> DecisionRule {
    let base = actions[0].value();
    let coefficients = actions[1..].iter().map(|a| a.value() - base).collect();
    DecisionRule::affine(base, coefficients)
}

type Component = Box<dyn Fn(&[f64]) -> f64>;

/// Nuisance components as plain functions; start from the truth and replace
/// any subset with a deliberately wrong version.
pub struct Components {
    pub instrument_prob: Component,
    pub treat_pos: Component,
    pub treat_neg: Component,
    pub compliance: Component,
    pub cate: Component,
    pub reference_outcome: Component,
    pub gamma: Component,
    pub gamma_prime: Component,
    pub arm_pos: Component,
    pub arm_neg: Component,
    pub delta_floor: f64,
}

impl Components {
    /// Exact components of `pop`; the regime-specific ones follow `rule`.
    pub fn truth(pop: &Population, rule: &DecisionRule) -> Self {
        let p = pop.clone();
        let f = move |g: fn(&Population, &[f64]) -> f64| -> Component {
            let p = p.clone();
            Box::new(move |l| g(&p, l))
        };
        let regime = |pop: &Population, rule: &DecisionRule, z: Label| -> Component {
            let (p, r) = (pop.clone(), rule.clone());
            Box::new(move |l| p.arm_mean(l, z, r.decide(l).unwrap()))
        };
        let (pg, rg) = (pop.clone(), rule.clone());
        Components {
            instrument_prob: f(|p, l| p.stratum_of(l).fz),
            treat_pos: f(|p, l| p.treat_prob(l, Label::Pos)),
            treat_neg: f(|p, l| p.treat_prob(l, Label::Neg)),
            compliance: f(|p, l| p.delta(l)),
            cate: f(|p, l| p.cate(l)),
            reference_outcome: f(|p, l| p.outcome_mean(l, Label::Neg)),
            gamma: Box::new(move |l| pg.potential_mean(l, rg.decide(l).unwrap())),
            gamma_prime: regime(pop, rule, Label::Neg),
            arm_pos: regime(pop, rule, Label::Pos),
            arm_neg: regime(pop, rule, Label::Neg),
            delta_floor: 1e-3,
        }
    }
}

/// A smooth but wrong function of the covariates, for misspecification.
pub fn wrong(scale: f64, offset: f64) -> Component {
    Box::new(move |l| offset + scale * l.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum::<f64>().sin())
}

impl NuisanceModel for Components {
    fn instrument_prob(&self, l: &[f64]) -> Option<f64> {
        Some((self.instrument_prob)(l))
    }
    fn treatment_prob(&self, l: &[f64], z: Label) -> Option<f64> {
        Some(if z == Label::Pos { (self.treat_pos)(l) } else { (self.treat_neg)(l) })
    }
    fn compliance(&self, l: &[f64]) -> Option<f64> {
        Some((self.compliance)(l))
    }
    fn cate(&self, l: &[f64]) -> Option<f64> {
        Some((self.cate)(l))
    }
    fn reference_outcome(&self, l: &[f64]) -> Option<f64> {
        Some((self.reference_outcome)(l))
    }
    fn reference_treatment(&self, l: &[f64]) -> Option<f64> {
        Some((self.treat_neg)(l))
    }
    fn delta_floor(&self) -> f64 {
        self.delta_floor
    }
    fn instrument_floor(&self) -> f64 {
        1e-3
    }
}

impl MrModel for Components {
    fn instrument_prob(&self, l: &[f64]) -> Option<f64> {
        Some((self.instrument_prob)(l))
    }
    fn reference_treatment(&self, l: &[f64]) -> Option<f64> {
        Some((self.treat_neg)(l))
    }
    fn compliance(&self, l: &[f64]) -> Option<f64> {
        Some((self.compliance)(l))
    }
    fn gamma(&self, l: &[f64]) -> Option<f64> {
        Some((self.gamma)(l))
    }
    fn gamma_prime(&self, l: &[f64]) -> Option<f64> {
        Some((self.gamma_prime)(l))
    }
    fn delta_floor(&self) -> f64 {
        self.delta_floor
    }
    fn instrument_floor(&self) -> f64 {
        1e-3
    }
}

impl EifModel for Components {
    fn instrument_prob(&self, l: &[f64]) -> Option<f64> {
        Some((self.instrument_prob)(l))
    }
    fn compliance(&self, l: &[f64]) -> Option<f64> {
        Some((self.compliance)(l))
    }
    fn treatment_prob(&self, l: &[f64], z: Label) -> Option<f64> {
        Some(if z == Label::Pos { (self.treat_pos)(l) } else { (self.treat_neg)(l) })
    }
    fn arm_mean(&self, l: &[f64], z: Label) -> Option<f64> {
        Some(if z == Label::Pos { (self.arm_pos)(l) } else { (self.arm_neg)(l) })
    }
    fn delta_floor(&self) -> f64 {
        self.delta_floor
    }
    fn instrument_floor(&self) -> f64 {
        1e-3
    }
}

pub fn weighted_mean(ds: &Dataset, terms: &[f64]) -> f64 {
    (0..terms.len()).map(|i| ds.case_weight(i) * terms[i]).sum::<f64>() / ds.total_weight()
}

// ---------------------------------------------------------------------------
// Binary-outcome response types and the linear-program oracle.

/// Response type `t`: bits are `(A_-1, A_1, Y_-1, Y_1)` from low to high, 1 meaning `+1`/success.
pub fn type_parts(t: usize) -> ([usize; 2], [usize; 2]) {
    ([t & 1, t >> 1 & 1], [t >> 2 & 1, t >> 3 & 1])
}

/// `p[y][a][z]` implied by response-type probabilities `q` with a valid instrument.
pub fn table_from_types(q: &[f64; 16]) -> [[[f64; 2]; 2]; 2] {
    let mut p = [[[0.0; 2]; 2]; 2];
    for (t, &qt) in q.iter().enumerate() {
        let (a, y) = type_parts(t);
        for z in 0..2 {
            let at = a[z];
            p[y[at]][at][z] += qt;
        }
    }
    p
}

pub fn random_types(r: &mut StreamRng, sparsity: f64) -> [f64; 16] {
    let mut q = [0.0; 16];
    for v in q.iter_mut() {
        if r.random::<f64>() >= sparsity {
            *v = -r.random::<f64>().max(1e-12).ln();
        }
    }
    if q.iter().all(|v| *v == 0.0) {
        q[r.random_range(0..16)] = 1.0;
    }
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
    q
}

#[derive(Clone, Copy, Debug)]
pub enum Target {
    Effect,
    Treated,
    Untreated,
}

fn target_coef(t: usize, target: Target) -> f64 {
    let (_, y) = type_parts(t);
    match target {
        Target::Effect => y[1] as f64 - y[0] as f64,
        Target::Treated => y[1] as f64,
        Target::Untreated => y[0] as f64,
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

/// Min and max of a linear target over response-type distributions matching
/// the table, by enumerating every basic feasible solution.
pub fn lp_bounds(p: &[[[f64; 2]; 2]; 2], target: Target) -> (f64, f64) {
    // One equality per (y, a, z); the totals per z are implied.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for z in 0..2 {
        for a in 0..2 {
            for y in 0..2 {
                let coef: Vec<f64> = (0..16)
                    .map(|t| {
                        let (at, yt) = type_parts(t);
                        (at[z] == a && yt[a] == y) as u8 as f64
                    })
                    .collect();
                rows.push((coef, p[y][a][z]));
            }
        }
    }
    // Keep an independent subset of rows.
    let mut basis: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut echelon: Vec<Vec<f64>> = Vec::new();
    for (coef, rhs) in rows {
        let mut v = coef.clone();
        for e in &echelon {
            let lead = e.iter().position(|x| x.abs() > 1e-12).unwrap();
            let f = v[lead] / e[lead];
            for k in 0..16 {
                v[k] -= f * e[k];
            }
        }
        if v.iter().any(|x| x.abs() > 1e-9) {
            echelon.push(v);
            basis.push((coef, rhs));
        }
    }
    let r = basis.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut cols = vec![0usize; r];
    fn next(cols: &mut [usize], n: usize) -> bool {
        let r = cols.len();
        let mut i = r;
        while i > 0 {
            i -= 1;
            if cols[i] < n - r + i {
                cols[i] += 1;
                for j in i + 1..r {
                    cols[j] = cols[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
    for (i, c) in cols.iter_mut().enumerate() {
        *c = i;
    }
    loop {
        let a: Vec<Vec<f64>> = basis.iter().map(|(coef, _)| cols.iter().map(|&c| coef[c]).collect()).collect();
        let b: Vec<f64> = basis.iter().map(|(_, rhs)| *rhs).collect();
        if let Some(x) = dense_solve(a, b) {
            if x.iter().all(|v| *v >= -1e-12) {
                let val: f64 = cols.iter().zip(&x).map(|(&c, v)| target_coef(c, target) * v).sum();
                lo = lo.min(val);
                hi = hi.max(val);
            }
        }
        if !next(&mut cols, 16) {
            break;
        }
    }
    (lo, hi)
}

/// Converts a `[y][a][z]` table indexed by 0/1 success into the library's label-indexed layout.
pub fn to_label_table(p: &[[[f64; 2]; 2]; 2]) -> [[[f64; 2]; 2]; 2] {
    // Label::Neg.index() == 0 and Label::Pos.index() == 1, matching 0/1 success coding.
    assert_eq!(Label::Neg.index(), 0);
    *p
}
