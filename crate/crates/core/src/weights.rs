//! Classification weights and anchor labels for every estimator family.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::nuisance::{compliance, instrument_density, need, NuisanceModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[allow(non_camel_case_types)]
pub enum WeightScheme {
    IV_IW_A,
    IV_IW_Z,
    IV_MR_A,
    IV_MR_Z,
    OWL,
    COMPLIER_A,
    COMPLIER_Z,
}

/// Which observed label a weight is attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anchor {
    Treatment,
    Instrument,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 7] = [
        WeightScheme::IV_IW_A,
        WeightScheme::IV_IW_Z,
        WeightScheme::IV_MR_A,
        WeightScheme::IV_MR_Z,
        WeightScheme::OWL,
        WeightScheme::COMPLIER_A,
        WeightScheme::COMPLIER_Z,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::IV_IW_A => "IV_IW_A",
            WeightScheme::IV_IW_Z => "IV_IW_Z",
            WeightScheme::IV_MR_A => "IV_MR_A",
            WeightScheme::IV_MR_Z => "IV_MR_Z",
            WeightScheme::OWL => "OWL",
            WeightScheme::COMPLIER_A => "COMPLIER_A",
            WeightScheme::COMPLIER_Z => "COMPLIER_Z",
        }
    }

    pub fn anchor(self) -> Anchor {
        match self {
            WeightScheme::IV_IW_A | WeightScheme::IV_MR_A | WeightScheme::OWL | WeightScheme::COMPLIER_A => {
                Anchor::Treatment
            }
            _ => Anchor::Instrument,
        }
    }

    /// Comma-separated list of every scheme name, for error messages.
    pub fn valid_names() -> alloc::string::String {
        let names: Vec<&str> = Self::ALL.iter().map(|s| s.name()).collect();
        names.join(", ")
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|w| w.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(alloc::format!("unknown scheme `{s}`; valid schemes: {}", Self::valid_names())))
    }
}

/// Rowwise weights with their anchor labels.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub scheme: WeightScheme,
    pub weights: Vec<f64>,
    pub anchors: Vec<Label>,
}

impl WeightVector {
    pub fn new(scheme: WeightScheme, weights: Vec<f64>, anchors: Vec<Label>) -> Result<Self> {
        if weights.len() != anchors.len() {
            return Err(Error::InvalidParameter("weights and anchors must align".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite".into()));
        }
        Ok(WeightVector { scheme, weights, anchors })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.weights.iter().all(|w| *w >= 0.0)
    }

    /// `sum_i w_i I{anchor_i != d_i}`.
    pub fn misclassification(&self, decisions: &[Label]) -> f64 {
        self.weights
            .iter()
            .zip(&self.anchors)
            .zip(decisions)
            .filter(|((_, a), d)| a != d)
            .map(|((w, _), _)| *w)
            .sum()
    }

    /// `sum_i c_i w_i I{anchor_i = d_i}` with optional case weights `c`.
    pub fn agreement(&self, decisions: &[Label], case_weights: Option<&[f64]>) -> f64 {
        let mut s = 0.0;
        for i in 0..self.len() {
            if self.anchors[i] == decisions[i] {
                s += case_weights.map_or(1.0, |c| c[i]) * self.weights[i];
            }
        }
        s
    }
}

/// Builds the weights of `scheme` for every row of `ds`.
///
/// `f(Z|L)` is the density at the observed instrument and `delta` is the
/// truncated compliance contrast. In the multiply robust bracket
/// `Y - A01 Delta - E[Y|Z=-1,L] + Delta Pr(A=1|Z=-1,L)` the treatment is coded 0/1,
/// which keeps the bracket mean zero when the working models are right.
pub fn compute_weights<N: NuisanceModel + ?Sized>(ds: &Dataset, nm: &N, scheme: WeightScheme) -> Result<WeightVector> {
    let n = ds.len();
    let mut weights = Vec::with_capacity(n);
    let mut anchors = Vec::with_capacity(n);
    for r in ds.rows() {
        let za = r.z.value() * r.a.value();
        let w = match scheme {
            WeightScheme::IV_IW_A => za * r.y / (compliance(nm, &r.l)? * instrument_density(nm, &r.l, r.z)?),
            WeightScheme::IV_IW_Z => r.y / (compliance(nm, &r.l)? * instrument_density(nm, &r.l, r.z)?),
            WeightScheme::IV_MR_A | WeightScheme::IV_MR_Z => {
                let d = compliance(nm, &r.l)?;
                let f = instrument_density(nm, &r.l, r.z)?;
                let cate = need(nm.cate(&r.l), "CATE Delta(L)")?;
                let m0 = need(nm.reference_outcome(&r.l), "reference outcome E[Y|Z=-1,L]")?;
                let p0 = need(nm.reference_treatment(&r.l), "reference treatment Pr(A=1|Z=-1,L)")?;
                let bracket = r.y - r.a.indicator() * cate - m0 + cate * p0;
                if scheme == WeightScheme::IV_MR_A {
                    za * bracket / (d * f) + r.a.value() * cate
                } else {
                    bracket / (d * f) + r.z.value() * cate
                }
            }
            WeightScheme::OWL => {
                let p = need(nm.treatment_prob(&r.l, r.z), "treatment probability f(A=1|L,Z)")?;
                let fa = if r.a == Label::Pos { p } else { 1.0 - p };
                r.y / fa
            }
            WeightScheme::COMPLIER_A => za * r.y / instrument_density(nm, &r.l, r.z)?,
            WeightScheme::COMPLIER_Z => r.y / instrument_density(nm, &r.l, r.z)?,
        };
        if !w.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!("{scheme} weight is not finite")));
        }
        weights.push(w);
        anchors.push(match scheme.anchor() {
            Anchor::Treatment => r.a,
            Anchor::Instrument => r.z,
        });
    }
    Ok(WeightVector { scheme, weights, anchors })
}

/// Rewrites each row as `(|w|, sign(w) * anchor)` with `sign(0) = +1`.
pub fn flip_transform(wv: &WeightVector) -> WeightVector {
    let (weights, anchors) = wv
        .weights
        .iter()
        .zip(&wv.anchors)
        .map(|(&w, &a)| (w.abs(), Label::sign_of(w) * a))
        .unzip();
    WeightVector { scheme: wv.scheme, weights, anchors }
}

/// `sum_i max(-w_i, 0)`: the offset between flipped and original 0-1 objectives.
pub fn flip_offset(wv: &WeightVector) -> f64 {
    wv.weights.iter().map(|w| (-w).max(0.0)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use alloc::vec;

    struct Toy {
        delta: f64,
        fz: f64,
        cate: f64,
        m0: f64,
        p0: f64,
    }

    impl NuisanceModel for Toy {
        fn instrument_prob(&self, _l: &[f64]) -> Option<f64> {
            Some(self.fz)
        }
        fn compliance(&self, _l: &[f64]) -> Option<f64> {
            Some(self.delta)
        }
        fn cate(&self, _l: &[f64]) -> Option<f64> {
            Some(self.cate)
        }
        fn reference_outcome(&self, _l: &[f64]) -> Option<f64> {
            Some(self.m0)
        }
        fn reference_treatment(&self, _l: &[f64]) -> Option<f64> {
            Some(self.p0)
        }
    }

    fn one(y: f64, a: Label, z: Label) -> Dataset {
        Dataset::new(vec![Observation::new(y, a, z, vec![0.0])]).unwrap()
    }

    const HALF: Toy = Toy { delta: 0.5, fz: 0.5, cate: 0.0, m0: 0.0, p0: 0.0 };

    #[test]
    fn iv_iw_examples() {
        let w = compute_weights(&one(2.0, Label::Pos, Label::Pos), &HALF, WeightScheme::IV_IW_A).unwrap();
        assert_eq!((w.weights[0], w.anchors[0]), (8.0, Label::Pos));
        let w = compute_weights(&one(2.0, Label::Neg, Label::Pos), &HALF, WeightScheme::IV_IW_A).unwrap();
        assert_eq!(w.weights[0], -8.0);
    }

    #[test]
    fn complier_z_example() {
        for z in Label::ALL {
            let w = compute_weights(&one(1.0, Label::Neg, z), &HALF, WeightScheme::COMPLIER_Z).unwrap();
            assert_eq!((w.weights[0], w.anchors[0]), (2.0, z));
        }
    }

    #[test]
    fn mr_reduces_to_iw_when_corrections_vanish() {
        for a in Label::ALL {
            for z in Label::ALL {
                let ds = one(1.7, a, z);
                let iw = compute_weights(&ds, &HALF, WeightScheme::IV_IW_A).unwrap();
                let mr = compute_weights(&ds, &HALF, WeightScheme::IV_MR_A).unwrap();
                assert_eq!(iw, WeightVector { scheme: WeightScheme::IV_IW_A, ..mr });
            }
        }
    }

    #[test]
    fn flip_examples() {
        let wv = WeightVector::new(WeightScheme::OWL, vec![-3.0, 2.0, 0.0], vec![Label::Pos, Label::Neg, Label::Neg]).unwrap();
        let f = flip_transform(&wv);
        assert_eq!(f.weights, vec![3.0, 2.0, 0.0]);
        assert_eq!(f.anchors, vec![Label::Neg, Label::Neg, Label::Neg]);
    }

    #[test]
    fn flip_offset_constant_over_three_row_regimes() {
        let wv = WeightVector::new(WeightScheme::OWL, vec![-1.5, 2.0, -0.25], vec![Label::Pos, Label::Neg, Label::Neg]).unwrap();
        let f = flip_transform(&wv);
        for mask in 0..8u32 {
            let d: Vec<Label> = (0..3).map(|i| if mask >> i & 1 == 1 { Label::Pos } else { Label::Neg }).collect();
            assert_eq!(f.misclassification(&d) - wv.misclassification(&d), 1.75);
        }
        assert_eq!(flip_offset(&wv), 1.75);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("iv_mr_a".parse::<WeightScheme>().unwrap(), WeightScheme::IV_MR_A);
        let err = "NOPE".parse::<WeightScheme>().unwrap_err();
        let msg = alloc::format!("{err}");
        for s in WeightScheme::ALL {
            assert!(msg.contains(s.name()));
        }
    }

    #[test]
    fn missing_cate_for_mr() {
        struct NoCate;
        impl NuisanceModel for NoCate {
            fn instrument_prob(&self, _l: &[f64]) -> Option<f64> {
                Some(0.5)
            }
            fn compliance(&self, _l: &[f64]) -> Option<f64> {
                Some(0.5)
            }
        }
        let r = compute_weights(&one(1.0, Label::Pos, Label::Pos), &NoCate, WeightScheme::IV_MR_Z);
        assert!(matches!(r, Err(Error::MissingComponent(name)) if name.contains("CATE")));
    }
}
