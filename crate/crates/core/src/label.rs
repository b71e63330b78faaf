//! Binary labels coded as +1 / -1.

use core::fmt;
use core::ops::{Mul, Neg};

/// Treatment, instrument or decision label in {+1, -1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Pos, Label::Neg];

    /// `sign(x)` with the tie-break `sign(0) = +1`.
    #[inline]
    pub fn sign_of(x: f64) -> Label {
        if x < 0.0 {
            Label::Neg
        } else {
            Label::Pos
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    /// `(1 + label) / 2`, the {0, 1} coding.
    #[inline]
    pub fn indicator(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => 0.0,
        }
    }

    /// Accepts exactly +1 or -1.
    pub fn from_pm1(x: f64) -> Option<Label> {
        if x == 1.0 {
            Some(Label::Pos)
        } else if x == -1.0 {
            Some(Label::Neg)
        } else {
            None
        }
    }

    /// Accepts 1 or 0 (0 is recoded to -1).
    pub fn from_01(x: f64) -> Option<Label> {
        if x == 1.0 {
            Some(Label::Pos)
        } else if x == 0.0 {
            Some(Label::Neg)
        } else {
            None
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Label::Neg => 0,
            Label::Pos => 1,
        }
    }
}

impl Neg for Label {
    type Output = Label;
    fn neg(self) -> Label {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }
}

impl Mul for Label {
    type Output = Label;
    fn mul(self, rhs: Label) -> Label {
        if self == rhs {
            Label::Pos
        } else {
            Label::Neg
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Pos => f.write_str("1"),
            Label::Neg => f.write_str("-1"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_tie_breaks_to_plus() {
        assert_eq!(Label::sign_of(0.0), Label::Pos);
        assert_eq!(Label::sign_of(-0.0), Label::Pos);
        assert_eq!(Label::sign_of(-1e-300), Label::Neg);
    }

    #[test]
    fn product_matches_arithmetic() {
        for a in Label::ALL {
            for b in Label::ALL {
                assert_eq!((a * b).value(), a.value() * b.value());
            }
        }
    }
}
