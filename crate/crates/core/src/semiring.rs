//! Semirings consumed by the semi-Markov chart.
//!
//! Every semiring is a zero-sized marker implementing [`Semiring`]. The chart
//! is written once against the trait; swapping the marker turns the same
//! recursion into a partition function, a Viterbi pass or an entropy pass.
//!
//! Potentials always arrive in log space, so [`Semiring::lift`] receives
//! `log phi`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{exp, ln, log_add_exp};

/// Runtime tag naming one of the four semirings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SemiringKind {
    SumProduct,
    Log,
    Max,
    Expectation,
}

pub trait Semiring {
    type Elem: Copy + core::fmt::Debug + PartialEq;

    const KIND: SemiringKind;

    fn zero() -> Self::Elem;
    fn one() -> Self::Elem;
    fn plus(a: Self::Elem, b: Self::Elem) -> Self::Elem;
    fn times(a: Self::Elem, b: Self::Elem) -> Self::Elem;

    /// Embeds a potential given as `log phi`.
    fn lift(log_phi: f64) -> Self::Elem;

    /// Records a decision index on a chart candidate. Only the max semiring
    /// keeps it.
    #[inline]
    fn tag(elem: Self::Elem, _decision: u32) -> Self::Elem {
        elem
    }
}

/// The `(+, x)` semiring over non-negative reals.
#[derive(Debug, Clone, Copy)]
pub struct SumProduct;

impl Semiring for SumProduct {
    type Elem = f64;
    const KIND: SemiringKind = SemiringKind::SumProduct;

    #[inline]
    fn zero() -> f64 {
        0.0
    }
    #[inline]
    fn one() -> f64 {
        1.0
    }
    #[inline]
    fn plus(a: f64, b: f64) -> f64 {
        a + b
    }
    #[inline]
    fn times(a: f64, b: f64) -> f64 {
        a * b
    }
    #[inline]
    fn lift(log_phi: f64) -> f64 {
        exp(log_phi)
    }
}

/// The `(logsumexp, +)` semiring.
#[derive(Debug, Clone, Copy)]
pub struct LogSemiring;

impl Semiring for LogSemiring {
    type Elem = f64;
    const KIND: SemiringKind = SemiringKind::Log;

    #[inline]
    fn zero() -> f64 {
        f64::NEG_INFINITY
    }
    #[inline]
    fn one() -> f64 {
        0.0
    }
    #[inline]
    fn plus(a: f64, b: f64) -> f64 {
        log_add_exp(a, b)
    }
    #[inline]
    fn times(a: f64, b: f64) -> f64 {
        if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            a + b
        }
    }
    #[inline]
    fn lift(log_phi: f64) -> f64 {
        log_phi
    }
}

/// A log-score with the decision that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub score: f64,
    pub decision: Option<u32>,
}

/// The `(max, +)` semiring with a single backpointer per value.
///
/// Ties under `plus` go to the smaller decision index, which keeps the
/// operation commutative and makes MAP decoding deterministic. `times`
/// keeps the first decision present, reading left to right.
#[derive(Debug, Clone, Copy)]
pub struct MaxSemiring;

impl Semiring for MaxSemiring {
    type Elem = Scored;
    const KIND: SemiringKind = SemiringKind::Max;

    #[inline]
    fn zero() -> Scored {
        Scored {
            score: f64::NEG_INFINITY,
            decision: None,
        }
    }
    #[inline]
    fn one() -> Scored {
        Scored {
            score: 0.0,
            decision: None,
        }
    }
    #[inline]
    fn plus(a: Scored, b: Scored) -> Scored {
        if b.score > a.score {
            b
        } else if a.score > b.score {
            a
        } else {
            match (a.decision, b.decision) {
                (Some(x), Some(y)) if y < x => b,
                (None, Some(_)) => b,
                _ => a,
            }
        }
    }
    #[inline]
    fn times(a: Scored, b: Scored) -> Scored {
        let score = if a.score == f64::NEG_INFINITY || b.score == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            a.score + b.score
        };
        Scored {
            score,
            decision: a.decision.or(b.decision),
        }
    }
    #[inline]
    fn lift(log_phi: f64) -> Scored {
        Scored {
            score: log_phi,
            decision: None,
        }
    }
    #[inline]
    fn tag(elem: Scored, decision: u32) -> Scored {
        Scored {
            score: elem.score,
            decision: Some(decision),
        }
    }
}

/// Element `<p, r>` of the first-order expectation semiring.
///
/// Stored as `(log p, r / p)`: products add both fields and sums take a
/// mass-weighted average of the ratio, so neither field underflows on long
/// sentences and `r` may carry either sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub log_p: f64,
    pub ratio: f64,
}

impl Expectation {
    /// Builds `<p, r>` from linear-domain values; `p` must be positive, or
    /// zero together with `r`.
    pub fn from_linear(p: f64, r: f64) -> Result<Self> {
        if p > 0.0 && p.is_finite() && r.is_finite() {
            Ok(Self {
                log_p: ln(p),
                ratio: r / p,
            })
        } else if p == 0.0 && r == 0.0 {
            Ok(ExpectationSemiring::zero())
        } else {
            Err(Error::InvalidPotentials(alloc::format!(
                "expectation element <{p}, {r}> is not representable"
            )))
        }
    }

    /// `<phi, phi * w>` for a factor with log-potential `log_phi` and additive
    /// statistic `w`.
    #[inline]
    pub fn weighted(log_phi: f64, w: f64) -> Self {
        Self {
            log_p: log_phi,
            ratio: w,
        }
    }

    pub fn p(&self) -> f64 {
        exp(self.log_p)
    }

    pub fn r(&self) -> f64 {
        if self.log_p == f64::NEG_INFINITY {
            0.0
        } else {
            exp(self.log_p) * self.ratio
        }
    }
}

/// Expectation semiring initialised for entropy: each potential lifts to
/// `<phi, -phi log phi>`, and a full chart returns `<Z, R>` with entropy
/// `R / Z + log Z`.
#[derive(Debug, Clone, Copy)]
pub struct ExpectationSemiring;

impl Semiring for ExpectationSemiring {
    type Elem = Expectation;
    const KIND: SemiringKind = SemiringKind::Expectation;

    #[inline]
    fn zero() -> Expectation {
        Expectation {
            log_p: f64::NEG_INFINITY,
            ratio: 0.0,
        }
    }
    #[inline]
    fn one() -> Expectation {
        Expectation {
            log_p: 0.0,
            ratio: 0.0,
        }
    }
    #[inline]
    fn plus(a: Expectation, b: Expectation) -> Expectation {
        if a.log_p == f64::NEG_INFINITY {
            return b;
        }
        if b.log_p == f64::NEG_INFINITY {
            return a;
        }
        let log_p = log_add_exp(a.log_p, b.log_p);
        let wa = exp(a.log_p - log_p);
        let wb = exp(b.log_p - log_p);
        Expectation {
            log_p,
            ratio: wa * a.ratio + wb * b.ratio,
        }
    }
    #[inline]
    fn times(a: Expectation, b: Expectation) -> Expectation {
        if a.log_p == f64::NEG_INFINITY || b.log_p == f64::NEG_INFINITY {
            return Self::zero();
        }
        Expectation {
            log_p: a.log_p + b.log_p,
            ratio: a.ratio + b.ratio,
        }
    }
    #[inline]
    fn lift(log_phi: f64) -> Expectation {
        Expectation::weighted(log_phi, -log_phi)
    }
}

/// A semiring value whose semiring is only known at runtime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SemiringElement {
    SumProduct(f64),
    Log(f64),
    Max(Scored),
    Expectation(Expectation),
}

impl SemiringElement {
    pub fn kind(&self) -> SemiringKind {
        match self {
            Self::SumProduct(_) => SemiringKind::SumProduct,
            Self::Log(_) => SemiringKind::Log,
            Self::Max(_) => SemiringKind::Max,
            Self::Expectation(_) => SemiringKind::Expectation,
        }
    }

    pub fn zero(kind: SemiringKind) -> Self {
        match kind {
            SemiringKind::SumProduct => Self::SumProduct(SumProduct::zero()),
            SemiringKind::Log => Self::Log(LogSemiring::zero()),
            SemiringKind::Max => Self::Max(MaxSemiring::zero()),
            SemiringKind::Expectation => Self::Expectation(ExpectationSemiring::zero()),
        }
    }

    pub fn one(kind: SemiringKind) -> Self {
        match kind {
            SemiringKind::SumProduct => Self::SumProduct(SumProduct::one()),
            SemiringKind::Log => Self::Log(LogSemiring::one()),
            SemiringKind::Max => Self::Max(MaxSemiring::one()),
            SemiringKind::Expectation => Self::Expectation(ExpectationSemiring::one()),
        }
    }

    pub fn oplus(&self, other: &Self) -> Result<Self> {
        Ok(match (*self, *other) {
            (Self::SumProduct(a), Self::SumProduct(b)) => Self::SumProduct(SumProduct::plus(a, b)),
            (Self::Log(a), Self::Log(b)) => Self::Log(LogSemiring::plus(a, b)),
            (Self::Max(a), Self::Max(b)) => Self::Max(MaxSemiring::plus(a, b)),
            (Self::Expectation(a), Self::Expectation(b)) => {
                Self::Expectation(ExpectationSemiring::plus(a, b))
            }
            (a, b) => return Err(mismatch(a, b)),
        })
    }

    pub fn otimes(&self, other: &Self) -> Result<Self> {
        Ok(match (*self, *other) {
            (Self::SumProduct(a), Self::SumProduct(b)) => {
                Self::SumProduct(SumProduct::times(a, b))
            }
            (Self::Log(a), Self::Log(b)) => Self::Log(LogSemiring::times(a, b)),
            (Self::Max(a), Self::Max(b)) => Self::Max(MaxSemiring::times(a, b)),
            (Self::Expectation(a), Self::Expectation(b)) => {
                Self::Expectation(ExpectationSemiring::times(a, b))
            }
            (a, b) => return Err(mismatch(a, b)),
        })
    }
}

fn mismatch(a: SemiringElement, b: SemiringElement) -> Error {
    Error::SemiringMismatch {
        left: a.kind(),
        right: b.kind(),
    }
}

/// Lifts a log-potential into the named semiring.
pub fn lift_potential(log_phi: f64, kind: SemiringKind) -> Result<SemiringElement> {
    if !log_phi.is_finite() {
        return Err(Error::NonFinitePotential(log_phi));
    }
    Ok(match kind {
        SemiringKind::SumProduct => SemiringElement::SumProduct(SumProduct::lift(log_phi)),
        SemiringKind::Log => SemiringElement::Log(LogSemiring::lift(log_phi)),
        SemiringKind::Max => SemiringElement::Max(MaxSemiring::lift(log_phi)),
        SemiringKind::Expectation => {
            SemiringElement::Expectation(ExpectationSemiring::lift(log_phi))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::LN_2;

    #[test]
    fn log_oplus_of_two_units_is_log_two() {
        let one = lift_potential(0.0, SemiringKind::Log).unwrap();
        match one.oplus(&one).unwrap() {
            SemiringElement::Log(v) => assert!((v - LN_2).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_otimes_multiplies_masses() {
        let v = LogSemiring::times(ln(0.5), ln(0.3));
        assert!((v - ln(0.15)).abs() < 1e-12);
    }

    #[test]
    fn expectation_sum_and_product_rules() {
        let a = Expectation::from_linear(2.0, 3.0).unwrap();
        let b = Expectation::from_linear(4.0, 5.0).unwrap();
        let prod = ExpectationSemiring::times(a, b);
        assert!((prod.p() - 8.0).abs() < 1e-12);
        assert!((prod.r() - 22.0).abs() < 1e-12);
        let sum = ExpectationSemiring::plus(a, b);
        assert!((sum.p() - 6.0).abs() < 1e-12);
        assert!((sum.r() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn max_oplus_keeps_the_larger_with_its_decision() {
        let a = MaxSemiring::tag(MaxSemiring::lift(3.0), 0);
        let b = MaxSemiring::tag(MaxSemiring::lift(5.0), 1);
        assert_eq!(
            MaxSemiring::plus(a, b),
            Scored {
                score: 5.0,
                decision: Some(1)
            }
        );
        assert_eq!(MaxSemiring::plus(b, a), MaxSemiring::plus(a, b));
    }

    #[test]
    fn lifted_potentials() {
        let e = ExpectationSemiring::lift(0.0);
        assert_eq!((e.p(), e.r()), (1.0, 0.0));
        assert_eq!(ExpectationSemiring::one(), e);
        assert!((LogSemiring::lift(1.0) - 1.0).abs() < 1e-15);
        let half = ExpectationSemiring::lift(ln(0.5));
        assert!((half.p() - 0.5).abs() < 1e-12);
        assert!((half.r() - 0.5 * LN_2).abs() < 1e-12);
        assert!((half.r() - 0.3466).abs() < 1e-4);
    }

    #[test]
    fn one_is_identity_everywhere() {
        for kind in [
            SemiringKind::SumProduct,
            SemiringKind::Log,
            SemiringKind::Max,
            SemiringKind::Expectation,
        ] {
            let x = lift_potential(-0.7, kind).unwrap();
            assert_eq!(x.otimes(&SemiringElement::one(kind)).unwrap(), x);
            assert_eq!(x.oplus(&SemiringElement::zero(kind)).unwrap(), x);
        }
    }

    #[test]
    fn mixing_semirings_is_rejected() {
        let a = lift_potential(0.0, SemiringKind::Log).unwrap();
        let b = lift_potential(0.0, SemiringKind::Max).unwrap();
        assert!(matches!(
            a.oplus(&b),
            Err(Error::SemiringMismatch { .. })
        ));
        assert!(a.otimes(&b).is_err());
    }

    #[test]
    fn non_finite_potentials_are_rejected() {
        assert!(lift_potential(f64::NAN, SemiringKind::Log).is_err());
        assert!(lift_potential(f64::INFINITY, SemiringKind::Expectation).is_err());
    }
}
