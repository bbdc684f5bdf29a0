//! Triangular-norm uncertainty calculus.
//!
//! Five T-norm families ordered pointwise from most to least conservative,
//! their DeMorgan dual T-conorms, involutive negation, and the confidence
//! and interval types propagated through the inference network.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CalculusError {
    #[error("confidence {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("n-ary fold over an empty confidence list")]
    EmptyFold,
    #[error("unknown t-norm family `{0}` (expected T1, T1.5, T2, T2.5 or T3)")]
    UnknownFamily(String),
}

/// A degree of confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Confidence(f64);

impl Confidence {
    pub const ZERO: Confidence = Confidence(0.0);
    pub const ONE: Confidence = Confidence(1.0);

    /// Checked constructor; rejects NaN, infinities and anything outside `[0, 1]`.
    pub fn new(value: f64) -> Result<Confidence, CalculusError> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Confidence(value))
        } else {
            Err(CalculusError::OutOfRange(value))
        }
    }

    /// Clamp an already-computed value into range.
    ///
    /// The closed forms below cannot leave `[0, 1]` mathematically; this
    /// absorbs the last-ulp rounding cases.
    pub fn clamped(value: f64) -> Confidence {
        debug_assert!(!value.is_nan(), "confidence computation produced NaN");
        Confidence(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The five T-norm families.
///
/// Totally ordered pointwise: `T1 <= T1.5 <= T2 <= T2.5 <= T3` on all inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TnormFamily {
    /// `max(0, a + b - 1)`
    T1,
    /// `(sqrt(a) + sqrt(b) - 1)^2` when the root sum reaches 1, else 0
    T1_5,
    /// `a * b`
    T2,
    /// `(1/a + 1/b - 1)^-1`, 0 on the axes
    T2_5,
    /// `min(a, b)`
    T3,
}

impl TnormFamily {
    pub const ALL: [TnormFamily; 5] = [
        TnormFamily::T1,
        TnormFamily::T1_5,
        TnormFamily::T2,
        TnormFamily::T2_5,
        TnormFamily::T3,
    ];

    /// The spelling used in KB files, network files and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            TnormFamily::T1 => "T1",
            TnormFamily::T1_5 => "T1.5",
            TnormFamily::T2 => "T2",
            TnormFamily::T2_5 => "T2.5",
            TnormFamily::T3 => "T3",
        }
    }
}

impl fmt::Display for TnormFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TnormFamily {
    type Err = CalculusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T1" => Ok(TnormFamily::T1),
            "T1.5" => Ok(TnormFamily::T1_5),
            "T2" => Ok(TnormFamily::T2),
            "T2.5" => Ok(TnormFamily::T2_5),
            "T3" => Ok(TnormFamily::T3),
            other => Err(CalculusError::UnknownFamily(other.to_string())),
        }
    }
}

/// Conjunction under the given family.
pub fn tnorm(f: TnormFamily, a: Confidence, b: Confidence) -> Confidence {
    let (a, b) = (a.0, b.0);
    let v = match f {
        TnormFamily::T1 => (a + b - 1.0).max(0.0),
        TnormFamily::T1_5 => {
            let s = a.sqrt() + b.sqrt();
            // Ties at s == 1 take the squared branch, which is 0 there too.
            if s >= 1.0 {
                (s - 1.0) * (s - 1.0)
            } else {
                0.0
            }
        }
        TnormFamily::T2 => a * b,
        TnormFamily::T2_5 => {
            // Boundary indetermination resolves to 0; also avoids 1/0.
            if a == 0.0 || b == 0.0 {
                0.0
            } else {
                1.0 / (1.0 / a + 1.0 / b - 1.0)
            }
        }
        TnormFamily::T3 => a.min(b),
    };
    Confidence::clamped(v)
}

/// Involutive negation `1 - a`.
pub fn negate(a: Confidence) -> Confidence {
    Confidence(1.0 - a.0)
}

/// Disjunction: the DeMorgan dual `S(a, b) = 1 - T(1 - a, 1 - b)`.
pub fn tconorm(f: TnormFamily, a: Confidence, b: Confidence) -> Confidence {
    negate(tnorm(f, negate(a), negate(b)))
}

/// Left fold of [`tnorm`] over a non-empty list.
///
/// Associativity and commutativity make the result order-independent.
pub fn tnorm_n(f: TnormFamily, values: &[Confidence]) -> Result<Confidence, CalculusError> {
    let (first, rest) = values.split_first().ok_or(CalculusError::EmptyFold)?;
    Ok(rest.iter().fold(*first, |acc, v| tnorm(f, acc, *v)))
}

/// Left fold of [`tconorm`] over a non-empty list.
pub fn tconorm_n(f: TnormFamily, values: &[Confidence]) -> Result<Confidence, CalculusError> {
    let (first, rest) = values.split_first().ok_or(CalculusError::EmptyFold)?;
    Ok(rest.iter().fold(*first, |acc, v| tconorm(f, acc, *v)))
}

/// An `[LB, UB]` confidence pair.
///
/// The lower bound is the minimal degree of confirmation; `1 - ub` is the
/// degree of refutation. `lb > ub` is representable — it is the conflict
/// state the engine detects and reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyInterval {
    pub lb: Confidence,
    pub ub: Confidence,
}

impl UncertaintyInterval {
    /// Total ignorance `[0, 1]`: nothing confirmed, nothing refuted.
    pub const UNKNOWN: UncertaintyInterval = UncertaintyInterval {
        lb: Confidence::ZERO,
        ub: Confidence::ONE,
    };

    pub fn new(lb: Confidence, ub: Confidence) -> UncertaintyInterval {
        UncertaintyInterval { lb, ub }
    }

    pub fn from_f64(lb: f64, ub: f64) -> Result<UncertaintyInterval, CalculusError> {
        Ok(UncertaintyInterval {
            lb: Confidence::new(lb)?,
            ub: Confidence::new(ub)?,
        })
    }

    /// The unassigned portion of belief, `ub - lb`.
    ///
    /// Negative exactly when the interval is in conflict.
    pub fn ignorance(self) -> f64 {
        self.ub.0 - self.lb.0
    }

    /// `lb + lb(negation) > 1`, equivalently `lb > ub`.
    pub fn in_conflict(self) -> bool {
        self.lb.0 > self.ub.0
    }

    /// The interval of the negated wff: `[1 - ub, 1 - lb]`.
    pub fn negated(self) -> UncertaintyInterval {
        UncertaintyInterval {
            lb: negate(self.ub),
            ub: negate(self.lb),
        }
    }
}

impl fmt::Display for UncertaintyInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lb, self.ub)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    fn c(v: f64) -> Confidence {
        Confidence::new(v).unwrap()
    }

    #[test]
    fn confidence_rejects_out_of_range() {
        assert!(Confidence::new(-0.1).is_err());
        assert!(Confidence::new(1.1).is_err());
        assert!(Confidence::new(f64::NAN).is_err());
        assert!(Confidence::new(0.0).is_ok());
        assert!(Confidence::new(1.0).is_ok());
    }

    #[test]
    fn family_names_round_trip() {
        for f in TnormFamily::ALL {
            assert_eq!(f.name().parse::<TnormFamily>().unwrap(), f);
        }
        assert!("T4".parse::<TnormFamily>().is_err());
    }

    #[test]
    fn tnorm_boundary_zero() {
        // T_i(0, x) = T_i(x, 0) = 0, including the T2.5 indetermination.
        for f in TnormFamily::ALL {
            for x in [0.0, 0.3, 0.6, 1.0] {
                assert_eq!(tnorm(f, c(0.0), c(x)).value(), 0.0, "{f} 0 {x}");
                assert_eq!(tnorm(f, c(x), c(0.0)).value(), 0.0, "{f} {x} 0");
            }
        }
        assert_eq!(tnorm(TnormFamily::T2_5, c(0.0), c(0.6)).value(), 0.0);
    }

    #[test]
    fn tnorm_identity_one() {
        for f in TnormFamily::ALL {
            for x in [0.0, 0.42, 1.0] {
                assert!((tnorm(f, c(1.0), c(x)).value() - x).abs() < TOL);
            }
        }
        assert!((tnorm(TnormFamily::T3, c(1.0), c(0.42)).value() - 0.42).abs() < TOL);
    }

    #[test]
    fn tnorm_hand_evaluated_points() {
        assert!((tnorm(TnormFamily::T1, c(0.7), c(0.5)).value() - 0.2).abs() < TOL);
        // (sqrt(.49) + sqrt(.49) - 1)^2 = 0.4^2
        assert!((tnorm(TnormFamily::T1_5, c(0.49), c(0.49)).value() - 0.16).abs() < TOL);
        // (2 + 2 - 1)^-1
        assert!((tnorm(TnormFamily::T2_5, c(0.5), c(0.5)).value() - 1.0 / 3.0).abs() < TOL);
    }

    #[test]
    fn tconorm_boundary_one() {
        for f in TnormFamily::ALL {
            for x in [0.0, 0.3, 1.0] {
                assert_eq!(tconorm(f, c(1.0), c(x)).value(), 1.0);
                assert_eq!(tconorm(f, c(x), c(1.0)).value(), 1.0);
            }
        }
        assert_eq!(tconorm(TnormFamily::T2_5, c(1.0), c(0.3)).value(), 1.0);
    }

    #[test]
    fn tconorm_hand_evaluated_points() {
        // S2(0.63, 0.4) = 1 - 0.37 * 0.6
        assert!((tconorm(TnormFamily::T2, c(0.63), c(0.4)).value() - 0.778).abs() < TOL);
        assert!((tconorm(TnormFamily::T3, c(0.0), c(0.42)).value() - 0.42).abs() < TOL);
    }

    #[test]
    fn negate_involution() {
        assert_eq!(negate(c(0.0)).value(), 1.0);
        assert_eq!(negate(c(1.0)).value(), 0.0);
        assert!((negate(c(0.3)).value() - 0.7).abs() < TOL);
        assert!((negate(negate(c(0.3))).value() - 0.3).abs() < TOL);
    }

    #[test]
    fn nary_folds() {
        let v = [c(0.9), c(0.7), c(0.8)];
        assert!((tnorm_n(TnormFamily::T3, &v).unwrap().value() - 0.7).abs() < TOL);
        let p = [c(0.5), c(0.5), c(0.5)];
        assert!((tnorm_n(TnormFamily::T2, &p).unwrap().value() - 0.125).abs() < TOL);
        assert_eq!(tnorm_n(TnormFamily::T2, &[c(0.37)]).unwrap().value(), 0.37);
        assert_eq!(tnorm_n(TnormFamily::T2, &[]), Err(CalculusError::EmptyFold));
        assert_eq!(tconorm_n(TnormFamily::T2, &[]), Err(CalculusError::EmptyFold));
    }

    #[test]
    fn idempotency_only_for_t3() {
        let a = c(0.5);
        assert_eq!(tnorm(TnormFamily::T3, a, a).value(), 0.5);
        for f in [
            TnormFamily::T1,
            TnormFamily::T1_5,
            TnormFamily::T2,
            TnormFamily::T2_5,
        ] {
            assert!(tnorm(f, a, a).value() < 0.5, "{f} should not be idempotent");
        }
    }

    #[test]
    fn interval_basics() {
        let iv = UncertaintyInterval::from_f64(0.3, 0.8).unwrap();
        assert!((iv.ignorance() - 0.5).abs() < TOL);
        assert!(!iv.in_conflict());
        let neg = iv.negated();
        assert!((neg.lb.value() - 0.2).abs() < TOL);
        assert!((neg.ub.value() - 0.7).abs() < TOL);

        let conflict = UncertaintyInterval::from_f64(0.7, 0.6).unwrap();
        assert!(conflict.in_conflict());
        assert!(conflict.ignorance() < 0.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn conf() -> impl Strategy<Value = Confidence> {
            (0.0f64..=1.0).prop_map(|v| Confidence::new(v).unwrap())
        }

        fn family() -> impl Strategy<Value = TnormFamily> {
            prop::sample::select(TnormFamily::ALL.to_vec())
        }

        proptest! {
            #[test]
            fn commutative(f in family(), a in conf(), b in conf()) {
                prop_assert!((tnorm(f, a, b).value() - tnorm(f, b, a).value()).abs() < TOL);
            }

            #[test]
            fn associative(f in family(), a in conf(), b in conf(), c in conf()) {
                let left = tnorm(f, a, tnorm(f, b, c)).value();
                let right = tnorm(f, tnorm(f, a, b), c).value();
                prop_assert!((left - right).abs() < TOL);
            }

            #[test]
            fn monotone(f in family(), a in conf(), a2 in conf(), b in conf()) {
                let (lo, hi) = if a.value() <= a2.value() { (a, a2) } else { (a2, a) };
                prop_assert!(tnorm(f, lo, b).value() <= tnorm(f, hi, b).value() + TOL);
            }

            #[test]
            fn demorgan_duality_exact(f in family(), a in conf(), b in conf()) {
                let s = tconorm(f, a, b).value();
                let dual = 1.0 - tnorm(f, negate(a), negate(b)).value();
                prop_assert_eq!(s, dual);
            }

            #[test]
            fn pointwise_family_ordering(a in conf(), b in conf()) {
                let vals: Vec<f64> = TnormFamily::ALL
                    .iter()
                    .map(|f| tnorm(*f, a, b).value())
                    .collect();
                for w in vals.windows(2) {
                    prop_assert!(w[0] <= w[1] + TOL, "ordering violated: {:?}", vals);
                }
            }

            #[test]
            fn fold_order_independent(f in family(), mut vs in prop::collection::vec(conf(), 1..6)) {
                let forward = tnorm_n(f, &vs).unwrap().value();
                vs.reverse();
                let backward = tnorm_n(f, &vs).unwrap().value();
                prop_assert!((forward - backward).abs() < TOL);
            }
        }
    }
}
