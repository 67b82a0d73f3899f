//! Scaling exponents and finiteness thresholds for bulk/boundary quotients.
//!
//! Both exponents depend on `(p, q)` only through `x = p - q/2`:
//! `zeta_bar = (2 + g^2/2) x - g^2 x^2` and `zeta_tilde = (2 - g^2/2) x - g^2 x^2`.

use serde::{Deserialize, Serialize};

use crate::gmc::GammaParam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentParams {
    pub p: f64,
    pub q: f64,
    pub gamma: GammaParam,
}

impl MomentParams {
    pub fn new(p: f64, q: f64, gamma: GammaParam) -> Self {
        Self { p, q, gamma }
    }

    /// `p - q/2`.
    pub fn shifted(&self) -> f64 {
        self.p - self.q / 2.0
    }
}

/// Exponent of `r` for the unlocalized quotient.
pub fn zeta_bar(mp: &MomentParams) -> f64 {
    let g2 = mp.gamma.squared();
    let x = mp.shifted();
    (2.0 + g2 / 2.0) * x - g2 * x * x
}

/// Exponent of `r` for the quotient localized at a boundary point.
pub fn zeta_tilde(mp: &MomentParams) -> f64 {
    let g2 = mp.gamma.squared();
    let x = mp.shifted();
    (2.0 - g2 / 2.0) * x - g2 * x * x
}

/// `min(2/g^2 + q/2, 4/g^2)`: joint moments are finite for `p` below it.
pub fn joint_threshold(q: f64, gamma: GammaParam) -> f64 {
    let g2 = gamma.squared();
    (2.0 / g2 + q / 2.0).min(4.0 / g2)
}

/// Strict inequality: a point on the threshold is not predicted finite.
pub fn predicted_finite(p: f64, q: f64, gamma: GammaParam) -> bool {
    p < joint_threshold(q, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    fn of(v: f64) -> Self {
        if v > 0.0 {
            Sign::Positive
        } else if v < 0.0 {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "q<2p")]
    BelowDiagonal,
    #[serde(rename = "q=2p")]
    Diagonal,
    #[serde(rename = "q>2p")]
    AboveDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignReport {
    pub zeta_tilde_sign: Sign,
    pub zeta_bar_minus_one_sign: Sign,
    pub regime: Regime,
}

/// Signs of `zeta_tilde` and `zeta_bar - 1` from interval criteria on `x = p - q/2`.
///
/// For `q < 2p`, `zeta_tilde > 0` iff `x < 2/g^2 - 1/2`; for `q > 2p` it is
/// positive iff `x > 2/g^2 - 1/2`, which cannot happen since then `x < 0`.
/// `zeta_bar - 1 > 0` iff `x` lies in `(1/2, 2/g^2)`.
pub fn sign_report(mp: &MomentParams) -> SignReport {
    let g2 = mp.gamma.squared();
    let x = mp.shifted();
    let root = 2.0 / g2 - 0.5;
    let regime = if 2.0 * mp.p > mp.q {
        Regime::BelowDiagonal
    } else if 2.0 * mp.p == mp.q {
        Regime::Diagonal
    } else {
        Regime::AboveDiagonal
    };
    let zeta_tilde_sign = match regime {
        Regime::Diagonal => Sign::Zero,
        Regime::BelowDiagonal => Sign::of(root - x),
        Regime::AboveDiagonal => {
            if x > root {
                Sign::Positive
            } else if x == root {
                Sign::Zero
            } else {
                Sign::Negative
            }
        }
    };
    let zeta_bar_minus_one_sign = if x > 0.5 && x < 2.0 / g2 {
        Sign::Positive
    } else if x == 0.5 || x == 2.0 / g2 {
        Sign::Zero
    } else {
        Sign::Negative
    };
    SignReport {
        zeta_tilde_sign,
        zeta_bar_minus_one_sign,
        regime,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mp(p: f64, q: f64, g: f64) -> MomentParams {
        MomentParams::new(p, q, GammaParam::new(g).unwrap())
    }

    #[test]
    fn zeta_bar_examples() {
        assert_eq!(zeta_bar(&mp(1.0, 0.0, 1.0)), 1.5);
        assert_eq!(zeta_bar(&mp(1.0, 1.0, 1.0)), 1.0);
        assert_eq!(zeta_bar(&mp(0.5, 0.0, 1.0)), 1.0);
        assert_eq!(zeta_bar(&mp(0.7, 1.4, 1.3)), 0.0);
    }

    #[test]
    fn zeta_tilde_examples() {
        assert_eq!(zeta_tilde(&mp(1.0, 1.0, 1.0)), 0.5);
        assert_eq!(zeta_tilde(&mp(2.0, 1.0, 1.0)), 0.0);
        assert_eq!(zeta_tilde(&mp(0.9, 1.8, 0.4)), 0.0);
    }

    #[test]
    fn threshold_examples() {
        let g = GammaParam::new(2f64.sqrt()).unwrap();
        assert!((joint_threshold(1.0, g) - 1.5).abs() < 1e-15);
        assert!((joint_threshold(0.0, g) - 1.0).abs() < 1e-15);
        assert!((joint_threshold(3.0, g) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_is_strict() {
        let g = GammaParam::new(1.0).unwrap();
        assert!(!predicted_finite(2.0, 0.0, g));
        assert!(predicted_finite(1.999, 0.0, g));
        assert!(predicted_finite(0.0, 5.0, g));
    }

    #[test]
    fn sign_examples() {
        let r = sign_report(&mp(1.2, 1.0, 1.0));
        assert_eq!(r.zeta_tilde_sign, Sign::Positive);
        assert_eq!(r.regime, Regime::BelowDiagonal);
        let r = sign_report(&mp(0.6, 1.2, 1.0));
        assert_eq!(r.regime, Regime::Diagonal);
        assert_eq!(r.zeta_tilde_sign, Sign::Zero);
        assert_eq!(zeta_bar(&mp(0.6, 1.2, 1.0)), 0.0);
        let r = sign_report(&mp(0.4, 0.0, 1.0));
        assert_eq!(r.zeta_bar_minus_one_sign, Sign::Negative);
        let r = sign_report(&mp(0.2, 1.0, 1.0));
        assert_eq!(r.regime, Regime::AboveDiagonal);
        assert_eq!(r.zeta_tilde_sign, Sign::Negative);
    }

    proptest! {
        #[test]
        fn shift_identity(p in -3.0..3.0f64, q in 0.0..4.0f64, g in 0.05..1.95f64) {
            let m = mp(p, q, g);
            let base = mp(p - q / 2.0, 0.0, g);
            prop_assert!((zeta_bar(&m) - zeta_bar(&base)).abs() <= 1e-14 * (1.0 + zeta_bar(&m).abs()));
            let expected = zeta_bar(&base) - g * g * (p - q / 2.0);
            prop_assert!((zeta_tilde(&m) - expected).abs() <= 1e-14 * (1.0 + expected.abs()));
        }

        #[test]
        fn concave_with_analytic_vertex(g in 0.05..1.95f64, x in -3.0..3.0f64) {
            let g2 = g * g;
            for (f, lin) in [(zeta_bar as fn(&MomentParams) -> f64, 2.0 + g2 / 2.0), (zeta_tilde, 2.0 - g2 / 2.0)] {
                let vertex = lin / (2.0 * g2);
                let fv = f(&mp(vertex, 0.0, g));
                prop_assert!(f(&mp(x, 0.0, g)) <= fv + 1e-12 * fv.abs().max(1.0));
                let h = 1e-3;
                let second = f(&mp(x + h, 0.0, g)) - 2.0 * f(&mp(x, 0.0, g)) + f(&mp(x - h, 0.0, g));
                prop_assert!(second < 0.0);
            }
        }

        #[test]
        fn sign_report_matches_exponents(p in -2.0..3.0f64, q in 0.0..4.0f64, g in 0.1..1.9f64) {
            let m = mp(p, q, g);
            let r = sign_report(&m);
            let zt = zeta_tilde(&m);
            let zb = zeta_bar(&m) - 1.0;
            if zt.abs() > 1e-9 {
                prop_assert_eq!(r.zeta_tilde_sign, if zt > 0.0 { Sign::Positive } else { Sign::Negative });
            }
            if zb.abs() > 1e-9 {
                prop_assert_eq!(r.zeta_bar_minus_one_sign, if zb > 0.0 { Sign::Positive } else { Sign::Negative });
            }
        }

        #[test]
        fn cap_binds_iff_q_exceeds_four_over_gamma_squared(q in 0.0..8.0f64, g in 0.3..1.9f64) {
            let gm = GammaParam::new(g).unwrap();
            let g2 = g * g;
            let t = joint_threshold(q, gm);
            let capped = 2.0 / g2 + q / 2.0 > 4.0 / g2;
            prop_assert_eq!(capped, q > 4.0 / g2);
            if !capped {
                prop_assert!((t - q / 2.0 - 2.0 / g2).abs() < 1e-12);
            } else {
                prop_assert!(2.0 * t - 4.0 / g2 < q);
            }
        }
    }
}
