//! Closed-form merged r-harmonic functions.
//!
//! For arithmetic Brownian motion the minimal r-harmonic functions are
//! exponentials `e^{zx}` with z solving ½σ²z² + (μ∓κ)z − r = 0. The
//! function h_c glues the (μ+κ)-pair (below c) to the (μ−κ)-pair
//! (above c) so that h_c(c) = 1, h_c'(c) = 0, and h_c is C². For
//! geometric Brownian motion without ambiguity the same construction
//! runs on the power pair `x^γ`.
//!
//! Everything here evaluates in log-space: the majorant search needs
//! ratios g/h_c which stay well-scaled even where h_c itself overflows.

use crate::error::{Error, Result};
use crate::problem::Merge;

/// Both roots of ½σ²z² + drift·z − r = 0, ordered `(negative, positive)`.
///
/// The discriminant drift² + 2σ²r is positive for r > 0, and the root
/// product −2r/σ² is negative, so the sign pattern is guaranteed.
pub fn quadratic_roots(sigma: f64, drift: f64, r: f64) -> (f64, f64) {
    debug_assert!(sigma > 0.0 && r > 0.0);
    let a = 0.5 * sigma * sigma;
    let disc = (drift * drift + 4.0 * a * r).sqrt();
    // Cancellation-free: compute the large-magnitude root first.
    let q = -0.5 * (drift + drift.signum() * disc);
    let (z1, z2) = if drift == 0.0 {
        (-disc / (2.0 * a), disc / (2.0 * a))
    } else {
        (q / a, -r / q)
    };
    if z1 < z2 {
        (z1, z2)
    } else {
        (z2, z1)
    }
}

/// Exponent pairs for an arithmetic Brownian motion under the two
/// extreme drift perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentPair {
    /// Roots for drift μ−κ: alpha.0 < 0 < alpha.1.
    pub alpha: (f64, f64),
    /// Roots for drift μ+κ: beta.0 < 0 < beta.1.
    pub beta: (f64, f64),
}

impl ExponentPair {
    pub fn for_abm(mu: f64, sigma: f64, kappa: f64, r: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Validation("sigma must be positive".into()));
        }
        if !(r > 0.0) {
            return Err(Error::Validation("r must be positive".into()));
        }
        Ok(ExponentPair {
            alpha: quadratic_roots(sigma, mu - kappa, r),
            beta: quadratic_roots(sigma, mu + kappa, r),
        })
    }
}

/// One exponential branch w1·e^{z1 t} + w2·e^{z2 t} with w1, w2 > 0.
#[derive(Debug, Clone, Copy)]
struct ExpBranch {
    z1: f64,
    z2: f64,
    ln_w1: f64,
    ln_w2: f64,
}

impl ExpBranch {
    /// Weights z2/(z2−z1) and −z1/(z2−z1); positive since z1 < 0 < z2.
    fn for_roots((z1, z2): (f64, f64)) -> Self {
        let span = z2 - z1;
        ExpBranch {
            z1,
            z2,
            ln_w1: (z2 / span).ln(),
            ln_w2: (-z1 / span).ln(),
        }
    }

    fn log_value(&self, t: f64) -> f64 {
        log_sum_exp(self.ln_w1 + self.z1 * t, self.ln_w2 + self.z2 * t)
    }

    /// (h'/h, h''/h) at offset t from the merge point.
    fn log_derivs(&self, t: f64) -> (f64, f64) {
        let l1 = self.ln_w1 + self.z1 * t;
        let l2 = self.ln_w2 + self.z2 * t;
        let lh = log_sum_exp(l1, l2);
        let p1 = (l1 - lh).exp();
        let p2 = (l2 - lh).exp();
        (
            p1 * self.z1 + p2 * self.z2,
            p1 * self.z1 * self.z1 + p2 * self.z2 * self.z2,
        )
    }
}

pub(crate) fn log_sum_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Which side of the merge point a branch formula belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BranchSide {
    /// The (μ+κ)-pair, active on {x <= c}.
    Below,
    /// The (μ−κ)-pair, active on {x > c}.
    Above,
}

/// Closed-form h_c for arithmetic Brownian motion, including the two
/// monotone boundary limits h_{±∞}.
#[derive(Debug, Clone)]
pub struct ClosedFormHc {
    pub merge: Merge,
    pair: ExponentPair,
    below: ExpBranch,
    above: ExpBranch,
}

impl ClosedFormHc {
    pub fn new(pair: ExponentPair, merge: Merge) -> Self {
        ClosedFormHc {
            merge,
            pair,
            below: ExpBranch::for_roots(pair.beta),
            above: ExpBranch::for_roots(pair.alpha),
        }
    }

    pub fn exponents(&self) -> ExponentPair {
        self.pair
    }

    /// log h_c(x); exact up to rounding, never overflows.
    pub fn log_h(&self, x: f64) -> f64 {
        match self.merge {
            // h_{-inf}(x) = e^{alpha2 x}: the increasing pure exponential.
            Merge::LowerBoundary => self.pair.alpha.1 * x,
            // h_{+inf}(x) = e^{beta1 x}: the decreasing pure exponential.
            Merge::UpperBoundary => self.pair.beta.0 * x,
            Merge::Interior(c) => {
                if x <= c {
                    self.below.log_value(x - c)
                } else {
                    self.above.log_value(x - c)
                }
            }
        }
    }

    pub fn h(&self, x: f64) -> f64 {
        self.log_h(x).exp()
    }

    /// h'/h at x.
    pub fn dlog_h(&self, x: f64) -> f64 {
        match self.merge {
            Merge::LowerBoundary => self.pair.alpha.1,
            Merge::UpperBoundary => self.pair.beta.0,
            Merge::Interior(c) => {
                if x == c {
                    0.0
                } else if x < c {
                    self.below.log_derivs(x - c).0
                } else {
                    self.above.log_derivs(x - c).0
                }
            }
        }
    }

    /// Exact analytic derivative of the active branch; at x = c the
    /// shared one-sided limit (0 for order 1, −z1·z2 for order 2).
    pub fn deriv(&self, x: f64, order: u8) -> f64 {
        assert!(order == 1 || order == 2, "order must be 1 or 2");
        match self.merge {
            Merge::LowerBoundary | Merge::UpperBoundary => {
                let z = if self.merge == Merge::LowerBoundary {
                    self.pair.alpha.1
                } else {
                    self.pair.beta.0
                };
                z.powi(order as i32) * (z * x).exp()
            }
            Merge::Interior(c) => {
                if x == c {
                    return if order == 1 {
                        0.0
                    } else {
                        // h(c) = 1 and both branches share h'' = -z1 z2.
                        -self.pair.alpha.0 * self.pair.alpha.1
                    };
                }
                let side = if x < c {
                    BranchSide::Below
                } else {
                    BranchSide::Above
                };
                self.branch_deriv(x, order, side)
            }
        }
    }

    /// Derivative of one explicit branch formula, evaluable on either
    /// side of c; used to verify the C² merge.
    pub fn branch_deriv(&self, x: f64, order: u8, side: BranchSide) -> f64 {
        let c = match self.merge {
            Merge::Interior(c) => c,
            _ => panic!("branch_deriv needs an interior merge point"),
        };
        let br = match side {
            BranchSide::Below => &self.below,
            BranchSide::Above => &self.above,
        };
        let lh = br.log_value(x - c);
        let (d1, d2) = br.log_derivs(x - c);
        match order {
            1 => d1 * lh.exp(),
            2 => d2 * lh.exp(),
            _ => panic!("order must be 1 or 2"),
        }
    }

    /// Value of one explicit branch formula.
    pub fn branch_value(&self, x: f64, side: BranchSide) -> f64 {
        let c = match self.merge {
            Merge::Interior(c) => c,
            _ => panic!("branch_value needs an interior merge point"),
        };
        let br = match side {
            BranchSide::Below => &self.below,
            BranchSide::Above => &self.above,
        };
        br.log_value(x - c).exp()
    }
}

/// Closed-form h_c for geometric Brownian motion without drift
/// ambiguity (κ = 0), built on the power pair x^{γ−} , x^{γ+}.
#[derive(Debug, Clone)]
pub struct GbmPowerHc {
    pub merge: Merge,
    /// gamma.0 < 0 < gamma.1: roots of ½σ²γ² + (μ−½σ²)γ − r = 0.
    pub gamma: (f64, f64),
    ln_w_neg: f64,
    ln_w_pos: f64,
}

impl GbmPowerHc {
    pub fn exponents(mu: f64, sigma: f64, r: f64) -> (f64, f64) {
        quadratic_roots(sigma, mu - 0.5 * sigma * sigma, r)
    }

    pub fn new(mu: f64, sigma: f64, r: f64, merge: Merge) -> Result<Self> {
        let gamma = Self::exponents(mu, sigma, r);
        if let Merge::Interior(c) = merge {
            if !(c > 0.0) {
                return Err(Error::Domain(format!(
                    "merge point {c} outside the GBM state interval (0, inf)"
                )));
            }
        }
        let span = gamma.1 - gamma.0;
        Ok(GbmPowerHc {
            merge,
            gamma,
            // value 1, slope 0 at c: weights gamma+/(span) on x^{γ−} and
            // −gamma−/span on x^{γ+}, both positive.
            ln_w_neg: (gamma.1 / span).ln(),
            ln_w_pos: (-gamma.0 / span).ln(),
        })
    }

    pub fn log_h(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0);
        let lx = x.ln();
        match self.merge {
            Merge::LowerBoundary => self.gamma.1 * lx,
            Merge::UpperBoundary => self.gamma.0 * lx,
            Merge::Interior(c) => {
                let t = lx - c.ln();
                log_sum_exp(
                    self.ln_w_neg + self.gamma.0 * t,
                    self.ln_w_pos + self.gamma.1 * t,
                )
            }
        }
    }

    pub fn dlog_h(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0);
        match self.merge {
            Merge::LowerBoundary => self.gamma.1 / x,
            Merge::UpperBoundary => self.gamma.0 / x,
            Merge::Interior(c) => {
                let t = x.ln() - c.ln();
                let l1 = self.ln_w_neg + self.gamma.0 * t;
                let l2 = self.ln_w_pos + self.gamma.1 * t;
                let lh = log_sum_exp(l1, l2);
                ((l1 - lh).exp() * self.gamma.0 + (l2 - lh).exp() * self.gamma.1) / x
            }
        }
    }
}
