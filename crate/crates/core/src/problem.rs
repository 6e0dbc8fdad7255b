//! Domain types: diffusions, rewards, drift selectors, and the two
//! problem flavours (drift ambiguity and crash scenario).
//!
//! All types are immutable after construction and safe to share across
//! threads without synchronization.

use crate::error::{Error, Result};

/// Coefficient function of state, restricted to representations that are
/// continuous by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefFn {
    /// Polynomial in x, coefficients in ascending degree order.
    Poly(Vec<f64>),
    /// Piecewise-linear interpolation through (xs, ys); constant
    /// extension outside the tabulated range.
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
}

impl CoefFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            CoefFn::Poly(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck),
            CoefFn::Tabulated { xs, ys } => interp_linear(xs, ys, x),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match self {
            CoefFn::Poly(c) => {
                if c.is_empty() {
                    return Err(Error::Validation(format!("{name}: empty polynomial")));
                }
            }
            CoefFn::Tabulated { xs, ys } => {
                if xs.len() != ys.len() || xs.len() < 2 {
                    return Err(Error::Validation(format!(
                        "{name}: tabulated coefficient needs >= 2 matched points"
                    )));
                }
                if xs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Validation(format!(
                        "{name}: tabulated abscissae must be strictly increasing"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = match xs.binary_search_by(|p| p.total_cmp(&x)) {
        Ok(i) => return ys[i],
        Err(i) => i,
    };
    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

/// Family of the ambient diffusion dX = mu(X) dt + sigma(X) dW.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionFamily {
    /// Constant coefficients on (-inf, inf).
    ArithmeticBm { mu: f64, sigma: f64 },
    /// dX = X (mu dt + sigma dW) on (0, inf).
    GeometricBm { mu: f64, sigma: f64 },
    /// User-supplied continuous coefficients.
    Custom { mu: CoefFn, sigma: CoefFn },
}

/// A regular one-dimensional diffusion with natural boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSpec {
    pub family: DiffusionFamily,
    /// Open state interval (a, b); entries may be infinite.
    pub interval: (f64, f64),
}

impl DiffusionSpec {
    pub fn arithmetic_bm(mu: f64, sigma: f64) -> Self {
        DiffusionSpec {
            family: DiffusionFamily::ArithmeticBm { mu, sigma },
            interval: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn geometric_bm(mu: f64, sigma: f64) -> Self {
        DiffusionSpec {
            family: DiffusionFamily::GeometricBm { mu, sigma },
            interval: (0.0, f64::INFINITY),
        }
    }

    pub fn custom(mu: CoefFn, sigma: CoefFn, interval: (f64, f64)) -> Self {
        DiffusionSpec {
            family: DiffusionFamily::Custom { mu, sigma },
            interval,
        }
    }

    /// Drift coefficient at x.
    pub fn mu(&self, x: f64) -> f64 {
        match &self.family {
            DiffusionFamily::ArithmeticBm { mu, .. } => *mu,
            DiffusionFamily::GeometricBm { mu, .. } => mu * x,
            DiffusionFamily::Custom { mu, .. } => mu.eval(x),
        }
    }

    /// Volatility coefficient at x.
    pub fn sigma(&self, x: f64) -> f64 {
        match &self.family {
            DiffusionFamily::ArithmeticBm { sigma, .. } => *sigma,
            DiffusionFamily::GeometricBm { sigma, .. } => sigma * x,
            DiffusionFamily::Custom { sigma, .. } => sigma.eval(x),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.interval.0 && x < self.interval.1
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.interval;
        if !(a < b) {
            return Err(Error::Validation(format!(
                "interval must satisfy a < b, got ({a}, {b})"
            )));
        }
        match &self.family {
            DiffusionFamily::ArithmeticBm { sigma, .. }
            | DiffusionFamily::GeometricBm { sigma, .. } => {
                if !(*sigma > 0.0) {
                    return Err(Error::Validation("sigma must be positive".into()));
                }
            }
            DiffusionFamily::Custom { mu, sigma } => {
                mu.validate("mu")?;
                sigma.validate("sigma")?;
                // Positivity is checked on a scan of the finite part of
                // the interval; the solver re-checks on its own grid.
                let lo = if a.is_finite() { a } else { -1e3 };
                let hi = if b.is_finite() { b } else { 1e3 };
                for i in 0..=256 {
                    let x = lo + (hi - lo) * (i as f64 + 0.5) / 257.0;
                    if !(sigma.eval(x) > 0.0) {
                        return Err(Error::Validation(format!(
                            "sigma must be positive on the interval (sigma({x}) <= 0)"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parametric reward family; pointwise evaluable, no continuity required.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardFunction {
    /// (x - K)^+
    Call { strike: f64 },
    /// (K - x)^+
    Put { strike: f64 },
    /// |x|
    Straddle,
    /// 1 for x <= 0, x for x > 0 (left-closed jump at 0).
    StepLinear,
    /// Piecewise-linear through (xs, ys), constant extension outside.
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
}

impl RewardFunction {
    /// Pointwise reward value.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            RewardFunction::Call { strike } => (x - strike).max(0.0),
            RewardFunction::Put { strike } => (strike - x).max(0.0),
            RewardFunction::Straddle => x.abs(),
            RewardFunction::StepLinear => {
                if x <= 0.0 {
                    1.0
                } else {
                    x
                }
            }
            RewardFunction::Tabulated { xs, ys } => interp_linear(xs, ys, x),
        }
    }

    /// Right-hand derivative; used to refine tangency points away from
    /// discontinuities.
    pub fn deriv_right(&self, x: f64) -> f64 {
        match self {
            RewardFunction::Call { strike } => {
                if x >= *strike {
                    1.0
                } else {
                    0.0
                }
            }
            RewardFunction::Put { strike } => {
                if x < *strike {
                    -1.0
                } else {
                    0.0
                }
            }
            RewardFunction::Straddle => {
                if x >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            RewardFunction::StepLinear => {
                if x < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            RewardFunction::Tabulated { xs, ys } => {
                if xs.len() < 2 || x >= xs[xs.len() - 1] || x < xs[0] {
                    return 0.0;
                }
                let i = match xs.binary_search_by(|p| p.total_cmp(&x)) {
                    Ok(i) => i + 1,
                    Err(i) => i,
                };
                let i = i.clamp(1, xs.len() - 1);
                (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1])
            }
        }
    }

    /// Jump discontinuities; the solver grid must carry a node at each.
    pub fn discontinuities(&self) -> Vec<f64> {
        match self {
            RewardFunction::StepLinear => vec![0.0],
            _ => vec![],
        }
    }

    /// Kinks (continuous, non-differentiable points), snapped onto the
    /// solver grid so suprema are not lost between nodes.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            RewardFunction::Call { strike } | RewardFunction::Put { strike } => vec![*strike],
            RewardFunction::Straddle => vec![0.0],
            RewardFunction::StepLinear => vec![],
            RewardFunction::Tabulated { xs, .. } => xs.clone(),
        }
    }

    /// True if the family is non-decreasing (required by the crash model).
    pub fn is_non_decreasing(&self) -> bool {
        match self {
            RewardFunction::Call { .. } => true,
            RewardFunction::Put { .. } => false,
            RewardFunction::Straddle => false,
            RewardFunction::StepLinear => false,
            RewardFunction::Tabulated { ys, .. } => ys.windows(2).all(|w| w[0] <= w[1]),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RewardFunction::Call { strike } | RewardFunction::Put { strike } => {
                if !(*strike > 0.0) && !strike.is_finite() {
                    return Err(Error::Validation("strike must be finite".into()));
                }
                Ok(())
            }
            RewardFunction::Tabulated { xs, ys } => {
                if xs.len() != ys.len() || xs.len() < 2 {
                    return Err(Error::Validation(
                        "tabulated reward needs >= 2 matched points".into(),
                    ));
                }
                if xs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Validation(
                        "tabulated reward abscissae must be strictly increasing".into(),
                    ));
                }
                if ys.iter().any(|&y| y < 0.0) {
                    return Err(Error::Validation("reward must be nonnegative".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A single prior from the kappa-ignorance set, as a state-feedback
/// drift perturbation theta(x) with |theta| <= kappa.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftSelector {
    /// theta(x) = +kappa strictly below c, -kappa at and above c.
    MergePoint(f64),
    /// Constant perturbation.
    ConstantTheta(f64),
    /// Piecewise-constant: theta = thetas[i] on [breaks[i-1], breaks[i]).
    /// thetas has one more entry than breaks.
    Piecewise { breaks: Vec<f64>, thetas: Vec<f64> },
}

impl DriftSelector {
    /// Instantaneous drift perturbation at x for ambiguity radius kappa.
    pub fn theta(&self, x: f64, kappa: f64) -> f64 {
        match self {
            DriftSelector::MergePoint(c) => {
                if x < *c {
                    kappa
                } else {
                    -kappa
                }
            }
            DriftSelector::ConstantTheta(t) => *t,
            DriftSelector::Piecewise { breaks, thetas } => {
                let i = breaks.partition_point(|&b| b <= x);
                thetas[i]
            }
        }
    }

    /// Checks |theta| <= kappa in the representation itself.
    pub fn validate(&self, kappa: f64) -> Result<()> {
        let check = |t: f64| -> Result<()> {
            if t.abs() <= kappa + 1e-15 {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "selector theta {t} exceeds ambiguity radius {kappa}"
                )))
            }
        };
        match self {
            DriftSelector::MergePoint(_) => Ok(()),
            DriftSelector::ConstantTheta(t) => check(*t),
            DriftSelector::Piecewise { breaks, thetas } => {
                if thetas.len() != breaks.len() + 1 {
                    return Err(Error::Validation(
                        "piecewise selector needs len(thetas) = len(breaks) + 1".into(),
                    ));
                }
                if breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Validation(
                        "piecewise selector breaks must be strictly increasing".into(),
                    ));
                }
                thetas.iter().try_for_each(|&t| check(t))
            }
        }
    }
}

/// Optimal stopping under drift ambiguity: diffusion, radius kappa,
/// discount r, reward g.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityProblem {
    pub diffusion: DiffusionSpec,
    pub kappa: f64,
    pub r: f64,
    pub reward: RewardFunction,
}

impl AmbiguityProblem {
    pub fn new(
        diffusion: DiffusionSpec,
        kappa: f64,
        r: f64,
        reward: RewardFunction,
    ) -> Result<Self> {
        let p = AmbiguityProblem {
            diffusion,
            kappa,
            r,
            reward,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        self.reward.validate()?;
        if !(self.kappa >= 0.0) {
            return Err(Error::Validation("kappa must be nonnegative".into()));
        }
        if !(self.r > 0.0) {
            return Err(Error::Validation("r must be positive".into()));
        }
        Ok(())
    }

    /// Reward with the domain check of the state interval.
    pub fn reward_at(&self, x: f64) -> Result<f64> {
        if !self.diffusion.contains(x) {
            return Err(Error::Domain(format!(
                "x = {x} outside state interval ({}, {})",
                self.diffusion.interval.0, self.diffusion.interval.1
            )));
        }
        Ok(self.reward.eval(x))
    }
}

/// Crash-scenario stopping: diffusion Y, discount r, non-decreasing
/// reward g, and the worst crash factor c in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CrashProblem {
    pub diffusion: DiffusionSpec,
    pub r: f64,
    pub reward: RewardFunction,
    pub crash_factor: f64,
}

impl CrashProblem {
    pub fn new(
        diffusion: DiffusionSpec,
        r: f64,
        reward: RewardFunction,
        crash_factor: f64,
    ) -> Result<Self> {
        let p = CrashProblem {
            diffusion,
            r,
            reward,
            crash_factor,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        self.reward.validate()?;
        if !(self.r > 0.0) {
            return Err(Error::Validation("r must be positive".into()));
        }
        if !(self.crash_factor > 0.0 && self.crash_factor < 1.0) {
            return Err(Error::Validation(
                "crash factor must lie strictly inside (0, 1)".into(),
            ));
        }
        if !self.reward.is_non_decreasing() {
            return Err(Error::Validation(
                "crash model requires a non-decreasing reward".into(),
            ));
        }
        Ok(())
    }
}

/// Merge-point argument of the h_c family: an interior point or one of
/// the two boundary limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Merge {
    /// h_a: the increasing fundamental solution under drift shift -kappa.
    LowerBoundary,
    /// Finite merge point c.
    Interior(f64),
    /// h_b: the decreasing fundamental solution under drift shift +kappa.
    UpperBoundary,
}

impl Merge {
    /// Numeric representation: boundary variants map onto the endpoints
    /// of the diffusion interval (e.g. -inf / +inf for Brownian motion).
    pub fn as_f64(&self, interval: (f64, f64)) -> f64 {
        match self {
            Merge::LowerBoundary => interval.0,
            Merge::Interior(c) => *c,
            Merge::UpperBoundary => interval.1,
        }
    }
}

/// Point solution of the majorant problem at one queried state.
#[derive(Debug, Clone)]
pub struct PointValue {
    pub x: f64,
    pub v: f64,
    pub c_star: Merge,
    pub lambda_star: f64,
    /// Set when the minimizing c lies within a couple of grid cells of
    /// the truncation edge, where attainment is not guaranteed.
    pub near_boundary: bool,
    /// Maximizers of g/h_{c*} on {y ≤ x} and {y ≥ x}; they are
    /// stopping points of the problem.
    pub argmax_left: Option<f64>,
    pub argmax_right: Option<f64>,
}

/// Grid solution: values, per-point minimizers, stopping set, and the
/// worst-case prior per grid point.
#[derive(Debug, Clone)]
pub struct ValueSolution {
    pub grid: Vec<f64>,
    pub g: Vec<f64>,
    pub v: Vec<f64>,
    pub c_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub in_stopping_set: Vec<bool>,
    /// Maximal closed intervals of stopping points. Endpoints touching
    /// the truncation window extend to the state-interval boundary.
    pub stopping_intervals: Vec<(f64, f64)>,
    pub worst_case: Vec<DriftSelector>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn straddle_at_minus_two() {
        assert_eq!(RewardFunction::Straddle.eval(-2.0), 2.0);
    }

    #[test]
    fn step_linear_is_left_closed_at_zero() {
        assert_eq!(RewardFunction::StepLinear.eval(0.0), 1.0);
        assert_eq!(RewardFunction::StepLinear.eval(1e-12), 1e-12);
        assert_eq!(RewardFunction::StepLinear.eval(-3.0), 1.0);
    }

    #[test]
    fn call_below_strike_is_zero() {
        assert_eq!(RewardFunction::Call { strike: 1.0 }.eval(0.5), 0.0);
    }

    #[test]
    fn reward_outside_interval_is_domain_error() {
        let p = AmbiguityProblem::new(
            DiffusionSpec::geometric_bm(0.0, 1.0),
            0.0,
            1.0,
            RewardFunction::Call { strike: 1.0 },
        )
        .unwrap();
        assert!(matches!(p.reward_at(-1.0), Err(Error::Domain(_))));
        assert_eq!(p.reward_at(2.0).unwrap(), 1.0);
    }

    #[test]
    fn merge_point_sign_convention() {
        let s = DriftSelector::MergePoint(0.3);
        let kappa = 1.5;
        assert_eq!(s.theta(0.2999, kappa), kappa);
        assert_eq!(s.theta(0.3, kappa), -kappa);
        assert_eq!(s.theta(10.0, kappa), -kappa);
    }

    #[test]
    fn sigma_zero_rejected() {
        let d = DiffusionSpec::arithmetic_bm(0.0, 0.0);
        let err = d.validate().unwrap_err();
        assert!(err.to_string().contains("sigma must be positive"));
    }

    #[test]
    fn crash_factor_outside_unit_interval_rejected() {
        for cf in [0.0, 1.0, 1.5, -0.2] {
            let p = CrashProblem::new(
                DiffusionSpec::geometric_bm(0.0, 1.0),
                1.0,
                RewardFunction::Call { strike: 1.0 },
                cf,
            );
            assert!(p.is_err(), "crash factor {cf} should be rejected");
        }
    }

    #[test]
    fn crash_rejects_decreasing_reward() {
        let p = CrashProblem::new(
            DiffusionSpec::geometric_bm(0.0, 1.0),
            1.0,
            RewardFunction::Put { strike: 1.0 },
            0.5,
        );
        assert!(p.is_err());
    }

    #[test]
    fn tabulated_interpolates_and_extends() {
        let f = RewardFunction::Tabulated {
            xs: vec![0.0, 1.0, 2.0],
            ys: vec![0.0, 2.0, 2.0],
        };
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(-5.0), 0.0);
        assert_eq!(f.eval(7.0), 2.0);
    }

    fn arb_selector(kappa: f64) -> impl Strategy<Value = DriftSelector> {
        prop_oneof![
            (-3.0..3.0f64).prop_map(DriftSelector::MergePoint),
            (-1.0..1.0f64).prop_map(move |u| DriftSelector::ConstantTheta(u * kappa)),
            (
                proptest::collection::vec(-3.0..3.0f64, 1..5),
                proptest::collection::vec(-1.0..1.0f64, 6)
            )
                .prop_map(move |(mut breaks, us)| {
                    breaks.sort_by(f64::total_cmp);
                    breaks.dedup();
                    let thetas = us[..breaks.len() + 1]
                        .iter()
                        .map(|u| u * kappa)
                        .collect();
                    DriftSelector::Piecewise { breaks, thetas }
                }),
        ]
    }

    proptest! {
        #[test]
        fn selector_respects_ambiguity_radius(
            sel in arb_selector(0.7),
            x in -10.0..10.0f64,
        ) {
            let kappa = 0.7;
            sel.validate(kappa).unwrap();
            prop_assert!(sel.theta(x, kappa).abs() <= kappa + 1e-12);
        }

        #[test]
        fn merge_point_matches_sign_rule(c in -5.0..5.0f64, x in -6.0..6.0f64) {
            let kappa = 1.0;
            let sel = DriftSelector::MergePoint(c);
            let expect = if x < c { kappa } else { -kappa };
            prop_assert_eq!(sel.theta(x, kappa), expect);
        }
    }
}
