//! Crash-scenario stopping: the post-crash ordinary stopping value ĝ,
//! the reduction to a Dynkin game with lower payoff g and upper payoff
//! ĝ (stopper tie priority), and the closed-form geometric-Brownian
//! call solution.
//!
//! For GBM dY = Y(μ dt + σ dW) with reward (y − K)⁺ and μ < r the
//! post-crash value is the classical threshold solution
//!
//!   ĝ(y) = c·y − K        for c·y ≥ x*,
//!   ĝ(y) = d·(c·y)^γ      for c·y < x*,
//!
//! with γ the positive root of ½σ²z² + (μ − ½σ²)z − r = 0 and (x*, d)
//! pinned by value matching and smooth fit. The game value equals g
//! above the single crossing point x' of g and ĝ and equals ĝ below;
//! x' is the root of d(cx)^γ = x − K inside (K, x*/c).

use crate::closed_form::GbmPowerHc;
use crate::error::{Error, Result};
use crate::majorant::{HcPath, Solver, SolverOptions};
use crate::problem::{CrashProblem, DiffusionFamily, RewardFunction};

/// Closed-form solution of the GBM call crash model.
#[derive(Debug, Clone, PartialEq)]
pub struct CrashSolution {
    /// Power exponent γ > 1.
    pub gamma: f64,
    /// Post-crash stopping threshold on the crashed price c·Y.
    pub x_star: f64,
    /// Continuation-branch coefficient d > 0.
    pub d_coef: f64,
    /// Pre-crash stopping threshold on Y.
    pub x_prime: f64,
    pub crash_factor: f64,
    pub strike: f64,
}

/// Positive root of ½σ²z² + (μ − ½σ²)z − r = 0; the perpetual call
/// needs γ > 1, which is exactly μ < r.
pub fn gbm_call_exponent(mu: f64, sigma: f64, r: f64) -> Result<f64> {
    let (_, gamma) = GbmPowerHc::exponents(mu, sigma, r);
    if gamma <= 1.0 {
        return Err(Error::UnboundedValue(format!(
            "gamma = {gamma:.6} <= 1 (mu >= r): the perpetual call value is infinite"
        )));
    }
    Ok(gamma)
}

/// Post-crash value function descriptor.
#[derive(Debug, Clone)]
pub enum PostCrash {
    /// Classical threshold solution for the GBM call.
    GbmCallClosedForm {
        gamma: f64,
        x_star: f64,
        d_coef: f64,
        crash_factor: f64,
        strike: f64,
    },
    /// Tabulated value of the κ = 0 stopping problem with reward
    /// y ↦ g(c·y), produced by the majorant solver.
    Numeric {
        xs: Vec<f64>,
        values: Vec<f64>,
        crash_factor: f64,
    },
}

impl PostCrash {
    /// ĝ(y): value of optimally stopping the crashed price from y.
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            PostCrash::GbmCallClosedForm {
                gamma,
                x_star,
                d_coef,
                crash_factor,
                strike,
            } => {
                let cy = crash_factor * y;
                if cy >= *x_star {
                    cy - strike
                } else {
                    d_coef * cy.powf(*gamma)
                }
            }
            PostCrash::Numeric { xs, values, .. } => {
                if y <= xs[0] {
                    return values[0];
                }
                if y >= xs[xs.len() - 1] {
                    return values[values.len() - 1];
                }
                let i = xs.partition_point(|&t| t < y).max(1);
                let t = (y - xs[i - 1]) / (xs[i] - xs[i - 1]);
                values[i - 1] + t * (values[i] - values[i - 1])
            }
        }
    }
}

/// Value function ĝ of the post-crash stopping problem.
pub fn post_crash_value(problem: &CrashProblem) -> Result<PostCrash> {
    problem.validate()?;
    match (&problem.diffusion.family, &problem.reward) {
        (DiffusionFamily::GeometricBm { mu, sigma }, RewardFunction::Call { strike }) => {
            let gamma = gbm_call_exponent(*mu, *sigma, problem.r)?;
            // Smooth fit: d·γ·x^{γ−1} = 1 and d·x^γ = x − K.
            let x_star = gamma * strike / (gamma - 1.0);
            let d_coef = (x_star - strike) / x_star.powf(gamma);
            Ok(PostCrash::GbmCallClosedForm {
                gamma,
                x_star,
                d_coef,
                crash_factor: problem.crash_factor,
                strike: *strike,
            })
        }
        _ => {
            // Ordinary stopping of the crashed price: κ = 0 majorant
            // solve on the reward y ↦ g(c·y), tabulated for reuse.
            let c = problem.crash_factor;
            let (lo, hi) = numeric_range(problem);
            let n = 512;
            let xs: Vec<f64> = (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect();
            let crashed: Vec<f64> = xs.iter().map(|&y| problem.reward.eval(c * y)).collect();
            let scaled = crate::problem::AmbiguityProblem::new(
                problem.diffusion.clone(),
                0.0,
                problem.r,
                RewardFunction::Tabulated {
                    xs: xs.clone(),
                    ys: crashed,
                },
            )?;
            let solver = Solver::new(
                scaled,
                SolverOptions {
                    path: HcPath::Auto,
                    ..Default::default()
                },
            )?;
            let sol = solver.solve_on_grid(&xs)?;
            Ok(PostCrash::Numeric {
                xs,
                values: sol.v,
                crash_factor: c,
            })
        }
    }
}

fn numeric_range(problem: &CrashProblem) -> (f64, f64) {
    let (a, b) = problem.diffusion.interval;
    let mut pts: Vec<f64> = problem.reward.kinks();
    pts.retain(|&p| p > a && p < b);
    let core = pts.iter().cloned().fold(1.0f64, f64::max);
    if a == 0.0 {
        (core / 64.0, core * 64.0)
    } else {
        (core - 12.0, core + 12.0)
    }
}

/// Root of d(cx)^γ = x − K inside (K, x*/c): the unique crossing of the
/// reward and the post-crash value.
pub fn pre_crash_threshold(
    gamma: f64,
    x_star: f64,
    d_coef: f64,
    problem: &CrashProblem,
) -> Result<f64> {
    let strike = match problem.reward {
        RewardFunction::Call { strike } => strike,
        _ => {
            return Err(Error::Structure(
                "pre_crash_threshold applies to the call closed form".into(),
            ))
        }
    };
    let c = problem.crash_factor;
    let f = |x: f64| d_coef * (c * x).powf(gamma) - (x - strike);
    let (mut lo, mut hi) = (strike, x_star / c);
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::Bracket(format!(
            "no sign change of d(cx)^γ − (x − K) on ({lo}, {hi}): f(lo) = {flo:.3e}, \
             f(hi) = {fhi:.3e}; inconsistent (γ, x*, d)"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi.abs() {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Full closed-form solution for the GBM call crash model.
pub fn solve_gbm_call(problem: &CrashProblem) -> Result<CrashSolution> {
    let post = post_crash_value(problem)?;
    match post {
        PostCrash::GbmCallClosedForm {
            gamma,
            x_star,
            d_coef,
            crash_factor,
            strike,
        } => {
            let x_prime = pre_crash_threshold(gamma, x_star, d_coef, problem)?;
            Ok(CrashSolution {
                gamma,
                x_star,
                d_coef,
                x_prime,
                crash_factor,
                strike,
            })
        }
        PostCrash::Numeric { .. } => Err(Error::Structure(
            "closed form requires geometric Brownian motion with a call reward; \
             use reduce_to_game + the Dynkin tree oracle instead"
                .into(),
        )),
    }
}

impl CrashSolution {
    /// Game value: x − K at and above x', d(cx)^γ below.
    pub fn value(&self, x: f64) -> f64 {
        if x >= self.x_prime {
            x - self.strike
        } else {
            self.d_coef * (self.crash_factor * x).powf(self.gamma)
        }
    }

    /// ĝ(y) of the underlying closed form.
    pub fn post_crash(&self, y: f64) -> f64 {
        let cy = self.crash_factor * y;
        if cy >= self.x_star {
            cy - self.strike
        } else {
            self.d_coef * cy.powf(self.gamma)
        }
    }
}

/// The Dynkin game of the reduction: lower payoff g, upper payoff ĝ,
/// stopper tie priority, plus the verified single-crossing point.
#[derive(Debug, Clone)]
pub struct GameReduction {
    pub lower: RewardFunction,
    pub upper: PostCrash,
    /// Where g − ĝ changes sign: g ≤ ĝ below, g ≥ ĝ above.
    pub x_prime: f64,
}

/// Builds the game payoff pair and verifies the single-crossing
/// structure of g − ĝ; a `Structure` error means only the tree oracle
/// (never the closed-form equilibrium) may value this input.
pub fn reduce_to_game(problem: &CrashProblem) -> Result<GameReduction> {
    let upper = post_crash_value(problem)?;
    let (lo, hi) = numeric_range(problem);
    let n = 4096;
    let diff = |x: f64| problem.reward.eval(x) - upper.eval(x);
    let mut crossings = Vec::new();
    let mut prev_sign = 0i8;
    let mut prev_x = lo;
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let d = diff(x);
        let tol = 1e-10 * (1.0 + d.abs());
        let sign = if d > tol {
            1
        } else if d < -tol {
            -1
        } else {
            0
        };
        if sign != 0 {
            if prev_sign != 0 && sign != prev_sign {
                // Refine the crossing inside the bracketing cell.
                let (mut a, mut b) = (prev_x, x);
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if diff(m).signum() == diff(a).signum() {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                crossings.push(0.5 * (a + b));
            }
            prev_sign = sign;
            prev_x = x;
        }
    }
    if crossings.len() != 1 {
        return Err(Error::Structure(format!(
            "g − ĝ changes sign {} times on ({lo:.4}, {hi:.4}); the single-crossing \
             equilibrium argument does not apply, fall back to the tree oracle",
            crossings.len()
        )));
    }
    Ok(GameReduction {
        lower: problem.reward.clone(),
        upper,
        x_prime: crossings[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::problem::DiffusionSpec;
    use approx::assert_relative_eq;

    fn fix_gbm1() -> CrashProblem {
        CrashProblem::new(
            DiffusionSpec::geometric_bm(0.0, 1.0),
            1.0,
            RewardFunction::Call { strike: 1.0 },
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn closed_form_constants() {
        let sol = solve_gbm_call(&fix_gbm1()).unwrap();
        assert_relative_eq!(sol.gamma, 2.0, max_relative = 1e-12);
        assert_relative_eq!(sol.x_star, 2.0, max_relative = 1e-12);
        assert_relative_eq!(sol.d_coef, 0.25, max_relative = 1e-12);
    }

    #[test]
    fn pre_crash_threshold_matches_quadratic_root() {
        // Oracle: 0.0625 x² = x − 1 has roots 8 ± 4√3; the one inside
        // (K, x*/c) = (1, 4) is 8 − 4√3 = (1 − √0.75)/0.125.
        let expect = (1.0 - 0.75f64.sqrt()) / 0.125;
        assert_relative_eq!(expect, 8.0 - 4.0 * 3.0f64.sqrt(), max_relative = 1e-14);
        let sol = solve_gbm_call(&fix_gbm1()).unwrap();
        assert_relative_eq!(sol.x_prime, expect, max_relative = 1e-9);
        assert!((sol.x_prime - 1.07180).abs() < 1e-5);
        assert!(sol.x_prime > sol.strike && sol.x_prime < sol.x_star / sol.crash_factor);
        assert!(sol.x_prime < sol.x_star);
    }

    #[test]
    fn post_crash_branches_agree_at_free_boundary() {
        let sol = solve_gbm_call(&fix_gbm1()).unwrap();
        // c·y = x*: stopping and continuation branches coincide.
        let y = sol.x_star / sol.crash_factor;
        let stopping = sol.crash_factor * y - sol.strike;
        let continuation = sol.d_coef * (sol.crash_factor * y).powf(sol.gamma);
        assert_relative_eq!(stopping, continuation, max_relative = 1e-12);
        // ĝ(4) = 0.5·4 − 1 = 1.
        assert_relative_eq!(sol.post_crash(4.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn smooth_fit_at_post_crash_threshold() {
        let sol = solve_gbm_call(&fix_gbm1()).unwrap();
        let deriv = sol.gamma * sol.d_coef * sol.x_star.powf(sol.gamma - 1.0);
        assert_relative_eq!(deriv, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn crash_value_branches() {
        let sol = solve_gbm_call(&fix_gbm1()).unwrap();
        assert_relative_eq!(sol.value(1.0), 0.0625, max_relative = 1e-12);
        assert_relative_eq!(sol.value(2.0), 1.0, max_relative = 1e-12);
        let at_prime = sol.value(sol.x_prime);
        assert_relative_eq!(at_prime, sol.x_prime - 1.0, max_relative = 1e-9);
        // Continuity at x': both branches equal.
        let below = sol.d_coef * (sol.crash_factor * sol.x_prime).powf(sol.gamma);
        assert_relative_eq!(below, at_prime, max_relative = 1e-9);
    }

    #[test]
    fn mu_at_or_above_r_is_unbounded() {
        let p = CrashProblem::new(
            DiffusionSpec::geometric_bm(1.0, 1.0),
            1.0,
            RewardFunction::Call { strike: 1.0 },
            0.5,
        )
        .unwrap();
        let err = solve_gbm_call(&p).unwrap_err();
        assert!(matches!(err, Error::UnboundedValue(_)), "{err}");
    }

    #[test]
    fn reduction_has_single_crossing_at_x_prime() {
        let p = fix_gbm1();
        let game = reduce_to_game(&p).unwrap();
        let sol = solve_gbm_call(&p).unwrap();
        assert_relative_eq!(game.x_prime, sol.x_prime, max_relative = 1e-3);
        // g ≤ ĝ below the crossing, g ≥ ĝ above.
        for &x in &[0.2, 0.6, 1.0, 1.05] {
            assert!(p.reward.eval(x) <= game.upper.eval(x) + 1e-12);
        }
        for &x in &[1.1, 1.5, 2.0, 5.0] {
            assert!(p.reward.eval(x) + 1e-12 >= game.upper.eval(x));
        }
    }

    #[test]
    fn crash_value_never_exceeds_no_crash_value() {
        let p = fix_gbm1();
        let sol = solve_gbm_call(&p).unwrap();
        // Classical no-crash value: d·x^γ below x*, x − K above.
        let classical = |x: f64| {
            if x >= sol.x_star {
                x - sol.strike
            } else {
                sol.d_coef * x.powf(sol.gamma)
            }
        };
        for i in 0..200 {
            let x = 0.1 + 5.0 * i as f64 / 199.0;
            assert!(
                sol.value(x) <= classical(x) + 1e-12,
                "crash value above classical at x = {x}"
            );
        }
    }

    #[test]
    fn dynkin_tree_confirms_value_at_one() {
        let p = fix_gbm1();
        let sol = solve_gbm_call(&p).unwrap();
        let spec =
            oracle::TreeSpec::for_diffusion(&p.diffusion, 1.0, 1e-3, 14.0, 0.05, 30.0).unwrap();
        let tv = oracle::crash_reduced_tree(&spec, &p).unwrap();
        assert!(
            (tv.root - sol.value(1.0)).abs() <= 0.01 * sol.value(1.0),
            "tree {} vs closed form {}",
            tv.root,
            sol.value(1.0)
        );
    }

    #[test]
    fn numeric_post_crash_matches_closed_form_for_call() {
        // The generic κ=0 route must reproduce the call closed form.
        let p = fix_gbm1();
        let sol = solve_gbm_call(&p).unwrap();
        let numeric = {
            let c = p.crash_factor;
            let xs: Vec<f64> = (0..256).map(|i| 0.2 + 6.0 * i as f64 / 255.0).collect();
            let crashed: Vec<f64> = xs.iter().map(|&y| p.reward.eval(c * y)).collect();
            let scaled = crate::problem::AmbiguityProblem::new(
                p.diffusion.clone(),
                0.0,
                p.r,
                RewardFunction::Tabulated {
                    xs: xs.clone(),
                    ys: crashed,
                },
            )
            .unwrap();
            let solver = Solver::new(scaled, SolverOptions::default()).unwrap();
            (xs.clone(), solver.solve_on_grid(&xs).unwrap().v)
        };
        for (x, v) in numeric.0.iter().zip(&numeric.1) {
            let expect = sol.post_crash(*x);
            assert!(
                (v - expect).abs() <= 5e-3 * expect.max(0.05),
                "numeric ĝ({x}) = {v} vs closed form {expect}"
            );
        }
    }

    #[test]
    fn nash_equilibrium_holds_within_monte_carlo_error() {
        let p = fix_gbm1();
        let sol = solve_gbm_call(&p).unwrap();
        let v1 = sol.value(1.0);
        let xp = sol.x_prime;
        // Equilibrium play: stop at x', crash at x', post-crash at x*.
        let eq = oracle::mc_crash_game(&p, 1.0, xp, xp, sol.x_star, 2e-4, 14.0, 30_000, 9)
            .unwrap();
        assert!(
            (eq.mean - v1).abs() <= 3.0 * eq.std_error,
            "equilibrium payoff {} ± {} vs v = {v1}",
            eq.mean,
            eq.std_error
        );
        // Stopper deviation (stop too early): payoff ≤ v.
        let dev_tau =
            oracle::mc_crash_game(&p, 1.0, 1.03, xp, sol.x_star, 2e-4, 14.0, 30_000, 10)
                .unwrap();
        assert!(
            dev_tau.mean <= v1 + 3.0 * dev_tau.std_error,
            "stopper deviation gained: {} vs {v1}",
            dev_tau.mean
        );
        // Adversary deviation (crash later): payoff ≥ v.
        let dev_sigma =
            oracle::mc_crash_game(&p, 1.0, xp, 1.8, sol.x_star, 2e-4, 14.0, 30_000, 11)
                .unwrap();
        assert!(
            dev_sigma.mean >= v1 - 3.0 * dev_sigma.std_error,
            "adversary deviation gained: {} vs {v1}",
            dev_sigma.mean
        );
    }
}
