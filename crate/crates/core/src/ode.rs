//! Numerical fundamental solutions of ½σ²(x)ψ'' + (μ(x)±κ)ψ' = rψ and
//! the general-diffusion h_c assembled from them.
//!
//! ψ grows or decays exponentially, so the solver integrates the
//! Riccati variable u = ψ'/ψ, which stays O(1):
//!
//!   u' = 2(r − (μ(x)±κ)·u)/σ²(x) − u²
//!
//! The increasing solution is the attracting branch when integrating
//! rightward, the decreasing one when integrating leftward, so each is
//! produced by integrating from the matching end of the window after a
//! run-in segment that lets u forget its initial condition. log ψ is
//! accumulated alongside by quadrature of u and normalized to 0 at the
//! window midpoint.

use crate::closed_form::log_sum_exp;
use crate::error::{Error, Result};
use crate::problem::{DiffusionSpec, Merge};

/// Monotonicity label of a fundamental solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Tabulated positive solution of the shifted ODE on a truncated window.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    pub direction: Direction,
    /// Signed drift shift added to μ(x) (+κ or −κ).
    pub drift_shift: f64,
    /// Strictly increasing grid on the truncation window.
    pub grid: Vec<f64>,
    /// log ψ at grid nodes, normalized to 0 at the midpoint node.
    pub log_psi: Vec<f64>,
    /// u = ψ'/ψ at grid nodes.
    pub u: Vec<f64>,
}

impl FundamentalSolution {
    pub fn window(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let (a, b) = self.window();
        if x < a - 1e-12 * (b - a) || x > b + 1e-12 * (b - a) {
            return Err(Error::Domain(format!(
                "x = {x} outside the truncated window [{a}, {b}]"
            )));
        }
        let n = self.grid.len();
        let i = match self.grid.binary_search_by(|g| g.total_cmp(&x)) {
            Ok(i) => return Ok((i.min(n - 2), if i == n - 1 { 1.0 } else { 0.0 })),
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let t = (x - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        Ok((i, t.clamp(0.0, 1.0)))
    }

    /// Linear interpolation of log ψ between nodes.
    pub fn log_psi_at(&self, x: f64) -> Result<f64> {
        let (i, t) = self.locate(x)?;
        Ok(self.log_psi[i] + t * (self.log_psi[i + 1] - self.log_psi[i]))
    }

    /// Linear interpolation of u = ψ'/ψ between nodes.
    pub fn u_at(&self, x: f64) -> Result<f64> {
        let (i, t) = self.locate(x)?;
        Ok(self.u[i] + t * (self.u[i + 1] - self.u[i]))
    }

    pub fn psi_at(&self, x: f64) -> Result<f64> {
        Ok(self.log_psi_at(x)?.exp())
    }

    pub fn psi_prime_at(&self, x: f64) -> Result<f64> {
        Ok(self.u_at(x)? * self.psi_at(x)?)
    }
}

// Cash-Karp embedded Runge-Kutta 4(5) tableau.
const CK_A: [[f64; 5]; 5] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0, 0.0, 0.0],
    [-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0, 0.0],
    [
        1631.0 / 55296.0,
        175.0 / 512.0,
        575.0 / 13824.0,
        44275.0 / 110592.0,
        253.0 / 4096.0,
    ],
];
const CK_C: [f64; 6] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 3.0 / 5.0, 1.0, 7.0 / 8.0];
const CK_B5: [f64; 6] = [
    37.0 / 378.0,
    0.0,
    250.0 / 621.0,
    125.0 / 594.0,
    0.0,
    512.0 / 1771.0,
];
const CK_B4: [f64; 6] = [
    2825.0 / 27648.0,
    0.0,
    18575.0 / 48384.0,
    13525.0 / 55296.0,
    277.0 / 14336.0,
    1.0 / 4.0,
];

const STEP_RTOL: f64 = 1e-10;
const STEP_ATOL: f64 = 1e-12;

/// Adaptively integrates y' = f(x, y) for y = (u, log ψ) from `x0` to
/// `x1` (signed direction), mutating `y` in place.
fn rk45<F: Fn(f64, [f64; 2]) -> [f64; 2]>(
    f: &F,
    x0: f64,
    x1: f64,
    y: &mut [f64; 2],
    span_scale: f64,
) -> Result<()> {
    let total = x1 - x0;
    if total == 0.0 {
        return Ok(());
    }
    let dir = total.signum();
    let mut x = x0;
    let mut h = total / 64.0;
    let h_min = 1e-14 * span_scale.max(total.abs());
    let mut k = [[0.0f64; 2]; 6];
    while (x1 - x) * dir > 0.0 {
        if h.abs() > (x1 - x).abs() {
            h = x1 - x;
        }
        if h.abs() < h_min {
            return Err(Error::Stiffness(format!(
                "adaptive step underflowed at x = {x} (|h| = {})",
                h.abs()
            )));
        }
        k[0] = f(x, *y);
        for s in 1..6 {
            let mut ys = *y;
            for (j, kj) in k.iter().enumerate().take(s) {
                ys[0] += h * CK_A[s - 1][j] * kj[0];
                ys[1] += h * CK_A[s - 1][j] * kj[1];
            }
            k[s] = f(x + CK_C[s] * h, ys);
        }
        let mut y5 = *y;
        let mut y4 = *y;
        for (j, kj) in k.iter().enumerate() {
            y5[0] += h * CK_B5[j] * kj[0];
            y5[1] += h * CK_B5[j] * kj[1];
            y4[0] += h * CK_B4[j] * kj[0];
            y4[1] += h * CK_B4[j] * kj[1];
        }
        let mut err: f64 = 0.0;
        let mut ok = true;
        for i in 0..2 {
            if !y5[i].is_finite() {
                ok = false;
                break;
            }
            let scale = STEP_ATOL + STEP_RTOL * y5[i].abs().max(y[i].abs());
            err = err.max((y5[i] - y4[i]).abs() / scale);
        }
        if ok && err <= 1.0 {
            x += h;
            *y = y5;
            let grow = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
            h *= grow.clamp(0.2, 5.0);
        } else if ok {
            h *= (0.9 * err.powf(-0.25)).clamp(0.1, 0.9);
        } else {
            h *= 0.25;
        }
    }
    Ok(())
}

/// Rough guard against non-natural boundaries: at a finite endpoint the
/// volatility must collapse (as it does for geometric Brownian motion
/// at 0); otherwise the boundary is attainable and out of scope.
fn check_natural_boundaries(diffusion: &DiffusionSpec, window: (f64, f64)) -> Result<()> {
    let (a, b) = diffusion.interval;
    let mid = 0.5 * (window.0 + window.1);
    let sigma_mid = diffusion.sigma(mid);
    for e in [a, b] {
        if e.is_finite() {
            let delta = 1e-4 * (window.1 - window.0);
            let probe = if e <= window.0 { e + delta } else { e - delta };
            if diffusion.sigma(probe).abs() > 0.05 * sigma_mid {
                return Err(Error::Unsupported(format!(
                    "boundary {e} looks attainable (sigma does not vanish there); \
                     only natural boundaries are supported"
                )));
            }
        }
    }
    Ok(())
}

/// Tabulates one fundamental solution on `window = (a_t, b_t)`.
///
/// `drift_shift` is the signed perturbation added to μ(x). Integration
/// starts from a run-in segment outside the window; two distinct
/// initial conditions must agree to 1e-8 at window entry, otherwise the
/// run-in did not forget the initial data and a `Truncation` error asks
/// for a wider truncation.
pub fn solve_fundamental(
    diffusion: &DiffusionSpec,
    drift_shift: f64,
    r: f64,
    direction: Direction,
    window: (f64, f64),
    grid_n: usize,
) -> Result<FundamentalSolution> {
    let (a_t, b_t) = window;
    if !(a_t < b_t) {
        return Err(Error::Validation(format!(
            "truncation window must satisfy a_t < b_t, got ({a_t}, {b_t})"
        )));
    }
    if grid_n < 64 {
        return Err(Error::Validation("grid_n must be >= 64".into()));
    }
    let (a, b) = diffusion.interval;
    if a_t <= a || b_t >= b {
        return Err(Error::Validation(format!(
            "truncation [{a_t}, {b_t}] must lie strictly inside the state interval ({a}, {b})"
        )));
    }
    check_natural_boundaries(diffusion, window)?;

    let m = |x: f64| diffusion.mu(x) + drift_shift;
    let rhs = move |x: f64, y: [f64; 2]| -> [f64; 2] {
        let s2 = diffusion.sigma(x).powi(2);
        [2.0 * (r - m(x) * y[0]) / s2 - y[0] * y[0], y[0]]
    };
    // Local equilibrium branches of the Riccati equation at x.
    let equilibrium =
        |x: f64| -> (f64, f64) { crate::closed_form::quadratic_roots(diffusion.sigma(x), m(x), r) };

    let span = b_t - a_t;
    // Entry point of the window and signed integration direction.
    let (entry, sign) = match direction {
        Direction::Increasing => (a_t, 1.0),
        Direction::Decreasing => (b_t, -1.0),
    };
    // Run-in length from the local forgetting rate 2·sqrt(m² + 2rσ²)/σ²;
    // retried with geometrically longer (or boundary-closer) run-ins
    // until two distinct initial conditions agree at window entry.
    let sig_e = diffusion.sigma(entry);
    let rate = 2.0 * (m(entry).powi(2) + 2.0 * r * sig_e * sig_e).sqrt() / (sig_e * sig_e);
    let bound = if sign > 0.0 { a } else { b };
    let mut start = entry - sign * (20.0 / rate).max(0.05 * span);
    if bound.is_finite() && (start - bound) * sign <= 0.0 {
        start = bound + sign * 0.5 * (entry - bound).abs();
    }
    let mut ya = [0.0f64; 2];
    let mut stabilized = false;
    let mut last_gap = f64::INFINITY;
    for _ in 0..12 {
        let (eq_lo, eq_hi) = equilibrium(start);
        let u_eq = match direction {
            Direction::Increasing => eq_hi,
            Direction::Decreasing => eq_lo,
        };
        ya = [u_eq, 0.0];
        let mut yb = [u_eq + sign * 0.1 * (1.0 + u_eq.abs()), 0.0];
        rk45(&rhs, start, entry, &mut ya, span)?;
        rk45(&rhs, start, entry, &mut yb, span)?;
        last_gap = (ya[0] - yb[0]).abs();
        if last_gap <= 1e-8 * (1.0 + ya[0].abs()) {
            stabilized = true;
            break;
        }
        start = if bound.is_finite() {
            bound + (start - bound) / 4.0
        } else {
            entry - sign * 4.0 * (entry - start).abs()
        };
    }
    if !stabilized {
        return Err(Error::Truncation(format!(
            "run-in did not stabilize before entering the window \
             (|Δu| = {last_gap:.3e} at x = {entry}); widen the truncation"
        )));
    }

    // March across the window storing u and log ψ at the table nodes:
    // uniform spacing on additive state spaces, geometric on
    // multiplicative ones (interval starting at 0) so resolution does
    // not collapse near the natural boundary.
    let geometric = a == 0.0 && a_t > 0.0;
    let grid: Vec<f64> = (0..grid_n)
        .map(|i| {
            let t = i as f64 / (grid_n - 1) as f64;
            if geometric {
                (a_t.ln() + t * (b_t.ln() - a_t.ln())).exp()
            } else {
                a_t + t * span
            }
        })
        .collect();
    let mut us = vec![0.0; grid_n];
    let mut logs = vec![0.0; grid_n];
    let mut y = [ya[0], 0.0];
    for i in 0..grid_n {
        let idx = match direction {
            Direction::Increasing => i,
            Direction::Decreasing => grid_n - 1 - i,
        };
        if i > 0 {
            let prev_idx = (idx as isize - sign as isize) as usize;
            rk45(&rhs, grid[prev_idx], grid[idx], &mut y, span)?;
        }
        us[idx] = y[0];
        logs[idx] = y[1];
    }
    let mid = grid_n / 2;
    let shift = logs[mid];
    for l in logs.iter_mut() {
        *l -= shift;
    }

    // Monotonicity invariant of the labelled solution.
    let bad = match direction {
        Direction::Increasing => us.iter().any(|&u| u < -1e-9),
        Direction::Decreasing => us.iter().any(|&u| u > 1e-9),
    };
    if bad {
        return Err(Error::Truncation(format!(
            "u changed sign inside the window for the {direction:?} solution; \
             widen the truncation"
        )));
    }

    Ok(FundamentalSolution {
        direction,
        drift_shift,
        grid,
        log_psi: logs,
        u: us,
    })
}

/// The four ψ tables of one ambiguity problem on a common window.
#[derive(Debug, Clone)]
pub struct OdeFamily {
    /// Increasing / decreasing solutions under drift μ+κ.
    pub inc_plus: FundamentalSolution,
    pub dec_plus: FundamentalSolution,
    /// Increasing / decreasing solutions under drift μ−κ.
    pub inc_minus: FundamentalSolution,
    pub dec_minus: FundamentalSolution,
}

impl OdeFamily {
    pub fn build(
        diffusion: &DiffusionSpec,
        kappa: f64,
        r: f64,
        window: (f64, f64),
        grid_n: usize,
    ) -> Result<Self> {
        let inc_plus =
            solve_fundamental(diffusion, kappa, r, Direction::Increasing, window, grid_n)?;
        let dec_plus =
            solve_fundamental(diffusion, kappa, r, Direction::Decreasing, window, grid_n)?;
        let (inc_minus, dec_minus) = if kappa == 0.0 {
            (inc_plus.clone(), dec_plus.clone())
        } else {
            (
                solve_fundamental(diffusion, -kappa, r, Direction::Increasing, window, grid_n)?,
                solve_fundamental(diffusion, -kappa, r, Direction::Decreasing, window, grid_n)?,
            )
        };
        Ok(OdeFamily {
            inc_plus,
            dec_plus,
            inc_minus,
            dec_minus,
        })
    }

    pub fn window(&self) -> (f64, f64) {
        self.inc_plus.window()
    }

    /// Merged h_c evaluator for a merge point or boundary tag.
    pub fn hc(&self, merge: Merge) -> Result<GeneralHc<'_>> {
        let coeffs = match merge {
            Merge::Interior(c) => {
                let (a_t, b_t) = self.window();
                if !(c > a_t && c < b_t) {
                    return Err(Error::Domain(format!(
                        "merge point {c} outside the truncated window ({a_t}, {b_t})"
                    )));
                }
                Some(BranchCoeffs {
                    below: pair_coeffs(&self.inc_plus, &self.dec_plus, c)?,
                    above: pair_coeffs(&self.inc_minus, &self.dec_minus, c)?,
                })
            }
            _ => None,
        };
        Ok(GeneralHc {
            family: self,
            merge,
            coeffs,
        })
    }

    /// The four coefficients (γ1, γ2, γ3, γ4) in linear space.
    pub fn gamma_coeffs(&self, c: f64) -> Result<(f64, f64, f64, f64)> {
        let below = pair_coeffs(&self.inc_plus, &self.dec_plus, c)?;
        let above = pair_coeffs(&self.inc_minus, &self.dec_minus, c)?;
        Ok((
            below.log_g_inc.exp(),
            below.log_g_dec.exp(),
            above.log_g_inc.exp(),
            above.log_g_dec.exp(),
        ))
    }
}

#[derive(Debug, Clone, Copy)]
struct PairCoeffs {
    /// log of the (positive) coefficient multiplying the increasing ψ.
    log_g_inc: f64,
    /// log of the coefficient multiplying the decreasing ψ.
    log_g_dec: f64,
}

#[derive(Debug, Clone, Copy)]
struct BranchCoeffs {
    below: PairCoeffs,
    above: PairCoeffs,
}

/// γ coefficients of one drift-shifted pair at c, from
/// γ_inc = ψ_dec'(c)/D(c), γ_dec = −ψ_inc'(c)/D(c) with the Wronskian
/// D = ψ_inc ψ_dec' − ψ_dec ψ_inc' = ψ_inc ψ_dec (u_dec − u_inc).
fn pair_coeffs(inc: &FundamentalSolution, dec: &FundamentalSolution, c: f64) -> Result<PairCoeffs> {
    let u_inc = inc.u_at(c)?;
    let u_dec = dec.u_at(c)?;
    let gap = u_inc - u_dec;
    if gap <= 1e-12 * (1.0 + u_inc.abs() + u_dec.abs()) {
        return Err(Error::SingularWronskian(format!(
            "u_inc({c}) = {u_inc}, u_dec({c}) = {u_dec}: fundamental pair degenerate \
             (corrupt psi table)"
        )));
    }
    // γ_inc = (−u_dec)/(gap·ψ_inc(c)) > 0, γ_dec = u_inc/(gap·ψ_dec(c)) > 0.
    Ok(PairCoeffs {
        log_g_inc: (-u_dec / gap).max(f64::MIN_POSITIVE).ln() - inc.log_psi_at(c)?,
        log_g_dec: (u_inc / gap).max(f64::MIN_POSITIVE).ln() - dec.log_psi_at(c)?,
    })
}

/// Piecewise h_c on the truncated window:
/// γ1 ψ_+^{+κ} + γ2 ψ_-^{+κ} on {x ≤ c}, γ3 ψ_+^{−κ} + γ4 ψ_-^{−κ} on
/// {x > c}; boundary tags select the pure monotone solutions
/// h_a = ψ_+^{−κ} and h_b = ψ_-^{+κ}.
#[derive(Debug, Clone)]
pub struct GeneralHc<'a> {
    family: &'a OdeFamily,
    pub merge: Merge,
    coeffs: Option<BranchCoeffs>,
}

impl GeneralHc<'_> {
    fn branch(&self, x: f64) -> (&FundamentalSolution, &FundamentalSolution, PairCoeffs) {
        let coeffs = self.coeffs.expect("interior merge point");
        match self.merge {
            Merge::Interior(c) if x <= c => {
                (&self.family.inc_plus, &self.family.dec_plus, coeffs.below)
            }
            _ => (
                &self.family.inc_minus,
                &self.family.dec_minus,
                coeffs.above,
            ),
        }
    }

    pub fn log_h(&self, x: f64) -> Result<f64> {
        match self.merge {
            Merge::LowerBoundary => self.family.inc_minus.log_psi_at(x),
            Merge::UpperBoundary => self.family.dec_plus.log_psi_at(x),
            Merge::Interior(_) => {
                let (inc, dec, co) = self.branch(x);
                Ok(log_sum_exp(
                    co.log_g_inc + inc.log_psi_at(x)?,
                    co.log_g_dec + dec.log_psi_at(x)?,
                ))
            }
        }
    }

    pub fn h(&self, x: f64) -> Result<f64> {
        Ok(self.log_h(x)?.exp())
    }

    /// h'/h at x via the branch weights.
    pub fn dlog_h(&self, x: f64) -> Result<f64> {
        match self.merge {
            Merge::LowerBoundary => self.family.inc_minus.u_at(x),
            Merge::UpperBoundary => self.family.dec_plus.u_at(x),
            Merge::Interior(_) => {
                let (inc, dec, co) = self.branch(x);
                let l_inc = co.log_g_inc + inc.log_psi_at(x)?;
                let l_dec = co.log_g_dec + dec.log_psi_at(x)?;
                let lh = log_sum_exp(l_inc, l_dec);
                Ok((l_inc - lh).exp() * inc.u_at(x)? + (l_dec - lh).exp() * dec.u_at(x)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{ClosedFormHc, ExponentPair};
    use approx::assert_relative_eq;

    fn abm(mu: f64, sigma: f64) -> DiffusionSpec {
        DiffusionSpec::arithmetic_bm(mu, sigma)
    }

    #[test]
    fn constant_coefficients_reproduce_exponential_root() {
        // μ−κ = −1, σ = 1, r = 4: increasing solution is e^{4x}.
        let sol = solve_fundamental(
            &abm(0.0, 1.0),
            -1.0,
            4.0,
            Direction::Increasing,
            (-3.0, 3.0),
            256,
        )
        .unwrap();
        let x_mid = sol.grid[sol.grid.len() / 2];
        for (i, &x) in sol.grid.iter().enumerate() {
            assert_relative_eq!(sol.u[i], 4.0, max_relative = 1e-8);
            assert_relative_eq!(sol.log_psi[i], 4.0 * (x - x_mid), epsilon = 1e-7);
        }
    }

    #[test]
    fn gbm_without_ambiguity_gives_power_solutions() {
        // ½x²ψ'' = ψ: increasing ψ ∝ x² (u = 2/x), decreasing ψ ∝ 1/x.
        let d = DiffusionSpec::geometric_bm(0.0, 1.0);
        let inc =
            solve_fundamental(&d, 0.0, 1.0, Direction::Increasing, (0.25, 4.0), 512).unwrap();
        let dec =
            solve_fundamental(&d, 0.0, 1.0, Direction::Decreasing, (0.25, 4.0), 512).unwrap();
        let mid = inc.grid[inc.grid.len() / 2];
        // Node values are RK-accurate; between nodes the tables are only
        // linear interpolants, so probe at nodes.
        for &i in &[7usize, 96, 213, 448] {
            let x = inc.grid[i];
            assert_relative_eq!(inc.u[i], 2.0 / x, max_relative = 1e-7);
            assert_relative_eq!(inc.log_psi[i], 2.0 * (x / mid).ln(), epsilon = 1e-6);
            assert_relative_eq!(dec.u[i], -1.0 / x, max_relative = 1e-7);
            assert_relative_eq!(dec.log_psi[i], -(x / mid).ln(), epsilon = 1e-6);
        }
    }

    #[test]
    fn labelled_monotonicity_holds_on_every_node() {
        let d = abm(0.4, 0.8);
        let inc =
            solve_fundamental(&d, 0.6, 1.5, Direction::Increasing, (-4.0, 4.0), 512).unwrap();
        let dec =
            solve_fundamental(&d, 0.6, 1.5, Direction::Decreasing, (-4.0, 4.0), 512).unwrap();
        assert!(inc.u.iter().all(|&u| u >= 0.0));
        assert!(dec.u.iter().all(|&u| u <= 0.0));
        assert!(inc.log_psi.windows(2).all(|w| w[1] >= w[0]));
        assert!(dec.log_psi.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn riccati_residual_vanishes_on_nodes() {
        let d = abm(-0.3, 1.2);
        let sol =
            solve_fundamental(&d, 0.5, 2.0, Direction::Increasing, (-3.0, 3.0), 512).unwrap();
        // Residual of ½σ²(u' + u²) + m·u − r with centered-difference u'.
        for i in 1..sol.grid.len() - 1 {
            let du = (sol.u[i + 1] - sol.u[i - 1]) / (sol.grid[i + 1] - sol.grid[i - 1]);
            let u = sol.u[i];
            let m = d.mu(sol.grid[i]) + 0.5;
            let res = 0.5 * 1.2f64.powi(2) * (du + u * u) + m * u - 2.0;
            assert!(res.abs() < 1e-6, "residual {res} at node {i}");
        }
    }

    #[test]
    fn window_must_be_strictly_inside_interval() {
        let d = DiffusionSpec::geometric_bm(0.0, 1.0);
        let err =
            solve_fundamental(&d, 0.0, 1.0, Direction::Increasing, (0.0, 4.0), 128).unwrap_err();
        assert!(err.to_string().contains("strictly inside"), "{err}");
    }

    #[test]
    fn attainable_boundary_is_rejected() {
        // ABM restricted to a finite interval: σ does not vanish at the
        // endpoints, so they cannot be natural.
        let mut d = abm(0.0, 1.0);
        d.interval = (-2.0, 2.0);
        let err =
            solve_fundamental(&d, 0.0, 1.0, Direction::Increasing, (-1.0, 1.0), 128).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)), "{err}");
    }

    fn fix_bm1_family() -> OdeFamily {
        OdeFamily::build(&abm(0.0, 1.0), 1.0, 4.0, (-6.0, 6.0), 2048).unwrap()
    }

    #[test]
    fn gamma_normalization_and_smooth_pasting() {
        let fam = fix_bm1_family();
        for &c in &[-2.0, -0.5, 0.0, 1.3, 3.0] {
            let (g1, g2, _g3, _g4) = fam.gamma_coeffs(c).unwrap();
            let v = g1 * fam.inc_plus.psi_at(c).unwrap() + g2 * fam.dec_plus.psi_at(c).unwrap();
            assert_relative_eq!(v, 1.0, max_relative = 1e-9);
            let dv = g1 * fam.inc_plus.psi_prime_at(c).unwrap()
                + g2 * fam.dec_plus.psi_prime_at(c).unwrap();
            assert!(dv.abs() < 1e-9, "pasting residual {dv} at c = {c}");
        }
    }

    #[test]
    fn gamma_matches_closed_form_weights() {
        // Effective branch weights γ1 ψ_+(c), γ2 ψ_-(c) must equal the
        // closed-form weights −β1/(β2−β1) = 2/3 and β2/(β2−β1) = 1/3.
        let fam = fix_bm1_family();
        let (g1, g2, _, _) = fam.gamma_coeffs(0.0).unwrap();
        let w_inc = g1 * fam.inc_plus.psi_at(0.0).unwrap();
        let w_dec = g2 * fam.dec_plus.psi_at(0.0).unwrap();
        assert_relative_eq!(w_inc, 2.0 / 3.0, max_relative = 1e-6);
        assert_relative_eq!(w_dec, 1.0 / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn general_hc_matches_closed_form_on_fix_bm1() {
        let fam = fix_bm1_family();
        let pair = ExponentPair::for_abm(0.0, 1.0, 1.0, 4.0).unwrap();
        for &c in &[-1.0, 0.0, 0.8] {
            let hc = fam.hc(Merge::Interior(c)).unwrap();
            let cf = ClosedFormHc::new(pair, Merge::Interior(c));
            assert_relative_eq!(hc.h(c).unwrap(), 1.0, max_relative = 1e-9);
            for &dx in &[-2.0, -0.5, 0.5, 2.0] {
                let x = c + dx;
                assert_relative_eq!(hc.h(x).unwrap(), cf.h(x), max_relative = 1e-4);
            }
        }
        // Headline value of the closed-form fixture.
        let hc = fam.hc(Merge::Interior(0.0)).unwrap();
        assert_relative_eq!(hc.h(0.5).unwrap(), 2.708271660424512, max_relative = 1e-4);
    }

    #[test]
    fn boundary_variants_match_pure_exponentials() {
        let fam = fix_bm1_family();
        let ha = fam.hc(Merge::LowerBoundary).unwrap();
        let hb = fam.hc(Merge::UpperBoundary).unwrap();
        // h_a ∝ e^{α2 x} = e^{4x}, h_b ∝ e^{β1 x} = e^{-4x}.
        for &x in &[-2.0, 0.5, 2.0] {
            assert_relative_eq!(
                ha.log_h(x).unwrap() - ha.log_h(0.0).unwrap(),
                4.0 * x,
                epsilon = 1e-5
            );
            assert_relative_eq!(
                hb.log_h(x).unwrap() - hb.log_h(0.0).unwrap(),
                -4.0 * x,
                epsilon = 1e-5
            );
        }
    }

    #[test]
    fn second_difference_at_merge_point() {
        let fam = fix_bm1_family();
        let hc = fam.hc(Merge::Interior(0.7)).unwrap();
        let eps = 12.0 / 2047.0 * 4.0; // four grid cells
        let d2 = (hc.h(0.7 + eps).unwrap() - 2.0 * hc.h(0.7).unwrap() + hc.h(0.7 - eps).unwrap())
            / (eps * eps);
        // r/(½σ²) = 8 up to O(eps) + interpolation error.
        assert_relative_eq!(d2, 8.0, max_relative = 0.05);
    }

    #[test]
    fn positive_combinations_have_minima_only() {
        // Extremal points of s·ψ_+ + (1−s)·ψ_- must be minima.
        let fam = fix_bm1_family();
        let inc = &fam.inc_plus;
        let dec = &fam.dec_plus;
        for &s in &[0.2, 0.5, 0.8] {
            let combo =
                |x: f64| -> f64 { s * inc.psi_at(x).unwrap() + (1.0 - s) * dec.psi_at(x).unwrap() };
            let dcombo = |x: f64| -> f64 {
                s * inc.psi_prime_at(x).unwrap() + (1.0 - s) * dec.psi_prime_at(x).unwrap()
            };
            // Locate the sign change of the derivative.
            let mut lo = -5.5;
            let mut hi = 5.5;
            assert!(dcombo(lo) < 0.0 && dcombo(hi) > 0.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if dcombo(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let c = 0.5 * (lo + hi);
            let eps = 0.05;
            assert!(
                combo(c + eps) > combo(c) && combo(c - eps) > combo(c),
                "extremum at {c} is not a minimum for s = {s}"
            );
        }
    }

    #[test]
    fn singular_wronskian_detected_on_corrupt_table() {
        let fam = fix_bm1_family();
        let mut broken = fam.clone();
        // Force u_dec = u_inc so the Wronskian vanishes.
        broken.dec_plus.u = broken.inc_plus.u.clone();
        let err = broken.gamma_coeffs(0.0).unwrap_err();
        assert!(matches!(err, Error::SingularWronskian(_)), "{err}");
    }
}
