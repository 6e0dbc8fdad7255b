//! Independent discrete-time oracles: robust Snell envelopes on
//! recombining lattices, Dynkin-game backward induction, and
//! Euler–Maruyama Monte Carlo under explicit priors.
//!
//! Everything here is deliberately brute-force. The lattice carries a
//! random walk with a drift-dependent probability tilt
//! p_θ = ½(1 + (drift+θ)·√dt/σ); perpetual values come from value
//! iteration of the one-step Bellman operator, whose fixed-point error
//! after n sweeps is bounded by e^{-r·n·dt}. Geometric Brownian motion
//! runs on a log-space lattice so the tree recombines and stays
//! positive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{AmbiguityProblem, CrashProblem, DiffusionFamily, DiffusionSpec, DriftSelector};

/// Discretization of one tree oracle run.
#[derive(Debug, Clone)]
pub struct TreeSpec {
    pub dt: f64,
    pub n_steps: usize,
    pub x0: f64,
    /// Lattice increment in the tree coordinate (state units for ABM,
    /// log-state for GBM); defaults to σ·√dt.
    pub space_step: f64,
    /// Truncation bounds in state units.
    pub lo: f64,
    pub hi: f64,
}

impl TreeSpec {
    /// Standard lattice for a problem: σ√dt spacing, horizon T.
    pub fn for_diffusion(
        diffusion: &DiffusionSpec,
        x0: f64,
        dt: f64,
        horizon: f64,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        let sigma = tree_sigma(diffusion)?;
        Ok(TreeSpec {
            dt,
            n_steps: (horizon / dt).ceil() as usize,
            x0,
            space_step: sigma * dt.sqrt(),
            lo,
            hi,
        })
    }
}

/// Volatility in the tree coordinate (must be state-independent).
fn tree_sigma(diffusion: &DiffusionSpec) -> Result<f64> {
    match &diffusion.family {
        DiffusionFamily::ArithmeticBm { sigma, .. } => Ok(*sigma),
        DiffusionFamily::GeometricBm { sigma, .. } => Ok(*sigma),
        DiffusionFamily::Custom { .. } => Err(Error::Unsupported(
            "tree oracles support ArithmeticBM and GeometricBM only \
             (custom diffusions have state-dependent lattice volatility)"
                .into(),
        )),
    }
}

/// Recombining lattice in the tree coordinate.
struct Lattice {
    /// State value of each node.
    states: Vec<f64>,
    /// Drift in the tree coordinate at each node for perturbation θ.
    log_space: bool,
    mu: f64,
    sigma: f64,
    sqrt_dt: f64,
    root: usize,
}

impl Lattice {
    fn build(spec: &TreeSpec, diffusion: &DiffusionSpec) -> Result<Self> {
        let sigma = tree_sigma(diffusion)?;
        let (log_space, mu) = match &diffusion.family {
            DiffusionFamily::ArithmeticBm { mu, .. } => (false, *mu),
            DiffusionFamily::GeometricBm { mu, .. } => (true, *mu),
            DiffusionFamily::Custom { .. } => unreachable!(),
        };
        if !(spec.dt > 0.0) {
            return Err(Error::Validation("tree dt must be positive".into()));
        }
        if !(spec.lo < spec.x0 && spec.x0 < spec.hi) {
            return Err(Error::Validation(format!(
                "tree truncation [{}, {}] must contain x0 = {}",
                spec.lo, spec.hi, spec.x0
            )));
        }
        let coord = |x: f64| if log_space { x.ln() } else { x };
        let c0 = coord(spec.x0);
        let step = spec.space_step;
        if !(step > 0.0) {
            return Err(Error::Validation("space_step must be positive".into()));
        }
        let n_dn = ((c0 - coord(spec.lo)) / step).floor() as usize;
        let n_up = ((coord(spec.hi) - c0) / step).floor() as usize;
        if n_dn == 0 || n_up == 0 {
            return Err(Error::Validation(
                "tree truncation leaves no room around x0".into(),
            ));
        }
        let states = (0..=n_dn + n_up)
            .map(|i| {
                let c = c0 + (i as f64 - n_dn as f64) * step;
                if log_space {
                    c.exp()
                } else {
                    c
                }
            })
            .collect();
        Ok(Lattice {
            states,
            log_space,
            mu,
            sigma,

            sqrt_dt: spec.dt.sqrt(),
            root: n_dn,
        })
    }

    /// Up-move probability at node i under drift perturbation θ
    /// (θ acts on the state drift, so it is scaled by 1/x in log space).
    fn p_up(&self, i: usize, theta: f64) -> Result<f64> {
        let drift = if self.log_space {
            self.mu - 0.5 * self.sigma * self.sigma + theta / self.states[i]
        } else {
            self.mu + theta
        };
        let p = 0.5 * (1.0 + drift * self.sqrt_dt / self.sigma);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!(
                "transition probability {p:.4} outside [0,1] at state {} \
                 (drift shift too large for dt; refine the tree)",
                self.states[i]
            )));
        }
        Ok(p)
    }
}

/// Saddle value of the one-step stopping game with stopper tie
/// priority; equals both maximin and minimax for every ordering of the
/// three payoffs.
pub fn one_step_saddle(g: f64, g_hat: f64, cont: f64) -> f64 {
    g.max(g_hat.min(cont))
}

/// Result of a lattice value iteration.
#[derive(Debug, Clone)]
pub struct TreeValue {
    pub root: f64,
    pub states: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-node stop decision in the stationary policy.
    pub stop: Vec<bool>,
    /// Worst one-step drift perturbation per node (robust Snell only).
    pub worst_theta: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Robust Snell envelope: value iteration of
/// V = max(g, e^{-r·dt}·min_{θ∈{−κ,+κ}} E_θ[V']).
///
/// The one-step expectation is affine in θ, so the minimum over
/// [−κ, κ] is attained at an endpoint and the two extreme drifts
/// suffice.
pub fn robust_snell(spec: &TreeSpec, problem: &AmbiguityProblem) -> Result<TreeValue> {
    let lat = Lattice::build(spec, &problem.diffusion)?;
    let kappa = problem.kappa;
    let r = problem.r;
    let n = lat.states.len();
    let g: Vec<f64> = lat.states.iter().map(|&x| problem.reward.eval(x)).collect();
    // Pre-validate probabilities at every node for both extremes.
    for i in 0..n {
        lat.p_up(i, kappa)?;
        lat.p_up(i, -kappa)?;
    }
    let disc = (-r * spec.dt).exp();
    // Up-move probabilities per node for the two extreme drifts.
    let p_minus: Vec<f64> = (0..n).map(|i| lat.p_up(i, -kappa)).collect::<Result<_>>()?;
    let p_plus: Vec<f64> = (0..n).map(|i| lat.p_up(i, kappa)).collect::<Result<_>>()?;
    let mut v = g.clone();
    let mut next = vec![0.0; n];
    let mut last_delta = 0.0f64;
    for _ in 0..spec.n_steps {
        last_delta = 0.0;
        for i in 0..n {
            if i == 0 || i == n - 1 {
                next[i] = g[i];
                continue;
            }
            let e_minus = p_minus[i] * v[i + 1] + (1.0 - p_minus[i]) * v[i - 1];
            let e_plus = p_plus[i] * v[i + 1] + (1.0 - p_plus[i]) * v[i - 1];
            next[i] = g[i].max(disc * e_minus.min(e_plus));
            last_delta = last_delta.max((next[i] - v[i]).abs());
        }
        std::mem::swap(&mut v, &mut next);
    }
    let bound = disc / (1.0 - disc) * last_delta;
    let warnings = contraction_warning(bound, v[lat.root]);
    let mut stop = vec![false; n];
    let mut worst = vec![0.0; n];
    for i in 1..n - 1 {
        let mut cont = f64::INFINITY;
        let mut arg = 0.0;
        for theta in [-kappa, kappa] {
            let p = lat.p_up(i, theta)?;
            let e = p * v[i + 1] + (1.0 - p) * v[i - 1];
            if e < cont {
                cont = e;
                arg = theta;
            }
        }
        stop[i] = g[i] >= disc * cont - 1e-14 * g[i].abs().max(1.0);
        worst[i] = arg;
    }
    Ok(TreeValue {
        root: v[lat.root],
        states: lat.states,
        values: v,
        stop,
        worst_theta: worst,
        warnings,
    })
}

/// Dynkin-game value iteration with stopper tie priority:
/// V = max(g, min(ĝ, e^{-r·dt}·E[V'])).
pub fn dynkin_backward(
    spec: &TreeSpec,
    diffusion: &DiffusionSpec,
    r: f64,
    lower: impl Fn(f64) -> f64,
    upper: impl Fn(f64) -> f64,
) -> Result<TreeValue> {
    let lat = Lattice::build(spec, diffusion)?;
    let n = lat.states.len();
    let g: Vec<f64> = lat.states.iter().map(|&x| lower(x)).collect();
    let gh: Vec<f64> = lat.states.iter().map(|&x| upper(x)).collect();
    let (v, residual) = dynkin_iterate(&lat, spec, r, &g, &gh)?;
    let mut stop = vec![false; n];
    for i in 1..n - 1 {
        stop[i] = (g[i] - v[i]).abs() <= 1e-12 * v[i].abs().max(1.0) && g[i] >= gh[i].min(v[i]);
    }
    let root = v[lat.root];
    let warnings = contraction_warning(residual, root);
    Ok(TreeValue {
        root,
        states: lat.states,
        values: v,
        stop,
        worst_theta: vec![0.0; n],
        warnings,
    })
}

/// Fixed-point residual of the value iteration via the contraction
/// bound ‖V_n − V*‖ ≤ q/(1−q)·‖V_n − V_{n−1}‖ with q = e^{-r·dt}.
fn contraction_warning(bound: f64, root: f64) -> Vec<String> {
    if bound > 1e-4 * root.abs().max(1e-12) {
        vec![format!(
            "horizon warning: value-iteration residual bound {bound:.3e} \
             not negligible against root value {root:.6e}; extend the horizon"
        )]
    } else {
        Vec::new()
    }
}

fn dynkin_iterate(
    lat: &Lattice,
    spec: &TreeSpec,
    r: f64,
    g: &[f64],
    gh: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = lat.states.len();
    let disc = (-r * spec.dt).exp();
    let p: Vec<f64> = (0..n).map(|i| lat.p_up(i, 0.0)).collect::<Result<_>>()?;
    let mut v = g.to_vec();
    let mut next = vec![0.0; n];
    let mut last_delta = 0.0f64;
    for _ in 0..spec.n_steps {
        last_delta = 0.0;
        for i in 0..n {
            if i == 0 || i == n - 1 {
                next[i] = g[i];
                continue;
            }
            let cont = disc * (p[i] * v[i + 1] + (1.0 - p[i]) * v[i - 1]);
            next[i] = one_step_saddle(g[i], gh[i], cont);
            last_delta = last_delta.max((next[i] - v[i]).abs());
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok((v, disc / (1.0 - disc) * last_delta))
}

/// Ordinary Snell envelope on the lattice (value per node).
fn snell_iterate(
    lat: &Lattice,
    spec: &TreeSpec,
    r: f64,
    reward: &[f64],
) -> Result<Vec<f64>> {
    let n = lat.states.len();
    let disc = (-r * spec.dt).exp();
    let p: Vec<f64> = (0..n).map(|i| lat.p_up(i, 0.0)).collect::<Result<_>>()?;
    let mut v = reward.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..spec.n_steps {
        for i in 0..n {
            if i == 0 || i == n - 1 {
                next[i] = reward[i];
                continue;
            }
            let cont = disc * (p[i] * v[i + 1] + (1.0 - p[i]) * v[i - 1]);
            next[i] = reward[i].max(cont);
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok(v)
}

/// Tree value of the reduced crash problem: the post-crash value ĝ is
/// computed on the lattice itself (Snell envelope of g(c·y)), then the
/// Dynkin game with lower g and upper ĝ is iterated on the same nodes.
pub fn crash_reduced_tree(spec: &TreeSpec, problem: &CrashProblem) -> Result<TreeValue> {
    let lat = Lattice::build(spec, &problem.diffusion)?;
    let n = lat.states.len();
    let c = problem.crash_factor;
    let g: Vec<f64> = lat.states.iter().map(|&y| problem.reward.eval(y)).collect();
    let g_crashed: Vec<f64> = lat
        .states
        .iter()
        .map(|&y| problem.reward.eval(c * y))
        .collect();
    let g_hat = snell_iterate(&lat, spec, problem.r, &g_crashed)?;
    let (v, residual) = dynkin_iterate(&lat, spec, problem.r, &g, &g_hat)?;
    let root = v[lat.root];
    Ok(TreeValue {
        root,
        states: lat.states,
        values: v,
        stop: vec![false; n],
        worst_theta: vec![0.0; n],
        warnings: contraction_warning(residual, root),
    })
}

/// Post-crash value ĝ at the root state, from the lattice Snell
/// envelope of g(c·y).
pub fn crash_post_value_tree(spec: &TreeSpec, problem: &CrashProblem) -> Result<f64> {
    let lat = Lattice::build(spec, &problem.diffusion)?;
    let g_crashed: Vec<f64> = lat
        .states
        .iter()
        .map(|&y| problem.reward.eval(problem.crash_factor * y))
        .collect();
    Ok(snell_iterate(&lat, spec, problem.r, &g_crashed)?[lat.root])
}

/// Threshold grids of the explicit sup-inf crash tree.
#[derive(Debug, Clone)]
pub struct CrashGrids {
    /// Pre-crash stopping thresholds on Y.
    pub pre: Vec<f64>,
    /// Post-crash stopping thresholds on the crashed price c·Y.
    pub post: Vec<f64>,
    /// Crash thresholds on Y (values ≤ x0 crash immediately).
    pub crash: Vec<f64>,
}

impl CrashGrids {
    /// Node-aligned grids: `count` thresholds spanning [lo, hi] drawn
    /// from the lattice states themselves.
    pub fn node_aligned(
        spec: &TreeSpec,
        problem: &CrashProblem,
        count: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        let lat = Lattice::build(spec, &problem.diffusion)?;
        let candidates: Vec<f64> = lat
            .states
            .iter()
            .copied()
            .filter(|&s| s >= lo && s <= hi)
            .collect();
        if candidates.len() < 2 {
            return Err(Error::Validation(
                "threshold range contains fewer than 2 lattice states".into(),
            ));
        }
        let pick = |src: &[f64]| -> Vec<f64> {
            let m = count.min(src.len());
            (0..m)
                .map(|k| src[(k * (src.len() - 1)) / (m - 1).max(1)])
                .collect()
        };
        let c = problem.crash_factor;
        Ok(CrashGrids {
            pre: pick(&candidates),
            post: pick(&candidates.iter().map(|&s| s * c).collect::<Vec<_>>()),
            crash: pick(&candidates),
        })
    }
}

/// Explicit sup-inf over (pre, post, crash) threshold strategies on the
/// lattice: max over (pre, post) of min over crash thresholds of the
/// exact expected crash payoff.
pub fn crash_supinf_tree(
    spec: &TreeSpec,
    problem: &CrashProblem,
    grids: &CrashGrids,
) -> Result<f64> {
    let lat = Lattice::build(spec, &problem.diffusion)?;
    let n = lat.states.len();
    let c = problem.crash_factor;
    let r = problem.r;
    let disc = (-r * spec.dt).exp();
    let p: Vec<f64> = (0..n).map(|i| lat.p_up(i, 0.0)).collect::<Result<_>>()?;
    let g: Vec<f64> = lat.states.iter().map(|&y| problem.reward.eval(y)).collect();

    // Phase 2: forced post-crash threshold rule on the crashed price.
    let post_value = |q: f64| -> Vec<f64> {
        let mut w: Vec<f64> = lat
            .states
            .iter()
            .map(|&y| problem.reward.eval(c * y))
            .collect();
        let stop_now: Vec<bool> = lat.states.iter().map(|&y| c * y >= q).collect();
        let payoff = w.clone();
        let mut next = vec![0.0; n];
        for _ in 0..spec.n_steps {
            for i in 0..n {
                if i == 0 || i == n - 1 || stop_now[i] {
                    next[i] = payoff[i];
                } else {
                    next[i] = disc * (p[i] * w[i + 1] + (1.0 - p[i]) * w[i - 1]);
                }
            }
            std::mem::swap(&mut w, &mut next);
        }
        w
    };

    let mut best = f64::NEG_INFINITY;
    for &q in &grids.post {
        let w_q = post_value(q);
        for &pre in &grids.pre {
            // min over the adversary's crash thresholds for this (pre, post).
            let mut worst = f64::INFINITY;
            for &s in &grids.crash {
                let mut u: Vec<f64> = (0..n)
                    .map(|i| {
                        let y = lat.states[i];
                        if y >= pre {
                            g[i]
                        } else if y >= s {
                            w_q[i]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mut next = vec![0.0; n];
                for _ in 0..spec.n_steps {
                    for i in 0..n {
                        let y = lat.states[i];
                        if y >= pre {
                            next[i] = g[i];
                        } else if y >= s {
                            next[i] = w_q[i];
                        } else if i == 0 || i == n - 1 {
                            next[i] = g[i];
                        } else {
                            next[i] = disc * (p[i] * u[i + 1] + (1.0 - p[i]) * u[i - 1]);
                        }
                    }
                    std::mem::swap(&mut u, &mut next);
                }
                worst = worst.min(u[lat.root]);
                if worst < best {
                    break;
                }
            }
            best = best.max(worst);
        }
    }
    Ok(best)
}

/// Monte Carlo estimate with per-path deterministic seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Paths cut at the horizon before exiting (they contribute 0).
    pub truncated_paths: usize,
}

/// Stopping rules the Monte Carlo verifier understands.
#[derive(Debug, Clone, Copy)]
pub enum StopRule {
    /// Exit of [lo, hi].
    TwoSidedExit { lo: f64, hi: f64 },
    /// First hitting time of [level, ∞).
    UpperThreshold(f64),
    /// First hitting time of (−∞, level].
    LowerThreshold(f64),
}

/// Euler–Maruyama estimate of E[e^{-rτ}·payoff(X_τ)] under the prior's
/// drift, with Brownian-bridge barrier-crossing correction. Paths use
/// ChaCha streams keyed by (seed, path index), so the result does not
/// depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn mc_under_prior(
    diffusion: &DiffusionSpec,
    r: f64,
    kappa: f64,
    prior: &DriftSelector,
    payoff: impl Fn(f64) -> f64 + Sync,
    rule: StopRule,
    x0: f64,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    prior.validate(kappa)?;
    if !(dt > 0.0 && horizon > dt) {
        return Err(Error::Validation("need dt > 0 and horizon > dt".into()));
    }
    let (lo, hi) = match rule {
        StopRule::TwoSidedExit { lo, hi } => (Some(lo), Some(hi)),
        StopRule::UpperThreshold(h) => (None, Some(h)),
        StopRule::LowerThreshold(l) => (Some(l), None),
    };
    if lo.map_or(false, |l| x0 <= l) || hi.map_or(false, |h| x0 >= h) {
        return Err(Error::Validation(
            "start point must lie strictly inside the continuation band".into(),
        ));
    }
    let n_steps = (horizon / dt).ceil() as usize;
    let results: Vec<(f64, bool)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path);
            let mut x = x0;
            let sqrt_dt = dt.sqrt();
            for step in 0..n_steps {
                let sig = diffusion.sigma(x);
                let drift = diffusion.mu(x) + prior.theta(x, kappa);
                let z: f64 = rng.sample(StandardNormal);
                let x_new = x + drift * dt + sig * sqrt_dt * z;
                let t_next = (step + 1) as f64 * dt;
                // Hard crossings first, then bridge crossings.
                if let Some(h) = hi {
                    if x_new >= h {
                        return ((-r * t_next).exp() * payoff(h), false);
                    }
                }
                if let Some(l) = lo {
                    if x_new <= l {
                        return ((-r * t_next).exp() * payoff(l), false);
                    }
                }
                if let Some(h) = hi {
                    let p_cross = (-2.0 * (h - x) * (h - x_new) / (sig * sig * dt)).exp();
                    if rng.gen::<f64>() < p_cross {
                        return ((-r * t_next).exp() * payoff(h), false);
                    }
                }
                if let Some(l) = lo {
                    let p_cross = (-2.0 * (x - l) * (x_new - l) / (sig * sig * dt)).exp();
                    if rng.gen::<f64>() < p_cross {
                        return ((-r * t_next).exp() * payoff(l), false);
                    }
                }
                x = x_new;
            }
            (0.0, true)
        })
        .collect();
    Ok(estimate(results, n_paths, seed))
}

fn estimate(results: Vec<(f64, bool)>, n_paths: usize, seed: u64) -> McEstimate {
    let truncated = results.iter().filter(|(_, t)| *t).count();
    let mean = results.iter().map(|(p, _)| p).sum::<f64>() / n_paths as f64;
    let var = results
        .iter()
        .map(|(p, _)| (p - mean) * (p - mean))
        .sum::<f64>()
        / (n_paths as f64 - 1.0);
    McEstimate {
        mean,
        std_error: (var / n_paths as f64).sqrt(),
        n_paths,
        seed,
        truncated_paths: truncated,
    }
}

/// Monte Carlo payoff of the crash game under explicit threshold
/// strategies: the holder stops when Y ≥ `pre` before the crash and
/// when c·Y ≥ `post` after it; the adversary crashes when Y ≥ `crash`
/// (crash ≤ x0 crashes immediately). Stopper tie priority.
#[allow(clippy::too_many_arguments)]
pub fn mc_crash_game(
    problem: &CrashProblem,
    x0: f64,
    pre: f64,
    crash: f64,
    post: f64,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    let (mu, sigma) = match problem.diffusion.family {
        DiffusionFamily::GeometricBm { mu, sigma } => (mu, sigma),
        _ => {
            return Err(Error::Unsupported(
                "crash-game Monte Carlo runs on geometric Brownian motion".into(),
            ))
        }
    };
    let r = problem.r;
    let cf = problem.crash_factor;
    let n_steps = (horizon / dt).ceil() as usize;
    let drift_z = (mu - 0.5 * sigma * sigma) * dt;
    let vol_z = sigma * dt.sqrt();
    let g = |y: f64| problem.reward.eval(y);
    let results: Vec<(f64, bool)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path);
            let mut z = x0.ln();
            let mut crashed = x0 >= crash;
            // Stopper acts first on ties.
            if x0 >= pre {
                return (g(x0), false);
            }
            if crashed && cf * x0 >= post {
                return (g(cf * x0), false);
            }
            let z_pre = pre.ln();
            let z_crash = crash.ln();
            let z_post = (post / cf).ln();
            for step in 0..n_steps {
                let zn = z + drift_z + vol_z * rng.sample::<f64, _>(StandardNormal);
                let t_next = (step + 1) as f64 * dt;
                let barrier = if crashed {
                    z_post
                } else {
                    z_pre.min(z_crash)
                };
                let crossed = zn >= barrier || {
                    let pb = (-2.0 * (barrier - z) * (barrier - zn) / (vol_z * vol_z)).exp();
                    rng.gen::<f64>() < pb
                };
                if crossed {
                    let disc = (-r * t_next).exp();
                    if crashed {
                        // Post-crash stop at the threshold on c·Y.
                        return (disc * g(post), false);
                    }
                    if z_pre <= z_crash {
                        return (disc * g(pre), false);
                    }
                    // Crash happens first; continue on the crashed price.
                    crashed = true;
                    z = z_crash;
                    if cf * crash >= post {
                        return (disc * g(cf * crash), false);
                    }
                    continue;
                }
                z = zn;
            }
            (0.0, true)
        })
        .collect();
    Ok(estimate(results, n_paths, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::RewardFunction;
    use approx::assert_relative_eq;

    fn fix_bm1() -> AmbiguityProblem {
        AmbiguityProblem::new(
            DiffusionSpec::arithmetic_bm(0.0, 1.0),
            1.0,
            4.0,
            RewardFunction::Straddle,
        )
        .unwrap()
    }

    #[test]
    fn one_step_hand_case() {
        // BM, x0 = 0, g = x⁺, dt = 1, step = 1, κ = 0.5, r = 0.1:
        // V = e^{-0.1}·min(0.25, 0.75)·g(1) = e^{-0.1}·0.25.
        let p = AmbiguityProblem::new(
            DiffusionSpec::arithmetic_bm(0.0, 1.0),
            0.5,
            0.1,
            RewardFunction::Call { strike: 0.0 },
        )
        .unwrap();
        let spec = TreeSpec {
            dt: 1.0,
            n_steps: 1,
            x0: 0.0,
            space_step: 1.0,
            lo: -1.5,
            hi: 1.5,
        };
        let tv = robust_snell(&spec, &p).unwrap();
        assert_relative_eq!(tv.root, 0.25 * (-0.1f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn snell_recovers_classical_gbm_call() {
        // κ = 0 GBM call: value 0.0625 at x0 = 0.5 (d·x^γ with γ=2).
        let p = AmbiguityProblem::new(
            DiffusionSpec::geometric_bm(0.0, 1.0),
            0.0,
            1.0,
            RewardFunction::Call { strike: 1.0 },
        )
        .unwrap();
        let spec =
            TreeSpec::for_diffusion(&p.diffusion, 0.5, 2e-4, 16.0, 0.02, 40.0).unwrap();
        let tv = robust_snell(&spec, &p).unwrap();
        assert_relative_eq!(tv.root, 0.0625, max_relative = 5e-3);
        assert!(tv.warnings.is_empty(), "{:?}", tv.warnings);
    }

    #[test]
    fn robust_snell_converges_on_straddle_fixture() {
        let p = fix_bm1();
        let spec = TreeSpec::for_diffusion(&p.diffusion, 0.0, 1e-3, 5.0, -3.0, 3.0).unwrap();
        let tv = robust_snell(&spec, &p).unwrap();
        // Matches the majorant value ≈ 0.2084 within a percent.
        let solver = crate::majorant::Solver::new(p, Default::default()).unwrap();
        let v = solver.value_at(0.0).unwrap().v;
        assert!(
            (tv.root - v).abs() <= 0.01 * v,
            "tree {} vs solver {v}",
            tv.root
        );
    }

    #[test]
    fn tree_error_shrinks_with_dt() {
        let p = fix_bm1();
        let solver = crate::majorant::Solver::new(p.clone(), Default::default()).unwrap();
        let v = solver.value_at(0.0).unwrap().v;
        let mut errs = Vec::new();
        for dt in [8e-3, 4e-3, 2e-3] {
            let spec = TreeSpec::for_diffusion(&p.diffusion, 0.0, dt, 5.0, -3.0, 3.0).unwrap();
            errs.push((robust_snell(&spec, &p).unwrap().root - v).abs());
        }
        assert!(
            errs[2] < errs[0],
            "halving dt twice should shrink the error: {errs:?}"
        );
    }

    #[test]
    fn saddle_matches_maximin_and_minimax() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1_000_000 {
            let g: f64 = rng.gen_range(-2.0..2.0);
            let gh: f64 = rng.gen_range(-2.0..2.0);
            let cont: f64 = rng.gen_range(-2.0..2.0);
            let maximin = g.max(gh.min(cont));
            let minimax = g.max(gh).min(g.max(cont));
            assert_eq!(one_step_saddle(g, gh, cont), maximin);
            assert!((maximin - minimax).abs() < 1e-15);
        }
    }

    #[test]
    fn saddle_tie_priority_examples() {
        assert_eq!(one_step_saddle(1.0, 3.0, 2.0), 2.0);
        // Stopper takes g even when g > ĝ.
        assert_eq!(one_step_saddle(5.0, 3.0, 2.0), 5.0);
    }

    #[test]
    fn one_step_min_over_theta_is_attained_at_endpoints() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let v_up: f64 = rng.gen_range(0.0..3.0);
            let v_dn: f64 = rng.gen_range(0.0..3.0);
            let kappa: f64 = rng.gen_range(0.1..1.0);
            let slope: f64 = rng.gen_range(0.05..0.4);
            let e = |theta: f64| {
                let p = 0.5 * (1.0 + slope * theta);
                p * v_up + (1.0 - p) * v_dn
            };
            let end_min = e(-kappa).min(e(kappa));
            let mut grid_min = f64::INFINITY;
            for k in 0..=200 {
                let theta = -kappa + 2.0 * kappa * k as f64 / 200.0;
                grid_min = grid_min.min(e(theta));
            }
            assert!(end_min <= grid_min + 1e-14);
        }
    }

    #[test]
    fn mc_is_bit_deterministic() {
        let d = DiffusionSpec::arithmetic_bm(0.0, 1.0);
        let run = || {
            mc_under_prior(
                &d,
                4.0,
                1.0,
                &DriftSelector::MergePoint(0.0),
                |x: f64| x.abs(),
                StopRule::TwoSidedExit { lo: -0.35, hi: 0.35 },
                0.0,
                5e-4,
                4.0,
                2_000,
                42,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mc_martingale_check_for_hc_exit_payoff() {
        // E^{P_c}[e^{-rτ} h_c(X_τ)] = h_c(x0) for the two-sided exit.
        let pair = crate::closed_form::ExponentPair::for_abm(0.0, 1.0, 1.0, 4.0).unwrap();
        let h = crate::closed_form::ClosedFormHc::new(pair, crate::problem::Merge::Interior(0.0));
        let d = DiffusionSpec::arithmetic_bm(0.0, 1.0);
        let est = mc_under_prior(
            &d,
            4.0,
            1.0,
            &DriftSelector::MergePoint(0.0),
            |x: f64| h.h(x),
            StopRule::TwoSidedExit { lo: -0.7, hi: 0.7 },
            0.1,
            2e-4,
            4.0,
            40_000,
            1234,
        )
        .unwrap();
        let target = h.h(0.1);
        assert!(
            (est.mean - target).abs() <= 3.0 * est.std_error,
            "mean {} ± {} vs h_c(x0) = {target}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn mc_other_priors_dominate_hc_value() {
        // Lemma direction: under any prior the exit payoff of h_c is at
        // least h_c(x0).
        let pair = crate::closed_form::ExponentPair::for_abm(0.0, 1.0, 1.0, 4.0).unwrap();
        let h = crate::closed_form::ClosedFormHc::new(pair, crate::problem::Merge::Interior(0.0));
        let d = DiffusionSpec::arithmetic_bm(0.0, 1.0);
        let target = h.h(0.1);
        for prior in [
            DriftSelector::ConstantTheta(1.0),
            DriftSelector::ConstantTheta(-1.0),
            DriftSelector::Piecewise {
                breaks: vec![-0.2, 0.3],
                thetas: vec![0.4, -1.0, 0.9],
            },
        ] {
            let est = mc_under_prior(
                &d,
                4.0,
                1.0,
                &prior,
                |x: f64| h.h(x),
                StopRule::TwoSidedExit { lo: -0.7, hi: 0.7 },
                0.1,
                2e-4,
                4.0,
                40_000,
                77,
            )
            .unwrap();
            assert!(
                est.mean >= target - 3.0 * est.std_error,
                "prior {prior:?}: mean {} ± {} below {target}",
                est.mean,
                est.std_error
            );
        }
    }

    #[test]
    fn crash_reduced_tree_matches_closed_form() {
        let p = CrashProblem::new(
            DiffusionSpec::geometric_bm(0.0, 1.0),
            1.0,
            RewardFunction::Call { strike: 1.0 },
            0.5,
        )
        .unwrap();
        let spec = TreeSpec::for_diffusion(&p.diffusion, 1.0, 5e-4, 16.0, 0.05, 30.0).unwrap();
        let tv = crash_reduced_tree(&spec, &p).unwrap();
        assert_relative_eq!(tv.root, 0.0625, max_relative = 1e-2);
    }

    #[test]
    fn supinf_equals_reduced_on_coarse_tree() {
        let p = CrashProblem::new(
            DiffusionSpec::geometric_bm(0.0, 1.0),
            1.0,
            RewardFunction::Call { strike: 1.0 },
            0.5,
        )
        .unwrap();
        let spec = TreeSpec::for_diffusion(&p.diffusion, 1.0, 0.05, 10.0, 0.05, 30.0).unwrap();
        assert!(spec.n_steps <= 200);
        let reduced = crash_reduced_tree(&spec, &p).unwrap().root;
        let grids = CrashGrids::node_aligned(&spec, &p, 24, 1.0, 6.0).unwrap();
        let supinf = crash_supinf_tree(&spec, &p, &grids).unwrap();
        let disc_err = (reduced - 0.0625f64).abs();
        assert!(
            (supinf - reduced).abs() <= 2.0 * disc_err + 1e-9,
            "supinf {supinf} vs reduced {reduced} (disc err {disc_err})"
        );
    }
}
