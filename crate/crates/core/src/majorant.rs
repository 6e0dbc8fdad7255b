//! Value functions as smallest majorants of the reward in {λ·h_c}.
//!
//! For each queried x the solver follows the trichotomy of the
//! Brownian proof:
//!
//! - Case 1: the global sup of g/h_b is attained on {y ≤ x}; the
//!   decreasing boundary function h_b is optimal (c* = upper limit).
//! - Case 2: mirror with the increasing boundary function h_a.
//! - Case 3: bisection on Δ(c) = sup_{y≤x} g/h_c − sup_{y≥x} g/h_c,
//!   which is continuous in c and changes sign across the window; at
//!   the root the two one-sided suprema agree and
//!   v(x) = λ*·h_{c*}(x) with λ* the common value.
//!
//! Suprema are evaluated in log-space on a truncated grid, refined by
//! golden-section plus a tangency bisection where the reward is smooth,
//! and guarded by a divergence trend test toward the truncation edges.
//! Whenever a supremum is attained at the edge without a clear trend
//! the window is widened and the computation restarted.

use crate::closed_form::{ClosedFormHc, ExponentPair, GbmPowerHc};
use crate::error::{Error, Result};
use crate::ode::{GeneralHc, OdeFamily};
use crate::problem::{
    AmbiguityProblem, DiffusionFamily, DriftSelector, Merge, PointValue, ValueSolution,
};

/// Which h_c construction backs the solver.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum HcPath {
    /// Closed form where available (ABM any κ; GBM with κ = 0),
    /// ODE tables otherwise.
    #[default]
    Auto,
    /// Closed form only; errors out for unsupported problems.
    ClosedForm,
    /// Always tabulate fundamental solutions numerically.
    Ode,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Nodes of the internal supremum grid (and of the ODE tables).
    pub grid_n: usize,
    /// Relative value tolerance; defaults to 1e-8 on the closed-form
    /// path and 1e-4 on the ODE path.
    pub tol: Option<f64>,
    /// Truncation window override.
    pub window: Option<(f64, f64)>,
    pub path: HcPath,
    /// Widening attempts before declaring a supremum unbounded.
    pub max_widen: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            grid_n: 2048,
            tol: None,
            window: None,
            path: HcPath::Auto,
            max_widen: 6,
        }
    }
}

impl SolverOptions {
    pub fn from_config(cfg: &crate::config::SolverConfig) -> Self {
        SolverOptions {
            grid_n: cfg.grid_n,
            tol: cfg.tol,
            ..Default::default()
        }
    }
}

/// One-sided supremum of g/h_c in log space.
#[derive(Debug, Clone, Copy)]
pub struct SupSide {
    /// ln sup(g/h_c) over the side; −inf where g вanishes identically,
    /// +inf when the divergence trend test fires.
    pub log_sup: f64,
    /// Location of the maximizer (within grid resolution, polished
    /// where the reward is smooth).
    pub argmax: f64,
    /// Supremum attained at the truncation edge with a monotone
    /// increasing tail: the ratio diverges (or its max lies beyond the
    /// window).
    pub divergent: bool,
    /// Attained at the edge without a clear trend; the window must be
    /// widened before the value can be trusted.
    at_edge_flat: bool,
}

/// Ratio profile of one merge point at a query state.
#[derive(Debug, Clone)]
pub struct RatioProfile {
    pub merge: Merge,
    pub left: Option<SupSide>,
    pub right: Option<SupSide>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Side {
    Left,
    Right,
    Both,
}

/// Majorant solver for one ambiguity problem.
pub struct Solver {
    problem: AmbiguityProblem,
    opts: SolverOptions,
}

enum FamilyKind {
    Abm(ExponentPair),
    GbmPow { mu: f64, sigma: f64, r: f64 },
    Ode(OdeFamily),
}

enum HcEval<'a> {
    Abm(ClosedFormHc),
    Gbm(GbmPowerHc),
    Ode(GeneralHc<'a>),
}

impl HcEval<'_> {
    fn log_h(&self, x: f64) -> Result<f64> {
        match self {
            HcEval::Abm(h) => Ok(h.log_h(x)),
            HcEval::Gbm(h) => Ok(h.log_h(x)),
            HcEval::Ode(h) => h.log_h(x),
        }
    }

    fn dlog_h(&self, x: f64) -> Result<f64> {
        match self {
            HcEval::Abm(h) => Ok(h.dlog_h(x)),
            HcEval::Gbm(h) => Ok(h.dlog_h(x)),
            HcEval::Ode(h) => h.dlog_h(x),
        }
    }
}

/// Internal outcome allowing the driver to widen the window and retry.
enum Outcome<T> {
    Done(T),
    Widen,
}

struct Engine {
    window: (f64, f64),
    /// Strictly increasing supremum grid with reward discontinuities
    /// and kinks snapped onto exact nodes.
    grid: Vec<f64>,
    log_g: Vec<f64>,
    family: FamilyKind,
    reward: crate::problem::RewardFunction,
    tol: f64,
    multiplicative: bool,
}

impl Solver {
    pub fn new(problem: AmbiguityProblem, opts: SolverOptions) -> Result<Self> {
        problem.validate()?;
        if opts.grid_n < 64 {
            return Err(Error::Validation("grid_n must be >= 64".into()));
        }
        Ok(Solver { problem, opts })
    }

    pub fn problem(&self) -> &AmbiguityProblem {
        &self.problem
    }

    /// Effective relative value tolerance of the chosen path.
    pub fn tol(&self) -> f64 {
        self.opts.tol.unwrap_or(match self.effective_path() {
            HcPath::Ode => 1e-4,
            _ => 1e-8,
        })
    }

    fn effective_path(&self) -> HcPath {
        match self.opts.path {
            HcPath::Auto => match &self.problem.diffusion.family {
                DiffusionFamily::ArithmeticBm { .. } => HcPath::ClosedForm,
                DiffusionFamily::GeometricBm { .. } if self.problem.kappa == 0.0 => {
                    HcPath::ClosedForm
                }
                _ => HcPath::Ode,
            },
            p => p,
        }
    }

    /// Value, minimizing merge point, and level at one state.
    pub fn value_at(&self, x: f64) -> Result<PointValue> {
        self.with_engine(&[x], |eng| eng.point_value(x))
    }

    /// One-sided suprema of g/h_c for an explicit merge point.
    pub fn sup_ratio(&self, merge: Merge, x: f64, side: Side) -> Result<RatioProfile> {
        self.with_engine(&[x], |eng| {
            let hc = match eng.hc(merge) {
                Ok(h) => h,
                Err(e) => return Ok(Outcome::Done(Err(e))),
            };
            let left = if side != Side::Right {
                match eng.sup_side(&hc, x, true)? {
                    Outcome::Done(s) => Some(s),
                    Outcome::Widen => return Ok(Outcome::Widen),
                }
            } else {
                None
            };
            let right = if side != Side::Left {
                match eng.sup_side(&hc, x, false)? {
                    Outcome::Done(s) => Some(s),
                    Outcome::Widen => return Ok(Outcome::Widen),
                }
            } else {
                None
            };
            Ok(Outcome::Done(Ok(RatioProfile { merge, left, right })))
        })?
    }

    /// Worst-case prior for the process started in x.
    pub fn worst_case_prior(&self, x: f64) -> Result<DriftSelector> {
        let pv = self.value_at(x)?;
        Ok(selector_for(pv.c_star, self.problem.kappa))
    }

    /// Values, stopping set, and worst-case priors on a query grid.
    pub fn solve_on_grid(&self, xs: &[f64]) -> Result<ValueSolution> {
        if xs.is_empty() {
            return Err(Error::Validation("query grid is empty".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(
                "query grid must be strictly increasing".into(),
            ));
        }
        let points = self.with_engine(xs, |eng| {
            let mut out = Vec::with_capacity(xs.len());
            for &x in xs {
                match eng.point_value(x)? {
                    Outcome::Done(pv) => out.push(pv),
                    Outcome::Widen => return Ok(Outcome::Widen),
                }
            }
            Ok(Outcome::Done(out))
        })?;

        let tol = self.tol();
        let g: Vec<f64> = xs.iter().map(|&x| self.problem.reward.eval(x)).collect();
        let stopping: Vec<bool> = points
            .iter()
            .zip(&g)
            .map(|(pv, &gx)| pv.v - gx <= tol * gx.abs().max(pv.v.abs()).max(1e-12))
            .collect();
        let intervals = self.assemble_intervals(xs, &stopping, &points);
        Ok(ValueSolution {
            grid: xs.to_vec(),
            g,
            v: points.iter().map(|p| p.v).collect(),
            c_star: points
                .iter()
                .map(|p| p.c_star.as_f64(self.problem.diffusion.interval))
                .collect(),
            lambda_star: points.iter().map(|p| p.lambda_star).collect(),
            worst_case: points
                .iter()
                .map(|p| selector_for(p.c_star, self.problem.kappa))
                .collect(),
            in_stopping_set: stopping,
            stopping_intervals: intervals,
        })
    }

    /// Maximal closed stopping intervals over a query grid.
    pub fn stopping_set(&self, xs: &[f64]) -> Result<Vec<(f64, f64)>> {
        Ok(self.solve_on_grid(xs)?.stopping_intervals)
    }

    /// Grid intervals refined through the argmax characterization: the
    /// endpoints of a continuation component are maximizers of
    /// g/h_{c*} for the component's merge point.
    fn assemble_intervals(
        &self,
        xs: &[f64],
        stopping: &[bool],
        points: &[PointValue],
    ) -> Vec<(f64, f64)> {
        let n = xs.len();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < n {
            if stopping[i] {
                let start = i;
                while i + 1 < n && stopping[i + 1] {
                    i += 1;
                }
                runs.push((start, i));
            }
            i += 1;
        }
        let interval = self.problem.diffusion.interval;
        runs.iter()
            .map(|&(j, k)| {
                let mut lo = xs[j];
                let mut hi = xs[k];
                if j == 0 {
                    lo = interval.0;
                } else if let Some(a) = points[j - 1].argmax_right {
                    // Continuation component to the left ends where its
                    // ratio profile peaks again.
                    if a <= xs[j] + (xs[j] - xs[j - 1]) && a > xs[j - 1] {
                        lo = a;
                    }
                }
                if k == n - 1 {
                    hi = interval.1;
                } else if let Some(a) = points[k + 1].argmax_left {
                    if a >= xs[k] - (xs[k + 1] - xs[k]) && a < xs[k + 1] {
                        hi = a;
                    }
                }
                (lo, hi)
            })
            .collect()
    }

    /// Builds an engine covering the queries, then runs `f`, widening
    /// the truncation window whenever the computation asks for it.
    fn with_engine<T>(
        &self,
        xs: &[f64],
        mut f: impl FnMut(&Engine) -> Result<Outcome<T>>,
    ) -> Result<T> {
        let mut window = self.initial_window(xs)?;
        for _ in 0..=self.opts.max_widen {
            let eng = self.build_engine(window, xs)?;
            match f(&eng)? {
                Outcome::Done(t) => return Ok(t),
                Outcome::Widen => window = self.widen(window),
            }
        }
        Err(Error::UnboundedValue(format!(
            "supremum still attained at the truncation edge after {} widenings \
             (window [{:.6}, {:.6}]); g/h_c appears to diverge for every c",
            self.opts.max_widen, window.0, window.1
        )))
    }

    fn multiplicative(&self) -> bool {
        let (a, _b) = self.problem.diffusion.interval;
        a == 0.0
    }

    /// Exponential length scale of the h family (state units): the
    /// reciprocal of the smallest growth exponent near the core region.
    fn length_scale(&self, at: f64) -> f64 {
        let d = &self.problem.diffusion;
        let sigma = d.sigma(at).max(1e-12);
        let mu = d.mu(at);
        let kappa = self.problem.kappa;
        let r = self.problem.r;
        let mut min_root = f64::INFINITY;
        for drift in [mu - kappa, mu + kappa] {
            let (lo, hi) = crate::closed_form::quadratic_roots(sigma, drift, r);
            min_root = min_root.min(lo.abs()).min(hi.abs());
        }
        1.0 / min_root.max(1e-12)
    }

    fn core_range(&self, xs: &[f64]) -> (f64, f64) {
        let mut lo = xs[0];
        let mut hi = xs[xs.len() - 1];
        for p in self
            .problem
            .reward
            .kinks()
            .into_iter()
            .chain(self.problem.reward.discontinuities())
        {
            if self.problem.diffusion.contains(p) {
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
        (lo, hi)
    }

    fn initial_window(&self, xs: &[f64]) -> Result<(f64, f64)> {
        let (a, b) = self.problem.diffusion.interval;
        for &x in xs {
            if !self.problem.diffusion.contains(x) {
                return Err(Error::Domain(format!(
                    "query x = {x} outside the state interval ({a}, {b})"
                )));
            }
        }
        if let Some(w) = self.opts.window {
            return Ok(w);
        }
        let (core_lo, core_hi) = self.core_range(xs);
        if self.multiplicative() {
            // Multiplicative margin spanning several e-folds of h.
            let mid = (core_lo * core_hi).abs().sqrt().max(1e-6);
            let scale = self.length_scale(mid);
            let factor = (6.0 * (scale / mid).min(4.0)).exp().max(8.0);
            let mut lo = core_lo / factor;
            let mut hi = core_hi * factor;
            if b.is_finite() {
                hi = hi.min(b - 0.25 * (b - core_hi));
            }
            lo = lo.max(1e-300);
            Ok((lo, hi))
        } else {
            let mid = 0.5 * (core_lo + core_hi);
            let margin = (6.0 * self.length_scale(mid)).max(1.0 + 0.25 * (core_hi - core_lo));
            let mut lo = core_lo - margin;
            let mut hi = core_hi + margin;
            if a.is_finite() {
                lo = lo.max(a + 0.25 * (core_lo - a));
            }
            if b.is_finite() {
                hi = hi.min(b - 0.25 * (b - core_hi));
            }
            Ok((lo, hi))
        }
    }

    fn widen(&self, window: (f64, f64)) -> (f64, f64) {
        let (a, b) = self.problem.diffusion.interval;
        let (lo, hi) = window;
        if self.multiplicative() {
            let mut new_hi = hi * 16.0;
            if b.is_finite() {
                new_hi = b - (b - hi) / 4.0;
            }
            ((lo / 16.0).max(1e-300), new_hi)
        } else {
            let span = hi - lo;
            let mut new_lo = lo - span;
            let mut new_hi = hi + span;
            if a.is_finite() {
                new_lo = a + (lo - a) / 4.0;
            }
            if b.is_finite() {
                new_hi = b - (b - hi) / 4.0;
            }
            (new_lo, new_hi)
        }
    }

    fn build_engine(&self, window: (f64, f64), xs: &[f64]) -> Result<Engine> {
        let p = &self.problem;
        let path = self.effective_path();
        let family = match (path, &p.diffusion.family) {
            (HcPath::ClosedForm, DiffusionFamily::ArithmeticBm { mu, sigma }) => {
                FamilyKind::Abm(ExponentPair::for_abm(*mu, *sigma, p.kappa, p.r)?)
            }
            (HcPath::ClosedForm, DiffusionFamily::GeometricBm { mu, sigma }) => {
                if p.kappa != 0.0 {
                    return Err(Error::Unsupported(
                        "closed-form h_c for geometric Brownian motion requires kappa = 0; \
                         use the ODE path"
                            .into(),
                    ));
                }
                FamilyKind::GbmPow {
                    mu: *mu,
                    sigma: *sigma,
                    r: p.r,
                }
            }
            (HcPath::ClosedForm, DiffusionFamily::Custom { .. }) => {
                return Err(Error::Unsupported(
                    "no closed-form h_c for custom diffusions; use the ODE path".into(),
                ))
            }
            (HcPath::Ode, _) => FamilyKind::Ode(OdeFamily::build(
                &p.diffusion,
                p.kappa,
                p.r,
                window,
                self.opts.grid_n,
            )?),
            (HcPath::Auto, _) => unreachable!("effective_path resolves Auto"),
        };
        let multiplicative = self.multiplicative();
        let mut grid = Vec::with_capacity(self.opts.grid_n);
        let n = self.opts.grid_n;
        if multiplicative {
            let (l0, l1) = (window.0.ln(), window.1.ln());
            for i in 0..n {
                grid.push((l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp());
            }
        } else {
            for i in 0..n {
                grid.push(window.0 + (window.1 - window.0) * i as f64 / (n - 1) as f64);
            }
        }
        // Snap reward discontinuities and kinks onto exact nodes.
        for pt in p
            .reward
            .discontinuities()
            .into_iter()
            .chain(p.reward.kinks())
        {
            if pt > window.0 && pt < window.1 {
                let i = grid
                    .binary_search_by(|y| y.total_cmp(&pt))
                    .unwrap_or_else(|i| i)
                    .clamp(1, n - 2);
                grid[i] = pt;
            }
        }
        grid.dedup();
        let _ = xs;
        let log_g = grid
            .iter()
            .map(|&y| {
                let gy = p.reward.eval(y);
                if gy > 0.0 {
                    gy.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        Ok(Engine {
            window,
            grid,
            log_g,
            family,
            reward: p.reward.clone(),
            tol: self.tol(),
            multiplicative,
        })
    }
}

pub(crate) fn selector_for(merge: Merge, kappa: f64) -> DriftSelector {
    match merge {
        Merge::Interior(c) => DriftSelector::MergePoint(c),
        Merge::LowerBoundary => DriftSelector::ConstantTheta(-kappa),
        Merge::UpperBoundary => DriftSelector::ConstantTheta(kappa),
    }
}

impl Engine {
    fn hc(&self, merge: Merge) -> Result<HcEval<'_>> {
        match &self.family {
            FamilyKind::Abm(pair) => Ok(HcEval::Abm(ClosedFormHc::new(*pair, merge))),
            FamilyKind::GbmPow { mu, sigma, r } => {
                Ok(HcEval::Gbm(GbmPowerHc::new(*mu, *sigma, *r, merge)?))
            }
            FamilyKind::Ode(fam) => Ok(HcEval::Ode(fam.hc(merge)?)),
        }
    }

    fn log_ratio(&self, hc: &HcEval, y: f64, log_gy: f64) -> Result<f64> {
        if log_gy == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(log_gy - hc.log_h(y)?)
    }

    /// Supremum of g/h over one side {y ≤ x} (left = true) or {y ≥ x}.
    fn sup_side(&self, hc: &HcEval, x: f64, left: bool) -> Result<Outcome<SupSide>> {
        let n = self.grid.len();
        // Node range of the side, plus the query point itself.
        let split = self.grid.partition_point(|&y| y < x);
        let (lo_i, hi_i) = if left {
            (0usize, split.min(n))
        } else {
            (split, n)
        };
        let mut best = f64::NEG_INFINITY;
        let mut best_at = x;
        let mut best_idx: Option<usize> = None;
        for i in lo_i..hi_i {
            let lr = self.log_ratio(hc, self.grid[i], self.log_g[i])?;
            if lr > best {
                best = lr;
                best_at = self.grid[i];
                best_idx = Some(i);
            }
        }
        {
            let gx = self.reward.eval(x);
            let lgx = if gx > 0.0 {
                gx.ln()
            } else {
                f64::NEG_INFINITY
            };
            let lr = self.log_ratio(hc, x, lgx)?;
            if lr > best {
                best = lr;
                best_at = x;
                best_idx = None;
            }
        }
        if best == f64::NEG_INFINITY {
            // g vanishes identically on this side.
            return Ok(Outcome::Done(SupSide {
                log_sup: f64::NEG_INFINITY,
                argmax: best_at,
                divergent: false,
                at_edge_flat: false,
            }));
        }

        // Divergence trend test when the maximizer sits at the outer
        // truncation edge of the side.
        let outer_idx = if left { lo_i } else { hi_i - 1 };
        let at_outer_edge = best_idx == Some(outer_idx)
            && (if left {
                outer_idx == 0
            } else {
                outer_idx == n - 1
            });
        if at_outer_edge {
            let side_len = hi_i - lo_i;
            let tail = (side_len / 10).max(3).min(side_len);
            let mut monotone = true;
            let mut prev = f64::NEG_INFINITY;
            // Walk from the inner end of the tail toward the edge.
            for k in 0..tail {
                let i = if left {
                    lo_i + (tail - 1 - k)
                } else {
                    hi_i - tail + k
                };
                let lr = self.log_ratio(hc, self.grid[i], self.log_g[i])?;
                if lr < prev {
                    monotone = false;
                    break;
                }
                prev = lr;
            }
            return Ok(Outcome::Done(SupSide {
                log_sup: f64::INFINITY,
                argmax: best_at,
                divergent: monotone,
                at_edge_flat: !monotone,
            }));
        }

        // Golden-section polish in the bracketing cells, skipped across
        // reward discontinuities.
        let (mut blo, mut bhi) = match best_idx {
            Some(i) => {
                let lo = if i > 0 { self.grid[i - 1] } else { self.grid[i] };
                let hi = if i + 1 < n {
                    self.grid[i + 1]
                } else {
                    self.grid[i]
                };
                (lo, hi)
            }
            None => {
                // Maximizer is the query point itself.
                let lo = if split > 0 { self.grid[split - 1] } else { x };
                let hi = if split < n { self.grid[split] } else { x };
                (lo, hi)
            }
        };
        if left {
            bhi = bhi.min(x);
        } else {
            blo = blo.max(x);
        }
        let disc = self.reward.discontinuities();
        let crosses_disc = disc.iter().any(|&d| d > blo && d < bhi)
            || disc.iter().any(|&d| d == best_at);
        if !crosses_disc && bhi > blo {
            let phi = |y: f64| -> f64 {
                let gy = self.reward.eval(y);
                if gy <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                match hc.log_h(y) {
                    Ok(lh) => gy.ln() - lh,
                    Err(_) => f64::NEG_INFINITY,
                }
            };
            let (mut y_pol, mut f_pol) = golden_max(&phi, blo, bhi, 80);
            // Tangency refinement: zero of φ'(y) = g'/g − h'/h.
            let dphi = |y: f64| -> Option<f64> {
                let gy = self.reward.eval(y);
                if gy <= 0.0 {
                    return None;
                }
                let dg = self.reward.deriv_right(y);
                hc.dlog_h(y).ok().map(|dl| dg / gy - dl)
            };
            let mut rlo = blo;
            let mut rhi = bhi;
            for &kink in &self.reward.kinks() {
                if kink > rlo && kink < rhi {
                    if y_pol >= kink {
                        rlo = kink;
                    } else {
                        rhi = kink;
                    }
                }
            }
            if let (Some(dlo), Some(dhi)) = (dphi(rlo), dphi(rhi)) {
                if dlo > 0.0 && dhi < 0.0 {
                    let mut a = rlo;
                    let mut b = rhi;
                    for _ in 0..100 {
                        let m = 0.5 * (a + b);
                        match dphi(m) {
                            Some(dm) if dm > 0.0 => a = m,
                            Some(_) => b = m,
                            None => break,
                        }
                    }
                    let y_t = 0.5 * (a + b);
                    let f_t = phi(y_t);
                    if f_t >= f_pol {
                        y_pol = y_t;
                        f_pol = f_t;
                    }
                }
            }
            if f_pol > best {
                best = f_pol;
                best_at = y_pol;
            }
        }
        Ok(Outcome::Done(SupSide {
            log_sup: best,
            argmax: best_at,
            divergent: false,
            at_edge_flat: false,
        }))
    }

    /// Signed log-gap Δ(c) = ln sup_left − ln sup_right with infinity
    /// conventions, plus the two sides for reuse.
    fn delta(&self, c: f64, x: f64) -> Result<Outcome<(f64, SupSide, SupSide)>> {
        let hc = self.hc(Merge::Interior(c))?;
        let l = match self.sup_side(&hc, x, true)? {
            Outcome::Done(s) => s,
            Outcome::Widen => return Ok(Outcome::Widen),
        };
        let r = match self.sup_side(&hc, x, false)? {
            Outcome::Done(s) => s,
            Outcome::Widen => return Ok(Outcome::Widen),
        };
        if l.at_edge_flat || r.at_edge_flat {
            return Ok(Outcome::Widen);
        }
        if l.divergent && r.divergent {
            return Err(Error::UnboundedValue(format!(
                "g/h_c diverges on both sides of x = {x} for c = {c}; \
                 the value is +infinity"
            )));
        }
        let d = if l.divergent {
            f64::INFINITY
        } else if r.divergent {
            f64::NEG_INFINITY
        } else {
            l.log_sup - r.log_sup
        };
        Ok(Outcome::Done((d, l, r)))
    }

    fn point_value(&self, x: f64) -> Result<Outcome<PointValue>> {
        let (w_lo, w_hi) = self.window;
        if x < w_lo || x > w_hi {
            return Err(Error::Domain(format!(
                "x = {x} outside the truncation window [{w_lo}, {w_hi}]"
            )));
        }

        // Case 1: decreasing boundary function h_b (c* = upper limit).
        let hb = self.hc(Merge::UpperBoundary)?;
        let b_left = match self.sup_side(&hb, x, true)? {
            Outcome::Done(s) => s,
            Outcome::Widen => return Ok(Outcome::Widen),
        };
        if b_left.at_edge_flat {
            return Ok(Outcome::Widen);
        }
        if b_left.divergent {
            return Err(Error::UnboundedValue(format!(
                "g grows faster to the left than every h_c (sup of g/h_b diverges \
                 below x = {x}); the value is +infinity"
            )));
        }
        let b_right = match self.sup_side(&hb, x, false)? {
            Outcome::Done(s) => s,
            Outcome::Widen => return Ok(Outcome::Widen),
        };
        if b_right.at_edge_flat {
            return Ok(Outcome::Widen);
        }
        if !b_right.divergent && b_left.log_sup >= b_right.log_sup {
            return Ok(Outcome::Done(self.finish_boundary(
                Merge::UpperBoundary,
                x,
                b_left,
                Some(b_right),
                true,
            )?));
        }

        // Case 2: increasing boundary function h_a (c* = lower limit).
        let ha = self.hc(Merge::LowerBoundary)?;
        let a_right = match self.sup_side(&ha, x, false)? {
            Outcome::Done(s) => s,
            Outcome::Widen => return Ok(Outcome::Widen),
        };
        if a_right.at_edge_flat {
            return Ok(Outcome::Widen);
        }
        if a_right.divergent {
            return Err(Error::UnboundedValue(format!(
                "g grows faster to the right than every h_c (sup of g/h_a diverges \
                 above x = {x}); the value is +infinity"
            )));
        }
        let a_left = match self.sup_side(&ha, x, true)? {
            Outcome::Done(s) => s,
            Outcome::Widen => return Ok(Outcome::Widen),
        };
        if a_left.at_edge_flat {
            return Ok(Outcome::Widen);
        }
        if !a_left.divergent && a_right.log_sup >= a_left.log_sup {
            return Ok(Outcome::Done(self.finish_boundary(
                Merge::LowerBoundary,
                x,
                a_right,
                Some(a_left),
                false,
            )?));
        }

        // g identically zero on the window: trivial value.
        if self.log_g.iter().all(|&lg| lg == f64::NEG_INFINITY) {
            return Ok(Outcome::Done(PointValue {
                x,
                v: 0.0,
                c_star: Merge::Interior(0.5 * (w_lo + w_hi)),
                lambda_star: 0.0,
                near_boundary: false,
                argmax_left: None,
                argmax_right: None,
            }));
        }

        // Case 3: bisection on the continuous sign-changing Δ(c).
        let inset = 0.5 * self.typical_cell();
        let mut c_lo = w_lo + inset;
        let mut c_hi = w_hi - inset;
        let (d_lo, ..) = match self.delta(c_lo, x)? {
            Outcome::Done(t) => t,
            Outcome::Widen => return Ok(Outcome::Widen),
        };
        let (d_hi, ..) = match self.delta(c_hi, x)? {
            Outcome::Done(t) => t,
            Outcome::Widen => return Ok(Outcome::Widen),
        };
        if !(d_lo >= 0.0 && d_hi <= 0.0) {
            return Err(Error::BisectionFailure(format!(
                "Δ(c) does not change sign on [{c_lo:.6}, {c_hi:.6}] for x = {x}: \
                 Δ(lo) = {d_lo:.6e}, Δ(hi) = {d_hi:.6e}; the merge-point equation \
                 has no root on the truncated range"
            )));
        }
        // Much tighter than the value tolerance: residual gap leaks
        // straight into v at stopping points, and the κ-monotonicity
        // comparison allows only 1e-10 of slack there.
        let tol_delta = (0.5 * self.tol).min(1e-12);
        let width_floor = 1e-13 * (w_hi - w_lo);
        let mut result = None;
        for _ in 0..200 {
            let c_mid = 0.5 * (c_lo + c_hi);
            let (d_mid, l, r) = match self.delta(c_mid, x)? {
                Outcome::Done(t) => t,
                Outcome::Widen => return Ok(Outcome::Widen),
            };
            if d_mid.is_finite() && d_mid.abs() <= tol_delta {
                result = Some((c_mid, l, r));
                break;
            }
            if d_mid >= 0.0 {
                c_lo = c_mid;
            } else {
                c_hi = c_mid;
            }
            if c_hi - c_lo < width_floor {
                result = Some((c_mid, l, r));
                break;
            }
        }
        let (c_star, l, r) = result.ok_or_else(|| {
            Error::BisectionFailure(format!(
                "merge-point bisection for x = {x} did not converge on [{w_lo}, {w_hi}]"
            ))
        })?;
        if !(l.log_sup.is_finite() && r.log_sup.is_finite()) {
            return Err(Error::BisectionFailure(format!(
                "merge-point bisection for x = {x} collapsed onto c = {c_star} with \
                 a one-sided divergent supremum; no interior merge point exists"
            )));
        }
        let log_lambda = l.log_sup.max(r.log_sup);
        let hc = self.hc(Merge::Interior(c_star))?;
        let v = (log_lambda + hc.log_h(x)?).exp();
        let near = c_star - w_lo <= 2.0 * self.typical_cell()
            || w_hi - c_star <= 2.0 * self.typical_cell();
        Ok(Outcome::Done(PointValue {
            x,
            v,
            c_star: Merge::Interior(c_star),
            lambda_star: log_lambda.exp(),
            near_boundary: near,
            argmax_left: Some(l.argmax),
            argmax_right: Some(r.argmax),
        }))
    }

    fn finish_boundary(
        &self,
        merge: Merge,
        x: f64,
        active: SupSide,
        other: Option<SupSide>,
        active_is_left: bool,
    ) -> Result<PointValue> {
        let hc = self.hc(merge)?;
        let v = (active.log_sup + hc.log_h(x)?).exp();
        let (argmax_left, argmax_right) = if active_is_left {
            (
                Some(active.argmax),
                other.filter(|s| !s.divergent).map(|s| s.argmax),
            )
        } else {
            (
                other.filter(|s| !s.divergent).map(|s| s.argmax),
                Some(active.argmax),
            )
        };
        Ok(PointValue {
            x,
            v,
            c_star: merge,
            lambda_star: active.log_sup.exp(),
            near_boundary: false,
            argmax_left,
            argmax_right,
        })
    }

    fn typical_cell(&self) -> f64 {
        if self.multiplicative {
            let mid = self.grid.len() / 2;
            self.grid[mid + 1] - self.grid[mid]
        } else {
            (self.window.1 - self.window.0) / (self.grid.len() - 1) as f64
        }
    }
}

/// Golden-section maximization of a unimodal function on [lo, hi].
fn golden_max(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, f(mid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{DiffusionSpec, RewardFunction};
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

    fn fix_gbm_k0() -> AmbiguityProblem {
        AmbiguityProblem::new(
            DiffusionSpec::geometric_bm(0.0, 1.0),
            0.0,
            1.0,
            RewardFunction::Call { strike: 1.0 },
        )
        .unwrap()
    }

    /// Independent oracle for the straddle fixture: root of the
    /// tangency equation h_0(b) = b·h_0'(b) on (0.05, 1), then
    /// λ = b/h_0(b).
    fn straddle_tangency_oracle() -> (f64, f64) {
        let pair = ExponentPair::for_abm(0.0, 1.0, 1.0, 4.0).unwrap();
        let h = ClosedFormHc::new(pair, Merge::Interior(0.0));
        let f = |b: f64| h.h(b) - b * h.deriv(b, 1);
        let (mut lo, mut hi) = (0.05, 1.0);
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if f(m) > 0.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        let b = 0.5 * (lo + hi);
        (b, b / h.h(b))
    }

    #[test]
    fn straddle_value_at_origin_matches_tangency_oracle() {
        let (b, lambda) = straddle_tangency_oracle();
        assert!(b > 0.34 && b < 0.37, "oracle boundary b = {b}");
        // Independent cross-check by dense-grid scan of |y|/h_0(y).
        let pair = ExponentPair::for_abm(0.0, 1.0, 1.0, 4.0).unwrap();
        let h0 = ClosedFormHc::new(pair, Merge::Interior(0.0));
        let mut scan = f64::NEG_INFINITY;
        for i in 0..200_000 {
            let y = -2.0 + 4.0 * i as f64 / 199_999.0;
            if y.abs() > 0.0 {
                scan = scan.max(y.abs() / h0.h(y));
            }
        }
        assert_relative_eq!(scan, lambda, max_relative = 1e-8);

        let solver = Solver::new(fix_bm1(), SolverOptions::default()).unwrap();
        let pv = solver.value_at(0.0).unwrap();
        // v(0) = λ* since h_0(0) = 1.
        assert_relative_eq!(pv.v, lambda, max_relative = 1e-7);
        assert_relative_eq!(pv.lambda_star, lambda, max_relative = 1e-7);
        match pv.c_star {
            Merge::Interior(c) => assert!(c.abs() < 2e-2, "c* = {c}"),
            other => panic!("expected interior c*, got {other:?}"),
        }
        let am = pv.argmax_right.unwrap();
        assert_relative_eq!(am, b, max_relative = 1e-6);
    }

    #[test]
    fn straddle_symmetric_profile_at_origin() {
        let solver = Solver::new(fix_bm1(), SolverOptions::default()).unwrap();
        let prof = solver.sup_ratio(Merge::Interior(0.0), 0.0, Side::Both).unwrap();
        let l = prof.left.unwrap();
        let r = prof.right.unwrap();
        assert_relative_eq!(l.log_sup, r.log_sup, epsilon = 1e-9);
        assert_relative_eq!(l.argmax, -r.argmax, max_relative = 1e-6);
    }

    #[test]
    fn straddle_deep_in_stopping_region() {
        let solver = Solver::new(fix_bm1(), SolverOptions::default()).unwrap();
        let pv = solver.value_at(5.0).unwrap();
        assert_relative_eq!(pv.v, 5.0, max_relative = 1e-8);
    }

    #[test]
    fn straddle_stopping_set_is_two_rays() {
        let (b, _) = straddle_tangency_oracle();
        let solver = Solver::new(fix_bm1(), SolverOptions::default()).unwrap();
        let xs: Vec<f64> = (0..241).map(|i| -3.0 + 6.0 * i as f64 / 240.0).collect();
        let sol = solver.solve_on_grid(&xs).unwrap();
        assert_eq!(sol.stopping_intervals.len(), 2);
        let (l0, l1) = sol.stopping_intervals[0];
        let (r0, r1) = sol.stopping_intervals[1];
        assert_eq!(l0, f64::NEG_INFINITY);
        assert_eq!(r1, f64::INFINITY);
        assert_relative_eq!(l1, -b, max_relative = 1e-4);
        assert_relative_eq!(r0, b, max_relative = 1e-4);
        // v ≥ g everywhere.
        for (v, g) in sol.v.iter().zip(&sol.g) {
            assert!(v + 1e-9 * v.abs().max(1.0) >= *g);
        }
    }

    #[test]
    fn gbm_call_matches_classical_closed_form() {
        let solver = Solver::new(fix_gbm_k0(), SolverOptions::default()).unwrap();
        // v(x) = d x^γ = 0.25 x² in the continuation region (x < 2).
        let pv = solver.value_at(0.5).unwrap();
        assert_relative_eq!(pv.v, 0.0625, max_relative = 1e-6);
        assert_eq!(pv.c_star, Merge::LowerBoundary);
        assert_relative_eq!(pv.argmax_right.unwrap(), 2.0, max_relative = 1e-6);
        let pv = solver.value_at(1.5).unwrap();
        assert_relative_eq!(pv.v, 0.25 * 1.5 * 1.5, max_relative = 1e-6);
        // Stopping branch: v = x − K above x* = 2.
        let pv = solver.value_at(3.0).unwrap();
        assert_relative_eq!(pv.v, 2.0, max_relative = 1e-6);
    }

    #[test]
    fn gbm_call_ode_path_agrees_with_closed_form() {
        let opts = SolverOptions {
            path: HcPath::Ode,
            ..Default::default()
        };
        let solver = Solver::new(fix_gbm_k0(), opts).unwrap();
        let pv = solver.value_at(0.5).unwrap();
        assert_relative_eq!(pv.v, 0.0625, max_relative = 1e-3);
        let pv = solver.value_at(3.0).unwrap();
        assert_relative_eq!(pv.v, 2.0, max_relative = 1e-3);
    }

    #[test]
    fn unbounded_call_value_is_flagged() {
        // μ ≥ r makes the perpetual call worthless to wait out: γ ≤ 1
        // and sup (y−K)/y^γ diverges.
        let p = AmbiguityProblem::new(
            DiffusionSpec::geometric_bm(1.2, 1.0),
            0.0,
            1.0,
            RewardFunction::Call { strike: 1.0 },
        )
        .unwrap();
        let solver = Solver::new(p, SolverOptions::default()).unwrap();
        let err = solver.value_at(1.0).unwrap_err();
        assert!(matches!(err, Error::UnboundedValue(_)), "{err}");
    }

    #[test]
    fn worst_case_prior_is_merge_point_at_origin() {
        let solver = Solver::new(fix_bm1(), SolverOptions::default()).unwrap();
        match solver.worst_case_prior(0.0).unwrap() {
            DriftSelector::MergePoint(c) => assert!(c.abs() < 2e-2),
            other => panic!("expected merge-point selector, got {other:?}"),
        }
    }

    #[test]
    fn worst_case_prior_for_put_is_constant_up_drift() {
        // Out-of-the-money put: the global sup of g/h_b sits below x,
        // so c* = +∞ and the худший drift is +κ everywhere.
        let p = AmbiguityProblem::new(
            DiffusionSpec::arithmetic_bm(0.0, 1.0),
            0.5,
            1.0,
            RewardFunction::Put { strike: 1.0 },
        )
        .unwrap();
        let solver = Solver::new(p, SolverOptions::default()).unwrap();
        let pv = solver.value_at(3.0).unwrap();
        assert_eq!(pv.c_star, Merge::UpperBoundary);
        match solver.worst_case_prior(3.0).unwrap() {
            DriftSelector::ConstantTheta(t) => assert_eq!(t, 0.5),
            other => panic!("expected constant selector, got {other:?}"),
        }
    }

    #[test]
    fn kappa_zero_prior_is_degenerate() {
        let solver = Solver::new(fix_gbm_k0(), SolverOptions::default()).unwrap();
        match solver.worst_case_prior(0.5).unwrap() {
            DriftSelector::ConstantTheta(t) => assert_eq!(t, 0.0),
            DriftSelector::MergePoint(_) => {}
            other => panic!("unexpected selector {other:?}"),
        }
    }

    #[test]
    fn kappa_monotonicity_on_straddle() {
        let base = fix_bm1();
        let mut prev: Option<Vec<f64>> = None;
        for kappa in [0.0, 0.5, 1.0] {
            let mut p = base.clone();
            p.kappa = kappa;
            let solver = Solver::new(p, SolverOptions::default()).unwrap();
            let xs: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
            let vs: Vec<f64> = xs.iter().map(|&x| solver.value_at(x).unwrap().v).collect();
            if let Some(prev_vs) = &prev {
                for (lo_k, hi_k) in vs.iter().zip(prev_vs) {
                    assert!(
                        *lo_k <= hi_k + 1e-10,
                        "value increased with kappa: {lo_k} > {hi_k}"
                    );
                }
            }
            prev = Some(vs);
        }
    }

    #[test]
    fn majorant_dominates_reward_on_grid() {
        let solver = Solver::new(fix_bm1(), SolverOptions::default()).unwrap();
        let pv = solver.value_at(0.1).unwrap();
        let c = match pv.c_star {
            Merge::Interior(c) => c,
            _ => panic!("expected interior merge point"),
        };
        let pair = ExponentPair::for_abm(0.0, 1.0, 1.0, 4.0).unwrap();
        let h = ClosedFormHc::new(pair, Merge::Interior(c));
        for i in 0..400 {
            let y = -4.0 + 8.0 * i as f64 / 399.0;
            let maj = pv.lambda_star * h.h(y);
            assert!(
                maj >= y.abs() * (1.0 - 1e-7),
                "majorant {maj} below reward at y = {y}"
            );
        }
    }

    #[test]
    fn value_below_every_feasible_majorant() {
        use rand::{Rng, SeedableRng};
        let solver = Solver::new(fix_bm1(), SolverOptions::default()).unwrap();
        let x = 0.2;
        let v = solver.value_at(x).unwrap().v;
        let pair = ExponentPair::for_abm(0.0, 1.0, 1.0, 4.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let c = rng.gen_range(-2.0..2.0);
            let h = ClosedFormHc::new(pair, Merge::Interior(c));
            // Feasible λ: the dense-scan sup times a random factor ≥ 1.
            let mut sup = 0.0f64;
            for i in 0..40_000 {
                let y = -4.0 + 8.0 * i as f64 / 39_999.0;
                sup = sup.max(y.abs() / h.h(y));
            }
            let lambda = sup * (1.0 + rng.gen_range(0.0..3.0));
            assert!(
                v <= lambda * h.h(x) * (1.0 + 1e-7),
                "v = {v} above feasible majorant at c = {c}"
            );
        }
    }

    /// §2.6-style reward: the two regimes keyed by l_*(0) vs l^*(0).
    fn step_linear_problem(mu: f64) -> AmbiguityProblem {
        AmbiguityProblem::new(
            DiffusionSpec::arithmetic_bm(mu, 1.0),
            0.5,
            1.0,
            RewardFunction::StepLinear,
        )
        .unwrap()
    }

    /// Independent classification: l^*(0) = sup_{y≥0} y/h_0(y) vs
    /// l_*(0) = 1.
    fn l_star_upper(problem: &AmbiguityProblem) -> f64 {
        let (mu, sigma) = match problem.diffusion.family {
            DiffusionFamily::ArithmeticBm { mu, sigma } => (mu, sigma),
            _ => unreachable!(),
        };
        let pair = ExponentPair::for_abm(mu, sigma, problem.kappa, problem.r).unwrap();
        let h0 = ClosedFormHc::new(pair, Merge::Interior(0.0));
        let mut sup = 0.0f64;
        for i in 1..400_000 {
            let y = 40.0 * i as f64 / 399_999.0;
            sup = sup.max(y / h0.h(y));
        }
        sup
    }

    #[test]
    fn step_linear_regime_one_keeps_origin_in_stopping_set() {
        let p = step_linear_problem(0.0);
        assert!(l_star_upper(&p) < 1.0, "μ=0 should be regime 1");
        let solver = Solver::new(p, SolverOptions::default()).unwrap();
        let xs: Vec<f64> = (0..201).map(|i| -2.0 + 6.0 * i as f64 / 200.0).collect();
        let sol = solver.solve_on_grid(&xs).unwrap();
        // S = (−∞, 0] ∪ [x*, ∞): stopping at every x ≤ 0, a gap, then
        // stopping again.
        assert_eq!(sol.stopping_intervals.len(), 2);
        let (_, l1) = sol.stopping_intervals[0];
        let (r0, _) = sol.stopping_intervals[1];
        assert!(l1.abs() < 0.05, "left ray should end at 0, got {l1}");
        assert!(r0 > 0.5, "right ray should start at x* > 0, got {r0}");
    }

    #[test]
    fn step_linear_regime_two_detaches_from_origin() {
        let p = step_linear_problem(4.0);
        assert!(l_star_upper(&p) > 1.0, "μ=4 should be regime 2");
        let solver = Solver::new(p, SolverOptions::default()).unwrap();
        let xs: Vec<f64> = (0..301).map(|i| -3.0 + 23.0 * i as f64 / 300.0).collect();
        let sol = solver.solve_on_grid(&xs).unwrap();
        assert_eq!(sol.stopping_intervals.len(), 2);
        let (_, l1) = sol.stopping_intervals[0];
        let (r0, _) = sol.stopping_intervals[1];
        assert!(l1 < -0.05, "regime 2 has x_* < 0, got {l1}");
        assert!(r0 > 1.0, "x* should exceed 1, got {r0}");
        // Continuation strictly between the rays, including the origin.
        let idx0 = xs.iter().position(|&x| x.abs() < 0.04).unwrap();
        assert!(!sol.in_stopping_set[idx0], "origin must be continuation");
    }

    #[test]
    fn grid_carries_exact_node_at_discontinuity() {
        let p = step_linear_problem(0.0);
        let solver = Solver::new(p, SolverOptions::default()).unwrap();
        let eng = solver
            .build_engine(solver.initial_window(&[0.5]).unwrap(), &[0.5])
            .unwrap();
        assert!(eng.grid.iter().any(|&y| y == 0.0));
    }
}
