//! Flat key/value configuration: parsing, validation, serialization.
//!
//! Format: one `key = value` pair per line, `#` starts a comment,
//! blank lines ignored. Unknown keys are an error so typos surface
//! instead of silently falling back to defaults.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::problem::{AmbiguityProblem, CrashProblem, DiffusionSpec, RewardFunction};

/// Solver knobs carried alongside the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Nodes of the internal evaluation grid (and of ODE tables).
    pub grid_n: usize,
    /// Relative value tolerance; `None` picks the path default
    /// (1e-8 closed-form, 1e-4 ODE-tabulated).
    pub tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid_n: 2048,
            tol: None,
        }
    }
}

/// A parsed configuration: one of the two problem kinds plus solver knobs.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedProblem {
    Ambiguity(AmbiguityProblem, SolverConfig),
    Crash(CrashProblem, SolverConfig),
}

const KNOWN_KEYS: &[&str] = &[
    "problem.kind",
    "diffusion.family",
    "diffusion.mu",
    "diffusion.sigma",
    "diffusion.a",
    "diffusion.b",
    "ambiguity.kappa",
    "discount.r",
    "reward.family",
    "reward.K",
    "crash.factor",
    "solver.grid_n",
    "solver.tol",
];

/// Splits config text into a key -> value map, rejecting unknown keys
/// and duplicates.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Parse(format!(
                "line {}: unknown key `{key}`",
                lineno + 1
            )));
        }
        if value.is_empty() {
            return Err(Error::Parse(format!("line {}: empty value", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Parse(format!(
                "line {}: duplicate key `{key}`",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

/// Applies `key=value` override pairs on top of parsed config pairs.
/// Overrides may only touch known keys.
pub fn apply_overrides(text: &str, overrides: &[(String, String)]) -> Result<String> {
    let mut pairs = parse_pairs(text)?;
    for (k, v) in overrides {
        if !KNOWN_KEYS.contains(&k.as_str()) {
            return Err(Error::Parse(format!("unknown override key `{k}`")));
        }
        pairs.insert(k.clone(), v.clone());
    }
    Ok(pairs
        .iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect::<Vec<_>>()
        .join("\n"))
}

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Parse(format!("missing required key `{key}`")))
    }

    fn num(&mut self, key: &str) -> Result<f64> {
        let v = self.require(key)?;
        parse_extended(&v).ok_or_else(|| Error::Parse(format!("key `{key}`: bad number `{v}`")))
    }

    fn num_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => parse_extended(&v)
                .map(Some)
                .ok_or_else(|| Error::Parse(format!("key `{key}`: bad number `{v}`"))),
        }
    }

    fn finish(self, kind: &str) -> Result<()> {
        if let Some(k) = self.map.keys().next() {
            return Err(Error::Parse(format!(
                "key `{k}` is not applicable to problem.kind = {kind}"
            )));
        }
        Ok(())
    }
}

fn parse_extended(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse::<f64>().ok().filter(|v| !v.is_nan()),
    }
}

fn fmt_extended(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_diffusion(f: &mut Fields) -> Result<DiffusionSpec> {
    let family = f.require("diffusion.family")?;
    let mu = f.num("diffusion.mu")?;
    let sigma = f.num("diffusion.sigma")?;
    let mut d = match family.as_str() {
        "ArithmeticBM" => DiffusionSpec::arithmetic_bm(mu, sigma),
        "GeometricBM" => DiffusionSpec::geometric_bm(mu, sigma),
        other => {
            return Err(Error::Parse(format!(
                "diffusion.family must be ArithmeticBM or GeometricBM in config files, got `{other}`"
            )))
        }
    };
    if let Some(a) = f.num_opt("diffusion.a")? {
        d.interval.0 = a;
    }
    if let Some(b) = f.num_opt("diffusion.b")? {
        d.interval.1 = b;
    }
    Ok(d)
}

fn parse_reward(f: &mut Fields) -> Result<RewardFunction> {
    let family = f.require("reward.family")?;
    Ok(match family.as_str() {
        "Call" => RewardFunction::Call {
            strike: f.num("reward.K")?,
        },
        "Put" => RewardFunction::Put {
            strike: f.num("reward.K")?,
        },
        "Straddle" => RewardFunction::Straddle,
        "StepLinear" => RewardFunction::StepLinear,
        other => {
            return Err(Error::Parse(format!(
                "reward.family must be one of Call, Put, Straddle, StepLinear, got `{other}`"
            )))
        }
    })
}

fn parse_solver(f: &mut Fields) -> Result<SolverConfig> {
    let mut sc = SolverConfig::default();
    if let Some(v) = f.take("solver.grid_n") {
        sc.grid_n = v
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("solver.grid_n: bad count `{v}`")))?;
        if sc.grid_n < 64 {
            return Err(Error::Validation("solver.grid_n must be >= 64".into()));
        }
    }
    if let Some(t) = f.num_opt("solver.tol")? {
        if !(t > 0.0) {
            return Err(Error::Validation("solver.tol must be positive".into()));
        }
        sc.tol = Some(t);
    }
    Ok(sc)
}

/// Parses configuration text into a validated problem object.
pub fn load_problem(text: &str) -> Result<LoadedProblem> {
    let mut f = Fields {
        map: parse_pairs(text)?,
    };
    let kind = f.require("problem.kind")?;
    match kind.as_str() {
        "ambiguity" => {
            let diffusion = parse_diffusion(&mut f)?;
            let kappa = f.num("ambiguity.kappa")?;
            let r = f.num("discount.r")?;
            let reward = parse_reward(&mut f)?;
            let solver = parse_solver(&mut f)?;
            f.finish("ambiguity")?;
            Ok(LoadedProblem::Ambiguity(
                AmbiguityProblem::new(diffusion, kappa, r, reward)?,
                solver,
            ))
        }
        "crash" => {
            let diffusion = parse_diffusion(&mut f)?;
            let r = f.num("discount.r")?;
            let reward = parse_reward(&mut f)?;
            let crash_factor = f.num("crash.factor")?;
            let solver = parse_solver(&mut f)?;
            f.finish("crash")?;
            Ok(LoadedProblem::Crash(
                CrashProblem::new(diffusion, r, reward, crash_factor)?,
                solver,
            ))
        }
        other => Err(Error::Parse(format!(
            "problem.kind must be `ambiguity` or `crash`, got `{other}`"
        ))),
    }
}

/// Writes a problem back in the config format accepted by
/// [`load_problem`]; the round trip parses to an equal object.
pub fn serialize_problem(p: &LoadedProblem) -> String {
    let mut out = Vec::new();
    let (diffusion, reward, solver) = match p {
        LoadedProblem::Ambiguity(a, s) => {
            out.push("problem.kind = ambiguity".to_string());
            (&a.diffusion, &a.reward, s)
        }
        LoadedProblem::Crash(c, s) => {
            out.push("problem.kind = crash".to_string());
            (&c.diffusion, &c.reward, s)
        }
    };
    match &diffusion.family {
        crate::problem::DiffusionFamily::ArithmeticBm { mu, sigma } => {
            out.push("diffusion.family = ArithmeticBM".into());
            out.push(format!("diffusion.mu = {mu}"));
            out.push(format!("diffusion.sigma = {sigma}"));
        }
        crate::problem::DiffusionFamily::GeometricBm { mu, sigma } => {
            out.push("diffusion.family = GeometricBM".into());
            out.push(format!("diffusion.mu = {mu}"));
            out.push(format!("diffusion.sigma = {sigma}"));
        }
        crate::problem::DiffusionFamily::Custom { .. } => {
            unreachable!("custom diffusions are not expressible in config files")
        }
    }
    out.push(format!("diffusion.a = {}", fmt_extended(diffusion.interval.0)));
    out.push(format!("diffusion.b = {}", fmt_extended(diffusion.interval.1)));
    match p {
        LoadedProblem::Ambiguity(a, _) => {
            out.push(format!("ambiguity.kappa = {}", a.kappa));
            out.push(format!("discount.r = {}", a.r));
        }
        LoadedProblem::Crash(c, _) => {
            out.push(format!("discount.r = {}", c.r));
            out.push(format!("crash.factor = {}", c.crash_factor));
        }
    }
    match reward {
        RewardFunction::Call { strike } => {
            out.push("reward.family = Call".into());
            out.push(format!("reward.K = {strike}"));
        }
        RewardFunction::Put { strike } => {
            out.push("reward.family = Put".into());
            out.push(format!("reward.K = {strike}"));
        }
        RewardFunction::Straddle => out.push("reward.family = Straddle".into()),
        RewardFunction::StepLinear => out.push("reward.family = StepLinear".into()),
        RewardFunction::Tabulated { .. } => {
            unreachable!("tabulated rewards are not expressible in config files")
        }
    }
    out.push(format!("solver.grid_n = {}", solver.grid_n));
    if let Some(t) = solver.tol {
        out.push(format!("solver.tol = {t}"));
    }
    out.join("\n") + "\n"
}
