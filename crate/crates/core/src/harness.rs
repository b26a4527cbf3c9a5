//! Monte-Carlo sweeps comparing certainty-equivalent controllers learned by
//! different estimators on freshly generated PC-LQ systems.
//!
//! A trial generates a system, samples `n` transitions, fits a model,
//! solves the Riccati equation for it, and then judges the resulting gain
//! `K` on the *true* system: it succeeds when `A + BK` passes the stability
//! certificate and `trace(P_K) <= success_factor * trace(P_star)`.
//!
//! Random streams are derived from the base seed and the trial coordinates
//! only, so results do not depend on scheduling or thread count.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimators::{fit_model, EstimatorKind};
use crate::io;
use crate::linalg::Mat;
use crate::lqr::{
    average_cost, closed_loop, is_stable, policy_value, solve_dare_value_iteration, LqSystem, LYAPUNOV_MAX_DOUBLINGS,
};
use crate::rng::Rng;
use crate::synth::{gen_pclq, sample_transitions, NoiseSpec, Normalization, PcLqSpec, QMode};

/// An estimator plus whether its output is soft-thresholded before control
/// synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Method {
    pub kind: EstimatorKind,
    pub thresholded: bool,
}

impl Method {
    /// `ols` is the plain certainty-equivalent baseline; `moment` and
    /// `semiparam` are thresholded. Suffixes `_th` and `_raw` override.
    pub fn parse(s: &str) -> Result<Method> {
        let (base, thresholded) = if let Some(b) = s.strip_suffix("_th") {
            (b, Some(true))
        } else if let Some(b) = s.strip_suffix("_raw") {
            (b, Some(false))
        } else {
            (s, None)
        };
        let kind = EstimatorKind::parse(base)?;
        let thresholded = thresholded.unwrap_or(kind != EstimatorKind::Ols);
        Ok(Method { kind, thresholded })
    }

    pub fn name(&self) -> String {
        let default = self.kind != EstimatorKind::Ols;
        match (self.thresholded, default) {
            (t, d) if t == d => self.kind.name().to_string(),
            (true, _) => format!("{}_th", self.kind.name()),
            (false, _) => format!("{}_raw", self.kind.name()),
        }
    }

    fn code(&self) -> u64 {
        let k = match self.kind {
            EstimatorKind::Ols => 0,
            EstimatorKind::SecondMoment => 1,
            EstimatorKind::Semiparametric => 2,
        };
        2 * k + u64::from(self.thresholded)
    }
}

/// Cost matrices used when solving the Riccati equation of a fitted model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SynthesisCosts {
    /// The true system's `Q` and `R`, which the designer knows.
    #[default]
    System,
    /// `Q = I`, `R = I` regardless of the true costs.
    Identity,
}

impl SynthesisCosts {
    pub fn parse(s: &str) -> Result<SynthesisCosts> {
        match s {
            "system" => Ok(SynthesisCosts::System),
            "identity" => Ok(SynthesisCosts::Identity),
            other => Err(Error::InvalidParameter(format!(
                "unknown synthesis costs {other:?} (expected system or identity)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthesisCosts::System => "system",
            SynthesisCosts::Identity => "identity",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub d_list: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub eps: f64,
    pub estimators: Vec<Method>,
    pub s_c: usize,
    pub s_e: usize,
    pub d_u: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub success_factor: f64,
    pub known_b: bool,
    pub base_seed: u64,
    pub q_mode: QMode,
    /// Rescaling of the sampled diagonal blocks.
    pub normalization: Normalization,
    pub synthesis_costs: SynthesisCosts,
    /// Standard deviation of each `x0` coordinate.
    pub sigma0: f64,
    /// Process-noise standard deviation.
    pub sigma_xi: f64,
    pub dare_tol: f64,
    pub dare_max_iter: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d_list: vec![20, 50],
            n_grid: (1..=10).map(|k| 100 * k).collect(),
            trials: 50,
            eps: 0.1,
            estimators: vec![
                Method {
                    kind: EstimatorKind::Ols,
                    thresholded: false,
                },
                Method {
                    kind: EstimatorKind::Semiparametric,
                    thresholded: true,
                },
            ],
            s_c: 5,
            s_e: 5,
            d_u: 1,
            rho1: 1.0,
            rho2: 0.9,
            rho3: 0.9,
            success_factor: 1.1,
            known_b: true,
            base_seed: 20_211_117,
            q_mode: QMode::IOneTwo,
            normalization: Normalization::TopSingular,
            synthesis_costs: SynthesisCosts::System,
            sigma0: 1.0,
            sigma_xi: 1.0,
            dare_tol: 1e-10,
            dare_max_iter: 20_000,
        }
    }
}

/// Optional overrides as read from a config file; absent fields keep their
/// defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub d_list: Option<Vec<usize>>,
    pub n_grid: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub eps: Option<f64>,
    pub estimators: Option<Vec<String>>,
    pub s_c: Option<usize>,
    pub s_e: Option<usize>,
    pub d_u: Option<usize>,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    pub rho3: Option<f64>,
    pub success_factor: Option<f64>,
    pub known_b: Option<bool>,
    pub base_seed: Option<u64>,
    pub q_mode: Option<String>,
    pub normalization: Option<String>,
    pub synthesis_costs: Option<String>,
    pub sigma0: Option<f64>,
    pub sigma_xi: Option<f64>,
    pub dare_tol: Option<f64>,
    pub dare_max_iter: Option<usize>,
    pub format_version: Option<u32>,
}

impl ConfigOverrides {
    pub fn parse(text: &str, path: &Path) -> Result<ConfigOverrides> {
        let o: ConfigOverrides = toml::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(v) = o.format_version {
            if v != io::FORMAT_VERSION {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("unsupported format_version {v}"),
                });
            }
        }
        Ok(o)
    }

    pub fn read(path: &Path) -> Result<ConfigOverrides> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ConfigOverrides::parse(&text, path)
    }

    /// Applies every present field on top of `cfg`; later layers win.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(
            d_list,
            n_grid,
            trials,
            eps,
            s_c,
            s_e,
            d_u,
            rho1,
            rho2,
            rho3,
            success_factor,
            known_b,
            base_seed,
            sigma0,
            sigma_xi,
            dare_tol,
            dare_max_iter
        );
        if let Some(names) = &self.estimators {
            cfg.estimators = names.iter().map(|n| Method::parse(n)).collect::<Result<_>>()?;
        }
        if let Some(q) = &self.q_mode {
            cfg.q_mode = QMode::parse(q)?;
        }
        if let Some(n) = &self.normalization {
            cfg.normalization = Normalization::parse(n)?;
        }
        if let Some(c) = &self.synthesis_costs {
            cfg.synthesis_costs = SynthesisCosts::parse(c)?;
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if !(self.success_factor >= 1.0) {
            return fail(format!("success_factor must be >= 1, got {}", self.success_factor));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return fail("n_grid must be non-empty and strictly increasing".into());
        }
        if self.n_grid[0] == 0 {
            return fail("sample sizes must be positive".into());
        }
        if self.d_list.is_empty() || self.estimators.is_empty() {
            return fail("d_list and estimators must be non-empty".into());
        }
        if !(self.eps >= 0.0) {
            return Err(Error::NegativeThreshold(self.eps));
        }
        for &d in &self.d_list {
            self.pclq_spec(d, 0).validate()?;
        }
        Ok(())
    }

    fn pclq_spec(&self, d: usize, seed: u64) -> PcLqSpec {
        PcLqSpec {
            s_c: self.s_c,
            s_e: self.s_e,
            d,
            d_u: self.d_u,
            rho1: self.rho1,
            rho2: self.rho2,
            rho3: self.rho3,
            normalization: self.normalization,
            seed,
        }
    }

    fn noise(&self) -> NoiseSpec {
        NoiseSpec::isotropic(self.sigma0, 1.0, self.sigma_xi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub estimator: String,
    pub d: usize,
    pub n: usize,
    pub trial_index: usize,
    pub stabilized: bool,
    /// `trace(P_K) / trace(P_star)`, infinite when `K` does not stabilize.
    pub cost_ratio: f64,
    pub dare_converged: bool,
    /// True-zero entries of `A` that are nonzero in the fitted model.
    pub false_positive_zeros: usize,
    pub success: bool,
}

/// The true system of one `(d, trial)` cell and its optimal cost.
struct TrueSystem {
    system: LqSystem,
    optimal_cost: f64,
}

fn true_system(cfg: &ExperimentConfig, d: usize, trial_index: usize) -> Result<TrueSystem> {
    let mut rng = Rng::derive(cfg.base_seed, &[d as u64, trial_index as u64]);
    let spec = cfg.pclq_spec(d, rng.key());
    let generated = gen_pclq(&spec, cfg.q_mode, &mut rng)?;
    let star = solve_dare_value_iteration(&generated.system, cfg.dare_tol, cfg.dare_max_iter)?;
    let optimal_cost = average_cost(&star.p, &Mat::identity(d))?;
    Ok(TrueSystem {
        system: generated.system,
        optimal_cost,
    })
}

fn evaluate(
    cfg: &ExperimentConfig,
    truth: &TrueSystem,
    method: Method,
    d: usize,
    n: usize,
    trial_index: usize,
) -> TrialResult {
    let mut result = TrialResult {
        estimator: method.name(),
        d,
        n,
        trial_index,
        stabilized: false,
        cost_ratio: f64::INFINITY,
        dare_converged: false,
        false_positive_zeros: 0,
        success: false,
    };
    let sys = &truth.system;
    let mut data_rng = Rng::derive(cfg.base_seed, &[d as u64, trial_index as u64, n as u64]);
    let Ok(ds) = sample_transitions(sys, n, &cfg.noise(), &mut data_rng) else {
        return result;
    };
    let eps = if method.thresholded { cfg.eps } else { 0.0 };
    let known_b = cfg.known_b.then(|| sys.b());
    let Ok(model) = fit_model(&ds, eps, method.kind, known_b) else {
        return result;
    };
    let a = sys.a();
    result.false_positive_zeros = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|&(i, j)| a[(i, j)] == 0.0 && model.a_bar[(i, j)] != 0.0)
        .count();
    let controller = match cfg.synthesis_costs {
        SynthesisCosts::System => model.controller_with_costs(sys.q(), sys.r(), cfg.dare_tol, cfg.dare_max_iter),
        SynthesisCosts::Identity => model.controller(cfg.dare_tol, cfg.dare_max_iter),
    };
    let Ok(controller) = controller else {
        return result;
    };
    result.dare_converged = true;
    let stable = closed_loop(sys, &controller.k)
        .and_then(|m| is_stable(&m))
        .unwrap_or(false);
    if !stable {
        return result;
    }
    if let Ok(p) = policy_value(sys, &controller.k, cfg.dare_tol, LYAPUNOV_MAX_DOUBLINGS) {
        let cost = average_cost(&p, &Mat::identity(d)).unwrap_or(f64::INFINITY);
        if cost.is_finite() {
            result.stabilized = true;
            result.cost_ratio = cost / truth.optimal_cost;
            result.success = result.cost_ratio <= cfg.success_factor;
        }
    }
    result
}

/// Runs a single trial. The system depends on `(base_seed, d, trial_index)`
/// and the data additionally on `n`, so every estimator sees the same
/// system and samples within a cell.
pub fn run_trial(
    cfg: &ExperimentConfig,
    method: Method,
    d: usize,
    n: usize,
    trial_index: usize,
) -> Result<TrialResult> {
    cfg.validate()?;
    let truth = true_system(cfg, d, trial_index)?;
    Ok(evaluate(cfg, &truth, method, d, n, trial_index))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub estimator: String,
    pub d: usize,
    pub n: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Normal-approximation standard deviation `sqrt(p (1 - p) / trials)`.
    pub success_stddev: f64,
    /// Mean cost ratio over successful trials; NaN when there are none.
    pub mean_cost_ratio: f64,
    pub base_seed: u64,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// Per-trial records ordered by `(estimator, d, n, trial_index)`.
    pub trials: Vec<TrialResult>,
}

/// Runs the full `estimators x d_list x n_grid x trials` cross product.
///
/// `threads` selects the worker count (`None` uses the global rayon pool).
/// Output is identical for every thread count.
pub fn run_sweep(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<SweepOutput> {
    cfg.validate()?;
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(|| sweep(cfg)),
        None => sweep(cfg),
    }
}

fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    let cells: Vec<(usize, usize)> = cfg
        .d_list
        .iter()
        .flat_map(|&d| (0..cfg.trials).map(move |t| (d, t)))
        .collect();
    let truths: Vec<TrueSystem> = cells
        .par_iter()
        .map(|&(d, t)| true_system(cfg, d, t))
        .collect::<Result<_>>()?;
    let lookup = |d: usize, t: usize| -> &TrueSystem {
        let di = cfg.d_list.iter().position(|&x| x == d).expect("d from d_list");
        &truths[di * cfg.trials + t]
    };

    let mut methods = cfg.estimators.clone();
    methods.sort_by_key(|m| (m.name(), m.code()));
    methods.dedup();
    let mut d_sorted = cfg.d_list.clone();
    d_sorted.sort_unstable();
    d_sorted.dedup();

    let tasks: Vec<(Method, usize, usize, usize)> = methods
        .iter()
        .flat_map(|&m| {
            d_sorted.iter().flat_map(move |&d| {
                cfg.n_grid
                    .iter()
                    .flat_map(move |&n| (0..cfg.trials).map(move |t| (m, d, n, t)))
            })
        })
        .collect();
    let trials: Vec<TrialResult> = tasks
        .par_iter()
        .map(|&(m, d, n, t)| evaluate(cfg, lookup(d, t), m, d, n, t))
        .collect();

    let rows = trials
        .chunks(cfg.trials)
        .map(|chunk| aggregate(chunk, cfg.base_seed))
        .collect();
    Ok(SweepOutput { rows, trials })
}

/// Summarizes the trials of one `(estimator, d, n)` cell.
pub fn aggregate(cell: &[TrialResult], base_seed: u64) -> SweepRow {
    let first = &cell[0];
    let trials = cell.len();
    let successes = cell.iter().filter(|t| t.success).count();
    let rate = successes as f64 / trials as f64;
    let mean_cost_ratio = if successes == 0 {
        f64::NAN
    } else {
        cell.iter().filter(|t| t.success).map(|t| t.cost_ratio).sum::<f64>() / successes as f64
    };
    SweepRow {
        estimator: first.estimator.clone(),
        d: first.d,
        n: first.n,
        trials,
        successes,
        success_rate: rate,
        success_stddev: (rate * (1.0 - rate) / trials as f64).sqrt(),
        mean_cost_ratio,
        base_seed,
    }
}

pub const CSV_HEADER: &str = "estimator,d,n,trials,successes,success_rate,success_stddev,mean_cost_ratio,base_seed";

/// Formats with 6 significant digits, `%g` style.
pub fn fmt_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        format!("{}e{}", trim(mantissa), exp)
    } else {
        trim(&format!("{:.*}", (5 - exp) as usize, x))
    }
}

pub fn csv_string(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CSV_HEADER}");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.estimator,
            r.d,
            r.n,
            r.trials,
            r.successes,
            fmt_sig6(r.success_rate),
            fmt_sig6(r.success_stddev),
            fmt_sig6(r.mean_cost_ratio),
            r.base_seed
        );
    }
    out
}

pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    io::write_text(path, &csv_string(rows))
}

/// Parses a file written by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let bad = |m: String| Error::Format {
        path: "<csv>".into(),
        message: m,
    };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad("missing or unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(format!("line {}: {} fields", i + 2, f.len())));
            }
            let num = |k: usize| -> Result<f64> {
                f[k].parse()
                    .map_err(|_| bad(format!("line {}: bad number {:?}", i + 2, f[k])))
            };
            let int = |k: usize| -> Result<u64> {
                f[k].parse()
                    .map_err(|_| bad(format!("line {}: bad integer {:?}", i + 2, f[k])))
            };
            Ok(SweepRow {
                estimator: f[0].to_string(),
                d: int(1)? as usize,
                n: int(2)? as usize,
                trials: int(3)? as usize,
                successes: int(4)? as usize,
                success_rate: num(5)?,
                success_stddev: num(6)?,
                mean_cost_ratio: num(7)?,
                base_seed: int(8)?,
            })
        })
        .collect()
}
