//! Quantitative comparison of full runs against the amplitude approximation.
//!
//! Error variables follow the ansatz scaling: `R_{±1}, R_{±3}` measure the
//! critical-mode defect in units of ε², `R_k` for the slaved modes
//! `|k| ∈ {2, 4, 6}` and all other modes in units of ε³.

use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::duks::{full_residual, phi1, simulate_path, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::landau::{
    integrate_amplitudes, reconstruct_approximation, rhs_amplitudes, AmplitudeState,
    AmplitudeTrajectory, ApproxOrder,
};
use crate::noise::{
    ou_second_moment, tail_bound, NoiseKey, NoiseScaling, OuHistory, OuLattice,
};
use crate::spectrum::{is_critical, symbol_lambda, SpectralField, WeightedNormParams};
use crate::stats::{
    bootstrap_quantile_se, fit_loglog, mean_and_se, median, quantile, wilson_interval, LogLogFit,
};

/// Knobs shared by the ensemble studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub norm: WeightedNormParams,
    /// Ansatz compared against `v` for `E_sup_v`; `E_sup_u` always uses
    /// the first-order ansatz.
    pub order: ApproxOrder,
    /// Physical grid size for sup norms; 0 selects `8N`.
    pub grid: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            norm: WeightedNormParams::default(),
            order: ApproxOrder::First,
            grid: 0,
        }
    }
}

impl StudyOptions {
    pub fn grid_for(&self, n: usize) -> usize {
        if self.grid == 0 {
            8 * n
        } else {
            self.grid
        }
    }
}

/// Suprema over the horizon of one coupled path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    /// `sup_t ‖R(t)‖_{ℓ²ᵣ}`.
    pub e_r: f64,
    /// `sup_t sup_x |v - approx|`.
    pub e_sup_v: f64,
    /// `sup_t sup_x |u - first-order approx|`.
    pub e_sup_u: f64,
    /// `sup_t Σ_k |v(k) - approx(k)|`, an upper bound for `e_sup_v`.
    pub l1_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub eps: f64,
    pub seed: u64,
    pub path: u64,
    pub metrics: Option<PathMetrics>,
    pub aborted: Option<String>,
}

/// The error vector `R(t)` at one sample.
pub fn error_vector(v: &SpectralField, approx: &AmplitudeState, eps: f64) -> SpectralField {
    let e2 = eps * eps;
    let e3 = e2 * eps;
    SpectralField::from_positive(v.truncation(), |k| {
        let a = approx.amplitude(k);
        if is_critical(k) {
            (v.get(k) - a * eps) / e2
        } else {
            (v.get(k) - a * e2) / e3
        }
    })
}

fn check_alignment(traj_times: &[f64], amp: &AmplitudeTrajectory, eps: f64) -> Result<()> {
    if amp.states.len() != traj_times.len() {
        return Err(Error::Sequencing(format!(
            "amplitude trajectory has {} samples, full run has {}",
            amp.states.len(),
            traj_times.len()
        )));
    }
    for (t, s) in traj_times.iter().zip(&amp.states) {
        let slow = t * eps * eps;
        if (s.t - slow).abs() > 1e-9 * slow.abs().max(1.0) {
            return Err(Error::Sequencing(format!(
                "sample grids differ: fast t = {t} maps to T = {slow}, amplitude sample at T = {}",
                s.t
            )));
        }
    }
    Ok(())
}

/// Error suprema of one full trajectory against its amplitude trajectory.
pub fn pathwise_error(
    traj: &Trajectory,
    amp: &AmplitudeTrajectory,
    eps: f64,
    opts: &StudyOptions,
) -> Result<PathMetrics> {
    check_alignment(&traj.times, amp, eps)?;
    let n = traj.v.first().map(|v| v.truncation()).unwrap_or(1);
    let m = opts.grid_for(n);
    let mut metrics = PathMetrics {
        e_r: 0.0,
        e_sup_v: 0.0,
        e_sup_u: 0.0,
        l1_v: 0.0,
    };
    for (i, state) in amp.states.iter().enumerate() {
        let r = error_vector(&traj.v[i], state, eps);
        metrics.e_r = metrics.e_r.max(r.weighted_norm(&opts.norm));

        let approx = reconstruct_approximation(state, eps, opts.order, n);
        let (gv, l1) = traj.v[i].sub(&approx)?.sup_norm_estimate(m)?;
        metrics.e_sup_v = metrics.e_sup_v.max(gv);
        metrics.l1_v = metrics.l1_v.max(l1);

        let first = reconstruct_approximation(state, eps, ApproxOrder::First, n);
        let (gu, _) = traj.u(i).sub(&first)?.sup_norm_estimate(m)?;
        metrics.e_sup_u = metrics.e_sup_u.max(gu);
    }
    Ok(metrics)
}

/// Runs the full solver and the amplitude system on one shared noise key.
pub fn coupled_run(config: &SimConfig, path: u64) -> Result<(Trajectory, AmplitudeTrajectory)> {
    let traj = simulate_path(config, path)?;
    let history = config.ou_history(path);
    let amp = integrate_amplitudes(config.a1, config.a3, &history)?;
    Ok((traj, amp))
}

/// One ensemble member, with divergence recorded rather than propagated.
pub fn error_record(config: &SimConfig, path: u64, opts: &StudyOptions) -> Result<ErrorRecord> {
    let outcome = coupled_run(config, path)
        .and_then(|(traj, amp)| pathwise_error(&traj, &amp, config.eps, opts));
    let (metrics, aborted) = match outcome {
        Ok(m) => (Some(m), None),
        Err(e @ Error::Divergence { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(ErrorRecord {
        eps: config.eps,
        seed: config.seed,
        path,
        metrics,
        aborted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub median: f64,
    pub p95: f64,
    /// Bootstrap standard error of the median.
    pub median_se: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        Self {
            median: median(values),
            p95: quantile(values, 0.95),
            median_se: bootstrap_quantile_se(values, 0.5, 500, 0x5eed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedPath {
    pub eps: f64,
    pub seed: u64,
    pub path: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub eps: f64,
    pub paths: usize,
    pub completed: usize,
    pub e_r: Quantiles,
    pub e_sup_v: Quantiles,
    pub e_sup_u: Quantiles,
    /// Fraction of completed paths with `E_sup_v ≤ C₂ ε²`.
    pub success_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSlopes {
    pub e_r: LogLogFit,
    pub e_sup_v: LogLogFit,
    pub e_sup_u: LogLogFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub r: f64,
    pub order: ApproxOrder,
    pub rows: Vec<ScalingRow>,
    pub slopes: ScalingSlopes,
    /// `1.5 × median E_sup_v / ε²` at the largest ε.
    pub c2: f64,
    /// Fraction of all completed paths with `E_sup_v ≤ C₂ ε²`.
    pub success_fraction: f64,
    pub success_wilson95: (f64, f64),
    pub aborted: Vec<AbortedPath>,
    #[serde(skip)]
    pub records: Vec<ErrorRecord>,
}

/// Fraction of completed records with `E_sup_v ≤ c2 ε²`.
pub fn success_fraction(records: &[ErrorRecord], c2: f64) -> (usize, usize) {
    let done: Vec<_> = records
        .iter()
        .filter_map(|r| r.metrics.map(|m| (r.eps, m)))
        .collect();
    let ok = done
        .iter()
        .filter(|(eps, m)| m.e_sup_v <= c2 * eps * eps)
        .count();
    (ok, done.len())
}

/// Multiplier applied to the largest-ε median when calibrating `C₂`.
pub const C2_CALIBRATION: f64 = 1.5;

impl ScalingTable {
    pub fn from_records(records: Vec<ErrorRecord>, opts: &StudyOptions) -> Result<Self> {
        let mut eps_list: Vec<f64> = Vec::new();
        for r in &records {
            if !eps_list.contains(&r.eps) {
                eps_list.push(r.eps);
            }
        }
        if eps_list.len() < 3 {
            return Err(Error::Config(format!(
                "scaling study needs at least 3 distinct eps values, got {}",
                eps_list.len()
            )));
        }
        let eps_max = eps_list.iter().cloned().fold(f64::MIN, f64::max);

        let metric_values = |eps: f64, f: fn(&PathMetrics) -> f64| -> Vec<f64> {
            records
                .iter()
                .filter(|r| r.eps == eps)
                .filter_map(|r| r.metrics.as_ref().map(f))
                .collect()
        };
        let top = metric_values(eps_max, |m| m.e_sup_v);
        let c2 = C2_CALIBRATION * median(&top) / (eps_max * eps_max);

        let mut rows = Vec::new();
        for &eps in &eps_list {
            let in_row: Vec<ErrorRecord> =
                records.iter().filter(|r| r.eps == eps).cloned().collect();
            let (ok, done) = success_fraction(&in_row, c2);
            rows.push(ScalingRow {
                eps,
                paths: in_row.len(),
                completed: done,
                e_r: Quantiles::of(&metric_values(eps, |m| m.e_r)),
                e_sup_v: Quantiles::of(&metric_values(eps, |m| m.e_sup_v)),
                e_sup_u: Quantiles::of(&metric_values(eps, |m| m.e_sup_u)),
                success_fraction: ok as f64 / done.max(1) as f64,
            });
        }
        let slopes = slopes_of(&rows);
        let (ok, done) = success_fraction(&records, c2);
        let aborted = records
            .iter()
            .filter_map(|r| {
                r.aborted.as_ref().map(|reason| AbortedPath {
                    eps: r.eps,
                    seed: r.seed,
                    path: r.path,
                    reason: reason.clone(),
                })
            })
            .collect();
        Ok(Self {
            r: opts.norm.r(),
            order: opts.order,
            rows,
            slopes,
            c2,
            success_fraction: ok as f64 / done.max(1) as f64,
            success_wilson95: wilson_interval(ok, done),
            aborted,
            records,
        })
    }

    /// `E_sup_v` median slope refitted without row `skip`.
    pub fn e_sup_v_slope_without(&self, skip: usize) -> f64 {
        let rows: Vec<ScalingRow> = self
            .rows
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, r)| r.clone())
            .collect();
        slopes_of(&rows).e_sup_v.slope
    }

    /// Per-path metrics as CSV.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("eps,seed,path,e_r,e_sup_v,e_sup_u,l1_v,aborted\n");
        for r in &self.records {
            match (&r.metrics, &r.aborted) {
                (Some(m), _) => out.push_str(&format!(
                    "{},{},{},{},{},{},{},\n",
                    r.eps, r.seed, r.path, m.e_r, m.e_sup_v, m.e_sup_u, m.l1_v
                )),
                (None, reason) => out.push_str(&format!(
                    "{},{},{},,,,,\"{}\"\n",
                    r.eps,
                    r.seed,
                    r.path,
                    reason.as_deref().unwrap_or("").replace('"', "'")
                )),
            }
        }
        out
    }
}

fn slopes_of(rows: &[ScalingRow]) -> ScalingSlopes {
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let fit = |f: fn(&ScalingRow) -> f64| fit_loglog(&eps, &rows.iter().map(f).collect::<Vec<_>>());
    ScalingSlopes {
        e_r: fit(|r| r.e_r.median),
        e_sup_v: fit(|r| r.e_sup_v.median),
        e_sup_u: fit(|r| r.e_sup_u.median),
    }
}

/// Coupled ensembles at several ε, `paths` members each.
///
/// Path `p` at every ε uses noise key `(base.seed, p)`. Work is spread over
/// the current rayon pool; results do not depend on the pool size.
pub fn epsilon_scaling_study(
    base: &SimConfig,
    eps_list: &[f64],
    paths: usize,
    opts: &StudyOptions,
    progress: Option<&(dyn Fn(f64, u64, usize, usize) + Sync)>,
) -> Result<ScalingTable> {
    if eps_list.len() < 3 {
        return Err(Error::Config(format!(
            "eps list needs at least 3 values, got {}",
            eps_list.len()
        )));
    }
    if paths == 0 {
        return Err(Error::Config("paths must be positive".into()));
    }
    for &eps in eps_list {
        base.with_eps(eps).validate()?;
    }
    let jobs: Vec<(f64, u64)> = eps_list
        .iter()
        .flat_map(|&eps| (0..paths as u64).map(move |p| (eps, p)))
        .collect();
    let total = jobs.len();
    let done = AtomicUsize::new(0);
    let records = jobs
        .par_iter()
        .map(|&(eps, p)| {
            let rec = error_record(&base.with_eps(eps), p, opts);
            let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
            if let Some(cb) = progress {
                cb(eps, p, finished, total);
            }
            rec
        })
        .collect::<Result<Vec<_>>>()?;
    ScalingTable::from_records(records, opts)
}

// ---------------------------------------------------------------------------
// Residual hierarchy along the ansatz

/// Modes whose full residual is tracked.
pub const RESIDUAL_MODES: [i32; 7] = [0, 1, 2, 3, 4, 5, 6];
/// Slaved modes whose integrated reduced residual is tracked.
pub const SLAVED_MODES: [i32; 3] = [2, 4, 6];

/// Suprema over one path of the residual diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub eps: f64,
    /// `sup_t |Res(k,t)|` for `k` in [`RESIDUAL_MODES`].
    pub full: Vec<f64>,
    /// `sup_t |∫₀ᵗ e^{λ(j)(t-τ)} ε⁻³ Res_r(j,τ) dτ|` for `j` in [`SLAVED_MODES`].
    pub integrated_reduced: Vec<f64>,
}

fn slow_derivative(values: &[Complex64], times: &[f64], i: usize) -> Complex64 {
    let last = values.len() - 1;
    if last == 0 {
        return Complex64::new(0.0, 0.0);
    }
    let (a, b) = if i == 0 {
        (0, 1)
    } else if i == last {
        (last - 1, last)
    } else {
        (i - 1, i + 1)
    };
    (values[b] - values[a]) / (times[b] - times[a])
}

/// Inserts the second-order ansatz built from `amp` into the full residual.
///
/// `∂ₜv` at the critical modes is `ε³` times the amplitude right-hand side;
/// at the slaved modes it is `ε⁴ ∂_T A_j` from centered differences on the
/// slow grid.
pub fn ansatz_residuals(history: &OuHistory, amp: &AmplitudeTrajectory) -> Result<ResidualSample> {
    if amp.is_empty() {
        return Err(Error::Sequencing(
            "amplitude stage missing: integrate the amplitudes before residuals".into(),
        ));
    }
    let eps = history.scaling.eps;
    check_alignment(&history.times, amp, eps)?;
    let n = history.z[0].truncation();
    let e2 = eps * eps;
    let e3 = e2 * eps;
    let e4 = e2 * e2;
    let slow_times: Vec<f64> = amp.states.iter().map(|s| s.t).collect();
    let series = |j: i32| -> Vec<Complex64> { amp.states.iter().map(|s| s.amplitude(j)).collect() };
    let slaved: Vec<Vec<Complex64>> = SLAVED_MODES.iter().map(|&j| series(j)).collect();

    let mut full = vec![0.0f64; RESIDUAL_MODES.len()];
    let mut integrated_sup = vec![0.0f64; SLAVED_MODES.len()];

    for (i, state) in amp.states.iter().enumerate() {
        let noise = history.slow_at_index(i);
        let v = reconstruct_approximation(state, eps, ApproxOrder::Second, n);
        let (d1, d3) = rhs_amplitudes(state.a1, state.a3, &noise);
        let mut dv = SpectralField::zeros(n);
        dv.set(1, d1 * e3);
        dv.set(3, d3 * e3);
        for (s, &j) in SLAVED_MODES.iter().enumerate() {
            dv.set(j, slow_derivative(&slaved[s], &slow_times, i) * e4);
        }
        let res = full_residual(&v, &history.z[i], eps, &dv)?;
        for (slot, &k) in full.iter_mut().zip(&RESIDUAL_MODES) {
            *slot = slot.max(res.get(k).norm());
        }

    }

    // Integrated reduced residual on the fast grid.
    if amp.fine.len() != history.forcing.len() {
        return Err(Error::Sequencing(format!(
            "amplitude fine grid has {} points, noise forcing has {}",
            amp.fine.len(),
            history.forcing.len()
        )));
    }
    let dt = history.dt;
    for (s, &j) in SLAVED_MODES.iter().enumerate() {
        let decay = (symbol_lambda(j) * dt).exp();
        let weight = phi1(symbol_lambda(j) * dt) * dt;
        let mut acc = Complex64::new(0.0, 0.0);
        for (states, noise) in amp.fine.windows(2).zip(history.forcing.windows(2)) {
            let (a_prev, a_now) = (states[0].amplitude(j), states[1].amplitude(j));
            let y_prev = a_prev + noise[0].z(j);
            let y_now = a_now + noise[1].z(j);
            // ε⁻³ Res_r = -ε⁻¹ ∂ₜA_j + ε Y_j, with A_j linear and Y_j averaged
            // over the step.
            let forcing = -(a_now - a_prev) / (eps * dt) + (y_prev + y_now) * (0.5 * eps);
            acc = acc * decay + forcing * weight;
            integrated_sup[s] = integrated_sup[s].max(acc.norm());
        }
    }
    Ok(ResidualSample {
        eps,
        full,
        integrated_reduced: integrated_sup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub eps: f64,
    pub paths: usize,
    pub full_median: Vec<f64>,
    pub integrated_reduced_median: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualTable {
    pub modes: Vec<i32>,
    pub slaved_modes: Vec<i32>,
    pub rows: Vec<ResidualRow>,
    /// Fitted ε-order of `sup_t |Res(k,t)|` per entry of `modes`; `None`
    /// when the residual vanishes to rounding at every ε.
    pub full_orders: Vec<Option<f64>>,
    /// Fitted ε-order of the integrated reduced residual per slaved mode.
    pub integrated_reduced_orders: Vec<f64>,
    pub noiseless: bool,
}

impl ResidualTable {
    /// `Some(None)` means the residual of mode `k` vanishes identically.
    pub fn full_order(&self, k: i32) -> Option<Option<f64>> {
        self.modes
            .iter()
            .position(|&m| m == k.abs())
            .map(|i| self.full_orders[i])
    }
}

/// Residual suprema at or below this are treated as exact cancellation.
pub const ROUNDING_FLOOR: f64 = 1e-15;

/// Residual diagnostics along the amplitude ansatz, medians over `paths`.
pub fn residual_order_study(
    base: &SimConfig,
    eps_list: &[f64],
    paths: usize,
) -> Result<ResidualTable> {
    if eps_list.len() < 3 {
        return Err(Error::Config(format!(
            "eps list needs at least 3 values, got {}",
            eps_list.len()
        )));
    }
    if paths == 0 {
        return Err(Error::Config("paths must be positive".into()));
    }
    let mut rows = Vec::new();
    for &eps in eps_list {
        let cfg = base.with_eps(eps);
        cfg.validate()?;
        let samples = (0..paths as u64)
            .into_par_iter()
            .map(|p| {
                let history = cfg.ou_history(p);
                let amp = integrate_amplitudes(cfg.a1, cfg.a3, &history)?;
                ansatz_residuals(&history, &amp)
            })
            .collect::<Result<Vec<_>>>()?;
        let column_median = |f: &dyn Fn(&ResidualSample) -> &Vec<f64>, i: usize| {
            median(&samples.iter().map(|s| f(s)[i]).collect::<Vec<_>>())
        };
        rows.push(ResidualRow {
            eps,
            paths,
            full_median: (0..RESIDUAL_MODES.len())
                .map(|i| column_median(&|s| &s.full, i))
                .collect(),
            integrated_reduced_median: (0..SLAVED_MODES.len())
                .map(|i| column_median(&|s| &s.integrated_reduced, i))
                .collect(),
        });
    }
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let order = |vals: Vec<f64>| fit_loglog(&eps, &vals).slope;
    let full_orders = (0..RESIDUAL_MODES.len())
        .map(|i| {
            let vals: Vec<f64> = rows.iter().map(|r| r.full_median[i]).collect();
            if vals.iter().all(|&v| v <= ROUNDING_FLOOR) {
                None
            } else {
                Some(order(vals))
            }
        })
        .collect();
    let integrated_reduced_orders = (0..SLAVED_MODES.len())
        .map(|i| order(rows.iter().map(|r| r.integrated_reduced_median[i]).collect()))
        .collect();
    Ok(ResidualTable {
        modes: RESIDUAL_MODES.to_vec(),
        slaved_modes: SLAVED_MODES.to_vec(),
        rows,
        full_orders,
        integrated_reduced_orders,
        noiseless: base.scaling.is_noiseless(),
    })
}

// ---------------------------------------------------------------------------
// OU statistics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuCheckSpec {
    pub scaling: NoiseScaling,
    pub seed: u64,
    /// Fast time step of the lattice; every time below must be a multiple.
    pub dt: f64,
    pub moment_modes: Vec<i32>,
    pub moment_times: Vec<f64>,
    pub moment_paths: usize,
    pub tail_modes: Vec<i32>,
    pub tail_times: Vec<f64>,
    /// Thresholds are chosen so that `tail_bound` equals each of these levels.
    pub tail_levels: Vec<f64>,
    pub tail_paths: usize,
    /// Paths for the weighted-supremum statistic; 0 skips it.
    pub zsup_paths: usize,
    pub zsup_n: usize,
    pub zsup_horizon: f64,
    pub zsup_r: f64,
    pub zsup_s: f64,
}

impl OuCheckSpec {
    pub fn new(scaling: NoiseScaling, seed: u64, t0: f64) -> Self {
        let eps = scaling.eps;
        Self {
            scaling,
            seed,
            dt: 0.01,
            moment_modes: vec![0, 1, 2, 3, 4, 5, 6, 10],
            moment_times: vec![0.1, 1.0, 10.0],
            moment_paths: 10_000,
            tail_modes: vec![1, 2, 5],
            tail_times: vec![0.1, 1.0, t0 / (eps * eps)],
            tail_levels: vec![0.05, 0.1, 0.25, 0.5],
            tail_paths: 1_000,
            zsup_paths: 200,
            zsup_n: 32,
            zsup_horizon: t0 / (eps * eps),
            zsup_r: 2.0,
            zsup_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub k: i32,
    pub t: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub expected: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryCheck {
    pub k: i32,
    pub t: f64,
    pub empirical: f64,
    pub expected: f64,
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub k: i32,
    pub t: f64,
    pub threshold: f64,
    pub bound: f64,
    pub empirical: f64,
    /// `sqrt(b(1-b)/M)` at the bound `b`.
    pub binomial_se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSupCheck {
    pub r: f64,
    pub s: f64,
    /// `2(s + r) < 7`.
    pub summability: bool,
    pub horizon: f64,
    pub paths: usize,
    pub median: f64,
    pub p95: f64,
    /// `sqrt(p95)`: empirical `C_Z` at confidence 0.95.
    pub c_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuReport {
    pub eps: f64,
    pub moments: Vec<MomentCheck>,
    pub stationary: Vec<StationaryCheck>,
    pub tails: Vec<TailCheck>,
    pub weighted_sup: Option<WeightedSupCheck>,
    pub moments_pass: bool,
    pub tails_pass: bool,
}

/// Relative tolerance for the stationary second-moment check.
pub const STATIONARY_TOLERANCE: f64 = 0.05;

fn steps_for(t: f64, dt: f64) -> Result<u64> {
    let s = t / dt;
    if (s - s.round()).abs() > 1e-9 * s.max(1.0) || s < 0.0 {
        return Err(Error::Config(format!("time {t} is not a multiple of dt = {dt}")));
    }
    Ok(s.round() as u64)
}

/// Threshold `c` at which [`tail_bound`] equals `level`.
pub fn threshold_for_level(k: i32, t: f64, level: f64, scaling: &NoiseScaling) -> f64 {
    let alpha = scaling.alpha(k);
    let lambda = symbol_lambda(k);
    let scale = if lambda == 0.0 { t } else { 1.0 / (2.0 * lambda.abs()) };
    (alpha * alpha * scale / level).sqrt()
}

/// Monte-Carlo second moments, sup-tail frequencies and the weighted
/// supremum statistic of the OU lattice.
pub fn ou_statistics_check(spec: &OuCheckSpec) -> Result<OuReport> {
    let scaling = &spec.scaling;

    // Moments: |Z(k,t)|² per path at each requested time.
    let mut moment_times = spec.moment_times.clone();
    moment_times.sort_by(|a, b| a.total_cmp(b));
    let moment_steps = moment_times
        .iter()
        .map(|&t| steps_for(t, spec.dt))
        .collect::<Result<Vec<_>>>()?;
    let n_moment = spec.moment_modes.iter().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0);
    let per_path: Vec<Vec<Vec<f64>>> = (0..spec.moment_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut lattice = OuLattice::new(NoiseKey::new(spec.seed, p), n_moment);
            moment_steps
                .iter()
                .map(|&target| {
                    while lattice.step < target {
                        lattice.advance(scaling, spec.dt);
                    }
                    spec.moment_modes
                        .iter()
                        .map(|&k| lattice.z.get(k).norm_sqr())
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut moments = Vec::new();
    for (ti, &t) in moment_times.iter().enumerate() {
        for (ki, &k) in spec.moment_modes.iter().enumerate() {
            let values: Vec<f64> = per_path.iter().map(|p| p[ti][ki]).collect();
            let (mean, se) = mean_and_se(&values);
            let expected = ou_second_moment(k, t, scaling);
            let pass = if se == 0.0 {
                mean == expected
            } else {
                (mean - expected).abs() <= 3.0 * se
            };
            moments.push(MomentCheck {
                k,
                t,
                empirical: mean,
                standard_error: se,
                expected,
                pass,
            });
        }
    }

    let t_last = moment_times.last().copied().unwrap_or(0.0);
    let stationary = moments
        .iter()
        .filter(|m| m.k == 2 && m.t == t_last)
        .map(|m| {
            let expected = scaling.alpha(2).powi(2) / (2.0 * symbol_lambda(2).abs());
            let relative_error = if expected == 0.0 {
                if m.empirical == 0.0 { 0.0 } else { f64::INFINITY }
            } else {
                (m.empirical / expected - 1.0).abs()
            };
            StationaryCheck {
                k: 2,
                t: m.t,
                empirical: m.empirical,
                expected,
                relative_error,
                pass: relative_error <= STATIONARY_TOLERANCE,
            }
        })
        .collect::<Vec<_>>();

    // Tails: running sup of |Z(k,·)| on the fast grid.
    let mut tail_times = spec.tail_times.clone();
    tail_times.sort_by(|a, b| a.total_cmp(b));
    let tail_steps = tail_times
        .iter()
        .map(|&t| steps_for(t, spec.dt))
        .collect::<Result<Vec<_>>>()?;
    let n_tail = spec.tail_modes.iter().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0);
    let sups: Vec<Vec<Vec<f64>>> = (0..spec.tail_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut lattice = OuLattice::new(NoiseKey::new(spec.seed ^ 0x7a11, p), n_tail);
            let mut running = vec![0.0f64; spec.tail_modes.len()];
            tail_steps
                .iter()
                .map(|&target| {
                    while lattice.step < target {
                        lattice.advance(scaling, spec.dt);
                        for (slot, &k) in running.iter_mut().zip(&spec.tail_modes) {
                            *slot = slot.max(lattice.z.get(k).norm());
                        }
                    }
                    running.clone()
                })
                .collect()
        })
        .collect();

    let mut tails = Vec::new();
    let m = spec.tail_paths as f64;
    for (ti, &t) in tail_times.iter().enumerate() {
        for (ki, &k) in spec.tail_modes.iter().enumerate() {
            for &level in &spec.tail_levels {
                let threshold = threshold_for_level(k, t, level, scaling);
                if !(threshold > 0.0) {
                    continue;
                }
                let bound = tail_bound(k, t, threshold, scaling)?;
                let hits = sups.iter().filter(|p| p[ti][ki] >= threshold).count();
                let empirical = hits as f64 / m;
                let binomial_se = (bound * (1.0 - bound) / m).sqrt();
                tails.push(TailCheck {
                    k,
                    t,
                    threshold,
                    bound,
                    empirical,
                    binomial_se,
                    pass: empirical <= bound + 3.0 * binomial_se,
                });
            }
        }
    }

    let weighted_sup = if spec.zsup_paths > 0 {
        Some(weighted_sup_check(spec)?)
    } else {
        None
    };

    let moments_pass = moments.iter().all(|m| m.pass) && stationary.iter().all(|s| s.pass);
    let tails_pass = tails.iter().all(|t| t.pass);
    Ok(OuReport {
        eps: scaling.eps,
        moments,
        stationary,
        tails,
        weighted_sup,
        moments_pass,
        tails_pass,
    })
}

/// `sup_{t ≤ horizon} Σ_{k ∉ {±1,±3}} |Ẑ_k(t)|² (1+k²)^r` for one path.
pub fn weighted_sup_statistic(
    key: NoiseKey,
    n: usize,
    scaling: &NoiseScaling,
    dt: f64,
    horizon_steps: u64,
    r: f64,
) -> f64 {
    let mut lattice = OuLattice::new(key, n);
    let weights: Vec<f64> = (0..=n as i32)
        .map(|k| {
            if is_critical(k) {
                0.0
            } else {
                let mult = if k == 0 { 1.0 } else { 2.0 };
                mult * (1.0 + (k as f64).powi(2)).powf(r) / scaling.c(k).powi(2)
            }
        })
        .collect();
    let mut sup = 0.0f64;
    while lattice.step < horizon_steps {
        lattice.advance(scaling, dt);
        let total: f64 = weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * lattice.z.get(k as i32).norm_sqr())
            .sum();
        sup = sup.max(total);
    }
    sup
}

fn weighted_sup_check(spec: &OuCheckSpec) -> Result<WeightedSupCheck> {
    let horizon_steps = (spec.zsup_horizon / spec.dt).round() as u64;
    let values: Vec<f64> = (0..spec.zsup_paths as u64)
        .into_par_iter()
        .map(|p| {
            weighted_sup_statistic(
                NoiseKey::new(spec.seed ^ 0x2e57, p),
                spec.zsup_n,
                &spec.scaling,
                spec.dt,
                horizon_steps,
                spec.zsup_r,
            )
        })
        .collect();
    let p95 = quantile(&values, 0.95);
    Ok(WeightedSupCheck {
        r: spec.zsup_r,
        s: spec.zsup_s,
        summability: 2.0 * (spec.zsup_s + spec.zsup_r) < 7.0,
        horizon: spec.zsup_horizon,
        paths: spec.zsup_paths,
        median: median(&values),
        p95,
        c_z: p95.sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Pass/fail windows

/// One named quantity checked against a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub window: String,
    pub pass: bool,
}

impl Check {
    fn at_least(name: impl Into<String>, value: f64, min: f64) -> Self {
        Self {
            name: name.into(),
            value,
            window: format!(">= {min}"),
            pass: value >= min,
        }
    }

    fn below(name: impl Into<String>, value: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            value,
            window: format!("< {max}"),
            pass: value < max,
        }
    }

    fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            window: format!("[{lo}, {hi}]"),
            pass: (lo..=hi).contains(&value),
        }
    }
}

pub const SLOPE_WINDOW: (f64, f64) = (1.6, 2.4);
pub const SUCCESS_FRACTION_MIN: f64 = 0.9;
pub const ER_SPREAD_MAX: f64 = 3.0;
pub const CRITICAL_RESIDUAL_ORDER_MIN: f64 = 3.5;
pub const MODE5_RESIDUAL_ORDER_MIN: f64 = 2.5;
pub const REDUCED_RESIDUAL_ORDER_MIN: f64 = 0.6;

impl ScalingTable {
    /// Ratio of the largest to the smallest median `E_R` over the rows.
    pub fn e_r_spread(&self) -> f64 {
        let meds = self.rows.iter().map(|r| r.e_r.median);
        let hi = meds.clone().fold(f64::MIN, f64::max);
        let lo = meds.fold(f64::MAX, f64::min);
        hi / lo
    }

    pub fn checks(&self) -> Vec<Check> {
        vec![
            Check::within(
                "e_sup_v_slope",
                self.slopes.e_sup_v.slope,
                SLOPE_WINDOW.0,
                SLOPE_WINDOW.1,
            ),
            Check::at_least("success_fraction", self.success_fraction, SUCCESS_FRACTION_MIN),
            Check::below("e_r_median_spread", self.e_r_spread(), ER_SPREAD_MAX),
        ]
    }
}

impl ResidualTable {
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for (k, min) in [
            (0, CRITICAL_RESIDUAL_ORDER_MIN),
            (1, CRITICAL_RESIDUAL_ORDER_MIN),
            (3, CRITICAL_RESIDUAL_ORDER_MIN),
            (5, MODE5_RESIDUAL_ORDER_MIN),
        ] {
            let name = format!("res_order_k{k}");
            out.push(match self.full_order(k) {
                Some(Some(order)) => Check::at_least(name, order, min),
                Some(None) => Check {
                    name,
                    value: f64::INFINITY,
                    window: format!(">= {min} (vanishes identically)"),
                    pass: true,
                },
                None => Check::at_least(name, f64::NAN, min),
            });
        }
        for (j, order) in self.slaved_modes.iter().zip(&self.integrated_reduced_orders) {
            out.push(Check::at_least(
                format!("reduced_res_order_j{j}"),
                *order,
                REDUCED_RESIDUAL_ORDER_MIN,
            ));
        }
        out
    }
}

impl OuReport {
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for m in &self.moments {
            out.push(Check {
                name: format!("moment_k{}_t{}", m.k, m.t),
                value: m.empirical,
                window: format!("{} +- {}", m.expected, 3.0 * m.standard_error),
                pass: m.pass,
            });
        }
        for s in &self.stationary {
            out.push(Check {
                name: format!("stationary_k{}", s.k),
                value: s.relative_error,
                window: format!("<= {STATIONARY_TOLERANCE}"),
                pass: s.pass,
            });
        }
        for t in &self.tails {
            out.push(Check {
                name: format!("tail_k{}_t{}_b{}", t.k, t.t, t.bound),
                value: t.empirical,
                window: format!("<= {} + 3*{}", t.bound, t.binomial_se),
                pass: t.pass,
            });
        }
        out
    }
}
