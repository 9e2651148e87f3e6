//! Fourier–Galerkin solver for the regular part `v` of the noisy duKS
//! equation, `u = v + Z`, on the fast time scale `[0, T₀/ε²]`.
//!
//! Per mode the regular part obeys
//! `∂ₜv(k) = (λ(k) + ε²) v(k) + ε² Z(k) + ik ((v+Z)∗(v+Z))(k)`,
//! which is advanced with first-order exponential Euler: the stiff linear
//! part is integrated exactly, the forcing is frozen at the step start.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landau::{slaved_modes, ApproxOrder};
use crate::noise::{NoiseKey, NoiseScaling, OuHistory, OuLattice, SlowNoise};
use crate::spectrum::{symbol_lambda, SpectralField, DEFAULT_TRUNCATION};

/// Paths are aborted once any coefficient exceeds this modulus.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

/// Parameters of one coupled run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub eps: f64,
    /// Slow horizon; the fast horizon is `t0 / eps²`.
    pub t0: f64,
    pub n: usize,
    pub dt: f64,
    /// Output spacing in fast time units; must be a multiple of `dt`.
    pub cadence: f64,
    pub scaling: NoiseScaling,
    pub seed: u64,
    pub a1: Complex64,
    pub a3: Complex64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let eps = 0.1;
        Self {
            eps,
            t0: 1.0,
            n: DEFAULT_TRUNCATION,
            dt: 0.01,
            cadence: 1.0,
            scaling: NoiseScaling::new(eps),
            seed: 1,
            a1: Complex64::new(1.0, 0.0),
            a3: Complex64::new(0.5, 0.0),
        }
    }
}

impl SimConfig {
    pub fn with_eps(self, eps: f64) -> Self {
        Self {
            eps,
            scaling: self.scaling.with_eps(eps),
            ..self
        }
    }

    pub fn noiseless(self) -> Self {
        Self {
            scaling: NoiseScaling {
                amplitude: 0.0,
                ..self.scaling
            },
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if !(self.eps > 0.0 && self.eps <= 0.5) {
            return bad("eps", format!("{} outside (0, 0.5]", self.eps));
        }
        if self.scaling.eps != self.eps {
            return bad(
                "noise",
                format!("scaling built for eps = {}, run uses {}", self.scaling.eps, self.eps),
            );
        }
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return bad("t0", format!("{} must be positive", self.t0));
        }
        if self.n == 0 {
            return bad("grid.n", "truncation must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("grid.dt", format!("{} must be positive", self.dt));
        }
        let ratio = self.cadence / self.dt;
        if !(ratio >= 1.0 - 1e-9) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return bad(
                "grid.cadence",
                format!("{} is not a positive multiple of dt = {}", self.cadence, self.dt),
            );
        }
        if !(self.scaling.amplitude >= 0.0 && self.scaling.amplitude.is_finite()) {
            return bad("noise.amplitude", format!("{}", self.scaling.amplitude));
        }
        Ok(())
    }

    pub fn fast_horizon(&self) -> f64 {
        self.t0 / (self.eps * self.eps)
    }

    pub fn total_steps(&self) -> u64 {
        (self.fast_horizon() / self.dt - 1e-9).ceil().max(1.0) as u64
    }

    pub fn cadence_steps(&self) -> u64 {
        (self.cadence / self.dt).round().max(1.0) as u64
    }

    /// Fast-grid step indices at which samples are recorded: every cadence
    /// multiple plus the final step.
    pub fn sample_steps(&self) -> Vec<u64> {
        let total = self.total_steps();
        let every = self.cadence_steps();
        let mut steps: Vec<u64> = (0..=total / every).map(|i| i * every).collect();
        if *steps.last().unwrap() != total {
            steps.push(total);
        }
        steps
    }

    pub fn key(&self, path: u64) -> NoiseKey {
        NoiseKey::new(self.seed, path)
    }

    /// OU snapshots on the sample grid, identical to those seen by
    /// [`simulate_path`] for the same key.
    pub fn ou_history(&self, path: u64) -> OuHistory {
        OuHistory::generate(
            self.key(path),
            self.n,
            &self.scaling,
            self.dt,
            &self.sample_steps(),
        )
    }
}

/// `φ₁(z) = (eᶻ - 1)/z`, with the series used near zero.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0))
    } else {
        z.exp_m1() / z
    }
}

/// Precomputed exponential-Euler factors for fixed `(ε, h, N)`.
#[derive(Debug, Clone)]
pub struct ExpEulerStepper {
    eps: f64,
    h: f64,
    decay: Vec<f64>,
    phi_h: Vec<f64>,
}

impl ExpEulerStepper {
    pub fn new(n: usize, eps: f64, h: f64) -> Self {
        let mu = |k: i32| symbol_lambda(k) + eps * eps;
        let decay = (0..=n as i32).map(|k| (mu(k) * h).exp()).collect();
        let phi_h = (0..=n as i32).map(|k| phi1(mu(k) * h) * h).collect();
        Self {
            eps,
            h,
            decay,
            phi_h,
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Forcing `F(k) = ε² Z(k) + ik ((v+Z)∗(v+Z))(k)`.
    pub fn forcing(&self, v: &SpectralField, z: &SpectralField) -> Result<SpectralField> {
        let w = v.add(z)?;
        let sq = w.square();
        let e2 = self.eps * self.eps;
        Ok(SpectralField::from_positive(v.truncation(), |k| {
            z.get(k) * e2 + Complex64::new(0.0, k as f64) * sq.get(k)
        }))
    }

    pub fn step(&self, v: &SpectralField, z: &SpectralField) -> Result<SpectralField> {
        if v.truncation() + 1 != self.decay.len() {
            return Err(Error::Config(format!(
                "stepper built for N = {}, field has N = {}",
                self.decay.len() - 1,
                v.truncation()
            )));
        }
        let f = self.forcing(v, z)?;
        Ok(SpectralField::from_positive(v.truncation(), |k| {
            let i = k as usize;
            v.get(k) * self.decay[i] + f.get(k) * self.phi_h[i]
        }))
    }
}

/// One exponential-Euler step of the regular part.
pub fn step_v(v: &SpectralField, z: &SpectralField, eps: f64, h: f64) -> Result<SpectralField> {
    ExpEulerStepper::new(v.truncation(), eps, h).step(v, z)
}

/// `Res(k) = -∂ₜv(k) + λ(k)v(k) + ε²v(k) + ε²Z(k) + ik((v+Z)∗(v+Z))(k)`.
pub fn full_residual(
    v: &SpectralField,
    z: &SpectralField,
    eps: f64,
    dv_dt: &SpectralField,
) -> Result<SpectralField> {
    v.same_truncation(dv_dt)?;
    let w = v.add(z)?;
    let sq = w.square();
    let e2 = eps * eps;
    Ok(SpectralField::from_positive(v.truncation(), |k| {
        -dv_dt.get(k)
            + v.get(k) * (symbol_lambda(k) + e2)
            + z.get(k) * e2
            + Complex64::new(0.0, k as f64) * sq.get(k)
    }))
}

/// Samples of one fast-time run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub eps: f64,
    pub scaling: NoiseScaling,
    pub times: Vec<f64>,
    pub steps: Vec<u64>,
    pub v: Vec<SpectralField>,
    /// Physical-scale `Ẑ(k, t) = c_k Ẑ_k(t)`.
    pub z: Vec<SpectralField>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn u(&self, i: usize) -> SpectralField {
        self.v[i].add(&self.z[i]).expect("shared truncation")
    }

    /// Plot-ready CSV, one row per (sample, mode).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,k,re_u,im_u,re_v,im_v,re_Z,im_Z\n");
        for i in 0..self.len() {
            let u = self.u(i);
            for k in u.wavenumbers() {
                let (uk, vk, zk) = (u.get(k), self.v[i].get(k), self.z[i].get(k));
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    self.times[i], k, uk.re, uk.im, vk.re, vk.im, zk.re, zk.im
                );
            }
        }
        out
    }
}

/// Initial regular part: the second-order ansatz at `T = 0` with `Ẑ = 0`.
pub fn initial_v(config: &SimConfig) -> SpectralField {
    let (a2, a4, a6) = slaved_modes(config.a1, config.a3, &SlowNoise::zero());
    let state = crate::landau::AmplitudeState {
        t: 0.0,
        a1: config.a1,
        a3: config.a3,
        a2,
        a4,
        a6,
    };
    crate::landau::reconstruct_approximation(&state, config.eps, ApproxOrder::Second, config.n)
}

fn guard(field: &SpectralField, t: f64) -> Result<()> {
    if let Some(k) = field.first_non_finite() {
        return Err(Error::Divergence {
            k,
            t,
            magnitude: f64::NAN,
        });
    }
    let (k, magnitude) = field.max_abs();
    if magnitude > BLOWUP_THRESHOLD {
        return Err(Error::Divergence { k, t, magnitude });
    }
    Ok(())
}

/// Runs one path: OU lattice and regular part on the shared fast grid.
pub fn simulate_path(config: &SimConfig, path: u64) -> Result<Trajectory> {
    config.validate()?;
    let stepper = ExpEulerStepper::new(config.n, config.eps, config.dt);
    let mut ou = OuLattice::new(config.key(path), config.n);
    let mut v = initial_v(config);
    let sample_steps = config.sample_steps();

    let mut traj = Trajectory {
        eps: config.eps,
        scaling: config.scaling,
        times: Vec::with_capacity(sample_steps.len()),
        steps: Vec::with_capacity(sample_steps.len()),
        v: Vec::with_capacity(sample_steps.len()),
        z: Vec::with_capacity(sample_steps.len()),
    };

    let mut step = 0u64;
    for &target in &sample_steps {
        while step < target {
            let z_start = ou.z.clone();
            ou.advance(&config.scaling, config.dt);
            v = stepper.step(&v, &z_start)?;
            step += 1;
            let t = step as f64 * config.dt;
            guard(&v, t)?;
        }
        traj.times.push(step as f64 * config.dt);
        traj.steps.push(step);
        traj.v.push(v.clone());
        traj.z.push(ou.z.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::WeightedNormParams;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn phi1_near_zero() {
        assert_eq!(phi1(0.0), 1.0);
        for z in [1e-5, -1e-5, 1e-8, -3e-5] {
            let series = phi1(z);
            let direct = z.exp_m1() / z;
            assert!((series - direct).abs() < 1e-15, "z={z}");
        }
        assert!((phi1(1.0) - (1f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_is_fixed_point() {
        let z = SpectralField::zeros(8);
        let v = SpectralField::zeros(8);
        assert_eq!(step_v(&v, &z, 0.1, 0.01).unwrap(), v);
    }

    #[test]
    fn linear_decay_single_mode() {
        // Only k = 2 populated, ε = 0: the quadratic term feeds k = 0, 4, so
        // check mode 2 alone.
        let mut v = SpectralField::zeros(8);
        v.set(2, c(1.0, 0.0));
        let out = step_v(&v, &SpectralField::zeros(8), 0.0, 0.01).unwrap();
        assert!((out.get(2).re - (-2.25f64).exp()).abs() < 1e-15);
        assert!((out.get(2).re - 0.105399).abs() < 1e-6);
    }

    #[test]
    fn neutral_mode_takes_euler_step() {
        // k = 1 with ε = 0 and a constant forcing coming from Z at k = 0.
        let v = SpectralField::zeros(4);
        let mut z = SpectralField::zeros(4);
        z.set(1, c(0.5, 0.25));
        let stepper = ExpEulerStepper::new(4, 0.0, 0.01);
        let f = stepper.forcing(&v, &z).unwrap();
        let out = stepper.step(&v, &z).unwrap();
        assert!((out.get(1) - (v.get(1) + f.get(1) * 0.01)).norm() < 1e-17);
    }

    #[test]
    fn config_validation() {
        let base = SimConfig::default();
        assert!(base.validate().is_ok());
        assert!(base.with_eps(0.7).validate().is_err());
        assert!(SimConfig { dt: 0.03, ..base }.validate().is_err());
        assert!(SimConfig { t0: 0.0, ..base }.validate().is_err());
        assert!(SimConfig { eps: 0.2, ..base }.validate().is_err());
    }

    #[test]
    fn sample_grid() {
        let cfg = SimConfig::default().with_eps(0.2);
        let steps = cfg.sample_steps();
        assert_eq!(steps.first(), Some(&0));
        assert_eq!(steps.last(), Some(&2500));
        assert_eq!(steps.len(), 26);
        let odd = SimConfig::default().with_eps(0.3);
        let s = odd.sample_steps();
        assert_eq!(*s.last().unwrap(), odd.total_steps());
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_run_stays_zero() {
        let cfg = SimConfig {
            a1: c(0.0, 0.0),
            a3: c(0.0, 0.0),
            t0: 0.05,
            ..SimConfig::default()
        }
        .noiseless();
        let traj = simulate_path(&cfg, 0).unwrap();
        for i in 0..traj.len() {
            assert_eq!(traj.u(i), SpectralField::zeros(cfg.n));
        }
    }

    #[test]
    fn residual_of_zero_solution() {
        let zero = SpectralField::zeros(6);
        assert_eq!(full_residual(&zero, &zero, 0.1, &zero).unwrap(), zero);
    }

    #[test]
    fn divergence_guard_names_mode() {
        let cfg = SimConfig {
            eps: 0.5,
            a1: c(4.0e6, 0.0),
            t0: 0.5,
            n: 8,
            ..SimConfig::default()
        }
        .with_eps(0.5)
        .noiseless();
        match simulate_path(&cfg, 0) {
            Err(Error::Divergence { k, t, .. }) => {
                assert!(k >= 0 && t > 0.0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = SimConfig {
            t0: 0.03,
            ..SimConfig::default()
        };
        let a = simulate_path(&cfg, 3).unwrap();
        let b = simulate_path(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let norm = WeightedNormParams::default();
        assert!(a.z.last().unwrap().weighted_norm(&norm) > 0.0);
    }
}
