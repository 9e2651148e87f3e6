//! Wiener drivers and exact Ornstein–Uhlenbeck updates for the stochastic
//! part `Ẑ(k, t)` of each Fourier mode.
//!
//! Randomness is counter-based: the standard complex Gaussian used by mode
//! `k` at step `n` of path `p` is a pure function of `(seed, p, k, n)`, read
//! from a ChaCha8 stream selected by `k` at word offset `4n`. The two 64-bit
//! words are the `re` and `im` roles. A full SPDE run and an amplitude run
//! that share a key therefore see the same realization, whatever order they
//! run in and however paths are distributed across workers.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{is_critical, symbol_lambda, SpectralField};

/// Noise amplitudes `α_k` and normalizations `c_k` as powers of ε.
///
/// Defaults: `α_k = ε²` for every mode, `c_{±1} = c_{±3} = ε` and
/// `c_k = ε²` elsewhere. `amplitude` multiplies every `α_k`; setting it to
/// zero switches the noise off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScaling {
    pub eps: f64,
    pub alpha_exponent: f64,
    pub c_critical_exponent: f64,
    pub c_stable_exponent: f64,
    pub amplitude: f64,
}

impl NoiseScaling {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            alpha_exponent: 2.0,
            c_critical_exponent: 1.0,
            c_stable_exponent: 2.0,
            amplitude: 1.0,
        }
    }

    pub fn noiseless(eps: f64) -> Self {
        Self {
            amplitude: 0.0,
            ..Self::new(eps)
        }
    }

    pub fn with_eps(self, eps: f64) -> Self {
        Self { eps, ..self }
    }

    /// Noise amplitude `α_k`, symmetric in `k`.
    pub fn alpha(&self, _k: i32) -> f64 {
        self.amplitude * self.eps.powf(self.alpha_exponent)
    }

    /// Normalization `c_k` with `Ẑ(k,t) = c_k Ẑ_k(t)`.
    pub fn c(&self, k: i32) -> f64 {
        if is_critical(k) {
            self.eps.powf(self.c_critical_exponent)
        } else {
            self.eps.powf(self.c_stable_exponent)
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.amplitude == 0.0
    }
}

/// Identifies one Monte-Carlo path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseKey {
    pub seed: u64,
    pub path: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, path: u64) -> Self {
        Self { seed, path }
    }

    fn chacha_seed(&self) -> [u8; 32] {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&self.path.to_le_bytes());
        bytes[16..24].copy_from_slice(b"duks-ou ");
        bytes
    }
}

/// Keyed source of standard complex Gaussians, one ChaCha stream per mode.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    key: NoiseKey,
    modes: Vec<ChaCha8Rng>,
}

impl NoiseStream {
    pub fn new(key: NoiseKey, n: usize) -> Self {
        let base = ChaCha8Rng::from_seed(key.chacha_seed());
        let modes = (0..=n as u64)
            .map(|k| {
                let mut rng = base.clone();
                rng.set_stream(k);
                rng.set_word_pos(0);
                rng
            })
            .collect();
        Self { key, modes }
    }

    pub fn key(&self) -> NoiseKey {
        self.key
    }

    /// Two independent standard normals (roles `re`, `im`) for mode `k >= 0`
    /// at step `step`.
    pub fn normal_pair(&mut self, k: usize, step: u64) -> (f64, f64) {
        let rng = &mut self.modes[k];
        let pos = u128::from(step) * 4;
        if rng.get_word_pos() != pos {
            rng.set_word_pos(pos);
        }
        let u1 = rng.next_u64();
        let u2 = rng.next_u64();
        box_muller(u1, u2)
    }

    /// Standard complex Gaussian `G` with `E|G|² = 1`; real with unit
    /// variance for `k = 0`.
    pub fn complex_gaussian(&mut self, k: usize, step: u64) -> Complex64 {
        let (a, b) = self.normal_pair(k, step);
        if k == 0 {
            Complex64::new(a, 0.0)
        } else {
            Complex64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
        }
    }
}

fn box_muller(u1: u64, u2: u64) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // (0, 1] so the logarithm stays finite.
    let a = ((u1 >> 11) + 1) as f64 * SCALE;
    let b = (u2 >> 11) as f64 * SCALE;
    let radius = (-2.0 * a.ln()).sqrt();
    let (s, c) = (2.0 * std::f64::consts::PI * b).sin_cos();
    (radius * c, radius * s)
}

/// Complex Wiener processes `Ŵ(k, t)` with `E|Ŵ(k,t)|² = t`.
#[derive(Debug, Clone)]
pub struct WienerLattice {
    pub t: f64,
    pub step: u64,
    pub w: SpectralField,
    stream: NoiseStream,
}

impl WienerLattice {
    pub fn new(key: NoiseKey, n: usize) -> Self {
        Self {
            t: 0.0,
            step: 0,
            w: SpectralField::zeros(n),
            stream: NoiseStream::new(key, n),
        }
    }

    pub fn advance(&mut self, h: f64) {
        if h == 0.0 {
            return;
        }
        let root = h.sqrt();
        for k in 0..=self.w.truncation() {
            let g = self.stream.complex_gaussian(k, self.step);
            let next = self.w.get(k as i32) + g * root;
            self.w.set(k as i32, next);
        }
        self.step += 1;
        self.t += h;
    }
}

#[derive(Debug, Clone)]
struct OuFactors {
    h: f64,
    alpha_bits: u64,
    decay: Vec<f64>,
    spread: Vec<f64>,
}

/// Physical-scale OU values `Ẑ(k, t)` started from zero.
#[derive(Debug, Clone)]
pub struct OuLattice {
    pub t: f64,
    pub step: u64,
    pub z: SpectralField,
    stream: NoiseStream,
    factors: Option<OuFactors>,
}

/// `σ(k,h)²`: variance gained over one step by a unit-amplitude OU mode.
pub fn ou_step_variance(k: i32, h: f64) -> f64 {
    let lambda = symbol_lambda(k);
    if lambda == 0.0 {
        h
    } else {
        -(2.0 * lambda * h).exp_m1() / (2.0 * lambda.abs())
    }
}

impl OuLattice {
    pub fn new(key: NoiseKey, n: usize) -> Self {
        Self {
            t: 0.0,
            step: 0,
            z: SpectralField::zeros(n),
            stream: NoiseStream::new(key, n),
            factors: None,
        }
    }

    pub fn key(&self) -> NoiseKey {
        self.stream.key()
    }

    fn refresh_factors(&mut self, scaling: &NoiseScaling, h: f64) {
        let alpha_bits = scaling.alpha(0).to_bits();
        let stale = match &self.factors {
            Some(f) => f.h != h || f.alpha_bits != alpha_bits,
            None => true,
        };
        if stale {
            let n = self.z.truncation() as i32;
            let decay = (0..=n).map(|k| (symbol_lambda(k) * h).exp()).collect();
            let spread = (0..=n)
                .map(|k| scaling.alpha(k) * ou_step_variance(k, h).sqrt())
                .collect();
            self.factors = Some(OuFactors {
                h,
                alpha_bits,
                decay,
                spread,
            });
        }
    }

    /// Exact update `Z ← e^{λh} Z + α σ(k,h) G_k` for every mode.
    pub fn advance(&mut self, scaling: &NoiseScaling, h: f64) {
        if h == 0.0 {
            return;
        }
        let n = self.z.truncation();
        let step = self.step;
        self.refresh_factors(scaling, h);
        let f = self.factors.as_ref().expect("factors refreshed");
        for k in 0..=n {
            let g = self.stream.complex_gaussian(k, step);
            let next = self.z.get(k as i32) * f.decay[k] + g * f.spread[k];
            self.z.set(k as i32, next);
        }
        self.step += 1;
        self.t += h;
    }

    /// Rescaled values `Ẑ_k = Ẑ(k,t) / c_k`.
    pub fn normalized(&self, scaling: &NoiseScaling) -> SpectralField {
        normalize(&self.z, scaling)
    }
}

pub fn normalize(z: &SpectralField, scaling: &NoiseScaling) -> SpectralField {
    SpectralField::from_positive(z.truncation(), |k| z.get(k) / scaling.c(k))
}

/// `E|Ẑ(k,t)|²` for a mode started at zero.
pub fn ou_second_moment(k: i32, t: f64, scaling: &NoiseScaling) -> f64 {
    let alpha = scaling.alpha(k);
    alpha * alpha * ou_step_variance(k, t)
}

/// Martingale-inequality bound on `P(sup_{τ≤t} |Ẑ(k,τ)| ≥ c)`, clipped at 1:
/// `α²/(2|λ|c²)` for damped modes, `α² t / c²` for neutral ones.
pub fn tail_bound(k: i32, t: f64, c: f64, scaling: &NoiseScaling) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("threshold c = {c} must be positive")));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("time t = {t} must be non-negative")));
    }
    let alpha = scaling.alpha(k);
    let lambda = symbol_lambda(k);
    let bound = if lambda == 0.0 {
        alpha * alpha * t / (c * c)
    } else {
        alpha * alpha / (2.0 * lambda.abs() * c * c)
    };
    Ok(bound.min(1.0))
}

/// Rescaled noise values `Ẑ_k` at one slow time, for `k ∈ [-6, 6]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowNoise {
    positive: [Complex64; 7],
}

impl SlowNoise {
    pub fn zero() -> Self {
        Self {
            positive: [Complex64::new(0.0, 0.0); 7],
        }
    }

    /// Takes `Ẑ_k` for `k = 0..=6`; `Ẑ_0` is forced real.
    pub fn from_positive(mut values: [Complex64; 7]) -> Self {
        values[0].im = 0.0;
        Self { positive: values }
    }

    pub fn from_field(normalized: &SpectralField) -> Self {
        let mut values = [Complex64::new(0.0, 0.0); 7];
        for (k, v) in values.iter_mut().enumerate() {
            *v = normalized.get(k as i32);
        }
        Self::from_positive(values)
    }

    /// `Ẑ_k`, with `Ẑ_{-k} = conj(Ẑ_k)`.
    #[inline]
    pub fn z(&self, k: i32) -> Complex64 {
        let v = self.positive[k.unsigned_abs() as usize];
        if k < 0 {
            v.conj()
        } else {
            v
        }
    }
}

/// OU snapshots on the output cadence of one fast-time run, plus the
/// rescaled low modes `Ẑ_0..Ẑ_6` at every fast step.
#[derive(Debug, Clone)]
pub struct OuHistory {
    pub scaling: NoiseScaling,
    /// Fast time step of the underlying lattice.
    pub dt: f64,
    /// Fast-grid step index of each snapshot.
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    pub z: Vec<SpectralField>,
    /// `forcing[j]` is the slow noise at fast step `j`, for `j = 0..=last step`.
    pub forcing: Vec<SlowNoise>,
}

fn slow_noise_of(z: &SpectralField, scaling: &NoiseScaling) -> SlowNoise {
    let mut values = [Complex64::new(0.0, 0.0); 7];
    for (k, v) in values.iter_mut().enumerate() {
        *v = z.get(k as i32) / scaling.c(k as i32);
    }
    SlowNoise::from_positive(values)
}

impl OuHistory {
    /// Runs an OU lattice on the fast grid and records the snapshots at the
    /// given step indices (which must be increasing and start at 0).
    pub fn generate(
        key: NoiseKey,
        n: usize,
        scaling: &NoiseScaling,
        dt: f64,
        sample_steps: &[u64],
    ) -> Self {
        let mut lattice = OuLattice::new(key, n);
        let last = sample_steps.last().copied().unwrap_or(0);
        let mut forcing = Vec::with_capacity(last as usize + 1);
        forcing.push(slow_noise_of(&lattice.z, scaling));
        let mut times = Vec::with_capacity(sample_steps.len());
        let mut z = Vec::with_capacity(sample_steps.len());
        for &target in sample_steps {
            while lattice.step < target {
                lattice.advance(scaling, dt);
                forcing.push(slow_noise_of(&lattice.z, scaling));
            }
            times.push(target as f64 * dt);
            z.push(lattice.z.clone());
        }
        Self {
            scaling: *scaling,
            dt,
            steps: sample_steps.to_vec(),
            times,
            z,
            forcing,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn slow_at_index(&self, i: usize) -> SlowNoise {
        self.forcing[self.steps[i] as usize]
    }

    /// `Ẑ_k(T/ε²)` taken from the last fast step at or below `T/ε²`.
    pub fn sample_slow_path(&self, slow_t: f64) -> Result<SlowNoise> {
        let eps = self.scaling.eps;
        let fast = slow_t / (eps * eps);
        let tol = 1e-9 * fast.abs().max(1.0);
        if self.times.is_empty() || fast > self.horizon() + tol {
            return Err(Error::Sequencing(format!(
                "slow time T = {slow_t} (fast t = {fast}) beyond simulated horizon {}",
                self.horizon()
            )));
        }
        if fast < -tol {
            return Err(Error::Sequencing(format!("negative slow time T = {slow_t}")));
        }
        let j = ((fast + tol) / self.dt).floor().max(0.0) as usize;
        Ok(self.forcing[j.min(self.forcing.len() - 1)])
    }
}
