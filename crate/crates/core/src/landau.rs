//! Coupled stochastic Landau system for the critical amplitudes `A₁`, `A₃`.
//!
//! The amplitudes live on the slow time `T = ε² t`. The damped modes `2, 4, 6`
//! are slaved algebraically to `(A₁, A₃)` and the rescaled noise `Ẑ_k`. The
//! right-hand side is evaluated in its pre-elimination form (slaved modes
//! first, then the quadratic couplings); [`rhs_amplitudes_expanded`] keeps the
//! fully eliminated form as an independent cross-check.

use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{OuHistory, SlowNoise};
use crate::spectrum::{symbol_lambda, SpectralField};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Amplitudes at one slow time. Only non-negative indices are stored;
/// `A_{-j} = conj(A_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeState {
    pub t: f64,
    pub a1: Complex64,
    pub a3: Complex64,
    pub a2: Complex64,
    pub a4: Complex64,
    pub a6: Complex64,
}

impl AmplitudeState {
    /// State with the slaved cache filled from `(a1, a3, noise)`.
    pub fn new(t: f64, a1: Complex64, a3: Complex64, noise: &SlowNoise) -> Self {
        let (a2, a4, a6) = slaved_modes(a1, a3, noise);
        Self {
            t,
            a1,
            a3,
            a2,
            a4,
            a6,
        }
    }

    /// `A_j` for `j ∈ {±1, ±2, ±3, ±4, ±6}`, zero otherwise.
    pub fn amplitude(&self, j: i32) -> Complex64 {
        let v = match j.abs() {
            1 => self.a1,
            2 => self.a2,
            3 => self.a3,
            4 => self.a4,
            6 => self.a6,
            _ => Complex64::new(0.0, 0.0),
        };
        if j < 0 {
            v.conj()
        } else {
            v
        }
    }

    pub fn slaved_cache_consistent(&self, noise: &SlowNoise) -> bool {
        slaved_modes(self.a1, self.a3, noise) == (self.a2, self.a4, self.a6)
    }
}

/// Slaved amplitudes `(A₂, A₄, A₆)` balancing the damped-mode equations at
/// leading order.
pub fn slaved_modes(
    a1: Complex64,
    a3: Complex64,
    z: &SlowNoise,
) -> (Complex64, Complex64, Complex64) {
    let y1 = z.z(1) + a1;
    let y3 = z.z(3) + a3;
    let ym1 = z.z(-1) + a1.conj();
    let a2 = -(2.0 * I * y1 * y1 + 4.0 * I * y3 * ym1) / symbol_lambda(2);
    let a4 = -(8.0 * I * y3 * y1) / symbol_lambda(4);
    let a6 = -(6.0 * I * y3 * y3) / symbol_lambda(6);
    (a2, a4, a6)
}

/// `(dA₁/dT, dA₃/dT)` via the slaved modes and the pre-elimination couplings.
pub fn rhs_amplitudes(a1: Complex64, a3: Complex64, z: &SlowNoise) -> (Complex64, Complex64) {
    let (a2, a4, a6) = slaved_modes(a1, a3, z);
    rhs_with_slaved(a1, a3, a2, a4, a6, z)
}

fn rhs_with_slaved(
    a1: Complex64,
    a3: Complex64,
    a2: Complex64,
    a4: Complex64,
    a6: Complex64,
    z: &SlowNoise,
) -> (Complex64, Complex64) {
    let y = |j: i32, a: Complex64| if j < 0 { z.z(j) + a.conj() } else { z.z(j) + a };
    let (y1, ym1) = (y(1, a1), y(-1, a1));
    let (y3, ym3) = (y(3, a3), y(-3, a3));
    let (y2, ym2) = (y(2, a2), y(-2, a2));
    let y4 = y(4, a4);
    let y6 = y(6, a6);
    let z0 = z.z(0);

    let d1 = a1 + z.z(1) + 2.0 * I * (y2 * ym1 + z0 * y1 + y3 * ym2 + y4 * ym3);
    let d3 = a3 + z.z(3) + 6.0 * I * (y2 * y1 + z0 * y3 + y6 * ym3 + y4 * ym1);
    (d1, d3)
}

/// The fully eliminated right-hand side, written out term by term.
pub fn rhs_amplitudes_expanded(
    a1: Complex64,
    a3: Complex64,
    z: &SlowNoise,
) -> (Complex64, Complex64) {
    let l2 = symbol_lambda(2);
    let l4 = symbol_lambda(4);
    let l6 = symbol_lambda(6);
    let am1 = a1.conj();
    let am3 = a3.conj();
    let zk = |k: i32| z.z(k);

    let d1 = a1
        + zk(1)
        + 2.0
            * I
            * (zk(2)
                - (1.0 / l2)
                    * (2.0 * I * (zk(1) + a1) * (zk(1) + a1)
                        + 4.0 * I * (zk(3) + a3) * (zk(-1) + am1)))
            * (zk(-1) + am1)
        + 2.0 * I * zk(0) * (zk(1) + a1)
        + 2.0
            * I
            * (zk(3) + a3)
            * (zk(-2)
                - (1.0 / l2)
                    * (-2.0 * I * (zk(-1) + am1) * (zk(-1) + am1)
                        - 4.0 * I * (zk(-3) + am3) * (zk(1) + a1)))
        + 2.0
            * I
            * (zk(4) - (8.0 * I / l4) * (zk(3) + a3) * (zk(1) + a1))
            * (zk(-3) + am3);

    let d3 = a3
        + zk(3)
        + 6.0
            * I
            * (zk(2)
                - (1.0 / l2)
                    * (2.0 * I * (zk(1) + a1) * (zk(1) + a1)
                        + 4.0 * I * (zk(3) + a3) * (zk(-1) + am1)))
            * (zk(1) + a1)
        + 6.0 * I * zk(0) * (zk(3) + a3)
        + 6.0
            * I
            * (zk(6) - (6.0 * I / l6) * (zk(3) + a3) * (zk(3) + a3))
            * (zk(-3) + am3)
        + 6.0
            * I
            * (zk(4) - (8.0 * I / l4) * (zk(3) + a3) * (zk(1) + a1))
            * (zk(-1) + am1);
    (d1, d3)
}

fn finite(c: Complex64) -> bool {
    c.re.is_finite() && c.im.is_finite()
}

/// One Heun step of length `dt_slow`, with the noise frozen at `z_now` for the
/// predictor and `z_next` at the end of the step.
pub fn step_amplitudes(
    state: &AmplitudeState,
    z_now: &SlowNoise,
    z_next: &SlowNoise,
    dt_slow: f64,
) -> Result<AmplitudeState> {
    let (k1a, k1b) = rhs_amplitudes(state.a1, state.a3, z_now);
    let p1 = state.a1 + k1a * dt_slow;
    let p3 = state.a3 + k1b * dt_slow;
    let (k2a, k2b) = rhs_amplitudes(p1, p3, z_next);
    let a1 = state.a1 + (k1a + k2a) * (0.5 * dt_slow);
    let a3 = state.a3 + (k1b + k2b) * (0.5 * dt_slow);
    if !finite(a1) || !finite(a3) {
        return Err(Error::Divergence {
            k: if finite(a1) { 3 } else { 1 },
            t: state.t + dt_slow,
            magnitude: f64::INFINITY,
        });
    }
    Ok(AmplitudeState::new(state.t + dt_slow, a1, a3, z_next))
}

/// Which ansatz terms enter the reconstructed field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ApproxOrder {
    /// Critical modes `±1, ±3` at order ε.
    #[default]
    First,
    /// Adds the slaved modes `±2, ±4, ±6` at order ε².
    Second,
}

impl FromStr for ApproxOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Self::First),
            "second" => Ok(Self::Second),
            other => Err(Error::Config(format!(
                "order must be 'first' or 'second', got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for ApproxOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::First => "first",
            Self::Second => "second",
        })
    }
}

/// Spectral field of the ansatz `ε A₁ e^{ix} + ε A₃ e^{3ix} (+ ε² A_{2,4,6}) + c.c.`
pub fn reconstruct_approximation(
    state: &AmplitudeState,
    eps: f64,
    order: ApproxOrder,
    n: usize,
) -> SpectralField {
    let mut field = SpectralField::zeros(n);
    field.set(1, state.a1 * eps);
    field.set(3, state.a3 * eps);
    if order == ApproxOrder::Second {
        let e2 = eps * eps;
        field.set(2, state.a2 * e2);
        field.set(4, state.a4 * e2);
        field.set(6, state.a6 * e2);
    }
    field
}

/// Amplitude states aligned with the snapshots of an [`OuHistory`].
#[derive(Debug, Clone)]
pub struct AmplitudeTrajectory {
    pub eps: f64,
    /// States at the snapshot times.
    pub states: Vec<AmplitudeState>,
    /// States at every fast step, `fine[j]` at slow time `ε² j dt`.
    pub fine: Vec<AmplitudeState>,
}

impl AmplitudeTrajectory {
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Plot-ready CSV, one row per snapshot.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "T,re_A1,im_A1,re_A3,im_A3,re_A2,im_A2,re_A4,im_A4,re_A6,im_A6\n",
        );
        for s in &self.states {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.t, s.a1.re, s.a1.im, s.a3.re, s.a3.im, s.a2.re, s.a2.im, s.a4.re, s.a4.im,
                s.a6.re, s.a6.im
            );
        }
        out
    }
}

/// Integrates the amplitude system along `history`, one Heun step of length
/// `ε² dt` per fast step, so the forcing is read at every fast-grid point.
pub fn integrate_amplitudes(
    a1: Complex64,
    a3: Complex64,
    history: &OuHistory,
) -> Result<AmplitudeTrajectory> {
    let eps = history.scaling.eps;
    if history.times.is_empty() || history.forcing.is_empty() {
        return Err(Error::Sequencing("empty noise history".into()));
    }
    let e2 = eps * eps;
    let dt_slow = history.dt * e2;
    let mut state = AmplitudeState::new(0.0, a1, a3, &history.forcing[0]);
    let mut fine = Vec::with_capacity(history.forcing.len());
    fine.push(state);
    for (j, pair) in history.forcing.windows(2).enumerate() {
        state = step_amplitudes(&state, &pair[0], &pair[1], dt_slow)?;
        state.t = (j + 1) as f64 * dt_slow;
        fine.push(state);
    }
    let states = history
        .steps
        .iter()
        .map(|&s| {
            fine.get(s as usize).copied().ok_or_else(|| {
                Error::Sequencing(format!("snapshot step {s} beyond the recorded forcing"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AmplitudeTrajectory { eps, states, fine })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn zero() -> Complex64 {
        c(0.0, 0.0)
    }

    #[test]
    fn slaved_examples() {
        let z = SlowNoise::zero();
        assert_eq!(slaved_modes(zero(), zero(), &z), (zero(), zero(), zero()));

        let (a2, a4, a6) = slaved_modes(zero(), c(1.0, 0.0), &z);
        assert_eq!(a2, zero());
        assert_eq!(a4, zero());
        assert!((a6 - c(0.0, 6.0 / 893025.0)).norm() < 1e-20);
        assert!((a6.im - 6.7187e-6).abs() < 1e-9);

        let (a2, a4, a6) = slaved_modes(c(1.0, 0.0), zero(), &z);
        assert!((a2 - c(0.0, 2.0 / 225.0)).norm() < 1e-18);
        assert!((a2.im - 8.8889e-3).abs() < 1e-7);
        assert_eq!((a4, a6), (zero(), zero()));
    }

    #[test]
    fn origin_is_equilibrium() {
        let z = SlowNoise::zero();
        assert_eq!(rhs_amplitudes(zero(), zero(), &z), (zero(), zero()));
    }

    #[test]
    fn linear_part_is_identity() {
        let z = SlowNoise::zero();
        let h = 1e-7;
        for dir in [c(1.0, 0.0), c(0.0, 1.0), c(0.6, -0.8)] {
            let (d1, d3) = rhs_amplitudes(dir * h, zero(), &z);
            assert!(((d1 / h) - dir).norm() < 1e-12);
            assert!(d3.norm() / h < 1e-12);
            let (d1, d3) = rhs_amplitudes(zero(), dir * h, &z);
            assert!(d1.norm() / h < 1e-12);
            assert!(((d3 / h) - dir).norm() < 1e-12);
        }
    }

    #[test]
    fn cubic_self_coupling() {
        // Brute force: (rhs(δ) - δ)/δ³ at several δ, extrapolated by the
        // smallest one.
        let z = SlowNoise::zero();
        let d = 1e-2;
        let (d1, _) = rhs_amplitudes(c(d, 0.0), zero(), &z);
        let cubic1 = (d1.re - d) / d.powi(3);
        assert!((cubic1 - 4.0 / symbol_lambda(2)).abs() < 1e-12, "{cubic1}");
        assert!(d1.im.abs() < 1e-18);
        let (_, d3) = rhs_amplitudes(zero(), c(d, 0.0), &z);
        let cubic3 = (d3.re - d) / d.powi(3);
        assert!((cubic3 - 36.0 / symbol_lambda(6)).abs() < 1e-12, "{cubic3}");
        // Both couplings damp.
        assert!(cubic1 < 0.0 && cubic3 < 0.0);
    }

    #[test]
    fn routes_agree_on_fixed_sample() {
        let z = SlowNoise::from_positive([
            c(0.3, 0.0),
            c(0.1, -0.2),
            c(-0.05, 0.04),
            c(0.7, 0.1),
            c(0.02, 0.03),
            c(0.0, 0.0),
            c(-0.01, 0.002),
        ]);
        let (a, b) = rhs_amplitudes(c(0.8, -0.3), c(-0.4, 0.6), &z);
        let (ea, eb) = rhs_amplitudes_expanded(c(0.8, -0.3), c(-0.4, 0.6), &z);
        assert!((a - ea).norm() <= 1e-13 * a.norm());
        assert!((b - eb).norm() <= 1e-13 * b.norm());
    }

    #[test]
    fn heun_zero_state_stays_zero() {
        let z = SlowNoise::zero();
        let s = AmplitudeState::new(0.0, zero(), zero(), &z);
        let next = step_amplitudes(&s, &z, &z, 0.01).unwrap();
        assert_eq!((next.a1, next.a3), (zero(), zero()));
        assert!((next.t - 0.01).abs() < 1e-16);
    }

    fn integrate_noiseless(a1: Complex64, a3: Complex64, t_end: f64, steps: usize) -> AmplitudeState {
        let z = SlowNoise::zero();
        let dt = t_end / steps as f64;
        let mut s = AmplitudeState::new(0.0, a1, a3, &z);
        for _ in 0..steps {
            s = step_amplitudes(&s, &z, &z, dt).unwrap();
        }
        s
    }

    #[test]
    fn heun_matches_fine_reference() {
        let coarse = integrate_noiseless(c(1.0, 0.0), zero(), 1.0, 1000);
        let fine = integrate_noiseless(c(1.0, 0.0), zero(), 1.0, 100_000);
        let rel = (coarse.a1 - fine.a1).norm() / fine.a1.norm();
        assert!(rel < 1e-6, "rel {rel}");
    }

    #[test]
    fn heun_is_second_order() {
        let a1 = c(1.0, 0.2);
        let a3 = c(0.5, -0.1);
        let reference = integrate_noiseless(a1, a3, 1.0, 64_000);
        let err = |steps| {
            let s = integrate_noiseless(a1, a3, 1.0, steps);
            (s.a1 - reference.a1).norm() + (s.a3 - reference.a3).norm()
        };
        let ratio = err(50) / err(100);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn noiseless_amplitudes_stay_bounded() {
        for (a1, a3) in [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (-0.7, 0.7)] {
            let z = SlowNoise::zero();
            let mut s = AmplitudeState::new(0.0, c(a1, 0.0), c(a3, 0.0), &z);
            for _ in 0..2000 {
                s = step_amplitudes(&s, &z, &z, 1e-3).unwrap();
                assert!(s.a1.norm() + s.a3.norm() <= 10.0);
            }
        }
    }

    #[test]
    fn reconstruction() {
        let z = SlowNoise::zero();
        assert_eq!(
            reconstruct_approximation(&AmplitudeState::new(0.0, zero(), zero(), &z), 0.1, ApproxOrder::Second, 8),
            SpectralField::zeros(8)
        );
        let s = AmplitudeState::new(0.0, c(1.0, 0.0), zero(), &z);
        let first = reconstruct_approximation(&s, 0.1, ApproxOrder::First, 8);
        let grid = first.evaluate_on_grid(64).unwrap();
        for (j, u) in grid.iter().enumerate() {
            let x = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
            assert!((u - 0.2 * x.cos()).abs() < 1e-15);
        }
        let s = AmplitudeState::new(0.0, c(1.0, 0.5), c(0.3, 0.2), &z);
        let first = reconstruct_approximation(&s, 0.1, ApproxOrder::First, 8);
        let second = reconstruct_approximation(&s, 0.1, ApproxOrder::Second, 8);
        let diff = second.sub(&first).unwrap();
        for k in diff.wavenumbers() {
            if diff.get(k).norm() > 0.0 {
                assert!(matches!(k.abs(), 2 | 4 | 6), "k={k}");
            }
        }
    }

    #[test]
    fn order_parsing() {
        assert_eq!("first".parse::<ApproxOrder>().unwrap(), ApproxOrder::First);
        assert!("third".parse::<ApproxOrder>().is_err());
    }
}
