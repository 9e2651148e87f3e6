//! Hermitian Fourier fields on the 2π-periodic line.
//!
//! A [`SpectralField`] stores the coefficients `c(k)` for `k ∈ [-N, N]` of a
//! real function `u(x) = Σ c(k) e^{ikx}`. Every constructor keeps the
//! Hermitian pairing `c(-k) = conj(c(k))`, so the represented function is
//! real-valued.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default number of retained positive wavenumbers.
pub const DEFAULT_TRUNCATION: usize = 32;

/// Growth rate of the linearization at wavenumber `k`: `-(1-k²)²(9-k²)²`.
///
/// Vanishes exactly at the critical wavenumbers `|k| ∈ {1, 3}` and is
/// strictly negative everywhere else.
pub fn symbol_lambda(k: i32) -> f64 {
    let k2 = (k as f64) * (k as f64);
    let a = 1.0 - k2;
    let b = 9.0 - k2;
    -(a * a) * (b * b)
}

/// True for the four linearly neutral modes `±1, ±3`.
pub fn is_critical(k: i32) -> bool {
    matches!(k.abs(), 1 | 3)
}

/// Exponent `r` of the weight `(1+k²)^r` in the ℓ²ᵣ norm.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightedNormParams {
    r: f64,
}

impl WeightedNormParams {
    /// Admissible window for the weight exponent, open at both ends.
    pub const R_MIN: f64 = 0.5;
    pub const R_MAX: f64 = 3.0;

    pub fn new(r: f64) -> Result<Self> {
        if !(r > Self::R_MIN && r < Self::R_MAX) {
            return Err(Error::Config(format!(
                "norm.r = {r} outside the admissible window ({}, {})",
                Self::R_MIN,
                Self::R_MAX
            )));
        }
        Ok(Self { r })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn weight(&self, k: i32) -> f64 {
        (1.0 + (k as f64).powi(2)).powf(self.r)
    }
}

impl Default for WeightedNormParams {
    fn default() -> Self {
        Self { r: 2.0 }
    }
}

/// Truncated Hermitian Fourier coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    n: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            coeffs: vec![Complex64::new(0.0, 0.0); 2 * n + 1],
        }
    }

    /// Builds a field from its non-negative half; `f(k)` is queried for
    /// `k = 0..=N` and the negative half is filled by conjugation. The
    /// imaginary part of `f(0)` is dropped.
    pub fn from_positive(n: usize, mut f: impl FnMut(i32) -> Complex64) -> Self {
        let mut field = Self::zeros(n);
        for k in 0..=n as i32 {
            field.set(k, f(k));
        }
        field
    }

    /// Builds a field from all `2N+1` coefficients, indexed `-N..=N`.
    ///
    /// Fails when the input is not Hermitian to within `1e-12` relative to its
    /// largest coefficient.
    pub fn from_coeffs(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() % 2 != 1 {
            return Err(Error::Config(format!(
                "coefficient vector has even length {}",
                coeffs.len()
            )));
        }
        let field = Self {
            n: coeffs.len() / 2,
            coeffs,
        };
        field.check_hermitian(1e-12)?;
        Ok(field)
    }

    pub fn truncation(&self) -> usize {
        self.n
    }

    pub fn wavenumbers(&self) -> impl Iterator<Item = i32> {
        let n = self.n as i32;
        -n..=n
    }

    #[inline]
    fn idx(&self, k: i32) -> usize {
        (k + self.n as i32) as usize
    }

    /// Coefficient at `k`; zero outside the retained band.
    #[inline]
    pub fn get(&self, k: i32) -> Complex64 {
        if k.unsigned_abs() as usize > self.n {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[self.idx(k)]
        }
    }

    /// Sets `c(k)` and its partner `c(-k) = conj(c(k))`. Setting `k = 0`
    /// keeps only the real part. Indices outside the band are ignored.
    pub fn set(&mut self, k: i32, value: Complex64) {
        if k.unsigned_abs() as usize > self.n {
            return;
        }
        if k == 0 {
            let i = self.idx(0);
            self.coeffs[i] = Complex64::new(value.re, 0.0);
        } else {
            let (ip, im) = (self.idx(k), self.idx(-k));
            self.coeffs[ip] = value;
            self.coeffs[im] = value.conj();
        }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            n: self.n,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_truncation(other)?;
        Ok(Self {
            n: self.n,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_truncation(other)?;
        Ok(Self {
            n: self.n,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn same_truncation(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::Config(format!(
                "truncation mismatch: N = {} vs N = {}",
                self.n, other.n
            )));
        }
        Ok(())
    }

    /// Largest coefficient modulus with its (non-negative) wavenumber.
    pub fn max_abs(&self) -> (i32, f64) {
        (0..=self.n as i32)
            .map(|k| (k, self.get(k).norm()))
            .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
    }

    /// First non-finite coefficient, if any.
    pub fn first_non_finite(&self) -> Option<i32> {
        self.wavenumbers().find(|&k| {
            let c = self.get(k);
            !(c.re.is_finite() && c.im.is_finite())
        })
    }

    /// Largest Hermitian defect `|c(-k) - conj(c(k))|` together with `|Im c(0)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut defect = self.get(0).im.abs();
        for k in 1..=self.n as i32 {
            defect = defect.max((self.get(-k) - self.get(k).conj()).norm());
        }
        defect
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_defect() == 0.0
    }

    fn check_hermitian(&self, rel_tol: f64) -> Result<()> {
        let scale = self.max_abs().1.max(f64::MIN_POSITIVE);
        let defect = self.hermitian_defect();
        if defect > rel_tol * scale {
            return Err(Error::Consistency(format!(
                "Hermitian symmetry violated: defect {defect:e} (scale {scale:e})"
            )));
        }
        Ok(())
    }

    /// Discrete convolution `c(k) = Σ a(k-k') b(k')` over all pairs with both
    /// factors inside the band; results outside `[-N, N]` are dropped.
    ///
    /// Only `k >= 0` is summed; the negative half follows from Hermitian
    /// symmetry of both inputs.
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        self.same_truncation(other)?;
        let n = self.n as i32;
        let mut out = Self::zeros(self.n);
        for k in 0..=n {
            let lo = (k - n).max(-n);
            let hi = n.min(k + n);
            let mut acc = Complex64::new(0.0, 0.0);
            for kp in lo..=hi {
                acc += self.coeffs[(k - kp + n) as usize] * other.coeffs[(kp + n) as usize];
            }
            out.set(k, acc);
        }
        Ok(out)
    }

    /// Convolution of the field with itself.
    pub fn square(&self) -> Self {
        self.convolve(self).expect("same truncation")
    }

    /// ℓ²ᵣ norm `(Σ |c(k)|² (1+k²)^r)^{1/2}`.
    pub fn weighted_norm(&self, p: &WeightedNormParams) -> f64 {
        self.wavenumbers()
            .map(|k| self.get(k).norm_sqr() * p.weight(k))
            .sum::<f64>()
            .sqrt()
    }

    /// Σ |c(k)|, an upper bound on `sup_x |u(x)|`.
    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    /// Samples `u(x_j)` at `x_j = 2πj/m`.
    ///
    /// Requires `m >= 4N`. An imaginary residue above `1e-12` of the ℓ¹
    /// magnitude signals a broken Hermitian pairing.
    pub fn evaluate_on_grid(&self, m: usize) -> Result<Vec<f64>> {
        if m < 4 * self.n.max(1) {
            return Err(Error::Config(format!(
                "grid size m = {m} below 4N = {}",
                4 * self.n
            )));
        }
        let twiddles: Vec<Complex64> = (0..m)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / m as f64))
            .collect();
        let l1 = self.l1_norm();
        let n = self.n as i32;
        let mut samples = Vec::with_capacity(m);
        for j in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in -n..=n {
                let phase = (k as i64 * j as i64).rem_euclid(m as i64) as usize;
                acc += self.get(k) * twiddles[phase];
            }
            if acc.im.abs() > 1e-12 * l1 {
                return Err(Error::Consistency(format!(
                    "imaginary residue {:e} at x_{j} exceeds tolerance (l1 = {l1:e})",
                    acc.im
                )));
            }
            samples.push(acc.re);
        }
        Ok(samples)
    }

    /// Grid maximum of `|u|` and the ℓ¹ bound `Σ|c(k)|`.
    pub fn sup_norm_estimate(&self, m: usize) -> Result<(f64, f64)> {
        let samples = self.evaluate_on_grid(m)?;
        let grid_max = samples.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        Ok((grid_max, self.l1_norm()))
    }
}
