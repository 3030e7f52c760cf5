//! Gridded Gaussian-process regression with an analytic Toeplitz precision.
//!
//! The model: `y_i = θ_i + ε_i`, `ε_i ~ N(0, σ²)`, `θ ~ N(μ·1, τ²H)` with the
//! exponential kernel `H_ij = exp(-φρ|i-j|)` on an evenly spaced grid, and
//! conjugate priors on `(μ, σ², τ²)`; `φ` stays fixed. Because the kernel is
//! exponential and the grid even, `H⁻¹` is tridiagonal with modified corner
//! entries and is available in closed form — no `n × n` factorization ever
//! happens. θ is updated in consecutive slices whose conditionals are
//! tridiagonal-Toeplitz Gaussians; the conditional mean is applied through a
//! banded closed-form inverse, the one approximation in the scheme (together
//! with flattening the corner entries to the interior diagonal).

use nalgebra::{DMatrix, DVector};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::dist;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::TargetModel;
use crate::proposal::ProposalDescriptor;
use crate::scalar::{real, salted_rng, EngineRng, Scalar};
use crate::state::ParameterState;
use crate::value::{CoordinateId, Value, ValueShape};

const DATA_SEED_SALT: u64 = 0x6da7_a5ee_d000_0007;

/// Model and run-shape parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GpConfig {
    /// Grid size; must be divisible by `block_size`.
    pub n: usize,
    /// Grid spacing ρ.
    pub rho: f64,
    /// Kernel decay φ, held fixed.
    pub phi: f64,
    /// Length of the transmitted θ slices.
    pub block_size: usize,
    /// Truncation radius for the banded conditional-mean products; `None`
    /// picks the smallest radius whose omitted inverse entries fall below
    /// 1e-10 at the prior-mean hyperparameters.
    pub band_width: Option<usize>,
    /// Prior `μ ~ N(a_mu, b_mu)` (b_mu is a variance).
    pub a_mu: f64,
    pub b_mu: f64,
    /// Prior `σ² ~ IG(a_sigma, b_sigma)`.
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Prior `τ² ~ IG(a_tau, b_tau)`.
    pub a_tau: f64,
    pub b_tau: f64,
    /// Observation noise used by the data generator.
    pub noise_sd: f64,
    /// Initial values handed to every worker.
    pub init_mu: f64,
    pub init_sigma2: f64,
    pub init_tau2: f64,
    pub init_theta: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            n: 1200,
            rho: 0.06,
            phi: 0.5,
            block_size: 300,
            band_width: None,
            a_mu: 0.0,
            b_mu: 100.0,
            a_sigma: 2.0,
            b_sigma: 0.1,
            a_tau: 2.0,
            b_tau: 1.0,
            noise_sd: 0.2,
            init_mu: 10.0,
            init_sigma2: 10.0,
            init_tau2: 10.0,
            init_theta: 0.0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho <= 0.0 || self.phi <= 0.0 {
            return Err(Error::InvalidConfig("rho and phi must be positive".into()));
        }
        if self.n == 0 || self.block_size == 0 || self.n % self.block_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "block_size {} must divide n {}",
                self.block_size, self.n
            )));
        }
        if let Some(w) = self.band_width {
            if w < self.block_size / 2 {
                return Err(Error::InvalidConfig(format!(
                    "band_width {w} must be at least block_size/2 = {}",
                    self.block_size / 2
                )));
            }
        }
        if self.noise_sd <= 0.0 || self.b_mu <= 0.0 {
            return Err(Error::InvalidConfig(
                "noise_sd and b_mu must be positive".into(),
            ));
        }
        for (name, v) in [
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// The closed-form inverse of the exponential-kernel Toeplitz matrix:
/// tridiagonal with constant bands and modified corner entries,
/// diagonal `(d0, b, .., b, d0)` and off-diagonal `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToeplitzInverse<T: Scalar> {
    pub a: T,
    pub b: T,
    pub d0: T,
    pub dim: usize,
}

/// Closed-form `H⁻¹` for `H_ij = exp(-φρ|i-j|)`.
///
/// With `r = exp(-φρ)` this is the AR(1) precision: interior diagonal
/// `coth(φρ)`, off-diagonal `-csch(φρ)/2`, and corner `1/(1-r²)` — the
/// large-N limit of the corner expression, which the reconstruction identity
/// `H⁻¹H = I` confirms is exact at every N ≥ 2.
pub fn toeplitz_exp_inverse<T: Scalar>(phi: f64, rho: f64, dim: usize) -> Result<ToeplitzInverse<T>> {
    if phi * rho <= 0.0 {
        return Err(Error::InvalidConfig("phi * rho must be positive".into()));
    }
    if dim < 2 {
        return Err(Error::InvalidConfig("toeplitz inverse needs dim >= 2".into()));
    }
    let x = real::<T>(phi * rho);
    let sinh = x.sinh();
    let b = x.cosh() / sinh; // coth(φρ)
    let a = -(T::one() / (real::<T>(2.0) * sinh)); // csch(-φρ)/2
    let two = real::<T>(2.0);
    let d0 = T::one() / (T::one() - (-two * x).exp()); // (1 + coth(φρ))/2
    Ok(ToeplitzInverse { a, b, d0, dim })
}

impl<T: Scalar> ToeplitzInverse<T> {
    fn diag_at(&self, i: usize) -> T {
        if i == 0 || i + 1 == self.dim {
            self.d0
        } else {
            self.b
        }
    }

    /// Row sum `(Q·1)_i`.
    pub fn row_sum(&self, i: usize) -> T {
        if i == 0 || i + 1 == self.dim {
            self.d0 + self.a
        } else {
            self.b + self.a + self.a
        }
    }

    /// `Σ_i (Q·1)_i`.
    pub fn one_quad_one(&self) -> T {
        let mut acc = T::zero();
        for i in 0..self.dim {
            acc += self.row_sum(i);
        }
        acc
    }

    /// `(Q v)_i` for one index.
    pub fn mul_vec_at(&self, v: &DVector<T>, i: usize) -> T {
        let mut acc = self.diag_at(i) * v[i];
        if i > 0 {
            acc += self.a * v[i - 1];
        }
        if i + 1 < self.dim {
            acc += self.a * v[i + 1];
        }
        acc
    }

    /// `1ᵀ Q v` in O(n).
    pub fn one_quad_vec(&self, v: &DVector<T>) -> T {
        let mut acc = T::zero();
        for i in 0..self.dim {
            acc += self.row_sum(i) * v[i];
        }
        acc
    }

    /// `vᵀ Q v` in O(n).
    pub fn quad_form(&self, v: &DVector<T>) -> T {
        let n = self.dim;
        let mut acc = T::zero();
        for i in 0..n {
            acc += self.diag_at(i) * v[i] * v[i];
            if i + 1 < n {
                acc += real::<T>(2.0) * self.a * v[i] * v[i + 1];
            }
        }
        acc
    }

    /// `ln det Q` via the Cholesky pivot recurrence, O(n).
    pub fn log_det(&self) -> T {
        let mut pivot = self.d0;
        let mut acc = T::zero();
        for i in 1..=self.dim {
            acc += pivot.ln();
            if i < self.dim {
                pivot = self.diag_at(i) - self.a * self.a / pivot;
            }
        }
        acc
    }

    /// Dense form, for oracle comparisons.
    pub fn to_dense(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            if i == j {
                self.diag_at(i)
            } else if i.abs_diff(j) == 1 {
                self.a
            } else {
                T::zero()
            }
        })
    }
}

/// `ln sinh(x)` without overflow for large `x`.
fn log_sinh<T: Scalar>(x: T) -> T {
    debug_assert!(x > T::zero());
    x + (-(real::<T>(2.0)) * x).exp().neg().ln_1p() - real::<T>(2.0).ln()
}

/// Apply the closed-form inverse of the symmetric tridiagonal Toeplitz matrix
/// `T(diag, off)` to `rhs`, truncating the inverse to `|i-j| <= band_width`.
///
/// For `diag > 2|off|` the inverse entries are hyperbolic-sine products,
///   `(T⁻¹)_{ij} = (-sign(off))^{j-i} · sinh(i·t) sinh((N+1-j)·t)
///                 / (|off| sinh t sinh((N+1) t))`,  i ≤ j (1-based),
/// with `cosh t = diag / (2|off|)`; they decay like `exp(-t|i-j|)`, which is
/// what makes the banded product accurate.
pub fn tridiag_toeplitz_inverse_apply<T: Scalar>(
    diag: T,
    off: T,
    n: usize,
    rhs: &DVector<T>,
    band_width: usize,
) -> Result<DVector<T>> {
    if rhs.len() != n {
        return Err(Error::InvalidConfig("rhs length mismatch".into()));
    }
    if off == T::zero() {
        return Ok(rhs / diag);
    }
    let abs_off = off.abs();
    if diag <= real::<T>(2.0) * abs_off {
        return Err(Error::ConditionalUndefined(
            "tridiagonal Toeplitz matrix not diagonally dominant".into(),
        ));
    }
    let ratio = diag / (real::<T>(2.0) * abs_off);
    let t = (ratio + (ratio * ratio - T::one()).sqrt()).ln(); // acosh
    // ln sinh(k t) for k = 1..=n+1, then successive-entry ratios so each row
    // costs one exp and O(band) multiplies.
    let mut lsinh = Vec::with_capacity(n + 2);
    lsinh.push(T::neg_inf()); // k = 0 unused
    for k in 1..=n + 1 {
        lsinh.push(log_sinh(real::<T>(k as f64) * t));
    }
    let log_norm = abs_off.ln() + lsinh[1] + lsinh[n + 1];
    let sign = if off > T::zero() { -T::one() } else { T::one() };
    // Rightward along a row (j ≥ i): entry(i, j+1)/entry(i, j) uses
    // sinh((n-j)t)/sinh((n+1-j)t); leftward (j ≤ i): sinh((j-1)t)/sinh(jt).
    let mut step_right = Vec::with_capacity(n);
    let mut step_left = Vec::with_capacity(n + 1);
    step_left.push(T::zero()); // j = 0 unused
    for j in 1..=n {
        step_right.push(if j < n {
            sign * (lsinh[n - j] - lsinh[n + 1 - j]).exp()
        } else {
            T::zero()
        });
        step_left.push(if j > 1 {
            sign * (lsinh[j - 1] - lsinh[j]).exp()
        } else {
            T::zero()
        });
    }
    let mut out = DVector::zeros(n);
    for i in 1..=n {
        let diag_entry = (lsinh[i] + lsinh[n + 1 - i] - log_norm).exp();
        let mut acc = diag_entry * rhs[i - 1];
        let hi = (i + band_width).min(n);
        let mut entry = diag_entry;
        for j in i..hi {
            entry *= step_right[j - 1];
            acc += entry * rhs[j];
        }
        let lo = i.saturating_sub(band_width).max(1);
        let mut entry = diag_entry;
        for j in (lo..i).rev() {
            entry *= step_left[j + 1];
            acc += entry * rhs[j - 1];
        }
        out[i - 1] = acc;
    }
    Ok(out)
}

/// Dense closed-form inverse of the tridiagonal Toeplitz matrix, for oracle
/// checks and the block-conditional covariance.
pub fn tridiag_toeplitz_inverse_dense<T: Scalar>(diag: T, off: T, n: usize) -> Result<DMatrix<T>> {
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let e = DVector::from_fn(n, |k, _| if k == j { T::one() } else { T::zero() });
        let col = tridiag_toeplitz_inverse_apply(diag, off, n, &e, n)?;
        out.set_column(j, &col);
    }
    Ok(out)
}

/// The regression function the synthetic data follows: the base curve on
/// `[0, 3]` folded to an even, period-6, continuous extension.
pub fn true_function(x: f64) -> f64 {
    let t = ((x + 3.0).rem_euclid(6.0) - 3.0).abs();
    0.3 + 0.4 * t + 0.4 * (2.7 * t).sin() + 1.1 / (1.0 + t * t)
}

/// Synthetic observations on the symmetric grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GpData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Generate `y_i = f(x_i) + ε_i` on the grid `x_i = (i - n/2)·ρ`.
/// `n` must be an even multiple of the grid cells per period (`6/ρ`).
pub fn generate_data(config: &GpConfig, seed: u64) -> Result<GpData> {
    config.validate()?;
    let cells_f = 6.0 / config.rho;
    let cells = cells_f.round() as usize;
    if (cells_f - cells as f64).abs() > 1e-9 || cells == 0 {
        return Err(Error::InvalidConfig(
            "period 6 must be an integer number of grid cells".into(),
        ));
    }
    if config.n % (2 * cells) != 0 {
        return Err(Error::InvalidConfig(format!(
            "n = {} must be an even multiple of the {cells} cells per period",
            config.n
        )));
    }
    let mut rng = salted_rng(seed, DATA_SEED_SALT);
    let half = (config.n / 2) as i64;
    let mut x = Vec::with_capacity(config.n);
    let mut y = Vec::with_capacity(config.n);
    for i in 0..config.n as i64 {
        let xi = (i - half) as f64 * config.rho;
        x.push(xi);
        y.push(true_function(xi) + config.noise_sd * f64::std_normal(&mut rng));
    }
    Ok(GpData { x, y })
}

impl GpData {
    /// Two-column CSV with header, round-trippable exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,y")?;
        for (x, y) in self.x.iter().zip(&self.y) {
            writeln!(f, "{x},{y}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<GpData> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (k, line) in f.lines().enumerate() {
            let line = line?;
            if k == 0 {
                if line.trim() != "x,y" {
                    return Err(Error::DataFormat("expected header 'x,y'".into()));
                }
                continue;
            }
            let mut parts = line.split(',');
            let (xs, ys) = (parts.next(), parts.next());
            match (xs, ys) {
                (Some(xs), Some(ys)) => {
                    x.push(xs.trim().parse().map_err(|e| {
                        Error::DataFormat(format!("line {}: bad x: {e}", k + 1))
                    })?);
                    y.push(ys.trim().parse().map_err(|e| {
                        Error::DataFormat(format!("line {}: bad y: {e}", k + 1))
                    })?);
                }
                _ => return Err(Error::DataFormat(format!("line {}: expected x,y", k + 1))),
            }
        }
        Ok(GpData { x, y })
    }
}

/// The GP regression target. θ slices are the transmitted coordinates
/// `0..n_blocks`; μ, σ², τ² follow as local (top-level) coordinates.
#[derive(Debug, Clone)]
pub struct GpModel<T: Scalar> {
    config: GpConfig,
    y: DVector<T>,
    /// Exact H⁻¹ (with corners), used for ratios and hyper conditionals.
    q: ToeplitzInverse<T>,
    n_blocks: usize,
    band_width: usize,
}

impl<T: Scalar> GpModel<T> {
    pub fn new(config: GpConfig, data: &GpData) -> Result<Self> {
        config.validate()?;
        if data.y.len() != config.n {
            return Err(Error::InvalidConfig(format!(
                "data length {} does not match n = {}",
                data.y.len(),
                config.n
            )));
        }
        let q = toeplitz_exp_inverse::<T>(config.phi, config.rho, config.n)?;
        let band_width = match config.band_width {
            Some(w) => w.min(config.block_size),
            None => default_band_width(&config).max(config.block_size / 2).min(config.block_size),
        };
        let y = DVector::from_iterator(config.n, data.y.iter().map(|&v| real::<T>(v)));
        Ok(GpModel {
            n_blocks: config.n / config.block_size,
            config,
            y,
            q,
            band_width,
        })
    }

    /// Build the model on freshly generated synthetic data.
    pub fn synthetic(config: GpConfig, seed: u64) -> Result<(Self, GpData)> {
        let data = generate_data(&config, seed)?;
        let model = Self::new(config, &data)?;
        Ok((model, data))
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn band_width(&self) -> usize {
        self.band_width
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn q(&self) -> &ToeplitzInverse<T> {
        &self.q
    }

    pub fn mu_coord(&self) -> CoordinateId {
        CoordinateId(self.n_blocks)
    }

    pub fn sigma2_coord(&self) -> CoordinateId {
        CoordinateId(self.n_blocks + 1)
    }

    pub fn tau2_coord(&self) -> CoordinateId {
        CoordinateId(self.n_blocks + 2)
    }

    fn hypers(&self, state: &ParameterState<T>) -> Result<(T, T, T)> {
        let mu = state.value(self.mu_coord()).as_scalar(self.mu_coord())?;
        let sigma2 = state
            .value(self.sigma2_coord())
            .as_scalar(self.sigma2_coord())?;
        let tau2 = state.value(self.tau2_coord()).as_scalar(self.tau2_coord())?;
        if sigma2 <= T::zero() || tau2 <= T::zero() {
            return Err(Error::SupportViolation {
                coord: self.sigma2_coord(),
                context: "variance parameters must be positive".into(),
            });
        }
        Ok((mu, sigma2, tau2))
    }

    /// θ as one contiguous vector.
    pub fn theta(&self, state: &ParameterState<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.config.n);
        let b = self.config.block_size;
        for blk in 0..self.n_blocks {
            if let Value::Vector(v) = state.value(CoordinateId(blk)) {
                out.rows_mut(blk * b, b).copy_from(v);
            }
        }
        out
    }

    /// Conditional of a θ slice given the rest of the state: the banded
    /// conditional mean and the constant precision bands `(diag, off)` of the
    /// tridiagonal conditional precision.
    ///
    /// The full-θ posterior precision is `H⁻¹/τ² + I/σ²` with the corner
    /// entries flattened to the interior band (`d0 ≐ b`), making every slice
    /// conditional the same tridiagonal Toeplitz form.
    pub fn theta_block_conditional_bands(
        &self,
        state: &ParameterState<T>,
        block: usize,
    ) -> Result<(DVector<T>, T, T)> {
        let (mu, sigma2, tau2) = self.hypers(state)?;
        let bsz = self.config.block_size;
        let start = block * bsz;
        let n = self.config.n;
        let diag = self.q.b / tau2 + T::one() / sigma2;
        let off = self.q.a / tau2;
        // Linear coefficient h = Q̃ μ·1 / τ² + y / σ² with the flattened-corner
        // Q̃; its row sums are b+2a except b+a at the global ends.
        let interior = self.q.b + self.q.a + self.q.a;
        let endrow = self.q.b + self.q.a;
        let theta = self.theta(state);
        let mut rhs = DVector::zeros(bsz);
        for k in 0..bsz {
            let i = start + k;
            let row = if i == 0 || i + 1 == n { endrow } else { interior };
            rhs[k] = mu * row / tau2 + self.y[i] / sigma2;
        }
        if start > 0 {
            rhs[0] -= off * theta[start - 1];
        }
        if start + bsz < n {
            rhs[bsz - 1] -= off * theta[start + bsz];
        }
        let mean = tridiag_toeplitz_inverse_apply(diag, off, bsz, &rhs, self.band_width)?;
        Ok((mean, diag, off))
    }

    /// Conditional mean and dense covariance of a θ slice, assembled from the
    /// closed-form inverse. O(block²); intended for inspection and oracles.
    pub fn theta_block_conditional(
        &self,
        state: &ParameterState<T>,
        block: usize,
    ) -> Result<(DVector<T>, DMatrix<T>)> {
        let (mean, diag, off) = self.theta_block_conditional_bands(state, block)?;
        let cov = tridiag_toeplitz_inverse_dense(diag, off, self.config.block_size)?;
        Ok((mean, cov))
    }

    /// Draws from the conjugate conditionals of μ, σ², τ², all O(n) through
    /// the analytic H⁻¹.
    fn sample_hyper(
        &self,
        state: &ParameterState<T>,
        coord: CoordinateId,
        rng: &mut EngineRng,
    ) -> Result<(Value<T>, ProposalDescriptor<T>)> {
        let (mu, _sigma2, tau2) = self.hypers(state)?;
        let theta = self.theta(state);
        let n_f = real::<T>(self.config.n as f64);
        let two = real::<T>(2.0);
        if coord == self.mu_coord() {
            let prior_prec = T::one() / real::<T>(self.config.b_mu);
            let like_prec = self.q.one_quad_one() / tau2;
            let prec = prior_prec + like_prec;
            let lin = real::<T>(self.config.a_mu) * prior_prec + self.q.one_quad_vec(&theta) / tau2;
            let mean = lin / prec;
            let variance = T::one() / prec;
            let draw = mean + T::std_normal(rng) * variance.sqrt();
            Ok((
                Value::Scalar(draw),
                ProposalDescriptor::GaussianScalar { mean, variance },
            ))
        } else if coord == self.sigma2_coord() {
            let resid = &self.y - &theta;
            let shape = real::<T>(self.config.a_sigma) + n_f / two;
            let scale = real::<T>(self.config.b_sigma) + resid.dot(&resid) / two;
            if scale <= T::zero() {
                return Err(Error::ConditionalUndefined("sigma2 scale".into()));
            }
            let draw = dist::sample_inverse_gamma(shape, scale, rng)?;
            Ok((
                Value::Scalar(draw),
                ProposalDescriptor::InverseGamma { shape, scale },
            ))
        } else if coord == self.tau2_coord() {
            let centered = theta.map(|v| v - mu);
            let shape = real::<T>(self.config.a_tau) + n_f / two;
            let scale = real::<T>(self.config.b_tau) + self.q.quad_form(&centered) / two;
            if scale <= T::zero() {
                return Err(Error::ConditionalUndefined("tau2 scale".into()));
            }
            let draw = dist::sample_inverse_gamma(shape, scale, rng)?;
            Ok((
                Value::Scalar(draw),
                ProposalDescriptor::InverseGamma { shape, scale },
            ))
        } else {
            Err(Error::InvalidConfig(format!("unknown hyper coord {coord}")))
        }
    }
}

fn default_band_width(config: &GpConfig) -> usize {
    // Smallest radius whose largest omitted closed-form inverse entry is
    // below 1e-10, evaluated at the prior-mean hyperparameters.
    let sigma2 = config.b_sigma / (config.a_sigma - 1.0).max(0.5);
    let tau2 = config.b_tau / (config.a_tau - 1.0).max(0.5);
    let x = config.phi * config.rho;
    let b = x.cosh() / x.sinh();
    let a = -1.0 / (2.0 * x.sinh());
    let diag = b / tau2 + 1.0 / sigma2;
    let off = (a / tau2).abs();
    let ratio = diag / (2.0 * off);
    if ratio <= 1.0 {
        return config.block_size;
    }
    let t = (ratio + (ratio * ratio - 1.0).sqrt()).ln();
    // Entries at lag k are bounded by exp(-t k)/(2 off sinh t).
    let scale = 1.0 / (2.0 * off * t.sinh());
    let mut w = 1usize;
    while w < config.block_size && scale * (-t * w as f64).exp() > 1e-10 {
        w += 1;
    }
    w
}

impl<T: Scalar> TargetModel<T> for GpModel<T> {
    type Cache = ();

    fn coord_count(&self) -> usize {
        self.n_blocks + 3
    }

    fn shape(&self, coord: CoordinateId) -> ValueShape {
        if coord.0 < self.n_blocks {
            ValueShape::Vector(self.config.block_size)
        } else {
            ValueShape::Scalar
        }
    }

    fn initial_state(&self) -> ParameterState<T> {
        let mut values: Vec<Value<T>> = (0..self.n_blocks)
            .map(|_| {
                Value::Vector(DVector::from_element(
                    self.config.block_size,
                    real::<T>(self.config.init_theta),
                ))
            })
            .collect();
        values.push(Value::Scalar(real::<T>(self.config.init_mu)));
        values.push(Value::Scalar(real::<T>(self.config.init_sigma2)));
        values.push(Value::Scalar(real::<T>(self.config.init_tau2)));
        ParameterState::new(values)
    }

    fn init_cache(&self, _state: &ParameterState<T>) -> Self::Cache {}

    fn log_joint(&self, state: &ParameterState<T>) -> Result<T> {
        let (mu, sigma2, tau2) = self.hypers(state)?;
        let theta = self.theta(state);
        let n_f = real::<T>(self.config.n as f64);
        let two = real::<T>(2.0);
        let resid = &self.y - &theta;
        let data = -n_f / two * (T::two_pi() * sigma2).ln() - resid.dot(&resid) / (two * sigma2);
        let centered = theta.map(|v| v - mu);
        let prior_theta = -n_f / two * (T::two_pi() * tau2).ln() + self.q.log_det() / two
            - self.q.quad_form(&centered) / (two * tau2);
        let priors = dist::normal_logpdf(mu, real(self.config.a_mu), real(self.config.b_mu))
            + dist::inverse_gamma_logpdf(sigma2, real(self.config.a_sigma), real(self.config.b_sigma))
            + dist::inverse_gamma_logpdf(tau2, real(self.config.a_tau), real(self.config.b_tau));
        let total = data + prior_theta + priors;
        if !total.is_finite() {
            return Err(Error::SupportViolation {
                coord: CoordinateId(0),
                context: "log joint not finite".into(),
            });
        }
        Ok(total)
    }

    fn log_joint_ratio(
        &self,
        state: &ParameterState<T>,
        _cache: &Self::Cache,
        coord: CoordinateId,
        new_value: &Value<T>,
    ) -> Result<T> {
        let (mu, sigma2, tau2) = self.hypers(state)?;
        let two = real::<T>(2.0);
        let n_f = real::<T>(self.config.n as f64);
        if coord.0 < self.n_blocks {
            // Slice update: only local terms of both quadratic forms move.
            let new_b = new_value.as_vector(coord)?;
            let bsz = self.config.block_size;
            if new_b.len() != bsz {
                return Err(Error::ShapeMismatch {
                    coord,
                    expected: ValueShape::Vector(bsz),
                    got: new_value.shape(),
                });
            }
            let theta = self.theta(state);
            let start = coord.0 * bsz;
            let centered = theta.map(|v| v - mu);
            let mut cross_prior = T::zero();
            let mut quad_prior = T::zero();
            let mut cross_data = T::zero();
            let mut quad_data = T::zero();
            let u = DVector::from_fn(bsz, |k, _| new_b[k] - theta[start + k]);
            for k in 0..bsz {
                let i = start + k;
                cross_prior += u[k] * self.q.mul_vec_at(&centered, i);
                quad_prior += self.q.diag_at(i) * u[k] * u[k];
                if k + 1 < bsz {
                    quad_prior += two * self.q.a * u[k] * u[k + 1];
                }
                cross_data += u[k] * (theta[i] - self.y[i]);
                quad_data += u[k] * u[k];
            }
            let d_prior = -(two * cross_prior + quad_prior) / (two * tau2);
            let d_data = -(two * cross_data + quad_data) / (two * sigma2);
            let total = d_prior + d_data;
            if !total.is_finite() {
                return Err(Error::SupportViolation {
                    coord,
                    context: "log density ratio not finite".into(),
                });
            }
            return Ok(total);
        }
        if coord == self.mu_coord() {
            let new_mu = new_value.as_scalar(coord)?;
            let theta = self.theta(state);
            let delta = new_mu - mu;
            // quad(θ - μ'1) - quad(θ - μ1) = -2δ·1ᵀQ(θ - μ1) + δ²·1ᵀQ1.
            let centered = theta.map(|v| v - mu);
            let d_quad = -two * delta * self.q.one_quad_vec(&centered)
                + delta * delta * self.q.one_quad_one();
            let d_prior = dist::normal_logpdf(new_mu, real(self.config.a_mu), real(self.config.b_mu))
                - dist::normal_logpdf(mu, real(self.config.a_mu), real(self.config.b_mu));
            return Ok(-d_quad / (two * tau2) + d_prior);
        }
        if coord == self.sigma2_coord() {
            let new_s = new_value.as_scalar(coord)?;
            if new_s <= T::zero() {
                return Ok(T::neg_inf());
            }
            let theta = self.theta(state);
            let resid = &self.y - &theta;
            let rss = resid.dot(&resid);
            let d = -n_f / two * (new_s.ln() - sigma2.ln())
                - rss / two * (T::one() / new_s - T::one() / sigma2)
                + dist::inverse_gamma_logpdf(new_s, real(self.config.a_sigma), real(self.config.b_sigma))
                - dist::inverse_gamma_logpdf(sigma2, real(self.config.a_sigma), real(self.config.b_sigma));
            return Ok(d);
        }
        if coord == self.tau2_coord() {
            let new_t = new_value.as_scalar(coord)?;
            if new_t <= T::zero() {
                return Ok(T::neg_inf());
            }
            let theta = self.theta(state);
            let centered = theta.map(|v| v - mu);
            let q = self.q.quad_form(&centered);
            let d = -n_f / two * (new_t.ln() - tau2.ln())
                - q / two * (T::one() / new_t - T::one() / tau2)
                + dist::inverse_gamma_logpdf(new_t, real(self.config.a_tau), real(self.config.b_tau))
                - dist::inverse_gamma_logpdf(tau2, real(self.config.a_tau), real(self.config.b_tau));
            return Ok(d);
        }
        Err(Error::InvalidConfig(format!("unknown coordinate {coord}")))
    }

    fn sample_full_conditional(
        &self,
        state: &ParameterState<T>,
        _cache: &Self::Cache,
        coord: CoordinateId,
        rng: &mut EngineRng,
    ) -> Result<(Value<T>, ProposalDescriptor<T>)> {
        if coord.0 < self.n_blocks {
            let (mean, diag, off) = self.theta_block_conditional_bands(state, coord.0)?;
            let (l, s) = linalg::tridiag_toeplitz_cholesky(diag, off, self.config.block_size)?;
            let noise = linalg::sample_tridiag_precision(&l, &s, rng);
            let draw = &mean + noise;
            return Ok((
                Value::Vector(draw),
                ProposalDescriptor::GaussianTridiagPrecision {
                    mean,
                    diag,
                    offdiag: off,
                },
            ));
        }
        self.sample_hyper(state, coord, rng)
    }
}
