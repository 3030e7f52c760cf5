//! Hierarchical mixed-effects regression with sufficient-statistic caching.
//!
//! Per user i: `y_i = F_i β_i + W_i γ + ε_i`, `β_i ~ N(μ, Σ)`,
//! `ε_i ~ N(0, ν I)`, with priors `μ ~ N(0, κ_μ I)`, `Σ ~ IW(d+1, I)`,
//! `γ ~ N(0, κ_γ I)`, `ν ~ IG(ε/2, ε/2)`.
//!
//! The β_i are the transmitted coordinates; (μ, Σ, γ, ν) are top-level and
//! sampled locally on every worker. Their full conditionals read only four
//! running statistics (β-sum, raw second moment, the γ-free residual
//! projection g, and the γ-free residual square sum), so a β update costs
//! O(poly(d, T−p)) regardless of n. Because one β_i touches exactly one data
//! point, the exact-mode acceptance ratio collapses to that data point: the
//! n−1 untouched likelihood factors cancel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::dist;
use crate::error::{Error, Result};
use crate::linalg;
use crate::message::UpdateMessage;
use crate::model::TargetModel;
use crate::proposal::ProposalDescriptor;
use crate::scalar::{real, salted_rng, EngineRng, Scalar};
use crate::state::ParameterState;
use crate::value::{CoordinateId, Value, ValueShape};

const GEN_SEED_SALT: u64 = 0x6e4d_1a7a_0000_0009;

/// Cache refresh period, in β updates.
const AUDIT_PERIOD: u64 = 10_000;

/// Dimensions and fixed hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedConfig {
    /// Number of users (data points / β coordinates).
    pub n: usize,
    /// Random-effect dimension d.
    pub d: usize,
    /// Observation periods T.
    pub t_len: usize,
    /// Autoregression lags p; each user contributes T − p observations.
    pub p_lags: usize,
    pub kappa_mu: f64,
    pub kappa_gamma: f64,
    pub epsilon: f64,
}

impl Default for MixedConfig {
    fn default() -> Self {
        MixedConfig {
            n: 1000,
            d: 3,
            t_len: 13,
            p_lags: 1,
            kappa_mu: 1.0,
            kappa_gamma: 1.0,
            epsilon: 6.0,
        }
    }
}

impl MixedConfig {
    pub fn obs_len(&self) -> usize {
        self.t_len - self.p_lags
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be positive".into()));
        }
        if self.p_lags >= self.t_len {
            return Err(Error::InvalidConfig("need p < T".into()));
        }
        if self.kappa_mu <= 0.0 || self.kappa_gamma <= 0.0 || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(
                "kappa_mu, kappa_gamma, epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One user's data block.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord<T: Scalar> {
    pub y: DVector<T>,
    pub f: DMatrix<T>,
    pub w: DMatrix<T>,
}

/// The full data set plus per-user and global aggregates that never change.
#[derive(Debug, Clone)]
pub struct MixedData<T: Scalar> {
    pub config: MixedConfig,
    pub users: Vec<UserRecord<T>>,
    /// FᵢᵀFᵢ per user.
    ftf: Vec<DMatrix<T>>,
    /// Σᵢ WᵢᵀWᵢ.
    wtw_sum: DMatrix<T>,
}

impl<T: Scalar> MixedData<T> {
    pub fn new(config: MixedConfig, users: Vec<UserRecord<T>>) -> Result<Self> {
        config.validate()?;
        if users.len() != config.n {
            return Err(Error::InvalidConfig(format!(
                "expected {} users, got {}",
                config.n,
                users.len()
            )));
        }
        let m = config.obs_len();
        for (i, u) in users.iter().enumerate() {
            if u.y.len() != m || u.f.nrows() != m || u.f.ncols() != config.d
                || u.w.nrows() != m || u.w.ncols() != m
            {
                return Err(Error::InvalidConfig(format!("user {i}: shape mismatch")));
            }
        }
        let ftf = users.iter().map(|u| u.f.transpose() * &u.f).collect();
        let mut wtw_sum = DMatrix::zeros(m, m);
        for u in &users {
            wtw_sum += u.w.transpose() * &u.w;
        }
        Ok(MixedData {
            config,
            users,
            ftf,
            wtw_sum,
        })
    }
}

/// Ground truth used by the synthetic generator, kept for posterior checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub nu: f64,
}

/// Synthetic data: design matrices with i.i.d. standard-normal entries and
/// true parameters drawn from the priors.
pub fn generate_data<T: Scalar>(
    config: &MixedConfig,
    seed: u64,
) -> Result<(MixedData<T>, TrueParams)> {
    config.validate()?;
    let mut rng = salted_rng(seed, GEN_SEED_SALT);
    let (d, m) = (config.d, config.obs_len());
    let mu_true = DVector::<T>::from_fn(d, |_, _| {
        T::std_normal(&mut rng) * real::<T>(config.kappa_mu.sqrt())
    });
    let sigma_true = dist::sample_inverse_wishart(
        real::<T>(d as f64 + 1.0),
        &DMatrix::identity(d, d),
        &mut rng,
    )?;
    let gamma_true = DVector::<T>::from_fn(m, |_, _| {
        T::std_normal(&mut rng) * real::<T>(config.kappa_gamma.sqrt())
    });
    let eps = real::<T>(config.epsilon);
    let nu_true = dist::sample_inverse_gamma(eps / real(2.0), eps / real(2.0), &mut rng)?;
    let sigma_chol = linalg::spd_cholesky(sigma_true.clone())?.unpack();
    let noise_sd = nu_true.sqrt();
    let mut users = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let f = DMatrix::from_fn(m, d, |_, _| T::std_normal(&mut rng));
        let w = DMatrix::from_fn(m, m, |_, _| T::std_normal(&mut rng));
        let beta = linalg::sample_mvn_cov_chol(&mu_true, &sigma_chol, &mut rng);
        let noise = DVector::from_fn(m, |_, _| T::std_normal(&mut rng) * noise_sd);
        let y = &f * beta + &w * &gamma_true + noise;
        users.push(UserRecord { y, f, w });
    }
    let truth = TrueParams {
        mu: mu_true.iter().map(|v| v.to_f64().unwrap()).collect(),
        sigma: (0..d)
            .map(|i| (0..d).map(|j| sigma_true[(i, j)].to_f64().unwrap()).collect())
            .collect(),
        gamma: gamma_true.iter().map(|v| v.to_f64().unwrap()).collect(),
        nu: nu_true.to_f64().unwrap(),
    };
    Ok((MixedData::new(config.clone(), users)?, truth))
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    config: MixedConfig,
    truth: TrueParams,
}

#[derive(Serialize, Deserialize)]
struct JsonUser {
    y: Vec<f64>,
    f: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

/// Write a data set as JSON lines: one header record, then one record per
/// user.
pub fn write_jsonl<T: Scalar>(
    data: &MixedData<T>,
    truth: &TrueParams,
    path: &Path,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = JsonHeader {
        config: data.config.clone(),
        truth: truth.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::DataFormat(e.to_string()))?;
    writeln!(out)?;
    for u in &data.users {
        let rec = JsonUser {
            y: u.y.iter().map(|v| v.to_f64().unwrap()).collect(),
            f: (0..u.f.nrows())
                .map(|i| (0..u.f.ncols()).map(|j| u.f[(i, j)].to_f64().unwrap()).collect())
                .collect(),
            w: (0..u.w.nrows())
                .map(|i| (0..u.w.ncols()).map(|j| u.w[(i, j)].to_f64().unwrap()).collect())
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::DataFormat(e.to_string()))?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_jsonl<T: Scalar>(path: &Path) -> Result<(MixedData<T>, TrueParams)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::DataFormat("empty dataset file".into()))??;
    let header: JsonHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::DataFormat(e.to_string()))?;
    let m = header.config.obs_len();
    let d = header.config.d;
    let mut users = Vec::with_capacity(header.config.n);
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonUser = serde_json::from_str(&line)
            .map_err(|e| Error::DataFormat(format!("user {k}: {e}")))?;
        if rec.y.len() != m || rec.f.len() != m || rec.w.len() != m {
            return Err(Error::DataFormat(format!("user {k}: wrong shapes")));
        }
        let y = DVector::from_iterator(m, rec.y.iter().map(|&v| real::<T>(v)));
        let f = DMatrix::from_fn(m, d, |i, j| real::<T>(rec.f[i][j]));
        let w = DMatrix::from_fn(m, m, |i, j| real::<T>(rec.w[i][j]));
        users.push(UserRecord { y, f, w });
    }
    Ok((MixedData::new(header.config, users)?, header.truth))
}

/// Running sufficient statistics for the top-level conditionals.
///
/// `s_outer` stores the raw `Σ βᵢβᵢᵀ` (centering by the current μ happens on
/// read) and `r2_sum` the γ-free `Σ ‖yᵢ − Fᵢβᵢ‖²`, so neither needs
/// invalidation when μ or γ move.
#[derive(Debug, Clone, PartialEq)]
pub struct StatCache<T: Scalar> {
    pub beta_sum: DVector<T>,
    pub s_outer: DMatrix<T>,
    pub g: DVector<T>,
    pub r2_sum: T,
    updates_since_audit: u64,
}

impl<T: Scalar> StatCache<T> {
    /// Centered scatter `Σ (βᵢ − μ)(βᵢ − μ)ᵀ`.
    pub fn scatter(&self, mu: &DVector<T>, n: usize) -> DMatrix<T> {
        let n_f = real::<T>(n as f64);
        &self.s_outer - &self.beta_sum * mu.transpose() - mu * self.beta_sum.transpose()
            + mu * mu.transpose() * n_f
    }

    /// Residual sum `Σ ‖yᵢ − Fᵢβᵢ − Wᵢγ‖²` assembled from γ-free pieces.
    pub fn residual_sum(&self, gamma: &DVector<T>, wtw_sum: &DMatrix<T>) -> T {
        self.r2_sum - real::<T>(2.0) * gamma.dot(&self.g) + (wtw_sum * gamma).dot(gamma)
    }

    /// Largest relative deviation from a freshly recomputed cache.
    pub fn drift_from(&self, fresh: &StatCache<T>) -> f64 {
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        let mut worst: f64 = rel(
            self.r2_sum.to_f64().unwrap(),
            fresh.r2_sum.to_f64().unwrap(),
        );
        for (a, b) in self.beta_sum.iter().zip(fresh.beta_sum.iter()) {
            worst = worst.max(rel(a.to_f64().unwrap(), b.to_f64().unwrap()));
        }
        for (a, b) in self.g.iter().zip(fresh.g.iter()) {
            worst = worst.max(rel(a.to_f64().unwrap(), b.to_f64().unwrap()));
        }
        for (a, b) in self.s_outer.iter().zip(fresh.s_outer.iter()) {
            worst = worst.max(rel(a.to_f64().unwrap(), b.to_f64().unwrap()));
        }
        worst
    }
}

/// The mixed-effects target. Coordinates: `0..n` are β_i, then μ, Σ, γ, ν.
#[derive(Debug, Clone)]
pub struct MixedModel<T: Scalar> {
    data: MixedData<T>,
}

impl<T: Scalar> MixedModel<T> {
    pub fn new(data: MixedData<T>) -> Self {
        MixedModel { data }
    }

    pub fn data(&self) -> &MixedData<T> {
        &self.data
    }

    pub fn config(&self) -> &MixedConfig {
        &self.data.config
    }

    fn n(&self) -> usize {
        self.data.config.n
    }

    pub fn mu_coord(&self) -> CoordinateId {
        CoordinateId(self.n())
    }

    pub fn sigma_coord(&self) -> CoordinateId {
        CoordinateId(self.n() + 1)
    }

    pub fn gamma_coord(&self) -> CoordinateId {
        CoordinateId(self.n() + 2)
    }

    pub fn nu_coord(&self) -> CoordinateId {
        CoordinateId(self.n() + 3)
    }

    fn beta(&self, state: &ParameterState<T>, i: usize) -> DVector<T> {
        state
            .value(CoordinateId(i))
            .as_vector(CoordinateId(i))
            .expect("beta coordinate is a vector")
            .clone()
    }

    fn top_level(&self, state: &ParameterState<T>) -> Result<TopLevel<T>> {
        let mu = state.value(self.mu_coord()).as_vector(self.mu_coord())?.clone();
        let sigma = state
            .value(self.sigma_coord())
            .as_matrix(self.sigma_coord())?
            .clone();
        let gamma = state
            .value(self.gamma_coord())
            .as_vector(self.gamma_coord())?
            .clone();
        let nu = state.value(self.nu_coord()).as_scalar(self.nu_coord())?;
        if nu <= T::zero() {
            return Err(Error::SupportViolation {
                coord: self.nu_coord(),
                context: "nu must be positive".into(),
            });
        }
        let sigma_chol = linalg::spd_cholesky(sigma.clone())
            .map_err(|_| Error::NotPositiveDefinite("Sigma".into()))?;
        Ok(TopLevel {
            mu,
            sigma,
            sigma_inv: linalg::symmetrize(sigma_chol.inverse()),
            sigma_log_det: linalg::chol_log_det(&sigma_chol),
            gamma,
            nu,
        })
    }

    /// Log joint terms touching β_i only: one likelihood factor plus the
    /// random-effects prior factor.
    fn beta_term(&self, top: &TopLevel<T>, i: usize, beta: &DVector<T>) -> T {
        let u = &self.data.users[i];
        let two = real::<T>(2.0);
        let resid = &u.y - &u.f * beta - &u.w * &top.gamma;
        let centered = beta - &top.mu;
        -resid.dot(&resid) / (two * top.nu)
            - (&top.sigma_inv * &centered).dot(&centered) / two
    }

    /// One-data-point exact acceptance (the exchangeable-model shortcut):
    /// evaluates the acceptance probability of `msg` against the receiver's
    /// current top-level state using only data point `msg.data_ref`.
    pub fn exchangeable_acceptance(
        &self,
        state: &ParameterState<T>,
        msg: &UpdateMessage<T>,
    ) -> Result<T> {
        let i = msg
            .data_ref
            .ok_or_else(|| Error::InvalidConfig("message lacks a data index".into()))?;
        if i >= self.n() || CoordinateId(i) != msg.coord {
            return Err(Error::InvalidConfig(format!(
                "data index {i} does not match coordinate {}",
                msg.coord
            )));
        }
        let top = self.top_level(state)?;
        let current = state.value(msg.coord);
        let new_beta = msg.new_value.as_vector(msg.coord)?;
        let cur_beta = current.as_vector(msg.coord)?;
        let ratio = self.beta_term(&top, i, new_beta) - self.beta_term(&top, i, cur_beta);
        let q_cur = msg.proposal.log_density(current)?;
        let q_new = msg.proposal.log_density(&msg.new_value)?;
        let log_alpha = ratio + q_cur - q_new;
        if log_alpha.is_nan() {
            return Err(Error::SupportViolation {
                coord: msg.coord,
                context: "indeterminate acceptance ratio".into(),
            });
        }
        Ok(T::zero().min(log_alpha).exp())
    }
}

struct TopLevel<T: Scalar> {
    mu: DVector<T>,
    sigma: DMatrix<T>,
    sigma_inv: DMatrix<T>,
    sigma_log_det: T,
    gamma: DVector<T>,
    nu: T,
}

impl<T: Scalar> TargetModel<T> for MixedModel<T> {
    type Cache = StatCache<T>;

    fn coord_count(&self) -> usize {
        self.n() + 4
    }

    fn shape(&self, coord: CoordinateId) -> ValueShape {
        let d = self.data.config.d;
        let m = self.data.config.obs_len();
        // β_i and μ share the d-vector shape.
        if coord.0 <= self.n() {
            ValueShape::Vector(d)
        } else if coord == self.sigma_coord() {
            ValueShape::Matrix(d, d)
        } else if coord == self.gamma_coord() {
            ValueShape::Vector(m)
        } else {
            ValueShape::Scalar
        }
    }

    fn initial_state(&self) -> ParameterState<T> {
        let d = self.data.config.d;
        let m = self.data.config.obs_len();
        let mut values: Vec<Value<T>> = (0..self.n())
            .map(|_| Value::Vector(DVector::zeros(d)))
            .collect();
        values.push(Value::Vector(DVector::zeros(d))); // μ
        values.push(Value::Matrix(DMatrix::identity(d, d))); // Σ
        values.push(Value::Vector(DVector::zeros(m))); // γ
        values.push(Value::Scalar(T::one())); // ν
        ParameterState::new(values)
    }

    fn init_cache(&self, state: &ParameterState<T>) -> Self::Cache {
        let d = self.data.config.d;
        let m = self.data.config.obs_len();
        let mut cache = StatCache {
            beta_sum: DVector::zeros(d),
            s_outer: DMatrix::zeros(d, d),
            g: DVector::zeros(m),
            r2_sum: T::zero(),
            updates_since_audit: 0,
        };
        for i in 0..self.n() {
            let beta = self.beta(state, i);
            let u = &self.data.users[i];
            let resid = &u.y - &u.f * &beta;
            cache.beta_sum += &beta;
            cache.s_outer += &beta * beta.transpose();
            cache.g += u.w.transpose() * &resid;
            cache.r2_sum += resid.dot(&resid);
        }
        cache
    }

    fn note_update(
        &self,
        _state: &ParameterState<T>,
        cache: &mut Self::Cache,
        coord: CoordinateId,
        old: &Value<T>,
        new: &Value<T>,
    ) {
        if coord.0 >= self.n() {
            return; // top-level moves never touch the cached statistics
        }
        let i = coord.0;
        let (old_b, new_b) = match (old, new) {
            (Value::Vector(o), Value::Vector(n)) => (o, n),
            _ => unreachable!("beta coordinates are vectors"),
        };
        let u = &self.data.users[i];
        let r_old = &u.y - &u.f * old_b;
        let r_new = &u.y - &u.f * new_b;
        cache.beta_sum += new_b - old_b;
        cache.s_outer += new_b * new_b.transpose() - old_b * old_b.transpose();
        cache.g += u.w.transpose() * (&r_new - &r_old);
        cache.r2_sum += r_new.dot(&r_new) - r_old.dot(&r_old);
        cache.updates_since_audit += 1;
        if cache.updates_since_audit >= AUDIT_PERIOD {
            self.refresh_cache(_state, cache);
        }
    }

    fn refresh_cache(&self, state: &ParameterState<T>, cache: &mut Self::Cache) {
        *cache = self.init_cache(state);
    }

    fn log_joint(&self, state: &ParameterState<T>) -> Result<T> {
        let top = self.top_level(state)?;
        let config = &self.data.config;
        let (d, m, n) = (config.d, config.obs_len(), self.n());
        let two = real::<T>(2.0);
        let mut total = T::zero();
        for i in 0..n {
            let beta = self.beta(state, i);
            total += self.beta_term(&top, i, &beta);
        }
        // Normalizing constants of the n likelihood and prior factors.
        total += -real::<T>((n * m) as f64) / two * (T::two_pi() * top.nu).ln();
        total += -real::<T>(n as f64) / two
            * (real::<T>(d as f64) * T::two_pi().ln() + top.sigma_log_det);
        // Priors.
        let kappa_mu = real::<T>(config.kappa_mu);
        let kappa_gamma = real::<T>(config.kappa_gamma);
        let eps = real::<T>(config.epsilon);
        total += -top.mu.dot(&top.mu) / (two * kappa_mu)
            - real::<T>(d as f64) / two * (T::two_pi() * kappa_mu).ln();
        total += -top.gamma.dot(&top.gamma) / (two * kappa_gamma)
            - real::<T>(m as f64) / two * (T::two_pi() * kappa_gamma).ln();
        total += dist::inverse_wishart_logpdf(
            &top.sigma,
            real::<T>(d as f64 + 1.0),
            &DMatrix::identity(d, d),
        )?;
        total += dist::inverse_gamma_logpdf(top.nu, eps / two, eps / two);
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
        cache: &Self::Cache,
        coord: CoordinateId,
        new_value: &Value<T>,
    ) -> Result<T> {
        let top = self.top_level(state)?;
        let config = &self.data.config;
        let (d, m, n) = (config.d, config.obs_len(), self.n());
        let n_f = real::<T>(n as f64);
        let two = real::<T>(2.0);
        if coord.0 < n {
            // One data point: every other likelihood factor cancels.
            let new_b = new_value.as_vector(coord)?;
            let cur_b = self.beta(state, coord.0);
            return Ok(self.beta_term(&top, coord.0, new_b)
                - self.beta_term(&top, coord.0, &cur_b));
        }
        if coord == self.mu_coord() {
            let new_mu = new_value.as_vector(coord)?;
            let s_old = cache.scatter(&top.mu, n);
            let s_new = cache.scatter(new_mu, n);
            let d_quad = ((&top.sigma_inv * (s_new - s_old)).trace()) / two;
            let kappa = real::<T>(config.kappa_mu);
            let d_prior =
                (top.mu.dot(&top.mu) - new_mu.dot(new_mu)) / (two * kappa);
            return Ok(-d_quad + d_prior);
        }
        if coord == self.sigma_coord() {
            let new_sigma = new_value.as_matrix(coord)?;
            let new_chol = match linalg::spd_cholesky(new_sigma.clone()) {
                Ok(c) => c,
                Err(_) => return Ok(T::neg_inf()),
            };
            let new_inv = linalg::symmetrize(new_chol.inverse());
            let new_log_det = linalg::chol_log_det(&new_chol);
            let scatter = cache.scatter(&top.mu, n);
            let d_like = -n_f / two * (new_log_det - top.sigma_log_det)
                - ((&new_inv - &top.sigma_inv) * scatter).trace() / two;
            let eye = DMatrix::identity(d, d);
            let d_prior = dist::inverse_wishart_logpdf(new_sigma, real::<T>(d as f64 + 1.0), &eye)?
                - dist::inverse_wishart_logpdf(&top.sigma, real::<T>(d as f64 + 1.0), &eye)?;
            return Ok(d_like + d_prior);
        }
        if coord == self.gamma_coord() {
            let new_gamma = new_value.as_vector(coord)?;
            let l_old = cache.residual_sum(&top.gamma, &self.data.wtw_sum);
            let l_new = cache.residual_sum(new_gamma, &self.data.wtw_sum);
            let kappa = real::<T>(config.kappa_gamma);
            let d_prior =
                (top.gamma.dot(&top.gamma) - new_gamma.dot(new_gamma)) / (two * kappa);
            return Ok(-(l_new - l_old) / (two * top.nu) + d_prior);
        }
        if coord == self.nu_coord() {
            let new_nu = new_value.as_scalar(coord)?;
            if new_nu <= T::zero() {
                return Ok(T::neg_inf());
            }
            let l = cache.residual_sum(&top.gamma, &self.data.wtw_sum);
            let eps = real::<T>(config.epsilon);
            let d = -real::<T>((n * m) as f64) / two * (new_nu.ln() - top.nu.ln())
                - l / two * (T::one() / new_nu - T::one() / top.nu)
                + dist::inverse_gamma_logpdf(new_nu, eps / two, eps / two)
                - dist::inverse_gamma_logpdf(top.nu, eps / two, eps / two);
            return Ok(d);
        }
        Err(Error::InvalidConfig(format!("unknown coordinate {coord}")))
    }

    fn sample_full_conditional(
        &self,
        state: &ParameterState<T>,
        cache: &Self::Cache,
        coord: CoordinateId,
        rng: &mut EngineRng,
    ) -> Result<(Value<T>, ProposalDescriptor<T>)> {
        let top = self.top_level(state)?;
        let config = &self.data.config;
        let (d, m, n) = (config.d, config.obs_len(), self.n());
        let n_f = real::<T>(n as f64);
        let two = real::<T>(2.0);
        if coord.0 < n {
            // β_i | · ~ N(m_i, V_i), V_i⁻¹ = FᵀF/ν + Σ⁻¹,
            // m_i = V_i (Fᵀ(y − Wγ)/ν + Σ⁻¹μ).
            let i = coord.0;
            let u = &self.data.users[i];
            let prec = &self.data.ftf[i] / top.nu + &top.sigma_inv;
            let chol = linalg::spd_cholesky(linalg::symmetrize(prec))
                .map_err(|_| Error::ConditionalUndefined(format!("beta {i} precision")))?;
            let lin = u.f.transpose() * (&u.y - &u.w * &top.gamma) / top.nu
                + &top.sigma_inv * &top.mu;
            let mean = chol.solve(&lin);
            let cov = linalg::symmetrize(chol.inverse());
            let cov_chol = linalg::spd_cholesky(cov)?.unpack();
            let draw = linalg::sample_mvn_cov_chol(&mean, &cov_chol, rng);
            return Ok((
                Value::Vector(draw),
                ProposalDescriptor::GaussianVector { mean, cov_chol },
            ));
        }
        if coord == self.mu_coord() {
            // μ | · ~ N((nΣ⁻¹ + I/κ)⁻¹ Σ⁻¹ Σβᵢ, (nΣ⁻¹ + I/κ)⁻¹).
            let kappa = real::<T>(config.kappa_mu);
            let prec = &top.sigma_inv * n_f + DMatrix::identity(d, d) / kappa;
            let chol = linalg::spd_cholesky(linalg::symmetrize(prec))?;
            let lin = &top.sigma_inv * &cache.beta_sum;
            let mean = chol.solve(&lin);
            let cov_chol = linalg::spd_cholesky(linalg::symmetrize(chol.inverse()))?.unpack();
            let draw = linalg::sample_mvn_cov_chol(&mean, &cov_chol, rng);
            return Ok((
                Value::Vector(draw),
                ProposalDescriptor::GaussianVector { mean, cov_chol },
            ));
        }
        if coord == self.sigma_coord() {
            // Σ | · ~ IW(d+1+n, I + S(μ)).
            let dof = real::<T>((d + 1 + n) as f64);
            let scale = linalg::symmetrize(
                DMatrix::identity(d, d) + cache.scatter(&top.mu, n),
            );
            let draw = dist::sample_inverse_wishart(dof, &scale, rng)?;
            return Ok((
                Value::Matrix(draw),
                ProposalDescriptor::InverseWishart { dof, scale },
            ));
        }
        if coord == self.gamma_coord() {
            // γ | · ~ N(P⁻¹ g/ν, P⁻¹), P = ΣWᵢᵀWᵢ/ν + I/κ.
            let kappa = real::<T>(config.kappa_gamma);
            let prec = &self.data.wtw_sum / top.nu + DMatrix::identity(m, m) / kappa;
            let chol = linalg::spd_cholesky(linalg::symmetrize(prec))?;
            let lin = &cache.g / top.nu;
            let mean = chol.solve(&lin);
            let cov_chol = linalg::spd_cholesky(linalg::symmetrize(chol.inverse()))?.unpack();
            let draw = linalg::sample_mvn_cov_chol(&mean, &cov_chol, rng);
            return Ok((
                Value::Vector(draw),
                ProposalDescriptor::GaussianVector { mean, cov_chol },
            ));
        }
        if coord == self.nu_coord() {
            // ν | · ~ IG((ε + n(T−p))/2, (ε + l)/2).
            let eps = real::<T>(config.epsilon);
            let l = cache.residual_sum(&top.gamma, &self.data.wtw_sum);
            let shape = (eps + real::<T>((n * m) as f64)) / two;
            let scale = (eps + l) / two;
            if scale <= T::zero() {
                return Err(Error::ConditionalUndefined("nu scale".into()));
            }
            let draw = dist::sample_inverse_gamma(shape, scale, rng)?;
            return Ok((
                Value::Scalar(draw),
                ProposalDescriptor::InverseGamma { shape, scale },
            ));
        }
        Err(Error::InvalidConfig(format!("unknown coordinate {coord}")))
    }

    fn data_ref(&self, coord: CoordinateId) -> Option<usize> {
        (coord.0 < self.n()).then_some(coord.0)
    }
}
