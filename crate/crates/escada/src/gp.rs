//! Exact Gaussian-process regression with incremental Cholesky updates.
//!
//! The posterior kept here is the textbook one: given observations `y` at
//! inputs `A_n` with i.i.d. Gaussian noise of known variance `s2`,
//!
//! ```text
//! mu(x)   = m0 + k_n(x)^T (K_n + s2 I)^{-1} (y - m0)
//! var(x)  = k(x, x) - k_n(x)^T (K_n + s2 I)^{-1} k_n(x)
//! ```
//!
//! where `m0` is a constant prior mean (zero by default). The factor of
//! `K_n + s2 I` is extended by one rank per observation and rebuilt from
//! scratch every [`REFACTOR_INTERVAL`] updates as drift control.
//!
//! A state is an immutable value: updates consume it and return the
//! extended state, so concurrent readers are always safe.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Updates between full refactorizations of the Cholesky factor.
pub const REFACTOR_INTERVAL: usize = 256;

/// Predictive variances this far below zero are clamped; beyond is an error.
pub const VARIANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub kernel: KernelSpec,
    /// Observation noise variance, assumed known.
    pub noise_variance: f64,
    /// Constant prior mean; zero recovers the plain zero-mean posterior.
    #[serde(default)]
    pub prior_mean: f64,
}

impl GpConfig {
    pub fn new(kernel: KernelSpec, noise_variance: f64) -> Result<Self> {
        Self::with_prior_mean(kernel, noise_variance, 0.0)
    }

    pub fn with_prior_mean(kernel: KernelSpec, noise_variance: f64, prior_mean: f64) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::NonFinite { what: "noise variance", value: noise_variance });
        }
        if !prior_mean.is_finite() {
            return Err(Error::NonFinite { what: "prior mean", value: prior_mean });
        }
        Ok(Self { kernel, noise_variance, prior_mean })
    }
}

/// Versioned snapshot of a GP state; the factor is recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub version: u32,
    pub config: GpConfig,
    pub inputs: Vec<Vec<f64>>,
    pub outcomes: Vec<f64>,
}

/// Exact GP posterior state over the context-dose space.
#[derive(Debug, Clone)]
pub struct GpState {
    config: GpConfig,
    inputs: Vec<Vec<f64>>,
    outcomes: Vec<f64>,
    /// Ragged lower-triangular factor of `K_n + s2 I`; row `i` has `i + 1` entries.
    factor: Vec<Vec<f64>>,
    /// `L^{-1} (y - m0)`, extended alongside the factor.
    white: Vec<f64>,
    /// Predictive variances at the selected points, in selection order.
    variance_history: Vec<f64>,
    /// Running information gain `0.5 * sum log(1 + s^{-2} var_{n-1}(x_n))`.
    info_gain: f64,
    /// Bumped on every full refactorization; grid caches rebuild on change.
    epoch: u64,
    updates_since_refactor: usize,
}

impl GpState {
    pub fn new(config: GpConfig) -> Self {
        Self {
            config,
            inputs: Vec::new(),
            outcomes: Vec::new(),
            factor: Vec::new(),
            white: Vec::new(),
            variance_history: Vec::new(),
            info_gain: 0.0,
            epoch: 0,
            updates_since_refactor: 0,
        }
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub(crate) fn factor_row(&self, i: usize) -> &[f64] {
        &self.factor[i]
    }

    pub(crate) fn white(&self) -> &[f64] {
        &self.white
    }

    /// Running information gain of the observations ingested so far.
    pub fn info_gain(&self) -> f64 {
        self.info_gain
    }

    /// Predictive variances at the selected points, in selection order.
    pub fn variance_history(&self) -> &[f64] {
        &self.variance_history
    }

    /// Forward-substitute `L c = k_vec`.
    fn forward_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut c = vec![0.0; n];
        for i in 0..n {
            let row = &self.factor[i];
            let mut acc = rhs[i];
            for t in 0..i {
                acc -= row[t] * c[t];
            }
            c[i] = acc / row[i];
        }
        c
    }

    fn kernel_column(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inputs.iter().map(|xi| self.config.kernel.eval(xi, x)).collect()
    }

    /// Ingest one observation, returning the extended state.
    ///
    /// The factor is extended by one rank; a failing extension is retried
    /// once with jitter `1e-10 * signal_variance` on the new diagonal entry
    /// and surfaces as [`Error::Factorization`] if that also fails.
    pub fn update(mut self, x: &[f64], y: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::NonFinite { what: "outcome", value: y });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "input coordinate", value: f64::NAN });
        }
        let kxx = self.config.kernel.eval(x, x)?;
        let k_vec = self.kernel_column(x)?;
        let c = self.forward_solve(&k_vec);
        let csq: f64 = c.iter().map(|v| v * v).sum();

        let prior_var = (kxx - csq).max(0.0);
        let mut radicand = kxx + self.config.noise_variance - csq;
        if radicand <= 0.0 {
            radicand += 1e-10 * self.config.kernel.signal_variance;
            if radicand <= 0.0 {
                return Err(Error::Factorization { n: self.len() + 1 });
            }
        }
        let gamma = radicand.sqrt();

        let s2 = self.config.noise_variance;
        self.info_gain += 0.5 * (1.0 + prior_var / s2).ln();
        self.variance_history.push(prior_var);

        let wdot: f64 = c.iter().zip(&self.white).map(|(a, b)| a * b).sum();
        self.white.push((y - self.config.prior_mean - wdot) / gamma);

        let mut row = c;
        row.push(gamma);
        self.factor.push(row);
        self.inputs.push(x.to_vec());
        self.outcomes.push(y);

        self.updates_since_refactor += 1;
        if self.updates_since_refactor >= REFACTOR_INTERVAL {
            self.refactor()?;
        }
        Ok(self)
    }

    /// Rebuild the factor from scratch (drift control and snapshot load).
    fn refactor(&mut self) -> Result<()> {
        let n = self.len();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let k = self.config.kernel.eval(&self.inputs[i], &self.inputs[j])?;
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
            gram[(i, i)] += self.config.noise_variance;
        }
        let chol = match nalgebra::Cholesky::new(gram.clone()) {
            Some(c) => c,
            None => {
                for i in 0..n {
                    gram[(i, i)] += 1e-10 * self.config.kernel.signal_variance;
                }
                nalgebra::Cholesky::new(gram).ok_or(Error::Factorization { n })?
            }
        };
        let l = chol.l();
        self.factor = (0..n).map(|i| (0..=i).map(|j| l[(i, j)]).collect()).collect();
        let centered: Vec<f64> =
            self.outcomes.iter().map(|y| y - self.config.prior_mean).collect();
        self.white = self.forward_solve(&centered);
        self.epoch += 1;
        self.updates_since_refactor = 0;
        Ok(())
    }

    /// Posterior mean and variance at a point.
    ///
    /// The empty state returns the prior `(m0, k(x, x))`. Variances within
    /// [`VARIANCE_TOLERANCE`] below zero are clamped to zero; anything lower
    /// is a numerical failure.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let kxx = self.config.kernel.eval(x, x)?;
        if self.is_empty() {
            return Ok((self.config.prior_mean, kxx));
        }
        let k_vec = self.kernel_column(x)?;
        let c = self.forward_solve(&k_vec);
        let mean: f64 =
            self.config.prior_mean + c.iter().zip(&self.white).map(|(a, b)| a * b).sum::<f64>();
        let var = kxx - c.iter().map(|v| v * v).sum::<f64>();
        if var < -VARIANCE_TOLERANCE {
            return Err(Error::NumericalFailure { what: "posterior variance", value: var });
        }
        Ok((mean, var.max(0.0)))
    }

    /// One joint draw from the posterior at `points`, deterministic in `seed`.
    ///
    /// The posterior covariance of a grid is routinely rank-deficient (it is
    /// exactly singular at observed points as noise goes to zero), so the
    /// draw factors it by symmetric eigendecomposition, clamping eigenvalues
    /// within `-1e-8 * signal_variance` of zero and erroring below that.
    pub fn sample_on_grid(&self, points: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::DegenerateAdmissible { context: "empty sampling grid".into() });
        }
        let m = points.len();
        let mut mean = DVector::zeros(m);
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let k = self.config.kernel.eval(&points[i], &points[j])?;
                cov[(i, j)] = k;
                cov[(j, i)] = k;
            }
        }
        if !self.is_empty() {
            let cols: Vec<Vec<f64>> = points
                .iter()
                .map(|p| Ok(self.forward_solve(&self.kernel_column(p)?)))
                .collect::<Result<_>>()?;
            for i in 0..m {
                let wdot: f64 = cols[i].iter().zip(&self.white).map(|(a, b)| a * b).sum();
                mean[i] = self.config.prior_mean + wdot;
                for j in 0..=i {
                    let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                    cov[(i, j)] -= dot;
                    cov[(j, i)] = cov[(i, j)];
                }
            }
        } else {
            mean.fill(self.config.prior_mean);
        }
        sample_gaussian(&mean, cov, self.config.kernel.signal_variance, seed)
    }

    /// Serialize to a versioned snapshot (inputs, outcomes, config).
    pub fn to_snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            version: 1,
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            outcomes: self.outcomes.clone(),
        }
    }

    /// Rebuild a state from a snapshot by replaying the observations, which
    /// also reconstructs the factor and the information-gain history.
    pub fn from_snapshot(snapshot: GpSnapshot) -> Result<Self> {
        let mut state = Self::new(snapshot.config);
        for (x, y) in snapshot.inputs.iter().zip(&snapshot.outcomes) {
            state = state.update(x, *y)?;
        }
        Ok(state)
    }
}

/// Information gain from a history of predictive variances at the selected
/// points, `0.5 * sum log(1 + s^{-2} v_i)`, in selection order.
pub fn information_gain(noise_variance: f64, variance_history: &[f64]) -> f64 {
    variance_history.iter().map(|v| 0.5 * (1.0 + v.max(0.0) / noise_variance).ln()).sum()
}

/// Draw `mean + Q sqrt(clamp(Lambda)) eps` with `eps` standard normal.
fn sample_gaussian(
    mean: &DVector<f64>,
    cov: DMatrix<f64>,
    scale: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let m = mean.len();
    let eigen = cov.symmetric_eigen();
    let floor = -1e-8 * scale;
    for &lambda in eigen.eigenvalues.iter() {
        if lambda < floor {
            return Err(Error::NumericalFailure { what: "posterior covariance eigenvalue", value: lambda });
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let eps: DVector<f64> =
        DVector::from_iterator(m, (0..m).map(|_| StandardNormal.sample(&mut rng)));
    let scaled = DVector::from_iterator(
        m,
        eigen.eigenvalues.iter().zip(eps.iter()).map(|(l, e)| l.max(0.0).sqrt() * e),
    );
    let sample = mean + eigen.eigenvectors * scaled;
    Ok(sample.iter().copied().collect())
}

/// Incremental batch predictions over a fixed set of points.
///
/// Maintains `V = L^{-1} K_cross` one row per observation, so per-round
/// means and variances over a whole evaluation grid cost `O(n m)` instead
/// of `O(n^2 m)`. Rebuilds itself when the underlying state refactors.
#[derive(Debug, Clone)]
pub struct GridPredictor {
    points: Vec<Vec<f64>>,
    prior_var: Vec<f64>,
    rows: Vec<Vec<f64>>,
    mean_acc: Vec<f64>,
    sq_acc: Vec<f64>,
    epoch: u64,
}

impl GridPredictor {
    pub fn new(gp: &GpState, points: Vec<Vec<f64>>) -> Result<Self> {
        let prior_var =
            points.iter().map(|p| gp.config().kernel.eval(p, p)).collect::<Result<Vec<_>>>()?;
        let m = points.len();
        let mut cache = Self {
            points,
            prior_var,
            rows: Vec::new(),
            mean_acc: vec![0.0; m],
            sq_acc: vec![0.0; m],
            epoch: gp.epoch(),
        };
        cache.sync(gp)?;
        Ok(cache)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Ingest factor rows added to `gp` since the last sync.
    pub fn sync(&mut self, gp: &GpState) -> Result<()> {
        if gp.epoch() != self.epoch || gp.len() < self.rows.len() {
            let m = self.points.len();
            self.rows.clear();
            self.mean_acc = vec![0.0; m];
            self.sq_acc = vec![0.0; m];
            self.epoch = gp.epoch();
        }
        let kernel = &gp.config().kernel;
        for i in self.rows.len()..gp.len() {
            let frow = gp.factor_row(i);
            let gamma = frow[i];
            let mut v = Vec::with_capacity(self.points.len());
            for (j, p) in self.points.iter().enumerate() {
                let mut acc = kernel.eval(&gp.inputs()[i], p)?;
                for (t, prev) in self.rows.iter().enumerate() {
                    acc -= frow[t] * prev[j];
                }
                v.push(acc / gamma);
            }
            let w = gp.white()[i];
            for (j, vj) in v.iter().enumerate() {
                self.mean_acc[j] += vj * w;
                self.sq_acc[j] += vj * vj;
            }
            self.rows.push(v);
        }
        Ok(())
    }

    /// Posterior means and variances at every cached point.
    pub fn means_vars(&self, gp: &GpState) -> Result<(Vec<f64>, Vec<f64>)> {
        debug_assert_eq!(self.rows.len(), gp.len(), "sync before querying");
        let m0 = gp.config().prior_mean;
        let means = self.mean_acc.iter().map(|a| m0 + a).collect();
        let vars = self
            .prior_var
            .iter()
            .zip(&self.sq_acc)
            .map(|(kxx, sq)| {
                let var = kxx - sq;
                if var < -VARIANCE_TOLERANCE {
                    Err(Error::NumericalFailure { what: "posterior variance", value: var })
                } else {
                    Ok(var.max(0.0))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((means, vars))
    }

    /// One joint posterior draw at a subset of the cached points.
    pub fn joint_sample(&self, gp: &GpState, indices: &[usize], seed: u64) -> Result<Vec<f64>> {
        if indices.is_empty() {
            return Err(Error::DegenerateAdmissible { context: "empty sampling subset".into() });
        }
        debug_assert_eq!(self.rows.len(), gp.len(), "sync before sampling");
        let s = indices.len();
        let kernel = &gp.config().kernel;
        let m0 = gp.config().prior_mean;
        let mean =
            DVector::from_iterator(s, indices.iter().map(|&j| m0 + self.mean_acc[j]));
        let mut cov = DMatrix::zeros(s, s);
        for (a, &ja) in indices.iter().enumerate() {
            for (b, &jb) in indices.iter().enumerate().take(a + 1) {
                let mut k = kernel.eval(&self.points[ja], &self.points[jb])?;
                for row in &self.rows {
                    k -= row[ja] * row[jb];
                }
                cov[(a, b)] = k;
                cov[(b, a)] = k;
            }
        }
        sample_gaussian(&mean, cov, kernel.signal_variance, seed)
    }
}
