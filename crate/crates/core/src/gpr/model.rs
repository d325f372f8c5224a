use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;

use super::kernel::{KernelConfig, KernelKind};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Jitter is raised tenfold per failed factorization up to this ceiling.
const MAX_JITTER: f64 = 1e-4;

/// Affine map between raw targets and the zero-mean, unit-variance scale the
/// GP is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { mean: 0.0, std: 1.0 };

    pub fn fit(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Standardization {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Optimizer and data-size settings for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GprSettings {
    pub kernel: KernelKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iterations: usize,
    /// Stop once the best loss improved by less than this over `early_stop_window` steps.
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
    /// Cap on training points per model (uniform subsample above it).
    pub max_points: usize,
    /// Cap on the points used while optimizing hyperparameters.
    pub opt_points: usize,
    pub jitter: f64,
    pub noise_init: f64,
    pub standardize: bool,
    /// Set from the run seed, not from config.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GprSettings {
    fn default() -> Self {
        GprSettings {
            kernel: KernelKind::Rq,
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            iterations: 200,
            early_stop_tol: 1e-4,
            early_stop_window: 10,
            max_points: 2000,
            opt_points: 400,
            jitter: 1e-6,
            noise_init: 0.1,
            standardize: true,
            seed: 0,
        }
    }
}

/// Exact GP regression of one velocity component on position.
#[derive(Debug, Clone)]
pub struct GprModel {
    kernel: KernelConfig,
    inputs: Vec<Point>,
    targets: Vec<f64>,
    scaling: Standardization,
    chol: Cholesky<f64, Dyn>,
    /// `(K + σₙ²I)⁻¹ y` on standardized targets.
    alpha: DVector<f64>,
    /// Jitter actually added to the diagonal.
    jitter: f64,
    loss_trace: Vec<f64>,
}

fn covariance(kernel: &KernelConfig, inputs: &[Point], diag: f64) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0 + diag;
        for j in 0..i {
            let v = kernel.eval_sq(inputs[i].dist2(inputs[j]));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factor `K + (σₙ² + jitter)I`, escalating jitter on failure.
fn factor(kernel: &KernelConfig, inputs: &[Point]) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = kernel.jitter.max(0.0);
    loop {
        let k = covariance(kernel, inputs, kernel.noise_variance + jitter);
        if let Some(c) = k.cholesky() {
            return Ok((c, jitter));
        }
        if jitter >= MAX_JITTER {
            return Err(Error::NotPositiveDefinite { jitter });
        }
        jitter = if jitter == 0.0 { 1e-6 } else { (jitter * 10.0).min(MAX_JITTER) };
    }
}

fn nlml_from(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let l = chol.l_dirty();
    let half_logdet: f64 = (0..y.len()).map(|i| l[(i, i)].ln()).sum();
    0.5 * y.dot(alpha) + half_logdet + 0.5 * n * LN_2PI
}

/// Negative log marginal likelihood and its gradient with respect to the
/// log-space hyperparameters (see [`KernelConfig::log_params`]).
pub fn nlml_and_grad(kernel: &KernelConfig, inputs: &[Point], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (chol, _) = factor(kernel, inputs)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let loss = nlml_from(&chol, &yv, &alpha);
    if !loss.is_finite() {
        return Err(Error::NonFinite("negative log marginal likelihood"));
    }
    let kinv = chol.inverse();
    let n = inputs.len();
    // dNLML/dθ = -½ tr((ααᵀ - K⁻¹) ∂K/∂θ)
    let mut g_sigma = 0.0;
    let mut g_alpha = 0.0;
    let mut trace_w = 0.0;
    for i in 0..n {
        let w_ii = alpha[i] * alpha[i] - kinv[(i, i)];
        trace_w += w_ii;
        for j in 0..i {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let (_, ds, da) = kernel.eval_sq_with_grad(inputs[i].dist2(inputs[j]));
            // off-diagonal terms appear twice
            g_sigma += 2.0 * w * ds;
            g_alpha += 2.0 * w * da;
        }
    }
    let g_noise = trace_w * kernel.noise_variance;
    let mut grad = vec![-0.5 * g_sigma];
    if kernel.kind == KernelKind::Rq {
        grad.push(-0.5 * g_alpha);
    }
    grad.push(-0.5 * g_noise);
    Ok((loss, grad))
}

pub fn nlml(kernel: &KernelConfig, inputs: &[Point], y: &[f64]) -> Result<f64> {
    let (chol, _) = factor(kernel, inputs)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    Ok(nlml_from(&chol, &yv, &alpha))
}

/// Median pairwise distance over an evenly spaced subsample of at most 200
/// points; falls back to 1 for degenerate inputs.
pub fn median_pairwise_distance(inputs: &[Point]) -> f64 {
    let m = inputs.len().min(200);
    if m < 2 {
        return 1.0;
    }
    let sub: Vec<Point> = (0..m).map(|i| inputs[i * inputs.len() / m]).collect();
    let mut d: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in 0..i {
            d.push(sub[i].dist(sub[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

/// Indices of a seeded uniform subsample of size `k` from `n`, in ascending order.
pub fn subsample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

impl GprModel {
    /// Conditions a GP with fixed hyperparameters on the data.
    pub fn new(kernel: KernelConfig, inputs: Vec<Point>, targets: Vec<f64>, standardize: bool) -> Result<Self> {
        kernel.validate()?;
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::Empty("GP training set"));
        }
        if targets.iter().any(|v| !v.is_finite()) || inputs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("GP training data"));
        }
        let scaling = if standardize {
            Standardization::fit(&targets)
        } else {
            Standardization::IDENTITY
        };
        let y = DVector::from_iterator(targets.len(), targets.iter().map(|&v| scaling.apply(v)));
        let (chol, jitter) = factor(&kernel, &inputs)?;
        let alpha = chol.solve(&y);
        Ok(GprModel {
            kernel,
            inputs,
            targets,
            scaling,
            chol,
            alpha,
            jitter,
            loss_trace: Vec::new(),
        })
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn inputs(&self) -> &[Point] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn standardization(&self) -> Standardization {
        self.scaling
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    fn standardized_targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.targets.len(), self.targets.iter().map(|&v| self.scaling.apply(v)))
    }

    /// Gaussian log evidence of the standardized targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        -nlml_from(&self.chol, &self.standardized_targets(), &self.alpha)
    }

    fn cross_cov(&self, q: Point) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|&p| self.kernel.eval_sq(p.dist2(q))))
    }

    /// Predictive mean and variance (noise included) in raw target units.
    pub fn predict(&self, q: Point) -> (f64, f64) {
        let ks = self.cross_cov(q);
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(ks.len()));
        let mut var = 1.0 - v.dot(&v) + self.kernel.noise_variance;
        if var < 0.0 {
            var = 0.0;
        }
        let s = self.scaling.std;
        (self.scaling.mean + s * mean, s * s * var)
    }

    /// Predictive mean only; O(n) per query.
    pub fn predict_mean(&self, q: Point) -> f64 {
        let mut acc = 0.0;
        for (p, a) in self.inputs.iter().zip(self.alpha.iter()) {
            acc += self.kernel.eval_sq(p.dist2(q)) * a;
        }
        self.scaling.mean + self.scaling.std * acc
    }
}

pub fn posterior_predict(model: &GprModel, query: Point) -> (f64, f64) {
    model.predict(query)
}

/// Fits hyperparameters by Adam on the negative log marginal likelihood, then
/// conditions on the (possibly subsampled) training set.
///
/// Optimization runs in log space from σ = median pairwise distance, α = 1,
/// σₙ² = `noise_init`, on at most `opt_points` points. The best iterate is
/// kept, so the final loss never exceeds the initial one.
pub fn fit_gpr(inputs: &[Point], targets: &[f64], s: &GprSettings) -> Result<GprModel> {
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: targets.len(),
        });
    }
    if inputs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "GP needs at least 2 training points, got {}",
            inputs.len()
        )));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP targets"));
    }
    let keep = subsample_indices(inputs.len(), s.max_points.max(2), s.seed);
    let inputs: Vec<Point> = keep.iter().map(|&i| inputs[i]).collect();
    let targets: Vec<f64> = keep.iter().map(|&i| targets[i]).collect();
    let scaling = if s.standardize {
        Standardization::fit(&targets)
    } else {
        Standardization::IDENTITY
    };

    let opt_idx = subsample_indices(inputs.len(), s.opt_points.max(2), s.seed.wrapping_add(1));
    let opt_x: Vec<Point> = opt_idx.iter().map(|&i| inputs[i]).collect();
    let opt_y: Vec<f64> = opt_idx.iter().map(|&i| scaling.apply(targets[i])).collect();

    let mut base = KernelConfig::new(s.kernel, median_pairwise_distance(&opt_x), 1.0, s.noise_init);
    base.jitter = s.jitter;
    let mut params = base.log_params();
    let (loss0, mut grad) = nlml_and_grad(&base, &opt_x, &opt_y)?;

    let mut trace = vec![loss0];
    let mut best = (loss0, params.clone());
    let mut best_history = vec![loss0];
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    for it in 1..=s.iterations {
        for k in 0..params.len() {
            m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * grad[k];
            v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * grad[k] * grad[k];
            let m_hat = m[k] / (1.0 - s.beta1.powi(it as i32));
            let v_hat = v[k] / (1.0 - s.beta2.powi(it as i32));
            params[k] -= s.learning_rate * m_hat / (v_hat.sqrt() + 1e-8);
        }
        let cfg = base.with_log_params(&params);
        let Ok((loss, g)) = nlml_and_grad(&cfg, &opt_x, &opt_y) else {
            break;
        };
        trace.push(loss);
        grad = g;
        if loss < best.0 {
            best = (loss, params.clone());
        }
        best_history.push(best.0);
        let w = s.early_stop_window;
        if w > 0 && best_history.len() > w {
            let then = best_history[best_history.len() - 1 - w];
            if then - best.0 < s.early_stop_tol {
                break;
            }
        }
    }

    let kernel = base.with_log_params(&best.1);
    let mut model = GprModel::new(kernel, inputs, targets, s.standardize)?;
    model.loss_trace = trace;
    Ok(model)
}

/// Serializable form: everything needed to rebuild the factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprModelRecord {
    pub kernel: KernelConfig,
    pub inputs: Vec<[f64; 2]>,
    pub targets: Vec<f64>,
    pub standardization: Standardization,
    pub loss_trace: Vec<f64>,
}

impl From<&GprModel> for GprModelRecord {
    fn from(m: &GprModel) -> Self {
        GprModelRecord {
            kernel: m.kernel,
            inputs: m.inputs.iter().map(|p| [p.x, p.y]).collect(),
            targets: m.targets.clone(),
            standardization: m.scaling,
            loss_trace: m.loss_trace.clone(),
        }
    }
}

impl GprModelRecord {
    pub fn into_model(self) -> Result<GprModel> {
        let inputs = self.inputs.iter().map(|&[x, y]| Point::new(x, y)).collect();
        let mut m = GprModel::new(self.kernel, inputs, self.targets, false)?;
        m.scaling = self.standardization;
        m.alpha = m.chol.solve(&m.standardized_targets());
        m.loss_trace = self.loss_trace;
        Ok(m)
    }
}
