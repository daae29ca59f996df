//! EM estimation of the per-sample scale shifts and the underlying spectrum.
//!
//! Each iteration computes the posterior of the synthesis coefficients under
//! the current shifts (E-step), re-estimates every `theta_n` by minimizing
//!
//! ```text
//! Q_n(theta) = log det C(theta) + w~_n^H C(theta)^{-1} w~_n + tr(C(theta)^{-1} Gamma_n)
//! ```
//!
//! (M-step), optionally re-estimates the spectrum from the shift-corrected
//! posterior means, and stops once the marginal log-likelihood increment
//! falls below `lambda`.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::posterior::{
    assemble_cy, posterior, posterior_mean, reconstruct, CovMode, ObservationCovariance,
};
use crate::prior::{
    CovarianceFunction, PriorBlockDiag, PriorModel, PriorSpectrum, WarpSequence, DEFAULT_RIDGE_EPS,
};
use crate::signal::welch_psd;
use crate::wavelet::{AtomBank, ScaleGrid, SynthesisCoeffs, WaveletSpec, C64};

/// M-step strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    /// Coarse scan of the bounds at `step`, then a bracketed root search on
    /// `Q'` around the best grid point, to `tol` in `theta`.
    GridRefine { step: f64, tol: f64 },
    /// One-dimensional quasi-Newton descent from the previous iterate with
    /// backtracking, projected onto the bounds.
    QuasiNewton { tol: f64, max_steps: usize },
}

impl Default for Solver {
    fn default() -> Self {
        Solver::GridRefine {
            step: 0.05,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub sigma2: f64,
    /// Stopping threshold on the log-likelihood increment.
    pub lambda: f64,
    /// Local window `N'`; values `>= N` select the dense computation.
    pub bandwidth: usize,
    pub max_iters: usize,
    pub theta_bounds: (f64, f64),
    pub ridge_eps: f64,
    pub solver: Solver,
    /// Re-estimate the spectrum after every M-step (spectrum-driven prior only).
    pub update_spectrum: bool,
}

impl EmConfig {
    pub fn new(sigma2: f64) -> Self {
        EmConfig {
            sigma2,
            lambda: 1e-2,
            bandwidth: 128,
            max_iters: 30,
            theta_bounds: (-3.0, 3.0),
            ridge_eps: DEFAULT_RIDGE_EPS,
            solver: Solver::default(),
            update_spectrum: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        let (lo, hi) = self.theta_bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "theta bounds [{lo}, {hi}] are empty"
            )));
        }
        if self.bandwidth < 2 || !self.bandwidth.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "bandwidth N' must be even and >= 2, got {}",
                self.bandwidth
            )));
        }
        if !(self.ridge_eps >= 0.0) {
            return Err(Error::Config("ridge_eps must be nonnegative".into()));
        }
        match self.solver {
            Solver::GridRefine { step, tol } if !(step > 0.0) || !(tol > 0.0) => Err(
                Error::Config("grid solver needs positive step and tolerance".into()),
            ),
            Solver::QuasiNewton { tol, max_steps } if !(tol > 0.0) || max_steps == 0 => Err(
                Error::Config("quasi-Newton solver needs positive tolerance and steps".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn mode(&self, len: usize) -> CovMode {
        if self.bandwidth >= len {
            CovMode::Dense
        } else {
            CovMode::Banded {
                bandwidth: self.bandwidth,
            }
        }
    }
}

/// `-1/2 [N log 2 pi + log det C_y + y^T C_y^{-1} y]` for the given prior.
pub fn log_likelihood(
    y: &[f64],
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
    sigma2: f64,
) -> Result<f64> {
    assemble_cy(prior, atoms, sigma2, CovMode::Dense)?.log_likelihood(y)
}

/// Log-likelihood from an assembled covariance; a banded covariance whose
/// truncation is not positive definite falls back to the dense assembly.
fn loglik_from(
    y: &[f64],
    cy: &ObservationCovariance,
    prior: &PriorBlockDiag,
    atoms: &AtomBank,
) -> Result<f64> {
    match cy.log_likelihood(y) {
        Err(Error::NotPositiveDefinite { .. }) if cy.mode() != CovMode::Dense => {
            log::warn!("band-truncated C_y is indefinite; evaluating the likelihood densely");
            log_likelihood(y, prior, atoms, cy.sigma2())
        }
        other => other,
    }
}

/// Cholesky-based `(log det C, C^{-1})` of a Hermitian positive-definite block.
fn hermitian_inverse(c: &DMatrix<C64>) -> Result<(f64, DMatrix<C64>)> {
    let m = c.nrows();
    let chol = c.clone().cholesky().ok_or(Error::NotPositiveDefinite {
        index: 0,
        pivot: (0..m).map(|i| c[(i, i)].re).fold(f64::INFINITY, f64::min),
    })?;
    let logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.re.ln())
            .sum::<f64>();
    let inv = chol.inverse();
    Ok((logdet, (&inv + inv.adjoint()) * C64::new(0.5, 0.0)))
}

/// `Re tr(A B)`.
fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let m = a.nrows();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// `P_n = w~ w~^H + Gamma_n`, the posterior second moment.
fn second_moment(w: &[C64], gamma: &DMatrix<C64>) -> DMatrix<C64> {
    let m = w.len();
    DMatrix::from_fn(m, m, |i, j| w[i] * w[j].conj() + gamma[(i, j)])
}

fn q_from_moment(theta: f64, p: &DMatrix<C64>, model: &PriorModel) -> Result<f64> {
    let c = model.block(theta)?;
    let (logdet, inv) = hermitian_inverse(&c)?;
    Ok(logdet + trace_product(&inv, p))
}

/// `Q` with an indefinite or vanishing block mapped to `+inf`.
fn q_or_inf(theta: f64, p: &DMatrix<C64>, model: &PriorModel) -> Result<f64> {
    match q_from_moment(theta, p, model) {
        Err(Error::NotPositiveDefinite { .. }) => Ok(f64::INFINITY),
        other => other,
    }
}

fn q_and_gradient_from_moment(
    theta: f64,
    p: &DMatrix<C64>,
    model: &PriorModel,
) -> Result<(f64, f64)> {
    let (c, dc) = model.block_with_derivative(theta)?;
    let (logdet, inv) = hermitian_inverse(&c)?;
    let a = &inv * &dc;
    let grad = trace_product(&a, &DMatrix::identity(c.nrows(), c.nrows()))
        - trace_product(&(&a * &inv), p);
    Ok((logdet + trace_product(&inv, p), grad))
}

/// `Q(theta)` for one time index.
pub fn q_objective(theta: f64, w: &[C64], gamma: &DMatrix<C64>, model: &PriorModel) -> Result<f64> {
    check_moment_dims(w, gamma, model)?;
    q_from_moment(theta, &second_moment(w, gamma), model)
}

/// `dQ/dtheta = tr(C^{-1} C') - tr(C^{-1} C' C^{-1} P)`.
pub fn q_gradient(theta: f64, w: &[C64], gamma: &DMatrix<C64>, model: &PriorModel) -> Result<f64> {
    check_moment_dims(w, gamma, model)?;
    Ok(q_and_gradient_from_moment(theta, &second_moment(w, gamma), model)?.1)
}

fn check_moment_dims(w: &[C64], gamma: &DMatrix<C64>, model: &PriorModel) -> Result<()> {
    let m = model.grid.len();
    if w.len() != m || gamma.nrows() != m || gamma.ncols() != m {
        return Err(Error::Dimension(format!(
            "posterior moments have size {} / {}x{}, grid has {} scales",
            w.len(),
            gamma.nrows(),
            gamma.ncols(),
            m
        )));
    }
    Ok(())
}

/// Precomputed `(theta_j, log det C_j, C_j^{-1})` on the coarse grid, shared by
/// every time index within an M-step.
struct QGrid {
    thetas: Vec<f64>,
    logdets: Vec<f64>,
    inverses: Vec<DMatrix<C64>>,
}

impl QGrid {
    fn new(model: &PriorModel, bounds: (f64, f64), step: f64) -> Result<QGrid> {
        let (lo, hi) = bounds;
        let count = ((hi - lo) / step).floor() as usize + 1;
        let mut thetas: Vec<f64> = (0..count).map(|j| lo + j as f64 * step).collect();
        if hi - thetas[count - 1] > 1e-12 {
            thetas.push(hi);
        }
        let mut logdets = Vec::with_capacity(thetas.len());
        let mut inverses = Vec::with_capacity(thetas.len());
        for &t in &thetas {
            // blocks that vanish numerically far from the prior's support are excluded
            match hermitian_inverse(&model.block(t)?) {
                Ok((ld, inv)) => {
                    logdets.push(ld);
                    inverses.push(inv);
                }
                Err(Error::NotPositiveDefinite { .. }) => {
                    logdets.push(f64::INFINITY);
                    inverses.push(DMatrix::zeros(0, 0));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(QGrid {
            thetas,
            logdets,
            inverses,
        })
    }

    fn values(&self, p: &DMatrix<C64>) -> Vec<f64> {
        self.logdets
            .iter()
            .zip(&self.inverses)
            .map(|(ld, inv)| {
                if ld.is_finite() {
                    ld + trace_product(inv, p)
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }
}

/// Root of `Q'` inside `[a, b]` when it changes sign there (Illinois
/// regula falsi), otherwise the better endpoint.
fn refine_bracket(p: &DMatrix<C64>, model: &PriorModel, a: f64, b: f64, tol: f64) -> Result<f64> {
    let ends = (
        q_and_gradient_from_moment(a, p, model),
        q_and_gradient_from_moment(b, p, model),
    );
    let (Ok((qa, mut ga)), Ok((qb, mut gb))) = ends else {
        return Ok(if q_or_inf(a, p, model)? <= q_or_inf(b, p, model)? {
            a
        } else {
            b
        });
    };
    if !(ga < 0.0 && gb > 0.0) {
        return Ok(if qa <= qb { a } else { b });
    }
    let (mut lo, mut hi) = (a, b);
    let mut side = 0i32;
    for _ in 0..100 {
        let mut x = (lo * gb - hi * ga) / (gb - ga);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let Ok((_, gx)) = q_and_gradient_from_moment(x, p, model) else {
            return Ok(if qa <= qb { a } else { b });
        };
        if !gx.is_finite() {
            return Err(Error::NonFinite("Q gradient".into()));
        }
        if gx > 0.0 {
            hi = x;
            gb = gx;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        } else {
            lo = x;
            ga = gx;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        }
        if hi - lo < tol || gx == 0.0 {
            return Ok(x);
        }
    }
    Ok(0.5 * (lo + hi))
}

fn quasi_newton(
    p: &DMatrix<C64>,
    model: &PriorModel,
    start: f64,
    bounds: (f64, f64),
    tol: f64,
    max_steps: usize,
) -> Result<f64> {
    let clamp = |t: f64| t.clamp(bounds.0, bounds.1);
    let mut x = clamp(start);
    let Ok((mut q, mut g)) = q_and_gradient_from_moment(x, p, model) else {
        return Ok(x);
    };
    let mut curvature = 1.0;
    for _ in 0..max_steps {
        if g.abs() < tol {
            break;
        }
        let mut step = -g / curvature;
        let mut accepted = None;
        for _ in 0..40 {
            let xn = clamp(x + step);
            if xn == x {
                break;
            }
            let Ok((qn, gn)) = q_and_gradient_from_moment(xn, p, model) else {
                step *= 0.5;
                continue;
            };
            if qn.is_finite() && qn <= q + 1e-4 * g * (xn - x) {
                accepted = Some((xn, qn, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, qn, gn)) = accepted else { break };
        let (dx, dg) = (xn - x, gn - g);
        if dx * dg > 0.0 {
            curvature = dg / dx;
        }
        let small = (xn - x).abs() < tol;
        x = xn;
        q = qn;
        g = gn;
        if small {
            break;
        }
    }
    Ok(x)
}

/// Per-sample M-step solver; keeps `theta_prev` unless a candidate lowers `Q`
/// by more than roundoff.
fn minimize_moment(
    p: &DMatrix<C64>,
    model: &PriorModel,
    cfg: &EmConfig,
    grid: Option<&QGrid>,
    theta_prev: f64,
) -> Result<f64> {
    let bounds = cfg.theta_bounds;
    let candidate = match (cfg.solver, grid) {
        (Solver::GridRefine { tol, .. }, Some(g)) => {
            let values = g.values(p);
            let best =
                argmin(&values).ok_or_else(|| Error::NonFinite("Q on the M-step grid".into()))?;
            let a = g.thetas[best.saturating_sub(1)];
            let b = g.thetas[(best + 1).min(g.thetas.len() - 1)];
            let mut t = refine_bracket(p, model, a, b, tol)?;
            if q_or_inf(t, p, model)? > values[best] {
                t = g.thetas[best];
            }
            t
        }
        (Solver::GridRefine { step, tol }, None) => {
            let g = QGrid::new(model, bounds, step)?;
            return minimize_moment(
                p,
                model,
                &EmConfig {
                    solver: Solver::GridRefine { step, tol },
                    ..cfg.clone()
                },
                Some(&g),
                theta_prev,
            );
        }
        (Solver::QuasiNewton { tol, max_steps }, _) => {
            quasi_newton(p, model, theta_prev, bounds, tol, max_steps)?
        }
    };
    let prev = theta_prev.clamp(bounds.0, bounds.1);
    let q_prev = q_or_inf(prev, p, model)?;
    let q_new = q_or_inf(candidate, p, model)?;
    // differences at the roundoff level do not move theta
    if q_new.is_finite() && q_new < q_prev - 1e-12 * q_prev.abs().max(1.0) {
        Ok(candidate)
    } else if q_prev.is_finite() || q_new.is_finite() {
        Ok(theta_prev)
    } else {
        Err(Error::NonFinite("Q at every candidate".into()))
    }
}

fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// `argmin_theta Q(theta)` for one time index.
pub fn minimize_q(
    w: &[C64],
    gamma: &DMatrix<C64>,
    model: &PriorModel,
    cfg: &EmConfig,
    theta_prev: f64,
) -> Result<f64> {
    check_moment_dims(w, gamma, model)?;
    minimize_moment(&second_moment(w, gamma), model, cfg, None, theta_prev)
}

/// `(1 / 2N) sum_n Re tr(C_n Psi^H Psi)`: the mean square of a signal drawn
/// from the prior.
pub fn implied_variance(prior: &PriorBlockDiag, gram: &DMatrix<C64>) -> f64 {
    let n = prior.len() as f64;
    prior
        .blocks()
        .iter()
        .map(|c| trace_product(c, gram))
        .sum::<f64>()
        / (2.0 * n)
}

/// Spectrum rescaled so that the prior built from it at `thetas` has mean
/// square `target`.
fn normalize_spectrum(
    shape: PriorSpectrum,
    wavelet: &WaveletSpec,
    grid: &ScaleGrid,
    ridge_eps: f64,
    thetas: &WarpSequence,
    gram: &DMatrix<C64>,
    target: f64,
) -> Result<PriorSpectrum> {
    let model = PriorModel::new(
        CovarianceFunction::spectrum(wavelet.clone(), shape.clone(), grid.q())?,
        grid.clone(),
    )
    .with_ridge(ridge_eps);
    let prior = model.build_prior(thetas)?;
    let implied = implied_variance(&prior, gram);
    if !(implied > 0.0) || !(target > 0.0) {
        return Err(Error::InvalidInput(
            "cannot normalize a spectrum with zero implied variance".into(),
        ));
    }
    let factor = target / implied;
    Ok(shape.scaled(factor))
}

fn coefficient_energy(means: &SynthesisCoeffs) -> DMatrix<f64> {
    means.map(|v| v.norm_sqr())
}

/// Shift-corrected time average of a coefficient energy map, returned as
/// values at the frequencies `xi0 q^{-s_m}` (ascending frequency).
fn corrected_scale_profile(energy: &DMatrix<f64>, thetas: &[f64], grid: &ScaleGrid) -> Vec<f64> {
    let s = grid.scales();
    let m = s.len();
    let mut sum = vec![0.0; m];
    let mut count = vec![0usize; m];
    for (t, &theta) in thetas.iter().enumerate() {
        // the coefficient at scale s_m behaves like the stationary one at s_m + theta
        for j in 0..m {
            let u = s[j] - theta;
            if u < s[0] || u > s[m - 1] {
                continue;
            }
            let v = if m == 1 {
                energy[(t, 0)]
            } else {
                let i = (s.partition_point(|x| *x <= u)).clamp(1, m - 1) - 1;
                let frac = (u - s[i]) / (s[i + 1] - s[i]);
                energy[(t, i)] * (1.0 - frac) + energy[(t, i + 1)] * frac
            };
            sum[j] += v;
            count[j] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
        .rev()
        .collect()
}

/// Linear interpolation in log-frequency onto `freqs`; zero outside the nodes.
fn resample_log(node_freqs: &[f64], node_values: &[f64], freqs: &[f64]) -> Vec<f64> {
    let k = node_freqs.len();
    freqs
        .iter()
        .map(|&f| {
            if k == 1 {
                return if (f - node_freqs[0]).abs() <= 1e-12 * f {
                    node_values[0]
                } else {
                    0.0
                };
            }
            if f < node_freqs[0] || f > node_freqs[k - 1] {
                return 0.0;
            }
            let i = node_freqs.partition_point(|x| *x <= f).clamp(1, k - 1) - 1;
            let t = (f.ln() - node_freqs[i].ln()) / (node_freqs[i + 1].ln() - node_freqs[i].ln());
            node_values[i] * (1.0 - t) + node_values[i + 1] * t
        })
        .collect()
}

/// Spectrum re-estimated from posterior means: undo each sample's scale
/// shift, average over time, map scale `s` to `xi0 q^{-s}`, resample onto
/// `freqs`, and scale so the implied signal power equals `target`.
/// An all-zero estimate falls back to a flat spectrum with a warning.
#[allow(clippy::too_many_arguments)]
pub fn estimate_spectrum(
    means: &SynthesisCoeffs,
    thetas: &WarpSequence,
    grid: &ScaleGrid,
    wavelet: &WaveletSpec,
    freqs: &[f64],
    gram: &DMatrix<C64>,
    target: f64,
    ridge_eps: f64,
) -> Result<PriorSpectrum> {
    if means.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("posterior means".into()));
    }
    let energy = coefficient_energy(means);
    estimate_spectrum_from_energy(
        &energy, thetas, grid, wavelet, freqs, gram, target, ridge_eps,
    )
}

#[allow(clippy::too_many_arguments)]
fn estimate_spectrum_from_energy(
    energy: &DMatrix<f64>,
    thetas: &WarpSequence,
    grid: &ScaleGrid,
    wavelet: &WaveletSpec,
    freqs: &[f64],
    gram: &DMatrix<C64>,
    target: f64,
    ridge_eps: f64,
) -> Result<PriorSpectrum> {
    if energy.nrows() != thetas.len() || energy.ncols() != grid.len() {
        return Err(Error::Dimension(
            "coefficients do not match the warp sequence and grid".into(),
        ));
    }
    let profile = corrected_scale_profile(energy, thetas.thetas(), grid);
    let node_freqs: Vec<f64> = grid
        .scales()
        .iter()
        .rev()
        .map(|s| grid.frequency_of(wavelet.xi0, *s))
        .collect();
    let mut values = resample_log(&node_freqs, &profile, freqs);
    if values.iter().all(|v| *v <= 0.0) || !(target > 0.0) {
        log::warn!("spectrum estimate is degenerate; falling back to a flat spectrum");
        values = vec![1.0; freqs.len()];
    }
    let shape = PriorSpectrum::new(freqs.to_vec(), values)?;
    let target = if target > 0.0 { target } else { 1.0 };
    normalize_spectrum(shape, wavelet, grid, ridge_eps, thetas, gram, target)
}

/// Welch estimate (segment `N/8`, half overlap, Hann) minus the white-noise
/// floor `2 sigma2 / fs`, clamped at zero. Flat when nothing survives.
pub fn welch_initial_spectrum(y: &[f64], fs: f64, sigma2: f64) -> Result<PriorSpectrum> {
    let segment = (y.len() / 8).max(8).min(y.len());
    let (freqs, psd) = welch_psd(y, fs, segment, segment / 2)?;
    let floor = 2.0 * sigma2 / fs;
    let mut values: Vec<f64> = psd.iter().map(|p| (p - floor).max(0.0)).collect();
    if values.iter().all(|v| *v == 0.0) {
        log::warn!(
            "Welch estimate is below the noise floor everywhere; using a flat initial spectrum"
        );
        values = vec![1.0; freqs.len()];
    }
    PriorSpectrum::new(freqs, values)
}

/// Prior family for a run.
#[derive(Debug, Clone)]
pub enum PriorKind {
    /// Spectrum-driven covariance; `None` starts from the Welch estimate.
    Spectrum(Option<PriorSpectrum>),
    /// Fixed covariance function (sharp or tabulated); never re-estimated.
    Fixed(CovarianceFunction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub loglik: f64,
    pub thetas: Vec<f64>,
    pub spectrum: Option<PriorSpectrum>,
    pub seconds: f64,
    pub theta_rmse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    pub records: Vec<IterationRecord>,
}

impl EmTrace {
    pub fn logliks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loglik).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub means: SynthesisCoeffs,
    pub thetas: WarpSequence,
    /// Final spectrum for the spectrum-driven prior.
    pub spectrum: Option<PriorSpectrum>,
    pub f: CovarianceFunction,
    pub trace: EmTrace,
    pub converged: bool,
    pub iterations: usize,
    /// Per-iteration M-step check: `Q(new) <= Q(old)` held at every sample.
    pub m_step_descent: bool,
}

/// Everything needed to continue a run: current parameters and history.
#[derive(Debug, Clone)]
pub struct EmState {
    pub thetas: WarpSequence,
    pub f: CovarianceFunction,
    pub trace: EmTrace,
}

/// Problem definition shared by every iteration.
pub struct EmProblem<'a> {
    pub y: &'a [f64],
    pub atoms: &'a AtomBank,
    pub wavelet: &'a WaveletSpec,
    pub cfg: &'a EmConfig,
    /// Ground-truth shifts for the trace's RMSE column.
    pub reference: Option<&'a [f64]>,
}

impl<'a> EmProblem<'a> {
    fn model(&self, f: &CovarianceFunction) -> PriorModel {
        PriorModel::new(f.clone(), self.atoms.grid().clone()).with_ridge(self.cfg.ridge_eps)
    }

    fn rmse(&self, thetas: &[f64]) -> Option<f64> {
        self.reference.map(|r| {
            let s: f64 = r.iter().zip(thetas).map(|(a, b)| (a - b) * (a - b)).sum();
            (s / r.len() as f64).sqrt()
        })
    }

    /// Initial state: `theta = init` (zeros by default) and the prior of `kind`.
    pub fn initial_state(
        &self,
        init_thetas: Option<WarpSequence>,
        kind: PriorKind,
    ) -> Result<EmState> {
        self.cfg.validate()?;
        let n = self.y.len();
        if self.atoms.len() != n {
            return Err(Error::Dimension(format!(
                "signal has {n} samples, dictionary {}",
                self.atoms.len()
            )));
        }
        let thetas = init_thetas.unwrap_or_else(|| WarpSequence::zeros(n));
        if thetas.len() != n {
            return Err(Error::Dimension(
                "initial warp length differs from the signal".into(),
            ));
        }
        let grid = self.atoms.grid();
        let f = match kind {
            PriorKind::Fixed(f) => f,
            PriorKind::Spectrum(init) => {
                let shape = match init {
                    Some(s) => s,
                    None => welch_initial_spectrum(self.y, self.atoms.fs(), self.cfg.sigma2)?,
                };
                // no measurable signal power: scale the prior to the noise level
                let target = match signal_power_estimate(self.y, self.cfg.sigma2) {
                    t if t > 0.0 => t,
                    _ => self.cfg.sigma2,
                };
                let spectrum = normalize_spectrum(
                    shape,
                    self.wavelet,
                    grid,
                    self.cfg.ridge_eps,
                    &thetas,
                    &self.atoms.gram(),
                    target,
                )?;
                CovarianceFunction::spectrum(self.wavelet.clone(), spectrum, grid.q())?
            }
        };
        Ok(EmState {
            thetas,
            f,
            trace: EmTrace::default(),
        })
    }

    /// Runs EM from `state` until the stopping rule holds or the iteration
    /// cap is reached. A state carrying a trace resumes after its last record.
    pub fn run(&self, mut state: EmState) -> Result<EmResult> {
        let cfg = self.cfg;
        cfg.validate()?;
        let y = self.y;
        let atoms = self.atoms;
        let n = y.len();
        let mode = cfg.mode(n);
        let gram = atoms.gram();
        let clock = Instant::now();

        let mut model = self.model(&state.f);
        let mut prior = model.build_prior(&state.thetas)?;
        let mut cy = assemble_cy(&prior, atoms, cfg.sigma2, mode)?;
        let mut loglik = loglik_from(y, &cy, &prior, atoms)?;
        if state.trace.records.is_empty() {
            state.trace.records.push(IterationRecord {
                iter: 0,
                loglik,
                thetas: state.thetas.thetas().to_vec(),
                spectrum: spectrum_of(&state.f),
                seconds: clock.elapsed().as_secs_f64(),
                theta_rmse: self.rmse(state.thetas.thetas()),
            });
        }
        let start_iter = state.trace.records.last().map(|r| r.iter).unwrap_or(0);
        let mut converged = false;
        let mut descent = true;
        let mut k = start_iter;
        while k < cfg.max_iters {
            k += 1;
            let step = (|| -> Result<()> {
                let post = posterior(y, &prior, atoms, &cy, true)?;

                let qgrid = match cfg.solver {
                    Solver::GridRefine { step, .. } => {
                        Some(QGrid::new(&model, cfg.theta_bounds, step)?)
                    }
                    Solver::QuasiNewton { .. } => None,
                };
                let mut next = Vec::with_capacity(n);
                for t in 0..n {
                    let w: Vec<C64> = post.means.row(t).iter().cloned().collect();
                    let p = second_moment(&w, &post.cov_blocks[t]);
                    let old = state.thetas.thetas()[t];
                    let new = minimize_moment(&p, &model, cfg, qgrid.as_ref(), old)?;
                    if q_or_inf(new, &p, &model)? > q_or_inf(old, &p, &model)? {
                        descent = false;
                    }
                    next.push(new);
                }
                let thetas = WarpSequence::new(next)?;

                if let (CovarianceFunction::Spectrum(c), true) = (&state.f, cfg.update_spectrum) {
                    let rec = reconstruct(&post.means, atoms)?;
                    let target = rec.iter().map(|v| v * v).sum::<f64>() / n as f64;
                    let spectrum = estimate_spectrum_from_energy(
                        &coefficient_energy(&post.means),
                        &thetas,
                        atoms.grid(),
                        self.wavelet,
                        c.spectrum().freqs(),
                        &gram,
                        target,
                        cfg.ridge_eps,
                    )?;
                    state.f = CovarianceFunction::spectrum(
                        self.wavelet.clone(),
                        spectrum,
                        atoms.grid().q(),
                    )?;
                }
                state.thetas = thetas;
                // rebuilt from (thetas, f) alone so that a resumed run is bitwise identical
                model = self.model(&state.f);
                prior = model.build_prior(&state.thetas)?;
                cy = assemble_cy(&prior, atoms, cfg.sigma2, mode)?;
                Ok(())
            })();
            step.map_err(|e| e.at_iteration(k))?;

            let new_loglik = loglik_from(y, &cy, &prior, atoms).map_err(|e| e.at_iteration(k))?;
            state.trace.records.push(IterationRecord {
                iter: k,
                loglik: new_loglik,
                thetas: state.thetas.thetas().to_vec(),
                spectrum: spectrum_of(&state.f),
                seconds: clock.elapsed().as_secs_f64(),
                theta_rmse: self.rmse(state.thetas.thetas()),
            });
            log::info!(
                "iteration {k}: log-likelihood {new_loglik:.6} (increment {:.3e})",
                new_loglik - loglik
            );
            let increment = new_loglik - loglik;
            loglik = new_loglik;
            if increment < cfg.lambda {
                converged = true;
                break;
            }
        }

        let means = posterior_mean(y, &prior, atoms, &cy)?;
        Ok(EmResult {
            means,
            spectrum: spectrum_of(&state.f),
            f: state.f,
            thetas: state.thetas,
            iterations: k,
            trace: state.trace,
            converged,
            m_step_descent: descent,
        })
    }
}

fn spectrum_of(f: &CovarianceFunction) -> Option<PriorSpectrum> {
    match f {
        CovarianceFunction::Spectrum(c) => Some(c.spectrum().clone()),
        _ => None,
    }
}

/// Smallest noise variance used for inference, relative to the mean power of
/// the observation. Below it the local windows of `C_y` are numerically
/// singular for band-limited priors.
pub const NOISE_FLOOR_REL: f64 = 1e-10;

/// `max(sigma2, NOISE_FLOOR_REL * mean(y^2))`; an all-zero observation is
/// measured against unit power.
pub fn floored_noise_variance(y: &[f64], sigma2: f64) -> f64 {
    let power = y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64;
    let reference = if power > 0.0 { power } else { 1.0 };
    sigma2.max(NOISE_FLOOR_REL * reference)
}

/// `max(var(y) - sigma2, 1e-3 var(y))`: the clean-signal power implied by
/// the noise level.
pub fn signal_power_estimate(y: &[f64], sigma2: f64) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (var - sigma2).max(1e-3 * var)
}

/// Sharp prior centred on the scale of the spectrum's peak frequency, with
/// its gain set so the implied signal power at `thetas` equals `target`.
pub fn calibrated_sharp_prior(
    spectrum: &PriorSpectrum,
    wavelet: &WaveletSpec,
    atoms: &AtomBank,
    thetas: &WarpSequence,
    sigma_s: f64,
    target: f64,
) -> Result<CovarianceFunction> {
    let grid = atoms.grid();
    let nu1 = spectrum.peak_frequency();
    if !(nu1 > 0.0) {
        return Err(Error::InvalidInput("spectrum has no positive peak".into()));
    }
    let varsigma = crate::prior::sharp_center_for_tone(grid.q(), wavelet.xi0, nu1);
    let unit = CovarianceFunction::sharp(varsigma, sigma_s, 1.0)?;
    let implied = implied_variance(
        &PriorModel::new(unit.clone(), grid.clone()).build_prior(thetas)?,
        &atoms.gram(),
    );
    if !(implied > 0.0) {
        return Err(Error::InvalidInput(
            "sharp prior carries no energy on the scale grid at the estimated shifts".into(),
        ));
    }
    unit.rescaled(target / implied)
}

/// Posterior means at fixed shifts under an arbitrary covariance function.
pub fn means_under(
    y: &[f64],
    f: &CovarianceFunction,
    atoms: &AtomBank,
    thetas: &WarpSequence,
    cfg: &EmConfig,
) -> Result<SynthesisCoeffs> {
    let prior = PriorModel::new(f.clone(), atoms.grid().clone())
        .with_ridge(cfg.ridge_eps)
        .build_prior(thetas)?;
    let cy = assemble_cy(&prior, atoms, cfg.sigma2, cfg.mode(y.len()))?;
    posterior_mean(y, &prior, atoms, &cy)
}

/// White-noise variance from the mean Welch level inside `[lo, hi]` Hz,
/// a band the user declares free of signal.
pub fn noise_variance_from_band(y: &[f64], fs: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo >= 0.0 && hi > lo && hi <= fs / 2.0) {
        return Err(Error::Config(format!(
            "noise-floor band [{lo}, {hi}] is outside (0, fs/2]"
        )));
    }
    let segment = (y.len() / 8).max(8).min(y.len());
    let (freqs, psd) = welch_psd(y, fs, segment, segment / 2)?;
    let inside: Vec<f64> = freqs
        .iter()
        .zip(&psd)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(_, p)| *p)
        .collect();
    if inside.is_empty() {
        return Err(Error::Config(format!(
            "noise-floor band [{lo}, {hi}] contains no analysis bin"
        )));
    }
    let level = inside.iter().sum::<f64>() / inside.len() as f64;
    Ok(level * fs / 2.0)
}

/// Convenience wrapper: builds the problem and runs it from the default start.
pub fn estimate_warp_and_spectrum(
    y: &[f64],
    atoms: &AtomBank,
    wavelet: &WaveletSpec,
    cfg: &EmConfig,
    init_thetas: Option<WarpSequence>,
    kind: PriorKind,
) -> Result<EmResult> {
    let problem = EmProblem {
        y,
        atoms,
        wavelet,
        cfg,
        reference: None,
    };
    let state = problem.initial_state(init_thetas, kind)?;
    problem.run(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::SharpCovariance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spectrum_model() -> PriorModel {
        let wavelet = WaveletSpec::log_gaussian(16.0, 0.4).unwrap();
        let spectrum = PriorSpectrum::two_hann(64.0, 64).unwrap();
        let grid = ScaleGrid::uniform(2.0, 0.0, 1.5, 4).unwrap();
        PriorModel::new(
            CovarianceFunction::spectrum(wavelet, spectrum, 2.0).unwrap(),
            grid,
        )
    }

    fn random_moments(m: usize, seed: u64) -> (Vec<C64>, DMatrix<C64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<C64> = (0..m)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let b = DMatrix::from_fn(m, m, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        (w, &b * b.adjoint() * C64::new(0.1, 0.0))
    }

    #[test]
    fn q_reduces_to_log_det() {
        let model = spectrum_model();
        let w = vec![C64::new(0.0, 0.0); 4];
        let q = q_objective(0.3, &w, &DMatrix::zeros(4, 4), &model).unwrap();
        let (ld, _) = hermitian_inverse(&model.block(0.3).unwrap()).unwrap();
        assert_eq!(q, ld);
    }

    #[test]
    fn q_matches_diagonal_closed_form() {
        let grid = ScaleGrid::uniform(2.0, -1.0, 1.0, 5).unwrap();
        let model = PriorModel::new(
            CovarianceFunction::sharp(0.2, 0.8, 1.5).unwrap(),
            grid.clone(),
        );
        let (w, g) = random_moments(5, 4);
        let theta = 0.15;
        let sharp = SharpCovariance::new(0.2, 0.8, 1.5).unwrap();
        let expect: f64 = (0..5)
            .map(|m| {
                let u = (grid.scales()[m] + theta - sharp.varsigma) / sharp.sigma_s;
                let c = sharp.gain * (-u * u).exp();
                c.ln() + (w[m].norm_sqr() + g[(m, m)].re) / c
            })
            .sum();
        let got = q_objective(theta, &w, &g, &model).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn q_gradient_matches_finite_differences() {
        let model = spectrum_model();
        for seed in 0..5 {
            let (w, g) = random_moments(4, seed);
            let theta = -0.4 + 0.2 * seed as f64;
            let h = 1e-5;
            let fd = (q_objective(theta + h, &w, &g, &model).unwrap()
                - q_objective(theta - h, &w, &g, &model).unwrap())
                / (2.0 * h);
            let an = q_gradient(theta, &w, &g, &model).unwrap();
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-8), "{fd} vs {an}");
        }
    }

    #[test]
    fn minimizer_beats_random_probes() {
        let model = spectrum_model();
        let cfg = EmConfig::new(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..3 {
            let (w, g) = random_moments(4, 20 + seed);
            let t = minimize_q(&w, &g, &model, &cfg, 0.0).unwrap();
            let qt = q_objective(t, &w, &g, &model).unwrap();
            for probe in [-3.0, 3.0]
                .into_iter()
                .chain((0..100).map(|_| rng.random_range(-3.0..3.0)))
            {
                assert!(qt <= q_objective(probe, &w, &g, &model).unwrap() + 1e-9);
            }
        }
    }

    #[test]
    fn flat_q_keeps_previous_theta() {
        // constant f: C(theta) and hence Q do not depend on theta
        let grid = ScaleGrid::uniform(2.0, 0.5, 0.5, 1).unwrap();
        let table = crate::prior::TabulatedCovariance::new(
            vec![-10.0, 10.0],
            DMatrix::from_element(2, 2, C64::new(1.0, 0.0)),
        )
        .unwrap();
        let model = PriorModel::new(CovarianceFunction::Tabulated(table), grid);
        let (w, g) = random_moments(1, 3);
        let cfg = EmConfig::new(0.1);
        assert_eq!(minimize_q(&w, &g, &model, &cfg, 0.7).unwrap(), 0.7);
        let qn = EmConfig {
            solver: Solver::QuasiNewton {
                tol: 1e-8,
                max_steps: 50,
            },
            ..cfg
        };
        assert_eq!(minimize_q(&w, &g, &model, &qn, 0.7).unwrap(), 0.7);
    }

    #[test]
    fn sharp_minimizer_lands_on_center() {
        // energy only at scale s_m: Q is smallest when s_m + theta = varsigma
        let grid = ScaleGrid::uniform(2.0, 0.0, 2.0, 9).unwrap();
        let varsigma = 1.3;
        let model = PriorModel::new(
            CovarianceFunction::sharp(varsigma, 0.05, 1.0).unwrap(),
            grid.clone(),
        );
        let mut w = vec![C64::new(0.0, 0.0); 9];
        w[4] = C64::new(1.0, 0.0);
        let g = DMatrix::identity(9, 9) * C64::new(1e-6, 0.0);
        let cfg = EmConfig::new(0.1);
        let t = minimize_q(&w, &g, &model, &cfg, 0.0).unwrap();
        // dense oracle
        let mut best = (f64::INFINITY, 0.0);
        let mut x = -3.0;
        while x <= 3.0 {
            let q = q_or_inf(x, &second_moment(&w, &g), &model).unwrap();
            if q < best.0 {
                best = (q, x);
            }
            x += 1e-4;
        }
        assert!((t - best.1).abs() < 0.05, "{t} vs {}", best.1);
        assert!(q_or_inf(t, &second_moment(&w, &g), &model).unwrap() <= best.0 + 1e-9);
    }

    #[test]
    fn corrected_profile_identity_without_shift() {
        let grid = ScaleGrid::uniform(2.0, 0.0, 2.0, 3).unwrap();
        let means = DMatrix::from_fn(4, 3, |t, m| C64::new((t + m) as f64, 0.0));
        let prof = corrected_scale_profile(&coefficient_energy(&means), &[0.0; 4], &grid);
        for m in 0..3 {
            let avg = (0..4).map(|t| ((t + m) as f64).powi(2)).sum::<f64>() / 4.0;
            assert!((prof[2 - m] - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_energy_gives_flat_spectrum() {
        let wavelet = WaveletSpec::log_gaussian(16.0, 0.4).unwrap();
        let grid = ScaleGrid::uniform(2.0, 0.0, 2.0, 5).unwrap();
        let atoms = AtomBank::new(&wavelet, &grid, 32, 64.0).unwrap();
        let means = DMatrix::from_element(32, 5, C64::new(0.5, 0.5));
        let freqs: Vec<f64> = (4..=16).map(|k| k as f64).collect();
        let s = estimate_spectrum(
            &means,
            &WarpSequence::zeros(32),
            &grid,
            &wavelet,
            &freqs,
            &atoms.gram(),
            2.0,
            DEFAULT_RIDGE_EPS,
        )
        .unwrap();
        let v = s.values();
        assert!(v.iter().all(|x| (x - v[0]).abs() < 1e-12 * v[0]));
        let zero = DMatrix::zeros(32, 5);
        let fallback = estimate_spectrum(
            &zero,
            &WarpSequence::zeros(32),
            &grid,
            &wavelet,
            &freqs,
            &atoms.gram(),
            2.0,
            1e-10,
        )
        .unwrap();
        assert!(fallback.values().iter().all(|x| *x > 0.0));
    }
}
