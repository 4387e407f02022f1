//! Predictable volatility forecasts from observed prices.
//!
//! Two filters are provided. The Kalman filter works on the linear state
//! space form `l_t = log|y_t - r| = L_t + xi_t`, `L_t = log sigma_t`, with
//! `xi_t` treated as Gaussian with mean [`MU_XI`] and variance `pi^2 / 8`.
//! The h-likelihood filter alternates the AR(1) prediction of `b_t` with a
//! one-dimensional convex update.
//!
//! Both run as step-wise state machines ([`VolFilter`]) so that hedging
//! sub-simulations can continue filtering from the state reached on the
//! observed path.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ArsvError, Result};
use crate::model::ModelParams;

/// Mean of `log|eps|` for a standard normal `eps`.
pub const MU_XI: f64 = -0.63518;

/// Variance of `log|eps|` for a standard normal `eps`.
pub const VAR_XI: f64 = PI * PI / 8.0;

pub const DEFAULT_ABS_RETURN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Kalman,
    Hlik,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Kalman => "kalman",
            FilterKind::Hlik => "hlik",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = ArsvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kalman" => Ok(FilterKind::Kalman),
            "hlik" => Ok(FilterKind::Hlik),
            _ => Err(ArsvError::Config(format!(
                "unknown filter `{s}` (expected kalman or hlik)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConstants {
    pub mu_xi: f64,
    pub var_xi: f64,
    /// Stationary mean of `L_t = log sigma_t`, `gamma / (2 (1 - phi))`.
    pub alpha_k: f64,
    pub phi: f64,
    /// Variance of `eta_t = w_t / 2`.
    pub var_eta: f64,
}

impl KalmanConstants {
    pub fn from_params(params: &ModelParams) -> Self {
        KalmanConstants {
            mu_xi: MU_XI,
            var_xi: VAR_XI,
            alpha_k: params.gamma / (2.0 * (1.0 - params.phi)),
            phi: params.phi,
            var_eta: params.sigma_w * params.sigma_w / 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    /// Observation noise variance; `pi^2 / 8` for the Gaussian approximation.
    pub obs_noise_var: f64,
    /// Floor applied to `|y_t - r|` before taking the log.
    pub abs_return_floor: f64,
    /// Prior variance of `L_0`; the stationary `sigma_b^2 / 4` when `None`.
    pub init_var: Option<f64>,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            obs_noise_var: VAR_XI,
            abs_return_floor: DEFAULT_ABS_RETURN_FLOOR,
            init_var: None,
        }
    }
}

/// Kalman filter on `L_t = log sigma_t`. The state holds the filtered
/// mean and variance of `L_t` given observations up to `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanFilter {
    consts: KalmanConstants,
    obs_var: f64,
    floor: f64,
    mean: f64,
    var: f64,
    clamped: usize,
}

impl KalmanFilter {
    pub fn new(params: &ModelParams, config: KalmanConfig) -> Result<Self> {
        params.validate()?;
        if !(config.obs_noise_var >= 0.0) || !(config.abs_return_floor > 0.0) {
            return Err(ArsvError::InvalidInput(
                "Kalman observation variance must be >= 0 and the floor > 0".into(),
            ));
        }
        let consts = KalmanConstants::from_params(params);
        let var = config
            .init_var
            .unwrap_or(params.var_log_variance() / 4.0);
        Ok(KalmanFilter {
            consts,
            obs_var: config.obs_noise_var,
            floor: config.abs_return_floor,
            mean: consts.alpha_k,
            var,
            clamped: 0,
        })
    }

    pub fn constants(&self) -> &KalmanConstants {
        &self.consts
    }

    /// Mean and variance of `L_{t+1}` given observations up to `t`.
    pub fn predicted(&self) -> (f64, f64) {
        let c = &self.consts;
        (
            c.alpha_k + c.phi * (self.mean - c.alpha_k),
            c.phi * c.phi * self.var + c.var_eta,
        )
    }

    /// `exp(l_{t+1|t} - mu_xi)`, the predictable volatility for the next step.
    pub fn forecast_sigma(&self) -> f64 {
        self.predicted().0.exp()
    }

    pub fn observe(&mut self, centered_return: f64) {
        let mut a = centered_return.abs();
        if !(a >= self.floor) {
            a = self.floor;
            self.clamped += 1;
        }
        let l = a.ln();
        let (pm, pv) = self.predicted();
        let s = pv + self.obs_var;
        let gain = if s > 0.0 { pv / s } else { 0.0 };
        self.mean = pm + gain * (l - self.consts.mu_xi - pm);
        self.var = (1.0 - gain) * pv;
    }

    /// Filtered log-variance estimate `2 E[L_t | F_t]`.
    pub fn log_variance(&self) -> f64 {
        2.0 * self.mean
    }

    /// Restart from a log-variance point estimate with the given state variance.
    pub fn reset_to(&mut self, log_variance: f64, var: f64) {
        self.mean = 0.5 * log_variance;
        self.var = var;
    }

    pub fn state_var(&self) -> f64 {
        self.var
    }

    pub fn clamped(&self) -> usize {
        self.clamped
    }
}

pub const HLIK_TOL: f64 = 1e-10;
pub const HLIK_MAX_ITER: usize = 100;
const HLIK_BRACKET: f64 = 40.0;

/// Minimizer of `z^2 exp(-b) + b + (b - b_pred)^2 / sigma_w^2`.
///
/// Safeguarded Newton on the derivative, bracketed on
/// `[b_pred - 40, b_pred + 40]` with bisection fallback. With
/// `sigma_w = 0` the prior is exact and `b_pred` is returned.
pub fn hlik_update(params: &ModelParams, z: f64, b_pred: f64) -> Result<f64> {
    hlik_update_with(params.sigma_w, z, b_pred, HLIK_TOL, HLIK_MAX_ITER)
}

pub fn hlik_update_with(
    sigma_w: f64,
    z: f64,
    b_pred: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    if !(z.is_finite() && b_pred.is_finite()) {
        return Err(ArsvError::InvalidInput(format!(
            "h-likelihood update needs finite inputs (z = {z}, b_pred = {b_pred})"
        )));
    }
    if sigma_w == 0.0 {
        return Ok(b_pred);
    }
    let z2 = z * z;
    let prec = 2.0 / (sigma_w * sigma_w);
    let grad = |b: f64| -z2 * (-b).exp() + 1.0 + prec * (b - b_pred);
    let curv = |b: f64| z2 * (-b).exp() + prec;

    let mut lo = b_pred - HLIK_BRACKET;
    let mut hi = b_pred + HLIK_BRACKET;
    // the bracket only fails for extreme inputs; widen until it holds
    while grad(lo) > 0.0 {
        lo -= HLIK_BRACKET;
    }
    while grad(hi) < 0.0 {
        hi += HLIK_BRACKET;
    }

    // one more Newton step once converged takes the residual to round-off
    let polish = |b: f64, g: f64| {
        let next = b - g / curv(b);
        if grad(next).abs() < g.abs() {
            next
        } else {
            b
        }
    };

    let mut b = b_pred.clamp(lo, hi);
    let mut g = grad(b);
    for _ in 0..max_iter {
        if g.abs() < tol {
            return Ok(polish(b, g));
        }
        if g < 0.0 {
            lo = b;
        } else {
            hi = b;
        }
        let step = b - g / curv(b);
        let next = if step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
        if next == b {
            // no representable progress left
            return Ok(b);
        }
        b = next;
        g = grad(b);
    }
    if g.abs() < tol {
        return Ok(polish(b, g));
    }
    Err(ArsvError::NonConvergence {
        iterations: max_iter,
        last: b,
        residual: g.abs(),
    })
}

/// h-likelihood predict/update filter on `b_t`. The state holds the
/// updated log-variance `b_{tu}` (`b_0 = gamma / (1 - phi)` initially).
#[derive(Debug, Clone, PartialEq)]
pub struct HlikFilter {
    params: ModelParams,
    b_upd: f64,
}

impl HlikFilter {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(HlikFilter {
            params: *params,
            b_upd: params.mean_log_variance(),
        })
    }

    pub fn predicted_log_variance(&self) -> f64 {
        self.params.predict_log_variance(self.b_upd)
    }

    pub fn forecast_sigma(&self) -> f64 {
        (0.5 * self.predicted_log_variance()).exp()
    }

    pub fn observe(&mut self, centered_return: f64) -> Result<()> {
        self.b_upd = hlik_update(&self.params, centered_return, self.predicted_log_variance())?;
        Ok(())
    }

    pub fn log_variance(&self) -> f64 {
        self.b_upd
    }

    pub fn reset_to(&mut self, log_variance: f64) {
        self.b_upd = log_variance;
    }
}

/// A running volatility filter of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum VolFilter {
    Kalman(KalmanFilter),
    Hlik(HlikFilter),
}

impl VolFilter {
    pub fn new(kind: FilterKind, params: &ModelParams) -> Result<Self> {
        Ok(match kind {
            FilterKind::Kalman => VolFilter::Kalman(KalmanFilter::new(params, KalmanConfig::default())?),
            FilterKind::Hlik => VolFilter::Hlik(HlikFilter::new(params)?),
        })
    }

    /// A filter positioned at a given log-variance estimate. The Kalman
    /// state variance is set to the steady-state filtered variance.
    pub fn at_log_variance(kind: FilterKind, params: &ModelParams, log_variance: f64) -> Result<Self> {
        let mut f = VolFilter::new(kind, params)?;
        match &mut f {
            VolFilter::Kalman(k) => {
                let var = kalman_steady_state_var(params, VAR_XI);
                k.reset_to(log_variance, var);
            }
            VolFilter::Hlik(h) => h.reset_to(log_variance),
        }
        Ok(f)
    }

    pub fn kind(&self) -> FilterKind {
        match self {
            VolFilter::Kalman(_) => FilterKind::Kalman,
            VolFilter::Hlik(_) => FilterKind::Hlik,
        }
    }

    /// Predictable volatility estimate for the next step.
    #[inline]
    pub fn forecast_sigma(&self) -> f64 {
        match self {
            VolFilter::Kalman(k) => k.forecast_sigma(),
            VolFilter::Hlik(h) => h.forecast_sigma(),
        }
    }

    #[inline]
    pub fn observe(&mut self, centered_return: f64) -> Result<()> {
        match self {
            VolFilter::Kalman(k) => {
                k.observe(centered_return);
                Ok(())
            }
            VolFilter::Hlik(h) => h.observe(centered_return),
        }
    }

    /// Current filtered log-variance estimate of `b_t`.
    pub fn log_variance(&self) -> f64 {
        match self {
            VolFilter::Kalman(k) => k.log_variance(),
            VolFilter::Hlik(h) => h.log_variance(),
        }
    }
}

/// Fixed point of the filtered-variance Riccati recursion.
pub fn kalman_steady_state_var(params: &ModelParams, obs_var: f64) -> f64 {
    let phi2 = params.phi * params.phi;
    let q = params.sigma_w * params.sigma_w / 4.0;
    let mut p = params.var_log_variance() / 4.0;
    for _ in 0..10_000 {
        let pv = phi2 * p + q;
        let s = pv + obs_var;
        let next = if s > 0.0 { pv * obs_var / s } else { 0.0 };
        if (next - p).abs() <= 1e-15 * p.max(1e-300) {
            return next;
        }
        p = next;
    }
    p
}

/// Filter-specific state recorded alongside each forecast.
#[derive(Debug, Clone, PartialEq)]
pub enum ForecastAux {
    /// Predicted mean and variance of `L_t` behind each forecast.
    Kalman { pred_mean: Vec<f64>, pred_var: Vec<f64> },
    /// Predicted `b_{tp}` behind each forecast and updated `b_{tu}` per observation.
    Hlik { b_pred: Vec<f64>, b_upd: Vec<f64> },
}

/// Forecasts `sigma_hat_1, ..., sigma_hat_{n+1}` for a price series
/// `S_0, ..., S_n`: entry `t - 1` only uses prices up to `S_{t-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolForecastSeries {
    pub sigma_hat: Vec<f64>,
    pub method: FilterKind,
    pub aux: ForecastAux,
    /// Observations clamped at the `|y - r|` floor (Kalman only).
    pub clamped: usize,
}

impl VolForecastSeries {
    pub fn len(&self) -> usize {
        self.sigma_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_hat.is_empty()
    }
}

fn centered_returns(params: &ModelParams, prices: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = prices.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(ArsvError::InvalidInput(format!(
            "prices must be positive and finite, found {bad}"
        )));
    }
    Ok(prices
        .windows(2)
        .map(|w| (w[1] / w[0]).ln() - params.r)
        .collect())
}

pub fn kalman_filter(params: &ModelParams, prices: &[f64]) -> Result<VolForecastSeries> {
    kalman_filter_with(params, prices, KalmanConfig::default())
}

pub fn kalman_filter_with(
    params: &ModelParams,
    prices: &[f64],
    config: KalmanConfig,
) -> Result<VolForecastSeries> {
    let z = centered_returns(params, prices)?;
    let mut f = KalmanFilter::new(params, config)?;
    let mut sigma_hat = Vec::with_capacity(prices.len());
    let mut pred_mean = Vec::with_capacity(prices.len());
    let mut pred_var = Vec::with_capacity(prices.len());
    for t in 0..prices.len() {
        let (m, v) = f.predicted();
        sigma_hat.push(m.exp());
        pred_mean.push(m);
        pred_var.push(v);
        if let Some(&zt) = z.get(t) {
            f.observe(zt);
        }
    }
    Ok(VolForecastSeries {
        sigma_hat,
        method: FilterKind::Kalman,
        aux: ForecastAux::Kalman { pred_mean, pred_var },
        clamped: f.clamped(),
    })
}

pub fn hlik_filter(params: &ModelParams, prices: &[f64]) -> Result<VolForecastSeries> {
    let z = centered_returns(params, prices)?;
    let mut f = HlikFilter::new(params)?;
    let mut sigma_hat = Vec::with_capacity(prices.len());
    let mut b_pred = Vec::with_capacity(prices.len());
    let mut b_upd = Vec::with_capacity(z.len());
    for t in 0..prices.len() {
        let bp = f.predicted_log_variance();
        b_pred.push(bp);
        sigma_hat.push((0.5 * bp).exp());
        if let Some(&zt) = z.get(t) {
            f.observe(zt)?;
            b_upd.push(f.log_variance());
        }
    }
    Ok(VolForecastSeries {
        sigma_hat,
        method: FilterKind::Hlik,
        aux: ForecastAux::Hlik { b_pred, b_upd },
        clamped: 0,
    })
}

pub fn run_filter(kind: FilterKind, params: &ModelParams, prices: &[f64]) -> Result<VolForecastSeries> {
    match kind {
        FilterKind::Kalman => kalman_filter(params, prices),
        FilterKind::Hlik => hlik_filter(params, prices),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate_paths;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bisection_root(sigma_w: f64, z: f64, bp: f64) -> f64 {
        let prec = 2.0 / (sigma_w * sigma_w);
        let g = |b: f64| -z * z * (-b).exp() + 1.0 + prec * (b - bp);
        let (mut lo, mut hi) = (bp - 200.0, bp + 200.0);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn kalman_constants() {
        let c = KalmanConstants::from_params(&ModelParams::benchmark());
        assert_eq!(c.var_xi, PI * PI / 8.0);
        assert_eq!(c.var_eta, 0.675 * 0.675 / 4.0);
        assert!((c.alpha_k + 4.105).abs() < 1e-12);
        assert_eq!(c.mu_xi, -0.63518);
    }

    #[test]
    fn hlik_update_zero_return_closed_form() {
        let p = ModelParams::benchmark();
        let b = hlik_update(&p, 0.0, -7.0).unwrap();
        assert_relative_eq!(b, -7.0 - 0.675 * 0.675 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn hlik_update_small_sigma_w_limit() {
        for sw in [1e-2, 1e-3, 1e-4] {
            let b = hlik_update_with(sw, 0.03, -7.0, HLIK_TOL, HLIK_MAX_ITER).unwrap();
            assert!((b + 7.0).abs() < 10.0 * sw * sw, "sigma_w {sw}: {b}");
        }
        let p = ModelParams::new(0.0, -0.7, 0.9, 0.0).unwrap();
        assert_eq!(hlik_update(&p, 0.05, -7.0).unwrap(), -7.0);
    }

    #[test]
    fn hlik_update_first_order_condition() {
        let p = ModelParams::benchmark();
        let (z, bp) = (0.03, -7.0);
        let b = hlik_update(&p, z, bp).unwrap();
        let g = -z * z * (-b).exp() + 1.0 + 2.0 / (p.sigma_w * p.sigma_w) * (b - bp);
        assert!(g.abs() < 1e-10);
        assert!((b - bisection_root(p.sigma_w, z, bp)).abs() < 1e-8);
    }

    #[test]
    fn hlik_update_reports_nonconvergence() {
        let err = hlik_update_with(0.675, 5.0, -9.0, 1e-300, 3).unwrap_err();
        match err {
            ArsvError::NonConvergence { iterations, last, .. } => {
                assert_eq!(iterations, 3);
                assert!(last.is_finite());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_prior_only_series() {
        let p = ModelParams::benchmark();
        for kind in [FilterKind::Kalman, FilterKind::Hlik] {
            assert!(run_filter(kind, &p, &[]).unwrap().is_empty());
            let one = run_filter(kind, &p, &[100.0]).unwrap();
            assert_eq!(one.len(), 1);
            let prior = (p.gamma / (2.0 * (1.0 - p.phi))).exp();
            assert_relative_eq!(one.sigma_hat[0], prior, max_relative = 1e-12);
        }
    }

    #[test]
    fn constant_state_converges_to_stationary_level() {
        let p = ModelParams::new(0.0, -0.8, 0.9, 0.0).unwrap();
        let path = simulate_paths(&p, 100.0, 500, 1, 4, None).unwrap().remove(0);
        let target = (p.gamma / (2.0 * (1.0 - p.phi))).exp();
        for kind in [FilterKind::Kalman, FilterKind::Hlik] {
            let fc = run_filter(kind, &p, &path.s).unwrap();
            assert_relative_eq!(*fc.sigma_hat.last().unwrap(), target, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_noise_tracking_is_exact() {
        // sigma_w = 0 and noiseless observations of the state: one update pins
        // the state and every later forecast is exact
        let p = ModelParams::new(0.0, -0.8, 0.9, 0.0).unwrap();
        let level: f64 = -3.7;
        let mut f = KalmanFilter::new(
            &p,
            KalmanConfig {
                obs_noise_var: 0.0,
                init_var: Some(1.0),
                ..KalmanConfig::default()
            },
        )
        .unwrap();
        let alpha = f.constants().alpha_k;
        let mut truth = level;
        f.observe((truth + MU_XI).exp());
        for _ in 0..5 {
            truth = alpha + p.phi * (truth - alpha);
            assert_relative_eq!(f.predicted().0, truth, max_relative = 1e-12);
            f.observe((truth + MU_XI).exp());
            assert_relative_eq!(f.log_variance(), 2.0 * truth, max_relative = 1e-12);
        }
    }

    #[test]
    fn kalman_variance_converges() {
        let p = ModelParams::benchmark();
        let path = simulate_paths(&p, 100.0, 300, 1, 8, None).unwrap().remove(0);
        let fc = kalman_filter(&p, &path.s).unwrap();
        let ForecastAux::Kalman { pred_var, .. } = &fc.aux else {
            panic!()
        };
        assert!(pred_var.iter().all(|&v| v > 0.0));
        let fixed = kalman_steady_state_var(&p, VAR_XI);
        let pred_fixed = p.phi * p.phi * fixed + p.sigma_w * p.sigma_w / 4.0;
        assert_relative_eq!(*pred_var.last().unwrap(), pred_fixed, max_relative = 1e-10);
    }

    #[test]
    fn zero_return_is_clamped() {
        let p = ModelParams::new(0.0, -0.8, 0.9, 0.5).unwrap();
        let fc = kalman_filter(&p, &[100.0, 100.0, 101.0]).unwrap();
        assert_eq!(fc.clamped, 1);
        assert!(fc.sigma_hat.iter().all(|s| *s > 0.0 && s.is_finite()));
    }

    #[test]
    fn step_filter_matches_series() {
        let p = ModelParams::benchmark();
        let path = simulate_paths(&p, 100.0, 50, 1, 2, None).unwrap().remove(0);
        for kind in [FilterKind::Kalman, FilterKind::Hlik] {
            let fc = run_filter(kind, &p, &path.s).unwrap();
            let mut f = VolFilter::new(kind, &p).unwrap();
            for (t, z) in path.centered_returns(p.r).iter().enumerate() {
                assert_relative_eq!(f.forecast_sigma(), fc.sigma_hat[t], max_relative = 1e-13);
                f.observe(*z).unwrap();
            }
        }
    }

    proptest! {
        #[test]
        fn prefix_invariance(seed in 0u64..1000, cut in 1usize..60) {
            let p = ModelParams::benchmark();
            let path = simulate_paths(&p, 100.0, 60, 1, seed, None).unwrap().remove(0);
            for kind in [FilterKind::Kalman, FilterKind::Hlik] {
                let full = run_filter(kind, &p, &path.s).unwrap();
                let part = run_filter(kind, &p, &path.s[..cut]).unwrap();
                prop_assert_eq!(&part.sigma_hat[..], &full.sigma_hat[..cut]);
                prop_assert!(full.sigma_hat.iter().all(|s| *s > 0.0));
            }
        }

        #[test]
        fn hlik_update_matches_bisection(z in -0.3f64..0.3, bp in -12.0f64..-2.0, sw in 0.05f64..2.0) {
            let b = hlik_update_with(sw, z, bp, HLIK_TOL, HLIK_MAX_ITER).unwrap();
            let g = -z * z * (-b).exp() + 1.0 + 2.0 / (sw * sw) * (b - bp);
            prop_assert!(g.abs() < 1e-10);
            prop_assert!((b - bisection_root(sw, z, bp)).abs() < 1e-8);
        }
    }
}
