//! Radon-Nikodym weight processes for the pricing measures.
//!
//! Both kernels are products `Z_t = N_1 * ... * N_t` of per-step factors
//! built from the realized centered return `x_t = y_t - r` and the
//! conditional cumulants `K(sigma_t)`, `K(2 sigma_t)`, which are replaced by
//! plug-in values from a volatility forecast.
//!
//! * Minimal martingale measure (`Mmm`):
//!   `N_t = 1 + (e^K1 - 1)(e^x - e^K1) / (e^{2 K1} - e^K2)`. The factor can
//!   be negative for large positive returns.
//! * Mean-correcting measure (`Mc`): `N_t = f(eps_hat + rho) / f(eps_hat)`
//!   for the standard normal density `f`, with `eps_hat = x / sigma_hat` and
//!   `rho = K1 / sigma_hat`. Always positive; accumulated in log space.

use serde::{Deserialize, Serialize};

use crate::error::{ArsvError, Result};
use crate::filters::VolForecastSeries;
use crate::model::{gaussian_cumulant, MarketPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Minimal martingale measure.
    Mmm,
    /// Mean-correcting martingale measure.
    Mc,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Mmm => "mmm",
            Measure::Mc => "mc",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = ArsvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmm" => Ok(Measure::Mmm),
            "mc" => Ok(Measure::Mc),
            _ => Err(ArsvError::Config(format!(
                "unknown measure `{s}` (expected mmm or mc)"
            ))),
        }
    }
}

/// Conditional cumulants for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCumulants {
    pub sigma_hat: f64,
    /// `K(sigma_t)`.
    pub k1: f64,
    /// `K(2 sigma_t)`.
    pub k2: f64,
}

impl StepCumulants {
    /// Gaussian plug-in: `K(sigma) ~ sigma_hat^2 / 2`, `K(2 sigma) ~ 2 sigma_hat^2`.
    #[inline]
    pub fn gaussian_plugin(sigma_hat: f64) -> Self {
        StepCumulants {
            sigma_hat,
            k1: gaussian_cumulant(sigma_hat),
            k2: gaussian_cumulant(2.0 * sigma_hat),
        }
    }
}

/// Minimal-martingale-measure factor for one step.
#[inline]
pub fn mmm_factor(x: f64, c: &StepCumulants) -> Result<f64> {
    // e^{2K1} - e^{K2} = -e^{2K1} expm1(K2 - 2K1); e^x - e^{K1} = e^{K1} expm1(x - K1)
    let spread = (c.k2 - 2.0 * c.k1).exp_m1();
    if !(spread > 0.0) || !(c.sigma_hat > 0.0) {
        return Err(ArsvError::DegenerateVolatility {
            step: 0,
            sigma_hat: c.sigma_hat,
        });
    }
    Ok(1.0 - c.k1.exp_m1() * (x - c.k1).exp_m1() / (c.k1.exp() * spread))
}

/// Log of the mean-correcting factor, `-rho eps_hat - rho^2 / 2`.
#[inline]
pub fn mc_log_factor(x: f64, c: &StepCumulants) -> Result<f64> {
    if !(c.sigma_hat > 0.0) {
        return Err(ArsvError::DegenerateVolatility {
            step: 0,
            sigma_hat: c.sigma_hat,
        });
    }
    let rho = c.k1 / c.sigma_hat;
    let eps_hat = x / c.sigma_hat;
    Ok(-rho * eps_hat - 0.5 * rho * rho)
}

/// Per-path weights. `cumulative[t]` is `Z_t` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub measure: Measure,
    /// `N_1, ..., N_T`.
    pub factors: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// `log Z_t`, kept for the mean-correcting measure.
    pub log_cumulative: Option<Vec<f64>>,
    /// Some `Z_t <= 0` on this path.
    pub negative_flag: bool,
}

impl KernelWeights {
    pub fn horizon(&self) -> usize {
        self.factors.len()
    }

    /// `F_t = N_t * ... * N_T`; equals 1 for `from_step = T + 1`.
    pub fn tail_product(&self, from_step: usize) -> Result<f64> {
        let horizon = self.horizon();
        if from_step == 0 || from_step > horizon + 1 {
            return Err(ArsvError::InvalidInput(format!(
                "tail product start {from_step} outside 1..={}",
                horizon + 1
            )));
        }
        Ok(match &self.log_cumulative {
            Some(lz) => (lz[horizon] - lz[from_step - 1]).exp(),
            None => self.factors[from_step - 1..].iter().product(),
        })
    }

    pub fn terminal(&self) -> f64 {
        *self.cumulative.last().expect("Z_0 always present")
    }
}

fn check_lengths(path: &MarketPath, sigma_hat: &VolForecastSeries) -> Result<()> {
    if sigma_hat.len() < path.horizon() {
        return Err(ArsvError::InvalidInput(format!(
            "{} volatility forecasts for a path of {} steps",
            sigma_hat.len(),
            path.horizon()
        )));
    }
    Ok(())
}

fn with_step<T>(step: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        ArsvError::DegenerateVolatility { sigma_hat, .. } => {
            ArsvError::DegenerateVolatility { step, sigma_hat }
        }
        other => other,
    })
}

/// Minimal martingale measure weights along an observed path.
pub fn mmm_weights(path: &MarketPath, sigma_hat: &VolForecastSeries) -> Result<KernelWeights> {
    check_lengths(path, sigma_hat)?;
    let r = path.r;
    let mut factors = Vec::with_capacity(path.horizon());
    let mut cumulative = Vec::with_capacity(path.horizon() + 1);
    cumulative.push(1.0);
    let mut z = 1.0;
    let mut negative = false;
    for t in 0..path.horizon() {
        let c = StepCumulants::gaussian_plugin(sigma_hat.sigma_hat[t]);
        let n = with_step(t + 1, mmm_factor(path.y[t] - r, &c))?;
        z *= n;
        negative |= z <= 0.0;
        factors.push(n);
        cumulative.push(z);
    }
    Ok(KernelWeights {
        measure: Measure::Mmm,
        factors,
        cumulative,
        log_cumulative: None,
        negative_flag: negative,
    })
}

/// Mean-correcting measure weights along an observed path.
pub fn mc_weights(path: &MarketPath, sigma_hat: &VolForecastSeries) -> Result<KernelWeights> {
    check_lengths(path, sigma_hat)?;
    let r = path.r;
    let mut factors = Vec::with_capacity(path.horizon());
    let mut log_cumulative = Vec::with_capacity(path.horizon() + 1);
    log_cumulative.push(0.0);
    let mut lz = 0.0;
    for t in 0..path.horizon() {
        let c = StepCumulants::gaussian_plugin(sigma_hat.sigma_hat[t]);
        let ln = with_step(t + 1, mc_log_factor(path.y[t] - r, &c))?;
        lz += ln;
        factors.push(ln.exp());
        log_cumulative.push(lz);
    }
    Ok(KernelWeights {
        measure: Measure::Mc,
        factors,
        cumulative: log_cumulative.iter().map(|l| l.exp()).collect(),
        log_cumulative: Some(log_cumulative),
        negative_flag: false,
    })
}

pub fn kernel_weights(
    measure: Measure,
    path: &MarketPath,
    sigma_hat: &VolForecastSeries,
) -> Result<KernelWeights> {
    match measure {
        Measure::Mmm => mmm_weights(path, sigma_hat),
        Measure::Mc => mc_weights(path, sigma_hat),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{kalman_filter, run_filter, FilterKind};
    use crate::model::{simulate_paths, ModelParams};
    use approx::assert_relative_eq;

    fn direct_mmm(x: f64, sigma_hat: f64) -> f64 {
        let k1 = sigma_hat * sigma_hat / 2.0;
        let k2 = 2.0 * sigma_hat * sigma_hat;
        1.0 + (k1.exp() - 1.0) * (x.exp() - k1.exp()) / ((2.0 * k1).exp() - k2.exp())
    }

    #[test]
    fn zero_excess_return_is_neutral() {
        let c = StepCumulants::gaussian_plugin(0.03);
        assert_eq!(mmm_factor(c.k1, &c).unwrap(), 1.0);
    }

    #[test]
    fn mmm_matches_direct_formula_and_turns_negative() {
        let sigma_hat = 0.03;
        let c = StepCumulants::gaussian_plugin(sigma_hat);
        for eps in [-5.0, -1.0, 0.0, 2.0, 5.0] {
            let x = sigma_hat * eps;
            assert_relative_eq!(
                mmm_factor(x, &c).unwrap(),
                direct_mmm(x, sigma_hat),
                max_relative = 1e-8
            );
        }
        // a 5-sigma move keeps the factor positive, a huge one does not
        assert!(mmm_factor(0.15, &c).unwrap() > 0.0);
        let extreme = 2.0;
        let n = mmm_factor(extreme, &c).unwrap();
        assert!(n < 0.0);
        assert_relative_eq!(n, direct_mmm(extreme, sigma_hat), max_relative = 1e-8);
    }

    #[test]
    fn mc_factor_closed_form() {
        let c = StepCumulants::gaussian_plugin(0.03);
        let n = mc_log_factor(0.0, &c).unwrap().exp();
        assert_relative_eq!(n, (-(0.015f64.powi(2)) / 2.0).exp(), max_relative = 1e-15);
        assert!((n - 0.9998875).abs() < 1e-7);
        // vanishing price of risk
        let tiny = StepCumulants::gaussian_plugin(1e-9);
        assert!((mc_log_factor(1e-9, &tiny).unwrap()).abs() < 1e-9);
        // density ratio form
        let (x, s) = (0.021, 0.03);
        let c = StepCumulants::gaussian_plugin(s);
        let rho = s / 2.0;
        let e = x / s;
        let f = |u: f64| (-0.5 * u * u).exp();
        assert_relative_eq!(mc_log_factor(x, &c).unwrap().exp(), f(e + rho) / f(e), max_relative = 1e-14);
    }

    #[test]
    fn degenerate_volatility_rejected() {
        let c = StepCumulants::gaussian_plugin(0.0);
        assert!(matches!(mmm_factor(0.01, &c), Err(ArsvError::DegenerateVolatility { .. })));
        assert!(matches!(mc_log_factor(0.01, &c), Err(ArsvError::DegenerateVolatility { .. })));
    }

    #[test]
    fn cumulative_products() {
        let p = ModelParams::benchmark();
        let path = simulate_paths(&p, 100.0, 30, 1, 21, None).unwrap().remove(0);
        let fc = kalman_filter(&p, &path.s).unwrap();
        let w = mmm_weights(&path, &fc).unwrap();
        assert_eq!(w.cumulative[0], 1.0);
        for t in 1..=30 {
            assert_eq!(w.cumulative[t], w.cumulative[t - 1] * w.factors[t - 1]);
        }
        assert_relative_eq!(w.tail_product(1).unwrap(), w.terminal(), max_relative = 1e-13);
        assert_eq!(w.tail_product(31).unwrap(), 1.0);
        assert!(w.tail_product(0).is_err());

        let m = mc_weights(&path, &fc).unwrap();
        assert!(m.factors.iter().all(|n| *n > 0.0));
        assert!(!m.negative_flag);
        for t in 1..=30 {
            assert_relative_eq!(m.cumulative[t], m.cumulative[t - 1] * m.factors[t - 1], max_relative = 1e-12);
        }
        let split = m.tail_product(11).unwrap() * m.cumulative[10];
        assert_relative_eq!(split, m.terminal(), max_relative = 1e-12);
    }

    #[test]
    fn short_forecast_series_rejected() {
        let p = ModelParams::benchmark();
        let path = simulate_paths(&p, 100.0, 10, 1, 1, None).unwrap().remove(0);
        let fc = run_filter(FilterKind::Hlik, &p, &path.s[..5]).unwrap();
        assert!(mmm_weights(&path, &fc).is_err());
    }

    #[test]
    fn unit_mean_small_ensemble() {
        let p = ModelParams::benchmark();
        let paths = simulate_paths(&p, 100.0, 12, 20_000, 77, None).unwrap();
        for measure in [Measure::Mmm, Measure::Mc] {
            let z: Vec<f64> = paths
                .iter()
                .map(|path| {
                    let fc = kalman_filter(&p, &path.s).unwrap();
                    kernel_weights(measure, path, &fc).unwrap().terminal()
                })
                .collect();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((mean - 1.0).abs() < 4.0 * sd / n.sqrt(), "{measure:?}: mean {mean}, sd {sd}");
        }
    }
}
