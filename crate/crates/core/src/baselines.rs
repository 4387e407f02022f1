//! Comparison hedges: Black-Scholes delta with the stationary ARSV
//! volatility, and Duan's static delta under a pricing kernel.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ArsvError, Result};
use crate::filters::FilterKind;
use crate::kernels::Measure;
use crate::lrm::{check_rate, McConfig, OptionSpec, SubSimulation, VolSource};
use crate::model::{stationary_moments, ModelParams, STEPS_PER_YEAR};
use crate::rng::{domain, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsParams {
    /// Annualized volatility.
    pub vol: f64,
    /// Annualized continuously compounded rate.
    pub rate: f64,
    pub steps_per_year: f64,
}

impl BsParams {
    pub fn new(vol: f64, rate: f64) -> Result<Self> {
        if !(vol > 0.0 && vol.is_finite()) {
            return Err(ArsvError::ParameterDomain(format!(
                "Black-Scholes volatility must be positive, got {vol}"
            )));
        }
        Ok(BsParams {
            vol,
            rate,
            steps_per_year: STEPS_PER_YEAR,
        })
    }

    /// Stationary volatility and the risk-free rate of the model.
    pub fn from_model(params: &ModelParams) -> Result<Self> {
        let m = stationary_moments(params)?;
        BsParams::new(m.annualized_vol, params.r * STEPS_PER_YEAR)
    }

    fn years(&self, tau_steps: f64) -> f64 {
        tau_steps / self.steps_per_year
    }
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn d1_d2(s: f64, k: f64, tau: f64, bsp: &BsParams) -> (f64, f64) {
    let sd = bsp.vol * tau.sqrt();
    let d1 = ((s / k).ln() + (bsp.rate + 0.5 * bsp.vol * bsp.vol) * tau) / sd;
    (d1, d1 - sd)
}

/// Call delta. At expiry the delta is `1{s > k}`, so zero at the money.
pub fn bs_delta(s: f64, k: f64, tau_steps: f64, bsp: &BsParams) -> f64 {
    let tau = bsp.years(tau_steps);
    if tau <= 0.0 {
        return if s > k { 1.0 } else { 0.0 };
    }
    norm_cdf(d1_d2(s, k, tau, bsp).0)
}

pub fn bs_price(s: f64, k: f64, tau_steps: f64, bsp: &BsParams) -> f64 {
    let tau = bsp.years(tau_steps);
    if tau <= 0.0 {
        return (s - k).max(0.0);
    }
    let (d1, d2) = d1_d2(s, k, tau, bsp);
    s * norm_cdf(d1) - k * (-bsp.rate * tau).exp() * norm_cdf(d2)
}

pub fn bs_put(s: f64, k: f64, tau_steps: f64, bsp: &BsParams) -> f64 {
    let tau = bsp.years(tau_steps);
    if tau <= 0.0 {
        return (k - s).max(0.0);
    }
    let (d1, d2) = d1_d2(s, k, tau, bsp);
    k * (-bsp.rate * tau).exp() * norm_cdf(-d2) - s * norm_cdf(-d1)
}

/// Duan's static delta from a filtered log-variance state.
#[allow(clippy::too_many_arguments)]
pub fn duan_delta(
    option: &OptionSpec,
    t: usize,
    s_t: f64,
    b_state: f64,
    params: &ModelParams,
    measure: Measure,
    filter: FilterKind,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    check_rate(option, params)?;
    if t >= option.maturity {
        return Ok(if s_t >= option.strike { 1.0 } else { 0.0 });
    }
    let vol = VolSource::filter_at(filter, params, b_state)?;
    let mc = McConfig::new(n_mc, seed, StreamId::new(domain::INNER_MC, &[t as u64]));
    let j = option.maturity - t;
    SubSimulation::run(params, measure, &vol, t, s_t, option.maturity, j, &mc)?.duan_delta(option)
}
