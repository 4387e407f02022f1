//! Local-risk-minimizing (LRM) values and hedge ratios.
//!
//! Conditional expectations under a pricing measure are estimated from
//! sub-paths simulated under the physical measure and reweighted with the
//! kernel factors of [`crate::kernels`]. Weighted means are self-normalized.

mod run;
mod tree;

pub use run::*;
pub use tree::*;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArsvError, Result};
use crate::filters::{FilterKind, VolFilter};
use crate::kernels::{mc_log_factor, mmm_factor, Measure, StepCumulants};
use crate::model::{latent_cumulant, ModelParams, ShockLaws};
use crate::rng::{self, domain, StreamId};

pub const MIN_N_MC: usize = 100;
/// Quotes whose effective sample size falls below this are flagged.
pub const LOW_SAMPLE_ESS: f64 = 50.0;
/// Denominators below `DENOM_REL_FLOOR * s_t^2` are rejected.
pub const DENOM_REL_FLOOR: f64 = 1e-14;

/// A European call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    /// Maturity in steps.
    pub maturity: usize,
    /// Risk-free log-return per step.
    pub rate: f64,
}

impl OptionSpec {
    pub fn new(strike: f64, maturity: usize, rate: f64) -> Result<Self> {
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(ArsvError::ParameterDomain(format!(
                "strike must be positive, got {strike}"
            )));
        }
        if maturity == 0 {
            return Err(ArsvError::ParameterDomain("maturity must be at least 1 step".into()));
        }
        if !rate.is_finite() {
            return Err(ArsvError::ParameterDomain(format!("rate must be finite, got {rate}")));
        }
        Ok(OptionSpec {
            strike,
            maturity,
            rate,
        })
    }

    #[inline]
    pub fn payoff(&self, s_terminal: f64) -> f64 {
        (s_terminal - self.strike).max(0.0)
    }

    /// Discount factor over `steps` steps.
    #[inline]
    pub fn discount(&self, steps: usize) -> f64 {
        (-self.rate * steps as f64).exp()
    }
}

/// How the hedge numerator and denominator are discounted. Both give the
/// same ratio; `Absolute` discounts to time 0, `Relative` to time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discounting {
    #[default]
    Relative,
    Absolute,
}

/// Estimator of the conditional variance of the discounted price increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenominatorForm {
    /// Weighted mean of squared increments.
    Variance,
    /// Weighted second moment of the discounted price minus `s_t^2`.
    SecondMoment,
}

/// Volatility information the hedger uses inside sub-simulations.
#[derive(Debug, Clone, PartialEq)]
pub enum VolSource {
    /// An observable filter; sub-paths start from its filtered log-variance
    /// and the filter is carried along each sub-path.
    Filter(VolFilter),
    /// The latent log-variance itself, with exact conditional cumulants.
    /// Not observable; used as an oracle on discretized models.
    Latent { b: f64 },
}

impl VolSource {
    pub fn filter_at(kind: FilterKind, params: &ModelParams, log_variance: f64) -> Result<Self> {
        Ok(VolSource::Filter(VolFilter::at_log_variance(kind, params, log_variance)?))
    }

    pub fn start_log_variance(&self) -> f64 {
        match self {
            VolSource::Filter(f) => f.log_variance(),
            VolSource::Latent { b } => *b,
        }
    }
}

/// Inner Monte Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_mc: usize,
    pub seed: u64,
    pub stream: StreamId,
    /// Pair every sub-path with its mirror image over the hedge interval.
    pub antithetic: bool,
    pub laws: ShockLaws,
    pub discounting: Discounting,
}

impl McConfig {
    pub fn new(n_mc: usize, seed: u64, stream: StreamId) -> Self {
        McConfig {
            n_mc,
            seed,
            stream,
            antithetic: true,
            laws: ShockLaws::gaussian(),
            discounting: Discounting::Relative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeQuote {
    /// Value at time `t` in time-`t` currency.
    pub value: f64,
    /// Shares held over the next hedge interval.
    pub ratio: f64,
    pub denom: f64,
    /// Kish effective sample size of the tail weights.
    pub n_effective: f64,
    pub n_paths: usize,
    pub censored: usize,
    pub low_sample: bool,
}

impl HedgeQuote {
    fn terminal(value: f64) -> Self {
        HedgeQuote {
            value,
            ratio: 0.0,
            denom: 0.0,
            n_effective: 0.0,
            n_paths: 0,
            censored: 0,
            low_sample: false,
        }
    }
}

/// One retained sub-path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubSample {
    /// Tail weight over steps `t+1..=T`.
    pub f: f64,
    /// Weight over the hedge interval `t+1..=t+j`.
    pub w: f64,
    /// Price at `t + j`.
    pub s_j: f64,
    /// Price at maturity.
    pub s_mat: f64,
}

/// Weighted sub-paths from one state, shared by every strike of a maturity.
#[derive(Debug, Clone)]
pub struct SubSimulation {
    pub t: usize,
    pub maturity: usize,
    pub j: usize,
    pub s_t: f64,
    pub rate: f64,
    pub measure: Measure,
    pub discounting: Discounting,
    pub samples: Vec<SubSample>,
    pub n_paths: usize,
    pub censored: usize,
}

impl SubSimulation {
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        params: &ModelParams,
        measure: Measure,
        vol: &VolSource,
        t: usize,
        s_t: f64,
        maturity: usize,
        j: usize,
        mc: &McConfig,
    ) -> Result<Self> {
        params.validate()?;
        if t >= maturity {
            return Err(ArsvError::InvalidInput(format!(
                "sub-simulation needs t < T (t = {t}, T = {maturity})"
            )));
        }
        if j == 0 || t + j > maturity {
            return Err(ArsvError::InvalidInput(format!(
                "hedge interval j = {j} does not fit between t = {t} and T = {maturity}"
            )));
        }
        if mc.n_mc < MIN_N_MC {
            return Err(ArsvError::InvalidInput(format!(
                "n_mc must be at least {MIN_N_MC}, got {}",
                mc.n_mc
            )));
        }
        if !(s_t > 0.0 && s_t.is_finite()) {
            return Err(ArsvError::InvalidInput(format!("price must be positive, got {s_t}")));
        }
        if !vol.start_log_variance().is_finite() {
            return Err(ArsvError::InvalidInput("log-variance state is not finite".into()));
        }
        if measure == Measure::Mc && !mc.laws.eps.is_gaussian() {
            return Err(ArsvError::Unsupported(
                "the mean-correcting kernel needs Gaussian return shocks".into(),
            ));
        }
        if mc.antithetic && !mc.laws.eps.is_symmetric() {
            return Err(ArsvError::Unsupported(
                "antithetic sampling needs a symmetric return shock law".into(),
            ));
        }

        let steps = maturity - t;
        let n_draws = if mc.antithetic { mc.n_mc.div_ceil(2) } else { mc.n_mc };
        let ctx = PathContext {
            params,
            laws: &mc.laws,
            measure,
            vol,
            t,
            s_t,
            j,
        };
        let per_draw: Vec<[Option<SubSample>; 2]> = (0..n_draws)
            .into_par_iter()
            .map_init(
                || (Vec::with_capacity(steps), Vec::with_capacity(steps)),
                |(eps, wz), p| -> Result<[Option<SubSample>; 2]> {
                    let mut g = rng::stream_rng(mc.seed, mc.stream.child(domain::SUB_PATH, p as u64));
                    eps.clear();
                    wz.clear();
                    for _ in 0..steps {
                        eps.push(mc.laws.eps.sample(&mut g));
                        wz.push(mc.laws.w.sample(&mut g));
                    }
                    let a = ctx.evaluate(eps, wz, false)?;
                    let b = if mc.antithetic {
                        ctx.evaluate(eps, wz, true)?
                    } else {
                        None
                    };
                    Ok([a, b])
                },
            )
            .collect::<Result<_>>()?;

        let mut samples = Vec::with_capacity(mc.n_mc);
        let mut censored = 0;
        let mut taken = 0;
        'outer: for pair in &per_draw {
            let width = if mc.antithetic { 2 } else { 1 };
            for s in &pair[..width] {
                if taken == mc.n_mc {
                    break 'outer;
                }
                taken += 1;
                match s {
                    Some(s) => samples.push(*s),
                    None => censored += 1,
                }
            }
        }
        Ok(SubSimulation {
            t,
            maturity,
            j,
            s_t,
            rate: params.r,
            measure,
            discounting: mc.discounting,
            samples,
            n_paths: mc.n_mc,
            censored,
        })
    }

    fn check_option(&self, option: &OptionSpec) -> Result<()> {
        if option.maturity != self.maturity {
            return Err(ArsvError::InvalidInput(format!(
                "option maturity {} does not match sub-simulation horizon {}",
                option.maturity, self.maturity
            )));
        }
        if self.samples.is_empty() {
            return Err(ArsvError::AllCensored { n: self.n_paths });
        }
        Ok(())
    }

    fn discount(&self, steps: usize) -> f64 {
        (-self.rate * steps as f64).exp()
    }

    /// Weighted second moment of the discounted increment over the hedge
    /// interval, in time-`t` currency.
    pub fn denominator(&self, form: DenominatorForm) -> f64 {
        let disc_j = self.discount(self.j);
        let (mut sw, mut acc) = (0.0, 0.0);
        for s in &self.samples {
            let x = s.s_j * disc_j;
            sw += s.w;
            acc += match form {
                DenominatorForm::Variance => s.w * (x - self.s_t).powi(2),
                DenominatorForm::SecondMoment => s.w * x * x,
            };
        }
        match form {
            DenominatorForm::Variance => acc / sw,
            DenominatorForm::SecondMoment => acc / sw - self.s_t * self.s_t,
        }
    }

    pub fn quote(&self, option: &OptionSpec) -> Result<HedgeQuote> {
        self.check_option(option)?;
        let disc_t = self.discount(self.maturity - self.t);
        let disc_j = self.discount(self.j);
        let (mut sf, mut sf2, mut sfh, mut sfhd) = (0.0, 0.0, 0.0, 0.0);
        for s in &self.samples {
            let h = option.payoff(s.s_mat);
            let d = s.s_j * disc_j - self.s_t;
            sf += s.f;
            sf2 += s.f * s.f;
            sfh += s.f * h;
            sfhd += s.f * h * d;
        }
        let value = disc_t * sfh / sf;
        let den_rel = self.denominator(DenominatorForm::Variance);
        let (numerator, denom, floor) = match self.discounting {
            Discounting::Relative => (disc_t * sfhd / sf, den_rel, DENOM_REL_FLOOR * self.s_t.powi(2)),
            Discounting::Absolute => {
                // e^{-(R_T + R_t)} E[H d] over e^{-2 R_t} E[d^2]
                let r_t = self.rate * self.t as f64;
                let r_big = self.rate * self.maturity as f64;
                let e2 = (-2.0 * r_t).exp();
                (
                    (-(r_big + r_t)).exp() * sfhd / sf,
                    e2 * den_rel,
                    DENOM_REL_FLOOR * e2 * self.s_t.powi(2),
                )
            }
        };
        if !(denom >= floor) {
            return Err(ArsvError::DegenerateDenominator {
                denom,
                threshold: floor,
            });
        }
        let n_effective = sf * sf / sf2;
        Ok(HedgeQuote {
            value,
            ratio: numerator / denom,
            denom,
            n_effective,
            n_paths: self.n_paths,
            censored: self.censored,
            low_sample: n_effective < LOW_SAMPLE_ESS,
        })
    }

    /// Static delta `e^{-r(T-t)} E^Q[(S_T / s_t) 1{S_T >= K}]`.
    pub fn duan_delta(&self, option: &OptionSpec) -> Result<f64> {
        self.check_option(option)?;
        let disc_t = self.discount(self.maturity - self.t);
        let (mut sf, mut acc) = (0.0, 0.0);
        for s in &self.samples {
            sf += s.f;
            if s.s_mat >= option.strike {
                acc += s.f * s.s_mat / self.s_t;
            }
        }
        Ok(disc_t * acc / sf)
    }
}

struct PathContext<'a> {
    params: &'a ModelParams,
    laws: &'a ShockLaws,
    measure: Measure,
    vol: &'a VolSource,
    t: usize,
    s_t: f64,
    j: usize,
}

impl PathContext<'_> {
    /// Walk one sub-path. `None` means the path was censored.
    fn evaluate(&self, eps: &[f64], wz: &[f64], flip: bool) -> Result<Option<SubSample>> {
        let p = self.params;
        let mut filter = match self.vol {
            VolSource::Filter(f) => Some(f.clone()),
            VolSource::Latent { .. } => None,
        };
        let mut b = self.vol.start_log_variance();
        let mut s = self.s_t;
        let mut s_j = s;
        // linear product for Q_min, log product for Q_mc
        let mut z = match self.measure {
            Measure::Mmm => 1.0,
            Measure::Mc => 0.0,
        };
        let mut z_j = z;
        for (k, (&e, &wk)) in eps.iter().zip(wz).enumerate() {
            let cum = match &filter {
                Some(f) => {
                    let sh = f.forecast_sigma();
                    StepCumulants {
                        sigma_hat: sh,
                        k1: self.laws.eps.cumulant(sh),
                        k2: self.laws.eps.cumulant(2.0 * sh),
                    }
                }
                None => StepCumulants {
                    sigma_hat: (0.5 * p.predict_log_variance(b)).exp(),
                    k1: latent_cumulant(p, self.laws, b, 1.0),
                    k2: latent_cumulant(p, self.laws, b, 2.0),
                },
            };
            let e = if flip && k < self.j { -e } else { e };
            b = p.predict_log_variance(b) + p.sigma_w * wk;
            let x = (0.5 * b).exp() * e;
            s *= (p.r + x).exp();
            let step = self.t + k + 1;
            let with_step = |err: ArsvError| match err {
                ArsvError::DegenerateVolatility { sigma_hat, .. } => {
                    ArsvError::DegenerateVolatility { step, sigma_hat }
                }
                other => other,
            };
            match self.measure {
                Measure::Mmm => {
                    z *= mmm_factor(x, &cum).map_err(with_step)?;
                    if !(z > 0.0) {
                        return Ok(None);
                    }
                }
                Measure::Mc => z += mc_log_factor(x, &cum).map_err(with_step)?,
            }
            if let Some(f) = filter.as_mut() {
                f.observe(x)?;
            }
            if k + 1 == self.j {
                s_j = s;
                z_j = z;
            }
        }
        let (f, w) = match self.measure {
            Measure::Mmm => (z, z_j),
            Measure::Mc => (z.exp(), z_j.exp()),
        };
        Ok(Some(SubSample { f, w, s_j, s_mat: s }))
    }
}

/// LRM value and hedge ratio at time `t` for the next `j` steps.
#[allow(clippy::too_many_arguments)]
pub fn lrm_quote(
    option: &OptionSpec,
    t: usize,
    s_t: f64,
    vol: &VolSource,
    params: &ModelParams,
    measure: Measure,
    j: usize,
    mc: &McConfig,
) -> Result<HedgeQuote> {
    check_rate(option, params)?;
    if t == option.maturity {
        return Ok(HedgeQuote::terminal(option.payoff(s_t)));
    }
    SubSimulation::run(params, measure, vol, t, s_t, option.maturity, j, mc)?.quote(option)
}

/// [`lrm_quote`] from a bare log-variance state and a filter kind, with
/// default inner Monte Carlo settings.
#[allow(clippy::too_many_arguments)]
pub fn lrm_quote_from_state(
    option: &OptionSpec,
    t: usize,
    s_t: f64,
    b_state: f64,
    params: &ModelParams,
    measure: Measure,
    filter: FilterKind,
    j: usize,
    n_mc: usize,
    seed: u64,
) -> Result<HedgeQuote> {
    let vol = VolSource::filter_at(filter, params, b_state)?;
    let mc = McConfig::new(n_mc, seed, StreamId::new(domain::INNER_MC, &[t as u64]));
    lrm_quote(option, t, s_t, &vol, params, measure, j, &mc)
}

pub(crate) fn check_rate(option: &OptionSpec, params: &ModelParams) -> Result<()> {
    if option.rate != params.r {
        return Err(ArsvError::InvalidInput(format!(
            "option rate {} differs from model rate {}",
            option.rate, params.r
        )));
    }
    Ok(())
}
