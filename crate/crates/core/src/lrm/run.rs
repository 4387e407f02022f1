//! Self-financing hedges along one observed price path.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{bs_delta, bs_price, BsParams};
use crate::error::{ArsvError, Result};
use crate::filters::{FilterKind, VolFilter};
use crate::kernels::Measure;
use crate::model::ModelParams;
use crate::rng::{domain, StreamId};

use super::{check_rate, McConfig, OptionSpec, SubSimulation, VolSource};

/// A hedging scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HedgeMethod {
    Lrm { measure: Measure, filter: FilterKind },
    Duan { measure: Measure, filter: FilterKind },
    Bs,
}

impl HedgeMethod {
    pub fn filter(self) -> Option<FilterKind> {
        match self {
            HedgeMethod::Lrm { filter, .. } | HedgeMethod::Duan { filter, .. } => Some(filter),
            HedgeMethod::Bs => None,
        }
    }

    pub fn measure(self) -> Option<Measure> {
        match self {
            HedgeMethod::Lrm { measure, .. } | HedgeMethod::Duan { measure, .. } => Some(measure),
            HedgeMethod::Bs => None,
        }
    }

    /// Stable integer used when deriving random streams.
    pub fn stream_tag(self) -> u64 {
        let mf = |m: Measure, f: FilterKind| {
            let m = match m {
                Measure::Mmm => 0,
                Measure::Mc => 1,
            };
            let f = match f {
                FilterKind::Kalman => 0,
                FilterKind::Hlik => 1,
            };
            2 * m + f
        };
        match self {
            HedgeMethod::Lrm { measure, filter } => 1 + mf(measure, filter),
            HedgeMethod::Duan { measure, filter } => 11 + mf(measure, filter),
            HedgeMethod::Bs => 21,
        }
    }
}

impl fmt::Display for HedgeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HedgeMethod::Lrm { measure, filter } => {
                write!(f, "lrm-{}-{}", measure.as_str(), filter.as_str())
            }
            HedgeMethod::Duan { measure, filter } => {
                write!(f, "duan-{}-{}", measure.as_str(), filter.as_str())
            }
            HedgeMethod::Bs => f.write_str("bs"),
        }
    }
}

impl FromStr for HedgeMethod {
    type Err = ArsvError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "bs" {
            return Ok(HedgeMethod::Bs);
        }
        let parts: Vec<&str> = s.split('-').collect();
        let bad = || ArsvError::Config(format!("unknown hedging method '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let measure: Measure = parts[1].parse().map_err(|_| bad())?;
        let filter: FilterKind = parts[2].parse().map_err(|_| bad())?;
        match parts[0] {
            "lrm" => Ok(HedgeMethod::Lrm { measure, filter }),
            "duan" => Ok(HedgeMethod::Duan { measure, filter }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for HedgeMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HedgeMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which square error is recorded at maturity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorConvention {
    /// `(H~ - V_0 - G~_T)^2` in time-0 currency.
    #[default]
    Discounted,
    /// The same shortfall in time-`T` currency.
    Undiscounted,
}

/// Everything needed to hedge besides the path and the options.
#[derive(Debug, Clone)]
pub struct HedgeSetup {
    pub params: ModelParams,
    pub method: HedgeMethod,
    pub j: usize,
    /// Inner Monte Carlo settings; `stream` is the base from which each
    /// rebalance time derives its own stream.
    pub mc: McConfig,
    pub convention: ErrorConvention,
}

/// The hedge of one option along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeRun {
    pub method: HedgeMethod,
    pub strike: f64,
    pub maturity: usize,
    pub j: usize,
    pub rebalance_times: Vec<usize>,
    /// Shares held over the interval starting at each rebalance time.
    pub ratios: Vec<f64>,
    /// Riskless holdings in discounted units, `V~_t - xi_t S~_t`.
    pub riskless: Vec<f64>,
    /// Discounted values at the rebalance times followed by `H~`.
    pub values: Vec<f64>,
    /// Discounted gains at the same times.
    pub gains: Vec<f64>,
    /// Discounted costs `V~ - G~`.
    pub costs: Vec<f64>,
    pub discounted_payoff: f64,
    pub terminal_error: f64,
    pub censored: usize,
    /// Smallest effective sample size over the quotes, if any were simulated.
    pub min_n_effective: Option<f64>,
    pub low_sample_quotes: usize,
}

/// Hedge every option (all of one maturity) along the observed prices
/// `S_0..=S_T`. One inner simulation per rebalance time serves all strikes.
pub fn hedge_path(prices: &[f64], options: &[OptionSpec], setup: &HedgeSetup) -> Result<Vec<HedgeRun>> {
    let Some(first) = options.first() else {
        return Ok(Vec::new());
    };
    let maturity = first.maturity;
    if options.iter().any(|o| o.maturity != maturity) {
        return Err(ArsvError::InvalidInput("options must share one maturity".into()));
    }
    for o in options {
        check_rate(o, &setup.params)?;
    }
    let j = setup.j;
    if j == 0 || maturity % j != 0 {
        return Err(ArsvError::InvalidInput(format!(
            "maturity {maturity} is not a multiple of the hedge interval {j}"
        )));
    }
    if prices.len() < maturity + 1 {
        return Err(ArsvError::InvalidInput(format!(
            "need {} prices, got {}",
            maturity + 1,
            prices.len()
        )));
    }
    let p = &setup.params;
    let r = p.r;
    let disc = |t: usize| (-r * t as f64).exp();
    let bsp = match setup.method {
        HedgeMethod::Bs => Some(BsParams::from_model(p)?),
        _ => None,
    };
    let mut filter = match setup.method.filter() {
        Some(kind) => Some(VolFilter::new(kind, p)?),
        None => None,
    };

    let n_rebal = maturity / j;
    let mut runs: Vec<HedgeRun> = options
        .iter()
        .map(|o| HedgeRun {
            method: setup.method,
            strike: o.strike,
            maturity,
            j,
            rebalance_times: Vec::with_capacity(n_rebal),
            ratios: Vec::with_capacity(n_rebal),
            riskless: Vec::with_capacity(n_rebal),
            values: Vec::with_capacity(n_rebal + 1),
            gains: vec![0.0],
            costs: Vec::with_capacity(n_rebal + 1),
            discounted_payoff: 0.0,
            terminal_error: 0.0,
            censored: 0,
            min_n_effective: None,
            low_sample_quotes: 0,
        })
        .collect();

    let mut observed = 0;
    for t in (0..maturity).step_by(j) {
        if let Some(f) = filter.as_mut() {
            while observed < t {
                observed += 1;
                f.observe((prices[observed] / prices[observed - 1]).ln() - r)?;
            }
        }
        let s_t = prices[t];
        let sub = match (setup.method, &filter) {
            (HedgeMethod::Lrm { measure, .. } | HedgeMethod::Duan { measure, .. }, Some(f)) => {
                let mut mc = setup.mc.clone();
                mc.stream = setup.mc.stream.child(domain::INNER_MC, t as u64);
                let sj = match setup.method {
                    HedgeMethod::Duan { .. } => maturity - t,
                    _ => j,
                };
                let vol = VolSource::Filter(f.clone());
                Some(SubSimulation::run(p, measure, &vol, t, s_t, maturity, sj, &mc)?)
            }
            _ => None,
        };
        for (run, o) in runs.iter_mut().zip(options) {
            let (value, ratio) = match (setup.method, &sub) {
                (HedgeMethod::Lrm { .. }, Some(sub)) => {
                    let q = sub.quote(o)?;
                    run.censored += q.censored;
                    run.min_n_effective = Some(run.min_n_effective.map_or(q.n_effective, |m| m.min(q.n_effective)));
                    run.low_sample_quotes += q.low_sample as usize;
                    (q.value, q.ratio)
                }
                (HedgeMethod::Duan { .. }, Some(sub)) => {
                    let q = sub.quote(o)?;
                    run.censored += q.censored;
                    run.min_n_effective = Some(run.min_n_effective.map_or(q.n_effective, |m| m.min(q.n_effective)));
                    run.low_sample_quotes += q.low_sample as usize;
                    (q.value, sub.duan_delta(o)?)
                }
                _ => {
                    let b = bsp.as_ref().expect("Black-Scholes parameters");
                    let tau = (maturity - t) as f64;
                    (bs_price(s_t, o.strike, tau, b), bs_delta(s_t, o.strike, tau, b))
                }
            };
            let g = *run.gains.last().expect("starts at zero");
            let v_disc = value * disc(t);
            run.rebalance_times.push(t);
            run.ratios.push(ratio);
            run.riskless.push(v_disc - ratio * s_t * disc(t));
            run.values.push(v_disc);
            run.costs.push(v_disc - g);
            run.gains
                .push(g + ratio * (prices[t + j] * disc(t + j) - s_t * disc(t)));
        }
    }
    let grow = (r * maturity as f64).exp();
    for (run, o) in runs.iter_mut().zip(options) {
        let h = o.payoff(prices[maturity]) / grow;
        let g_t = *run.gains.last().expect("non-empty");
        run.discounted_payoff = h;
        run.values.push(h);
        run.costs.push(h - g_t);
        let shortfall = h - run.values[0] - g_t;
        run.terminal_error = match setup.convention {
            ErrorConvention::Discounted => shortfall * shortfall,
            ErrorConvention::Undiscounted => (shortfall * grow).powi(2),
        };
    }
    Ok(runs)
}

/// Base stream of one hedge: inner simulations for `(path, maturity,
/// method)` derive their per-time streams from it.
pub fn hedge_stream(path: usize, maturity: usize, method: HedgeMethod) -> StreamId {
    StreamId::new(domain::INNER_MC, &[path as u64, maturity as u64, method.stream_tag()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate_paths;
    use approx::assert_relative_eq;

    fn setup(method: HedgeMethod, j: usize) -> HedgeSetup {
        HedgeSetup {
            params: ModelParams::benchmark(),
            method,
            j,
            mc: McConfig::new(400, 11, StreamId::new(domain::USER, &[9])),
            convention: ErrorConvention::Discounted,
        }
    }

    #[test]
    fn method_names_round_trip() {
        for name in [
            "lrm-mmm-kalman",
            "lrm-mmm-hlik",
            "lrm-mc-kalman",
            "lrm-mc-hlik",
            "duan-mmm-kalman",
            "duan-mc-hlik",
            "bs",
        ] {
            let m: HedgeMethod = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        assert!("lrm-foo-kalman".parse::<HedgeMethod>().is_err());
        assert!("delta".parse::<HedgeMethod>().is_err());
    }

    #[test]
    fn stream_tags_are_distinct() {
        let names = ["lrm-mmm-kalman", "lrm-mmm-hlik", "lrm-mc-kalman", "lrm-mc-hlik", "duan-mmm-kalman", "duan-mmm-hlik", "duan-mc-kalman", "duan-mc-hlik", "bs"];
        let mut tags: Vec<u64> = names.iter().map(|n| n.parse::<HedgeMethod>().unwrap().stream_tag()).collect();
        tags.sort();
        tags.dedup();
        assert_eq!(tags.len(), names.len());
    }

    #[test]
    fn cost_and_error_bookkeeping() {
        let p = ModelParams::benchmark();
        let path = &simulate_paths(&p, 100.0, 10, 1, 5, None).unwrap()[0];
        let options = [
            OptionSpec::new(90.0, 10, p.r).unwrap(),
            OptionSpec::new(110.0, 10, p.r).unwrap(),
        ];
        for name in ["lrm-mmm-kalman", "duan-mc-hlik", "bs"] {
            let runs = hedge_path(&path.s, &options, &setup(name.parse().unwrap(), 2)).unwrap();
            for run in &runs {
                assert_eq!(run.rebalance_times, vec![0, 2, 4, 6, 8]);
                assert_eq!(run.values.len(), 6);
                assert_eq!(run.gains.len(), 6);
                for i in 0..6 {
                    assert_relative_eq!(run.costs[i], run.values[i] - run.gains[i], max_relative = 1e-14);
                }
                let mut g = 0.0;
                for (k, &t) in run.rebalance_times.iter().enumerate() {
                    let d = |u: usize| path.s[u] * (-p.r * u as f64).exp();
                    g += run.ratios[k] * (d(t + 2) - d(t));
                    assert_relative_eq!(run.gains[k + 1], g, max_relative = 1e-12, epsilon = 1e-14);
                }
                let e = run.discounted_payoff - run.values[0] - g;
                assert_relative_eq!(run.terminal_error, e * e, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn bad_hedge_interval() {
        let p = ModelParams::benchmark();
        let o = [OptionSpec::new(100.0, 10, p.r).unwrap()];
        let prices = vec![100.0; 11];
        assert!(hedge_path(&prices, &o, &setup(HedgeMethod::Bs, 3)).is_err());
        assert!(hedge_path(&prices[..5], &o, &setup(HedgeMethod::Bs, 1)).is_err());
    }

    #[test]
    fn undiscounted_error_rescales() {
        let p = ModelParams::benchmark();
        let path = &simulate_paths(&p, 100.0, 6, 1, 8, None).unwrap()[0];
        let o = [OptionSpec::new(100.0, 6, p.r).unwrap()];
        let mut s = setup(HedgeMethod::Bs, 1);
        let a = hedge_path(&path.s, &o, &s).unwrap()[0].terminal_error;
        s.convention = ErrorConvention::Undiscounted;
        let b = hedge_path(&path.s, &o, &s).unwrap()[0].terminal_error;
        assert_relative_eq!(b, a * (2.0 * p.r * 6.0).exp(), max_relative = 1e-12);
    }

    #[test]
    fn riskless_limit_is_hedged_perfectly() {
        // tiny constant volatility: the underlying is almost deterministic
        let p = ModelParams::new(0.1 / 252.0, -13.8, 0.5, 0.0).unwrap();
        let path = &simulate_paths(&p, 100.0, 8, 1, 2, None).unwrap()[0];
        let o = [OptionSpec::new(80.0, 8, p.r).unwrap()];
        for name in ["lrm-mmm-kalman", "lrm-mc-hlik", "bs", "duan-mmm-hlik"] {
            let mut s = setup(name.parse().unwrap(), 1);
            s.params = p;
            let run = &hedge_path(&path.s, &o, &s).unwrap()[0];
            assert!(run.terminal_error < 1e-8, "{name}: {}", run.terminal_error);
        }
    }
}
