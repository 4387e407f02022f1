//! The ARSV data-generating process.
//!
//! Log-returns follow `y_t = r + sigma_t * eps_t` and the log-variance
//! `b_t = log(sigma_t^2)` is an AR(1), `b_t = gamma + phi * b_{t-1} + w_t`,
//! driven by innovations independent of the return shocks. One step is one
//! trading day.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArsvError, Result};
use crate::rng::{self, StreamId};

pub const STEPS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Per-step risk-free log-return.
    pub r: f64,
    /// Intercept of the log-variance recursion.
    pub gamma: f64,
    /// Persistence of the log-variance recursion, `|phi| < 1`.
    pub phi: f64,
    /// Standard deviation of the log-variance innovations.
    pub sigma_w: f64,
}

impl ModelParams {
    pub fn new(r: f64, gamma: f64, phi: f64, sigma_w: f64) -> Result<Self> {
        let p = ModelParams {
            r,
            gamma,
            phi,
            sigma_w,
        };
        p.validate()?;
        Ok(p)
    }

    /// The strongly leptokurtic daily model used for the hedging experiments:
    /// `r = 0.1/252, gamma = -0.821, phi = 0.9, sigma_w = 0.675`.
    pub fn benchmark() -> Self {
        ModelParams {
            r: 0.1 / STEPS_PER_YEAR,
            gamma: -0.821,
            phi: 0.9,
            sigma_w: 0.675,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.r, self.gamma, self.phi, self.sigma_w]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(ArsvError::ParameterDomain(
                "model parameters must be finite".into(),
            ));
        }
        if self.phi.abs() >= 1.0 {
            return Err(ArsvError::ParameterDomain(format!(
                "|phi| must be < 1 for stationarity, got phi = {}",
                self.phi
            )));
        }
        if self.sigma_w < 0.0 {
            return Err(ArsvError::ParameterDomain(format!(
                "sigma_w must be >= 0, got {}",
                self.sigma_w
            )));
        }
        Ok(())
    }

    /// Stationary mean of the log-variance, `gamma / (1 - phi)`.
    pub fn mean_log_variance(&self) -> f64 {
        self.gamma / (1.0 - self.phi)
    }

    /// Stationary variance of the log-variance, `sigma_w^2 / (1 - phi^2)`.
    pub fn var_log_variance(&self) -> f64 {
        self.sigma_w * self.sigma_w / (1.0 - self.phi * self.phi)
    }

    /// One-step prediction of the log-variance given its previous value.
    pub fn predict_log_variance(&self, b_prev: f64) -> f64 {
        self.gamma + self.phi * b_prev
    }
}

/// A standardized (mean 0, variance 1) finite distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    points: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteLaw {
    pub fn new(points: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != probs.len() {
            return Err(ArsvError::InvalidInput(
                "discrete law needs matching, non-empty support and weights".into(),
            ));
        }
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(ArsvError::InvalidInput(
                "discrete law weights must be positive".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        let mean: f64 = points.iter().zip(&probs).map(|(x, p)| x * p).sum();
        let second: f64 = points.iter().zip(&probs).map(|(x, p)| x * x * p).sum();
        if (total - 1.0).abs() > 1e-12 || mean.abs() > 1e-12 || (second - 1.0).abs() > 1e-12 {
            return Err(ArsvError::InvalidInput(format!(
                "discrete law must be standardized (mass {total}, mean {mean}, second moment {second})"
            )));
        }
        Ok(DiscreteLaw { points, probs })
    }

    /// Symmetric two-point law on `{-1, +1}`.
    pub fn rademacher() -> Self {
        DiscreteLaw {
            points: vec![-1.0, 1.0],
            probs: vec![0.5, 0.5],
        }
    }

    /// Three-point law on `{-sqrt(3), 0, sqrt(3)}` with weights `1/6, 2/3, 1/6`.
    pub fn three_point() -> Self {
        let a = 3f64.sqrt();
        DiscreteLaw {
            points: vec![-a, 0.0, a],
            probs: vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (x, p) in self.points.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *x;
            }
        }
        *self.points.last().expect("non-empty law")
    }
}

/// Distribution of a standardized innovation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum InnovationLaw {
    #[default]
    Gaussian,
    Discrete(DiscreteLaw),
}

impl InnovationLaw {
    /// Marginal cumulant function `L(z) = log E[exp(z * eps)]`.
    pub fn cumulant(&self, z: f64) -> f64 {
        match self {
            InnovationLaw::Gaussian => gaussian_cumulant(z),
            InnovationLaw::Discrete(law) => {
                // log-sum-exp keeps large |z| finite
                let m = law
                    .points
                    .iter()
                    .map(|x| z * x)
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = law
                    .points
                    .iter()
                    .zip(&law.probs)
                    .map(|(x, p)| p * (z * x - m).exp())
                    .sum();
                m + s.ln()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InnovationLaw::Gaussian => rng.sample(StandardNormal),
            InnovationLaw::Discrete(law) => law.sample(rng),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, InnovationLaw::Gaussian)
    }

    /// Whether `eps` and `-eps` have the same law.
    pub fn is_symmetric(&self) -> bool {
        match self {
            InnovationLaw::Gaussian => true,
            InnovationLaw::Discrete(law) => law.points.iter().zip(&law.probs).all(|(x, p)| {
                law.points
                    .iter()
                    .zip(&law.probs)
                    .any(|(y, q)| (x + y).abs() < 1e-12 && (p - q).abs() < 1e-12)
            }),
        }
    }
}

/// Laws of the return shock `eps` and the standardized volatility shock `w / sigma_w`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShockLaws {
    pub eps: InnovationLaw,
    pub w: InnovationLaw,
}

impl ShockLaws {
    pub fn gaussian() -> Self {
        ShockLaws::default()
    }

    pub fn discrete(eps: DiscreteLaw, w: DiscreteLaw) -> Self {
        ShockLaws {
            eps: InnovationLaw::Discrete(eps),
            w: InnovationLaw::Discrete(w),
        }
    }
}

/// One simulated trajectory. Sequences are indexed by step `t = 1..=T` at
/// position `t - 1`; `s` holds `S_0..=S_T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketPath {
    /// Per-step risk-free log-return the path was generated with.
    pub r: f64,
    pub s0: f64,
    /// Log-variance the path was started from.
    pub b0: f64,
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub eps: Vec<f64>,
    /// Volatility innovations `w_t` (variance `sigma_w^2`).
    pub w: Vec<f64>,
}

impl MarketPath {
    pub fn horizon(&self) -> usize {
        self.y.len()
    }

    /// Discounted price `S_t * exp(-r t)`.
    pub fn discounted(&self, t: usize, r: f64) -> f64 {
        self.s[t] * (-r * t as f64).exp()
    }

    /// Observable centered returns `y_t - r`.
    pub fn centered_returns(&self, r: f64) -> Vec<f64> {
        self.y.iter().map(|y| y - r).collect()
    }

    /// Rebuild prices from `s0`, the return shocks and the volatilities.
    pub fn reconstruct_prices(s0: f64, r: f64, sigma: &[f64], eps: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(sigma.len() + 1);
        s.push(s0);
        let mut cur = s0;
        for (sg, e) in sigma.iter().zip(eps) {
            cur *= (r + sg * e).exp();
            s.push(cur);
        }
        s
    }
}

/// Simulate one path from log-variance `b0` with the given shock laws.
pub fn simulate_path_with<R: Rng + ?Sized>(
    params: &ModelParams,
    laws: &ShockLaws,
    s0: f64,
    horizon: usize,
    b0: f64,
    rng: &mut R,
) -> MarketPath {
    let mut path = MarketPath {
        r: params.r,
        s0,
        b0,
        b: Vec::with_capacity(horizon),
        sigma: Vec::with_capacity(horizon),
        y: Vec::with_capacity(horizon),
        s: Vec::with_capacity(horizon + 1),
        eps: Vec::with_capacity(horizon),
        w: Vec::with_capacity(horizon),
    };
    path.s.push(s0);
    let mut b_prev = b0;
    let mut s = s0;
    for _ in 0..horizon {
        let eps = laws.eps.sample(rng);
        let w = params.sigma_w * laws.w.sample(rng);
        let b = params.predict_log_variance(b_prev) + w;
        let sigma = (0.5 * b).exp();
        let y = params.r + sigma * eps;
        s *= y.exp();
        path.b.push(b);
        path.sigma.push(sigma);
        path.y.push(y);
        path.s.push(s);
        path.eps.push(eps);
        path.w.push(w);
        b_prev = b;
    }
    path
}

/// Simulate `n_paths` Gaussian ARSV paths. Path `i` draws from its own
/// stream derived from `(seed, i)`, so results do not depend on threading.
/// Without `b_init` the log-variance starts at its stationary mean.
pub fn simulate_paths(
    params: &ModelParams,
    s0: f64,
    horizon: usize,
    n_paths: usize,
    seed: u64,
    b_init: Option<f64>,
) -> Result<Vec<MarketPath>> {
    params.validate()?;
    if horizon == 0 || n_paths == 0 {
        return Err(ArsvError::InvalidInput(
            "horizon and n_paths must be at least 1".into(),
        ));
    }
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(ArsvError::InvalidInput(format!(
            "initial price must be positive, got {s0}"
        )));
    }
    let b0 = b_init.unwrap_or_else(|| params.mean_log_variance());
    let laws = ShockLaws::gaussian();
    Ok((0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream_rng(seed, path_stream(i));
            simulate_path_with(params, &laws, s0, horizon, b0, &mut rng)
        })
        .collect())
}

/// Stream of evaluation path `i`.
pub fn path_stream(i: usize) -> StreamId {
    StreamId::new(rng::domain::EVAL_PATHS, &[i as u64])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryMoments {
    pub var_y: f64,
    pub kurtosis_y: f64,
    pub mean_b: f64,
    pub var_b: f64,
    pub annualized_vol: f64,
}

pub fn stationary_moments(params: &ModelParams) -> Result<StationaryMoments> {
    params.validate()?;
    let mean_b = params.mean_log_variance();
    let var_b = params.var_log_variance();
    let var_y = (mean_b + 0.5 * var_b).exp();
    Ok(StationaryMoments {
        var_y,
        kurtosis_y: 3.0 * var_b.exp(),
        mean_b,
        var_b,
        annualized_vol: (STEPS_PER_YEAR * var_y).sqrt(),
    })
}

/// Approximate autocorrelation of squared returns at `lag`.
pub fn acf_squared_approx(params: &ModelParams, lag: usize) -> Result<f64> {
    params.validate()?;
    if lag == 0 {
        return Err(ArsvError::InvalidInput("lag must be at least 1".into()));
    }
    let e = params.var_log_variance().exp();
    Ok((e - 1.0) / (3.0 * e - 1.0) * params.phi.powi(lag as i32))
}

/// Cumulant function of a standard normal, `z^2 / 2`.
pub fn gaussian_cumulant(z: f64) -> f64 {
    0.5 * z * z
}

/// Conditional mean and variance of the next discounted price change given
/// the previous discounted price and a volatility estimate, with the
/// conditional cumulants replaced by `sigma_hat^2 / 2` and `2 sigma_hat^2`.
pub fn conditional_price_moments(s_prev: f64, sigma_hat: f64) -> Result<(f64, f64)> {
    if !(sigma_hat > 0.0) {
        return Err(ArsvError::DegenerateVolatility {
            step: 0,
            sigma_hat,
        });
    }
    let k1 = gaussian_cumulant(sigma_hat);
    let k2 = gaussian_cumulant(2.0 * sigma_hat);
    let mean = s_prev * k1.exp_m1();
    let var = s_prev * s_prev * (k2.exp() - (2.0 * k1).exp());
    Ok((mean, var))
}

/// Exact conditional cumulant `K(scale * sigma_t)` given the previous
/// latent log-variance: `log E[exp(L(scale * exp(b_t / 2))) | b_{t-1}]`.
pub fn latent_cumulant(params: &ModelParams, laws: &ShockLaws, b_prev: f64, scale: f64) -> f64 {
    let centre = params.predict_log_variance(b_prev);
    let inner = |w: f64| {
        let sigma = (0.5 * (centre + params.sigma_w * w)).exp();
        laws.eps.cumulant(scale * sigma)
    };
    if params.sigma_w == 0.0 {
        return inner(0.0);
    }
    match &laws.w {
        InnovationLaw::Discrete(law) => log_mean_exp(
            law.points().iter().map(|&w| inner(w)),
            law.probs().iter().copied(),
        ),
        InnovationLaw::Gaussian => {
            // trapezoid rule against the standard normal density on [-10, 10];
            // for this smooth integrand it converges faster than any power of h
            const N: usize = 80;
            const H: f64 = 20.0 / N as f64;
            let mut values = [0.0; N + 1];
            let mut m = f64::NEG_INFINITY;
            for (i, v) in values.iter_mut().enumerate() {
                *v = inner(-10.0 + H * i as f64);
                m = m.max(*v);
            }
            let norm = H / (2.0 * std::f64::consts::PI).sqrt();
            let s: f64 = values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let w = -10.0 + H * i as f64;
                    let end = if i == 0 || i == N { 0.5 } else { 1.0 };
                    end * norm * (-0.5 * w * w).exp() * (v - m).exp()
                })
                .sum();
            m + s.ln()
        }
    }
}

fn log_mean_exp(values: impl Iterator<Item = f64>, weights: impl Iterator<Item = f64>) -> f64 {
    let pairs: Vec<(f64, f64)> = values.zip(weights).collect();
    let m = pairs
        .iter()
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = pairs.iter().map(|(v, p)| p * (v - m).exp()).sum();
    m + s.ln()
}

/// Write a path as CSV with columns `t,b,sigma,y,s`. The `t = 0` row only
/// carries the initial price.
pub fn write_path_csv<W: Write>(path: &MarketPath, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(["t", "b", "sigma", "y", "s"])?;
    w.write_record(["0", "", "", "", &path.s0.to_string()])?;
    for t in 0..path.horizon() {
        w.write_record([
            (t + 1).to_string(),
            path.b[t].to_string(),
            path.sigma[t].to_string(),
            path.y[t].to_string(),
            path.s[t + 1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Prices (and latent log-variances when every row carries one) read back
/// from a path CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedPath {
    pub prices: Vec<f64>,
    pub log_variance: Option<Vec<f64>>,
}

pub fn read_path_csv<R: Read>(input: R) -> std::result::Result<ImportedPath, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let s_col = col("s").ok_or_else(|| "missing column `s`".to_string())?;
    let b_col = col("b");
    let mut prices = Vec::new();
    let mut bs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format!("line {line}: {e}"))?;
        let s: f64 = rec
            .get(s_col)
            .ok_or_else(|| format!("line {line}: missing price"))?
            .parse()
            .map_err(|e| format!("line {line}: bad price: {e}"))?;
        if !(s > 0.0 && s.is_finite()) {
            return Err(format!("line {line}: price must be positive, got {s}"));
        }
        prices.push(s);
        let b = b_col
            .and_then(|c| rec.get(c))
            .filter(|v| !v.is_empty())
            .map(|v| v.parse::<f64>())
            .transpose()
            .map_err(|e| format!("line {line}: bad b: {e}"))?;
        bs.push(b);
    }
    let log_variance = if bs.len() > 1 && bs[1..].iter().all(|b| b.is_some()) {
        Some(bs[1..].iter().map(|b| b.unwrap()).collect())
    } else {
        None
    };
    Ok(ImportedPath {
        prices,
        log_variance,
    })
}

pub fn write_path_file(path: &MarketPath, file: &Path) -> Result<()> {
    let f = std::fs::File::create(file).map_err(|e| ArsvError::io(file, e))?;
    write_path_csv(path, std::io::BufWriter::new(f)).map_err(|e| ArsvError::csv(file, e))
}

pub fn read_path_file(file: &Path) -> Result<ImportedPath> {
    let f = std::fs::File::open(file).map_err(|e| ArsvError::io(file, e))?;
    read_path_csv(f).map_err(|m| ArsvError::Config(format!("{}: {m}", file.display())))
}
