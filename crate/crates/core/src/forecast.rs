//! Arrival forecasting with a scalar state-space model.
//!
//! For one (station, cluster) pair, with `m(t)` the cluster centroid and
//! `x_t` the covariates, the exogenous-corrected deviation
//! `d_t = y_t - m(t) - beta.x_t` is modelled as
//!
//! ```text
//! d_t       = mu_t + eps_t,          eps_t ~ N(0, s2_eps)
//! mu_{t+1}  = phi * mu_t + eta_t,    eta_t ~ N(0, s2_eta)
//! ```
//!
//! so forecasts track today's deviation from the historical average and
//! decay back to it at rate `phi`. Parameters are fitted by Gaussian
//! maximum likelihood (prediction-error decomposition) with a Nelder-Mead
//! search; the filter restarts from the stationary prior every service day.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ExogenousVector, StationId};
use crate::optim::NelderMead;
use crate::time::TimeBin;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const PHI_MAX: f64 = 0.999;
/// Prior level variance when the level is not stationary (phi >= 1).
pub const DIFFUSE_VARIANCE: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceParams {
    pub phi: f64,
    #[serde(rename = "s2_eps")]
    pub sigma2_eps: f64,
    #[serde(rename = "s2_eta")]
    pub sigma2_eta: f64,
    pub beta: Vec<f64>,
}

impl StateSpaceParams {
    pub fn new(phi: f64, sigma2_eps: f64, sigma2_eta: f64, beta: Vec<f64>) -> Result<Self> {
        let p = Self { phi, sigma2_eps, sigma2_eta, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi.is_finite() && (0.0..1.0).contains(&self.phi)) {
            return Err(Error::Config(format!("phi {} outside [0, 1)", self.phi)));
        }
        if !(self.sigma2_eps.is_finite() && self.sigma2_eps > 0.0) {
            return Err(Error::Variance(format!("s2_eps = {}", self.sigma2_eps)));
        }
        if !(self.sigma2_eta.is_finite() && self.sigma2_eta >= 0.0) {
            return Err(Error::Variance(format!("s2_eta = {}", self.sigma2_eta)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("beta"));
        }
        Ok(())
    }

    /// Centroid-only model: no memory, no covariate effects.
    pub fn baseline(n_covariates: usize, sigma2_eps: f64) -> Self {
        Self { phi: 0.0, sigma2_eps: sigma2_eps.max(VARIANCE_FLOOR), sigma2_eta: 0.0, beta: vec![0.0; n_covariates] }
    }

    /// Prior level variance at the start of a day.
    pub fn stationary_variance(&self) -> f64 {
        if self.phi < 1.0 {
            self.sigma2_eta / (1.0 - self.phi * self.phi)
        } else {
            DIFFUSE_VARIANCE
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub mu: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "bin")]
    pub last_bin: Option<TimeBin>,
}

impl FilterState {
    pub fn new(mu: f64, p: f64) -> Self {
        Self { mu, p, last_bin: None }
    }

    /// Start-of-day state: zero deviation at the stationary variance.
    pub fn stationary(params: &StateSpaceParams) -> Self {
        Self::new(0.0, params.stationary_variance())
    }

    pub fn at(mut self, bin: TimeBin) -> Self {
        self.last_bin = Some(bin);
        self
    }

    /// Time update with no observation.
    pub fn propagate(&self, params: &StateSpaceParams) -> Self {
        Self {
            mu: params.phi * self.mu,
            p: params.phi * params.phi * self.p + params.sigma2_eta,
            last_bin: self.last_bin.map(|b| b.next()),
        }
    }
}

/// Result of one Kalman step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub state: FilterState,
    pub innovation: f64,
    /// Innovation variance `P- + s2_eps`.
    pub innovation_variance: f64,
    pub gain: f64,
}

fn check_finite(v: f64, what: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_exog(x: &ExogenousVector, params: &StateSpaceParams) -> Result<()> {
    if x.len() != params.beta.len() {
        return Err(Error::Config(format!("{} covariates for {} coefficients", x.len(), params.beta.len())));
    }
    x.values().iter().try_for_each(|&v| check_finite(v, "covariate"))
}

/// One scalar Kalman step on `d = y - m - beta.x`.
pub fn filter_update(
    state: &FilterState,
    params: &StateSpaceParams,
    y: f64,
    centroid: f64,
    x: &ExogenousVector,
) -> Result<FilterStep> {
    check_finite(y, "observation")?;
    check_finite(centroid, "centroid")?;
    check_finite(state.mu, "state mean")?;
    check_finite(state.p, "state variance")?;
    check_exog(x, params)?;
    if state.p < 0.0 {
        return Err(Error::Variance(format!("state P = {}", state.p)));
    }
    let d = y - centroid - x.dot(&params.beta);
    let mu_prior = params.phi * state.mu;
    let p_prior = params.phi * params.phi * state.p + params.sigma2_eta;
    let innovation = d - mu_prior;
    let f = p_prior + params.sigma2_eps;
    if !(f > 0.0) {
        return Err(Error::Variance(format!("innovation variance {f}")));
    }
    let gain = p_prior / f;
    Ok(FilterStep {
        state: FilterState {
            mu: mu_prior + gain * innovation,
            p: (1.0 - gain) * p_prior,
            last_bin: state.last_bin.map(|b| b.next()),
        },
        innovation,
        innovation_variance: f,
        gain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Horizon {
    One,
    Two,
}

impl Horizon {
    pub const ALL: [Horizon; 2] = [Horizon::One, Horizon::Two];

    pub fn steps(self) -> u8 {
        match self {
            Horizon::One => 1,
            Horizon::Two => 2,
        }
    }
}

impl TryFrom<u8> for Horizon {
    type Error = Error;

    fn try_from(h: u8) -> Result<Self> {
        match h {
            1 => Ok(Horizon::One),
            2 => Ok(Horizon::Two),
            _ => Err(Error::OutOfRange(format!("horizon {h} (only 1 and 2 supported)"))),
        }
    }
}

impl From<Horizon> for u8 {
    fn from(h: Horizon) -> u8 {
        h.steps()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub point: f64,
    pub variance: f64,
    pub clamped_point: f64,
}

/// h-step forecast of the count `y_{t+h}` given the filtered state at t.
pub fn predict(
    state: &FilterState,
    params: &StateSpaceParams,
    centroid_at_target: f64,
    x_target: &ExogenousVector,
    h: Horizon,
) -> Result<Prediction> {
    check_finite(centroid_at_target, "centroid")?;
    check_exog(x_target, params)?;
    let phi2 = params.phi * params.phi;
    let (decay, variance) = match h {
        Horizon::One => (params.phi, phi2 * state.p + params.sigma2_eta + params.sigma2_eps),
        Horizon::Two => (phi2, phi2 * phi2 * state.p + (phi2 + 1.0) * params.sigma2_eta + params.sigma2_eps),
    };
    let point = centroid_at_target + decay * state.mu + x_target.dot(&params.beta);
    Ok(Prediction { point, variance, clamped_point: point.max(0.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalForecast {
    pub station: StationId,
    pub target_bin: TimeBin,
    pub horizon: Horizon,
    pub point: f64,
    pub variance: f64,
    pub clamped_point: f64,
    /// Centroid value at the target bin (the historical-average baseline).
    pub baseline: f64,
}

impl ArrivalForecast {
    /// Forecast for `last_observed + h`.
    pub fn new(station: StationId, last_observed: TimeBin, horizon: Horizon, p: Prediction, baseline: f64) -> Self {
        Self {
            station,
            target_bin: last_observed.offset(i64::from(horizon.steps())),
            horizon,
            point: p.point,
            variance: p.variance,
            clamped_point: p.clamped_point,
            baseline,
        }
    }
}

/// One observation of a training or evaluation series.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub centroid: f64,
    pub exog: ExogenousVector,
}

impl Observation {
    pub fn new(y: f64, centroid: f64, exog: ExogenousVector) -> Self {
        Self { y, centroid, exog }
    }
}

/// Gaussian log-likelihood by prediction-error decomposition.
pub fn loglik(params: &StateSpaceParams, series: &[Observation], init: &FilterState) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Config("log-likelihood of an empty series".into()));
    }
    if !(params.sigma2_eps > 0.0) || params.sigma2_eta < 0.0 {
        return Err(Error::Variance(format!("s2_eps = {}, s2_eta = {}", params.sigma2_eps, params.sigma2_eta)));
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut state = init.clone();
    let mut total = 0.0;
    for obs in series {
        let step = filter_update(&state, params, obs.y, obs.centroid, &obs.exog)?;
        total -= 0.5 * (ln_2pi + step.innovation_variance.ln() + step.innovation.powi(2) / step.innovation_variance);
        state = step.state;
    }
    Ok(total)
}

/// [`loglik`] from the stationary start-of-day state.
pub fn loglik_stationary(params: &StateSpaceParams, series: &[Observation]) -> Result<f64> {
    loglik(params, series, &FilterState::stationary(params))
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub min_days: usize,
    /// Perturbed restarts on top of the initial search.
    pub restarts: usize,
    /// Likelihood-ratio threshold (chi-square, 2 dof) the level component
    /// must clear to be kept; below it the pure-noise model is used.
    pub level_lr_threshold: f64,
    pub optimizer: NelderMead,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            min_days: 5,
            restarts: 3,
            level_lr_threshold: 5.991,
            optimizer: NelderMead { max_evals: 4000, f_tol: 1e-10, x_tol: 1e-6 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Full model kept.
    Mle,
    /// Level component not supported by the data; phi = s2_eta = 0.
    NoiseOnly,
    /// Too few days; sample-variance baseline.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub params: StateSpaceParams,
    pub loglik: f64,
    pub method: FitMethod,
    pub days: usize,
    pub observations: usize,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct Layout {
    n_cov: usize,
    active: Vec<usize>,
}

impl Layout {
    fn decode(&self, theta: &[f64]) -> StateSpaceParams {
        let mut beta = vec![0.0; self.n_cov];
        for (k, &j) in self.active.iter().enumerate() {
            beta[j] = theta[3 + k];
        }
        StateSpaceParams {
            phi: PHI_MAX * sigmoid(theta[0]),
            sigma2_eps: theta[1].exp().max(VARIANCE_FLOOR),
            sigma2_eta: theta[2].exp().max(VARIANCE_FLOOR),
            beta,
        }
    }

    fn encode(&self, p: &StateSpaceParams) -> Vec<f64> {
        let phi = (p.phi / PHI_MAX).clamp(1e-6, 1.0 - 1e-6);
        let mut theta = vec![logit(phi), p.sigma2_eps.max(VARIANCE_FLOOR).ln(), p.sigma2_eta.max(VARIANCE_FLOOR).ln()];
        theta.extend(self.active.iter().map(|&j| p.beta.get(j).copied().unwrap_or(0.0)));
        theta
    }
}

fn total_loglik(params: &StateSpaceParams, days: &[Vec<Observation>]) -> Result<f64> {
    days.iter().filter(|d| !d.is_empty()).map(|d| loglik_stationary(params, d)).sum()
}

/// Least-squares covariate effects on the raw deviations, plus the residual
/// mean square. Columns outside `active` are left at zero.
fn ols(days: &[Vec<Observation>], n_cov: usize, active: &[usize]) -> (Vec<f64>, f64) {
    let obs: Vec<&Observation> = days.iter().flatten().collect();
    let d = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.y - o.centroid));
    let mut beta = vec![0.0; n_cov];
    if !active.is_empty() {
        let x = DMatrix::from_fn(obs.len(), active.len(), |r, c| obs[r].exog.values()[active[c]]);
        if let Ok(sol) = x.clone().svd(true, true).solve(&d, 1e-12) {
            for (k, &j) in active.iter().enumerate() {
                beta[j] = sol[k];
            }
        }
    }
    let rss: f64 = obs.iter().map(|o| (o.y - o.centroid - o.exog.dot(&beta)).powi(2)).sum();
    (beta, (rss / obs.len().max(1) as f64).max(VARIANCE_FLOOR))
}

/// Fit one (station, cluster) model from its training days.
///
/// Each inner vector is one service day; the filter restarts at every day
/// boundary. `label` names the model in errors.
pub fn fit_mle(
    days: &[Vec<Observation>],
    init_guess: Option<&StateSpaceParams>,
    opts: &FitOptions,
    label: &str,
) -> Result<FitOutcome> {
    let days: Vec<Vec<Observation>> = days.iter().filter(|d| !d.is_empty()).cloned().collect();
    let n_obs: usize = days.iter().map(Vec::len).sum();
    if n_obs == 0 {
        return Err(Error::Config(format!("{label}: no training observations")));
    }
    let n_cov = days[0][0].exog.len();
    if days.iter().flatten().any(|o| o.exog.len() != n_cov) {
        return Err(Error::Config(format!("{label}: inconsistent covariate lengths")));
    }
    if days.iter().flatten().any(|o| !o.y.is_finite() || !o.centroid.is_finite()) {
        return Err(Error::NonFinite("training observation"));
    }

    if days.len() < opts.min_days {
        let dev: Vec<f64> = days.iter().flatten().map(|o| o.y - o.centroid).collect();
        let mean = dev.iter().sum::<f64>() / dev.len() as f64;
        let var = if dev.len() > 1 {
            dev.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (dev.len() - 1) as f64
        } else {
            0.0
        };
        let params = StateSpaceParams::baseline(n_cov, var);
        let loglik = total_loglik(&params, &days)?;
        return Ok(FitOutcome { params, loglik, method: FitMethod::Fallback, days: days.len(), observations: n_obs });
    }

    let active: Vec<usize> = (0..n_cov).filter(|&j| days.iter().flatten().any(|o| o.exog.values()[j] != 0.0)).collect();
    let layout = Layout { n_cov, active };

    // nested pure-noise model, closed form
    let (ols_beta, rss_var) = ols(&days, n_cov, &layout.active);
    let noise = StateSpaceParams { phi: 0.0, sigma2_eps: rss_var, sigma2_eta: 0.0, beta: ols_beta.clone() };
    let noise_ll = total_loglik(&noise, &days)?;

    let start = match init_guess {
        Some(p) => {
            p.validate()?;
            p.clone()
        }
        None => StateSpaceParams { phi: 0.5, sigma2_eps: 0.5 * rss_var, sigma2_eta: 0.375 * rss_var, beta: ols_beta },
    };
    let theta0 = layout.encode(&start);
    let beta_step = (0.5 * rss_var.sqrt()).max(1.0);
    let step: Vec<f64> = (0..theta0.len()).map(|i| if i < 3 { 1.0 } else { beta_step }).collect();

    let objective = |theta: &[f64]| -> f64 {
        match total_loglik(&layout.decode(theta), &days) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };

    let perturbations: [[f64; 3]; 3] = [[1.5, -1.0, 1.0], [-1.5, 1.0, -1.0], [3.0, 0.0, 0.5]];
    let mut starts = vec![theta0.clone()];
    for p in perturbations.iter().take(opts.restarts) {
        let mut t = theta0.clone();
        t.iter_mut().zip(p).for_each(|(v, d)| *v += d);
        starts.push(t);
    }
    let mut best = starts
        .iter()
        .map(|s| opts.optimizer.minimize(objective, s, &step))
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");
    // one polishing pass from the winner
    let polished = opts.optimizer.minimize(objective, &best.x, &step);
    if polished.value < best.value {
        best = polished;
    }
    if !best.value.is_finite() {
        return Err(Error::Optimizer(label.to_string()));
    }
    let full = layout.decode(&best.x);
    let full_ll = -best.value;

    if 2.0 * (full_ll - noise_ll) < opts.level_lr_threshold {
        return Ok(FitOutcome {
            params: noise,
            loglik: noise_ll,
            method: FitMethod::NoiseOnly,
            days: days.len(),
            observations: n_obs,
        });
    }
    Ok(FitOutcome { params: full, loglik: full_ll, method: FitMethod::Mle, days: days.len(), observations: n_obs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn params(phi: f64, s2e: f64, s2n: f64) -> StateSpaceParams {
        StateSpaceParams::new(phi, s2e, s2n, vec![]).unwrap()
    }

    fn x0() -> ExogenousVector {
        ExogenousVector::zeros(0)
    }

    #[test]
    fn no_deviation_no_memory() {
        let p = params(0.0, 2.0, 1.0);
        let step = filter_update(&FilterState::new(5.0, 3.0), &p, 12.0, 12.0, &x0()).unwrap();
        assert_eq!(step.state.mu, 0.0);
        assert_eq!(step.innovation, 0.0);
    }

    // Frozen from an exact rational evaluation of the four Kalman equations.
    const MU_POST: f64 = 1.0654205607476634;
    const P_POST: f64 = 0.5327102803738317;

    #[test]
    fn scalar_step_matches_oracle() {
        let p = params(0.8, 1.0, 0.5);
        let step = filter_update(&FilterState::new(0.0, 1.0), &p, 12.0, 10.0, &x0()).unwrap();
        assert_relative_eq!(step.state.mu, MU_POST, epsilon = 1e-12);
        assert_relative_eq!(step.state.p, P_POST, epsilon = 1e-12);
        assert_relative_eq!(step.gain, 1.14 / 2.14, epsilon = 1e-12);
        assert_eq!(step.innovation, 2.0);

        let h1 = predict(&step.state, &p, 10.0, &x0(), Horizon::One).unwrap();
        assert_relative_eq!(h1.point, 10.85233644859813, epsilon = 1e-12);
        assert_relative_eq!(h1.variance, 1.8409345794392524, epsilon = 1e-12);
        let h2 = predict(&step.state, &p, 10.0, &x0(), Horizon::Two).unwrap();
        assert_relative_eq!(h2.point, 10.681869158878504, epsilon = 1e-12);
        assert_relative_eq!(h2.variance, 2.0381981308411214, epsilon = 1e-12);
    }

    #[test]
    fn huge_observation_noise_ignores_the_observation() {
        let p = params(0.8, 1e9, 0.5);
        let state = FilterState::new(0.0, 1.0);
        let step = filter_update(&state, &p, 12.0, 10.0, &x0()).unwrap();
        assert!((step.state.mu - 0.8 * state.mu).abs() < 1e-6);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let p = params(0.5, 1.0, 1.0);
        let s = FilterState::new(0.0, 1.0);
        assert!(matches!(filter_update(&s, &p, f64::NAN, 0.0, &x0()), Err(Error::NonFinite(_))));
        assert!(filter_update(&s, &p, 1.0, f64::INFINITY, &x0()).is_err());
        assert!(filter_update(&FilterState::new(0.0, -1.0), &p, 1.0, 0.0, &x0()).is_err());
    }

    #[test]
    fn memoryless_forecast_is_the_centroid() {
        let p = params(0.0, 1.0, 1.0);
        let pred = predict(&FilterState::new(7.0, 2.0), &p, 42.0, &x0(), Horizon::Two).unwrap();
        assert_eq!(pred.point, 42.0);
        let p = params(0.9, 1.0, 1.0);
        let pred = predict(&FilterState::new(0.0, 2.0), &p, 42.0, &x0(), Horizon::One).unwrap();
        assert_eq!(pred.point, 42.0);
    }

    #[test]
    fn forecast_targets_follow_the_last_observed_bin() {
        let day = chrono::NaiveDate::from_ymd_opt(2013, 2, 5).unwrap();
        let bin32 = TimeBin::new(day, 32, 15).unwrap();
        let pred = Prediction { point: 1.0, variance: 1.0, clamped_point: 1.0 };
        let f1 = ArrivalForecast::new("S1".into(), bin32, Horizon::One, pred, 1.0);
        let f2 = ArrivalForecast::new("S1".into(), bin32, Horizon::Two, pred, 1.0);
        assert_eq!((f1.target_bin.index, f2.target_bin.index), (33, 34));
        let last = TimeBin::new(day, 95, 15).unwrap();
        let f = ArrivalForecast::new("S1".into(), last, Horizon::Two, pred, 1.0);
        assert_eq!(f.target_bin.index, 1);
        assert_eq!(f.target_bin.service_day, day.succ_opt().unwrap());
    }

    #[test]
    fn clamping_is_output_only() {
        let p = StateSpaceParams::new(0.9, 1.0, 1.0, vec![-100.0]).unwrap();
        let x = ExogenousVector(vec![1.0]);
        let pred = predict(&FilterState::new(-5.0, 1.0), &p, 10.0, &x, Horizon::One).unwrap();
        assert_relative_eq!(pred.point, 10.0 - 4.5 - 100.0);
        assert_eq!(pred.clamped_point, 0.0);
        assert!(pred.variance >= p.sigma2_eps);
    }

    #[test]
    fn single_observation_loglik() {
        let p = params(0.0, 2.0, 0.0);
        let init = FilterState::stationary(&p);
        assert_eq!(init.p, 0.0);
        let ll = loglik(&p, &[Observation::new(13.0, 10.0, x0())], &init).unwrap();
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * 2.0).ln() + 9.0 / 2.0);
        assert_relative_eq!(ll, expected, epsilon = 1e-12);
    }

    #[test]
    fn three_point_loglik_matches_joint_density() {
        // frozen from a multivariate-normal density evaluation with the
        // stationary AR(1) covariance plus observation noise
        let p = params(0.8, 1.0, 0.5);
        let series: Vec<_> = [2.0, -1.0, 0.5].iter().map(|d| Observation::new(50.0 + d, 50.0, x0())).collect();
        let ll = loglik_stationary(&p, &series).unwrap();
        assert_relative_eq!(ll, -5.694211499099742, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_scaling_identity() {
        let p = params(0.7, 1.3, 0.4);
        let scaled = params(0.7, 4.0 * 1.3, 4.0 * 0.4);
        let ds = [1.5, -0.3, 2.2, 0.9, -1.1, 0.4];
        let series: Vec<_> = ds.iter().map(|d| Observation::new(100.0 + d, 100.0, x0())).collect();
        let doubled: Vec<_> = ds.iter().map(|d| Observation::new(100.0 + 2.0 * d, 100.0, x0())).collect();
        let a = loglik_stationary(&p, &series).unwrap();
        let b = loglik_stationary(&scaled, &doubled).unwrap();
        assert_relative_eq!(b - a, -(ds.len() as f64) * 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn loglik_rejects_bad_variances_and_empty_series() {
        let bad = StateSpaceParams { phi: 0.5, sigma2_eps: 0.0, sigma2_eta: 1.0, beta: vec![] };
        let s = [Observation::new(1.0, 0.0, x0())];
        assert!(matches!(loglik(&bad, &s, &FilterState::new(0.0, 1.0)), Err(Error::Variance(_))));
        assert!(loglik(&params(0.5, 1.0, 1.0), &[], &FilterState::new(0.0, 1.0)).is_err());
    }

    #[test]
    fn gain_and_variance_shrink() {
        let p = params(0.6, 0.7, 0.2);
        let mut s = FilterState::new(1.0, 3.0);
        for y in [3.0, 1.0, 4.0, 1.0, 5.0] {
            let p_prior = p.phi * p.phi * s.p + p.sigma2_eta;
            let step = filter_update(&s, &p, y, 2.0, &x0()).unwrap();
            assert!(step.gain > 0.0 && step.gain < 1.0);
            assert!(step.state.p < p_prior);
            s = step.state;
        }
    }

    #[test]
    fn two_one_step_propagations_equal_the_two_step_formula() {
        let p = StateSpaceParams::new(0.85, 1.7, 0.6, vec![3.0]).unwrap();
        let s = FilterState::new(2.5, 0.9);
        let x = ExogenousVector(vec![1.0]);
        let h2 = predict(&s, &p, 30.0, &x, Horizon::Two).unwrap();
        let via = predict(&s.propagate(&p), &p, 30.0, &x, Horizon::One).unwrap();
        assert!((h2.point - via.point).abs() < 1e-9);
        assert!((h2.variance - via.variance).abs() < 1e-9);
    }

    #[test]
    fn forecast_is_affine_in_covariates() {
        let beta = vec![12.5, -3.25];
        let p = StateSpaceParams::new(0.8, 1.0, 0.5, beta.clone()).unwrap();
        let s = FilterState::new(1.0, 1.0);
        let base = predict(&s, &p, 20.0, &ExogenousVector(vec![0.3, 0.7]), Horizon::One).unwrap().point;
        for j in 0..2 {
            let mut x = vec![0.3, 0.7];
            x[j] += 1.0;
            let bumped = predict(&s, &p, 20.0, &ExogenousVector(x), Horizon::One).unwrap().point;
            assert!((bumped - base - beta[j]).abs() < 1e-9);
        }
    }

    fn simulate_days(
        truth: &StateSpaceParams,
        n_days: usize,
        bins: usize,
        event_at: impl Fn(usize, usize) -> bool,
        seed: u64,
    ) -> Vec<Vec<Observation>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = Normal::new(0.0, truth.sigma2_eps.sqrt()).unwrap();
        (0..n_days)
            .map(|day| {
                let mut mu = if truth.sigma2_eta > 0.0 {
                    Normal::new(0.0, truth.stationary_variance().sqrt()).unwrap().sample(&mut rng)
                } else {
                    0.0
                };
                (0..bins)
                    .map(|b| {
                        let m = 200.0 + 100.0 * ((b as f64) / 10.0).sin();
                        let x = ExogenousVector(vec![if event_at(day, b) { 1.0 } else { 0.0 }]);
                        let y = m + x.dot(&truth.beta) + mu + eps.sample(&mut rng);
                        if truth.sigma2_eta > 0.0 {
                            mu = truth.phi * mu + Normal::new(0.0, truth.sigma2_eta.sqrt()).unwrap().sample(&mut rng);
                        }
                        Observation::new(y, m, x)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn pure_noise_recovers_variance_and_low_persistence() {
        let truth = StateSpaceParams::new(0.0, 100.0, 0.0, vec![0.0]).unwrap();
        let days = simulate_days(&truth, 20, 96, |_, _| false, 11);
        let fit = fit_mle(&days, None, &FitOptions::default(), "noise").unwrap();
        assert!(fit.params.phi < 0.3, "{fit:?}");
        assert!((fit.params.sigma2_eps / 100.0 - 1.0).abs() < 0.3, "{fit:?}");
    }

    #[test]
    fn persistent_level_is_recovered() {
        let truth = StateSpaceParams::new(0.95, 25.0, 25.0, vec![50.0]).unwrap();
        let days = simulate_days(&truth, 20, 96, |d, b| d % 3 == 0 && (40..44).contains(&b), 5);
        let fit = fit_mle(&days, None, &FitOptions::default(), "ar").unwrap();
        assert_eq!(fit.method, FitMethod::Mle);
        assert!(fit.params.phi > 0.9, "{fit:?}");
        assert!((35.0..=65.0).contains(&fit.params.beta[0]), "{fit:?}");
    }

    #[test]
    fn constant_data_hits_the_variance_floor() {
        let days: Vec<Vec<Observation>> =
            (0..6).map(|_| (0..20).map(|b| Observation::new(b as f64, b as f64, x0())).collect()).collect();
        let fit = fit_mle(&days, None, &FitOptions::default(), "flat").unwrap();
        assert_eq!(fit.params.sigma2_eps, VARIANCE_FLOOR);
        assert!(fit.loglik.is_finite());
    }

    #[test]
    fn few_days_fall_back_to_sample_variance() {
        let days = vec![
            vec![Observation::new(12.0, 10.0, x0()), Observation::new(8.0, 10.0, x0())],
            vec![Observation::new(10.0, 10.0, x0())],
        ];
        let fit = fit_mle(&days, None, &FitOptions::default(), "short").unwrap();
        assert_eq!(fit.method, FitMethod::Fallback);
        assert_eq!(fit.params.phi, 0.0);
        assert_relative_eq!(fit.params.sigma2_eps, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn params_json_uses_short_names() {
        let p = StateSpaceParams::new(0.5, 2.0, 1.0, vec![3.0]).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"phi":0.5,"s2_eps":2.0,"s2_eta":1.0,"beta":[3.0]}"#);
        let s = serde_json::to_string(&FilterState::new(1.0, 2.0)).unwrap();
        assert_eq!(s, r#"{"mu":1.0,"P":2.0,"bin":null}"#);
    }
}
