//! Simulation of the full data-generating process.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::copula::TCopula;
use crate::data::{Panel, Transform};
use crate::error::{Error, Result};
use crate::marginal::StandardizedNct;
use crate::spec::{ModelSpec, ParameterSet};
use crate::state::{Conditional, FilterState, InitialState};

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    /// Rows in the returned panel (the two starting rows count when nothing
    /// is discarded).
    pub len: usize,
    /// Level used for the two starting rows.
    pub start: Vec<f64>,
    /// Rows simulated and dropped before the returned sample.
    pub discard: usize,
    /// Starting variance and latent dependence; stationary values when `None`.
    pub init: Option<InitialState>,
    pub seed: u64,
    pub first_date: NaiveDate,
}

impl SimulationConfig {
    pub fn new(len: usize, start: Vec<f64>, seed: u64) -> Self {
        Self {
            len,
            start,
            discard: 0,
            init: None,
            seed,
            first_date: NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
        }
    }
}

/// Stationary starting values: unconditional variances (or `omega` when the
/// GARCH is integrated) and the fixed point of the dependence recursion.
pub fn stationary_init(p: &ParameterSet) -> InitialState {
    let sigma2 = p
        .garch
        .iter()
        .map(|g| {
            let v = g.unconditional_variance();
            if v.is_finite() && v > 0.0 {
                v
            } else {
                g.omega
            }
        })
        .collect();
    InitialState {
        sigma2,
        xi: p.copula.stationary_xi(),
    }
}

/// Draws one vector of standardized residuals from the conditional law.
pub(crate) fn draw_residuals<R: Rng + ?Sized>(
    cond: &Conditional,
    laws: &[StandardizedNct],
    theta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let tails = if laws.len() >= 2 {
        TCopula::new(&cond.corr()?, theta)?.sample_tails(rng)
    } else {
        let u: f64 = rng.random();
        let u = u.max(f64::MIN_POSITIVE);
        vec![(u, 1.0 - u)]
    };
    Ok(tails.iter().zip(laws).map(|(&(lo, up), law)| law.quantile_tails(lo, up)).collect())
}

pub(crate) fn laws(p: &ParameterSet) -> Result<Vec<StandardizedNct>> {
    p.marginals.iter().map(|m| StandardizedNct::new(m.nu, m.lambda)).collect()
}

/// A simulated panel with the conditional variances that generated it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub panel: Panel,
    /// Conditional variances of the generated rows that were kept, in order.
    /// Without a discard these belong to panel rows 2, 3, ...
    pub sigma2: Vec<Vec<f64>>,
    pub init: InitialState,
}

/// Simulates a panel from `spec` at parameters `p`. The series are on the
/// model scale (logs for log-scale specs).
pub fn simulate(spec: &ModelSpec, p: &ParameterSet, cfg: &SimulationConfig) -> Result<Panel> {
    simulate_full(spec, p, cfg).map(|s| s.panel)
}

pub fn simulate_full(spec: &ModelSpec, p: &ParameterSet, cfg: &SimulationConfig) -> Result<Simulation> {
    p.validate(spec)?;
    let k = p.dim();
    if cfg.start.len() != k {
        return Err(Error::DimensionMismatch(format!("{} starting values for {k} series", cfg.start.len())));
    }
    if cfg.len < 3 {
        return Err(Error::InsufficientData(format!("cannot simulate {} rows, need at least 3", cfg.len)));
    }
    let init = cfg.init.clone().unwrap_or_else(|| stationary_init(p));
    let laws = laws(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = FilterState::initial(&cfg.start, &cfg.start, &init);
    let total = cfg.discard + cfg.len;
    let mut values = Vec::with_capacity(cfg.len * k);
    let mut sigma2 = Vec::with_capacity(cfg.len);
    for r in 0..2 {
        if r >= cfg.discard {
            values.extend_from_slice(&cfg.start);
        }
    }
    for t in 2..total {
        let cond = state.next_conditional(p)?;
        let z = draw_residuals(&cond, &laws, p.copula.theta, &mut rng)?;
        let x: Vec<f64> = (0..k).map(|i| cond.mu[i] + cond.sigma2[i].sqrt() * z[i]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t,
                component: "simulated observation".into(),
            });
        }
        if t >= cfg.discard {
            values.extend_from_slice(&x);
            sigma2.push(cond.sigma2.clone());
        }
        state = state.advance(&cond, &x);
    }
    let labels = (0..k).map(|i| format!("x{}", i + 1)).collect();
    let transform = if spec.log_scale { Transform::Log } else { Transform::Levels };
    let panel = Panel::with_weekdays(cfg.first_date, labels, values, transform)?;
    Ok(Simulation { panel, sigma2, init })
}
