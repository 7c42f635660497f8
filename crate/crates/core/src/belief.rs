//! Exact Bayesian filtering over the `2^N` joint hidden state.
//!
//! The filter keeps the posterior `P(S_t | evidence)` normalised and folds the
//! normalisers into a log-scale accumulator, so that
//! `weights * exp(log_scale)` is the unnormalised forward variable
//! `p(S_t, A_1..A_t)`. The prediction step applies each process's 2x2 kernel
//! along its own bit, which costs `O(N 2^N)` instead of a dense
//! `2^N x 2^N` product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict_activation_prob, stationary_on_prob, ActivationVector, ProcessState, ScenarioConfig};

/// Largest number of processes accepted by the exact filter.
pub const MAX_FILTER_PROCESSES: usize = 24;

/// What the aggregator learned about one device in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Evidence {
    ObservedActive,
    ObservedSilent,
    Unobserved,
}

/// Per-device evidence for one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation(Vec<Evidence>);

impl Observation {
    pub fn new(evidence: Vec<Evidence>) -> Self {
        Observation(evidence)
    }

    pub fn unobserved(n_devices: usize) -> Self {
        Observation(vec![Evidence::Unobserved; n_devices])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> Evidence {
        self.0[k]
    }

    pub fn as_slice(&self) -> &[Evidence] {
        &self.0
    }
}

/// Which hidden-state summary drives the per-device forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    /// Predict from the single most likely state.
    #[default]
    MapState,
    /// Average the prediction over the whole posterior.
    Marginal,
}

/// Normalised posterior over joint hidden states plus accumulated log-normaliser.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    weights: Vec<f64>,
    log_scale: f64,
}

impl BeliefState {
    /// Builds a belief from explicit weights, normalising them.
    pub fn from_weights(weights: Vec<f64>, log_scale: f64) -> Result<Self> {
        if !weights.len().is_power_of_two() {
            return Err(Error::config(
                "weights",
                format!("{} entries is not a power of two", weights.len()),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("weights", "entries must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Contradiction);
        }
        Ok(BeliefState {
            weights: weights.into_iter().map(|w| w / total).collect(),
            log_scale: log_scale + total.ln(),
        })
    }

    /// All mass on one state.
    pub fn point_mass(state: ProcessState) -> Self {
        let mut weights = vec![0.0; 1 << state.n_processes()];
        weights[state.index() as usize] = 1.0;
        BeliefState {
            weights,
            log_scale: 0.0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn n_processes(&self) -> usize {
        self.weights.len().trailing_zeros() as usize
    }

    /// `weights * exp(log_scale)`.
    pub fn unnormalized_joint(&self) -> Vec<f64> {
        let scale = self.log_scale.exp();
        self.weights.iter().map(|w| w * scale).collect()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .weights
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| w * w.ln())
            .sum::<f64>()
    }
}

/// Precomputed transition kernels and per-device emission tables for one scenario.
#[derive(Debug, Clone)]
pub struct BeliefModel {
    config: ScenarioConfig,
    n_states: usize,
    /// `silence[k * n_states + s] = prod_n (1 - q_nk)^{s_n}`.
    silence: Vec<f64>,
}

impl BeliefModel {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_processes;
        if n > MAX_FILTER_PROCESSES {
            return Err(Error::Capacity {
                n_processes: n,
                max: MAX_FILTER_PROCESSES,
            });
        }
        let n_states = 1usize << n;
        let mut silence = vec![0.0; config.n_devices * n_states];
        for (k, row) in silence.chunks_exact_mut(n_states).enumerate() {
            row[0] = 1.0;
            for s in 1..n_states {
                let low = s.trailing_zeros() as usize;
                row[s] = row[s & (s - 1)] * (1.0 - config.q[low][k]);
            }
        }
        Ok(BeliefModel {
            config: config.clone(),
            n_states,
            silence,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    fn silence_row(&self, k: usize) -> &[f64] {
        &self.silence[k * self.n_states..(k + 1) * self.n_states]
    }

    /// Product of the stationary marginals of every process.
    pub fn init_belief(&self) -> Result<BeliefState> {
        let mut weights = vec![1.0; self.n_states];
        for n in 0..self.config.n_processes {
            let p_on = stationary_on_prob(&self.config, n)?;
            let bit = 1usize << n;
            for (s, w) in weights.iter_mut().enumerate() {
                *w *= if s & bit != 0 { p_on } else { 1.0 - p_on };
            }
        }
        Ok(BeliefState {
            weights,
            log_scale: 0.0,
        })
    }

    /// Propagates the belief one slot through the transition kernels. Total
    /// mass is preserved, so `log_scale` is unchanged.
    pub fn predict(&self, belief: &BeliefState) -> BeliefState {
        let mut w = belief.weights.clone();
        self.propagate(&mut w);
        BeliefState {
            weights: w,
            log_scale: belief.log_scale,
        }
    }

    fn propagate(&self, w: &mut [f64]) {
        for n in 0..self.config.n_processes {
            let (e0, e1) = (self.config.eps0[n], self.config.eps1[n]);
            let bit = 1usize << n;
            for block in w.chunks_exact_mut(2 * bit) {
                let (off, on) = block.split_at_mut(bit);
                for (w0, w1) in off.iter_mut().zip(on.iter_mut()) {
                    let (a, b) = (*w0, *w1);
                    *w0 = a * (1.0 - e1) + b * e0;
                    *w1 = a * e1 + b * (1.0 - e0);
                }
            }
        }
    }

    /// `p(A_t | S_t = state_index)` with unobserved devices marginalised out.
    pub fn emission_likelihood(&self, state_index: usize, obs: &Observation) -> f64 {
        obs.as_slice()
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let silent = self.silence_row(k)[state_index];
                match e {
                    Evidence::ObservedActive => 1.0 - silent,
                    Evidence::ObservedSilent => silent,
                    Evidence::Unobserved => 1.0,
                }
            })
            .product()
    }

    /// One step of the forward recursion: predict, weight by the emission
    /// likelihood, renormalise.
    pub fn forward_update(&self, belief: &BeliefState, obs: &Observation) -> Result<BeliefState> {
        if obs.len() != self.config.n_devices {
            return Err(Error::LengthMismatch {
                expected: self.config.n_devices,
                actual: obs.len(),
            });
        }
        let mut w = belief.weights.clone();
        self.propagate(&mut w);
        if obs.as_slice().iter().all(|e| *e == Evidence::Unobserved) {
            // Emission is identically 1: the posterior is the prediction.
            return Ok(BeliefState {
                weights: w,
                log_scale: belief.log_scale,
            });
        }
        for (k, e) in obs.as_slice().iter().enumerate() {
            let row = self.silence_row(k);
            match e {
                Evidence::ObservedActive => w.iter_mut().zip(row).for_each(|(w, s)| *w *= 1.0 - s),
                Evidence::ObservedSilent => w.iter_mut().zip(row).for_each(|(w, s)| *w *= s),
                Evidence::Unobserved => {}
            }
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Contradiction);
        }
        w.iter_mut().for_each(|x| *x /= total);
        Ok(BeliefState {
            weights: w,
            log_scale: belief.log_scale + total.ln(),
        })
    }

    /// Probability that each device is active in the next slot.
    pub fn device_forecast(&self, belief: &BeliefState, mode: ForecastMode) -> Vec<f64> {
        let k_devices = self.config.n_devices;
        match mode {
            ForecastMode::MapState => {
                let map = most_likely_state(belief);
                (0..k_devices)
                    .map(|k| predict_activation_prob(map, k, &self.config))
                    .collect()
            }
            ForecastMode::Marginal => {
                let next = self.predict(belief);
                (0..k_devices)
                    .map(|k| {
                        next.weights
                            .iter()
                            .zip(self.silence_row(k))
                            .map(|(w, s)| w * (1.0 - s))
                            .sum()
                    })
                    .collect()
            }
        }
    }
}

/// Posterior mode; ties go to the lowest state index.
pub fn most_likely_state(belief: &BeliefState) -> ProcessState {
    let mut best = 0;
    for (s, &w) in belief.weights.iter().enumerate() {
        if w > belief.weights[best] {
            best = s;
        }
    }
    ProcessState::from_index(best as u64, belief.n_processes())
}

/// Most likely next-slot activation pattern given a state. The pattern
/// probability factorises over devices, so each bit is set independently
/// when its probability exceeds one half.
pub fn most_likely_pattern(state: ProcessState, config: &ScenarioConfig) -> ActivationVector {
    ActivationVector::new(
        (0..config.n_devices)
            .map(|k| predict_activation_prob(state, k, config) > 0.5)
            .collect(),
    )
}
