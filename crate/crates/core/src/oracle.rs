//! Brute-force reference computations.
//!
//! Everything here is computed straight from the scenario's raw transition
//! and activation probabilities by exhaustive enumeration, without going
//! through the filter's factorised kernels or emission tables. The functions
//! are exponential in the problem size and only meant for small instances.

use rand::Rng;
use serde::Serialize;

use crate::belief::{BeliefModel, Evidence, Observation};
use crate::error::{Error, Result};
use crate::model::{
    initial_state, predict_activation_prob, sample_activations, sample_scenario, step_processes, ProcessState,
    RngStream, ScenarioConfig, ScenarioTemplate,
};

/// Largest process count the path-enumeration suite accepts.
pub const MAX_ORACLE_PROCESSES: usize = 4;

fn bit(s: usize, n: usize) -> bool {
    s >> n & 1 == 1
}

fn transition_prob(config: &ScenarioConfig, from: usize, to: usize) -> f64 {
    (0..config.n_processes)
        .map(|n| match (bit(from, n), bit(to, n)) {
            (true, true) => 1.0 - config.eps0[n],
            (true, false) => config.eps0[n],
            (false, true) => config.eps1[n],
            (false, false) => 1.0 - config.eps1[n],
        })
        .product()
}

fn active_prob(config: &ScenarioConfig, s: usize, k: usize) -> f64 {
    let mut silent = 1.0;
    for n in 0..config.n_processes {
        if bit(s, n) {
            silent *= 1.0 - config.q[n][k];
        }
    }
    1.0 - silent
}

fn emission(config: &ScenarioConfig, s: usize, obs: &Observation) -> f64 {
    let mut p = 1.0;
    for k in 0..config.n_devices {
        p *= match obs.get(k) {
            Evidence::ObservedActive => active_prob(config, s, k),
            Evidence::ObservedSilent => 1.0 - active_prob(config, s, k),
            Evidence::Unobserved => 1.0,
        };
    }
    p
}

/// Full `2^N x 2^N` transition matrix, `m[from][to]`.
pub fn dense_transition_matrix(config: &ScenarioConfig) -> Vec<Vec<f64>> {
    let n_states = config.num_states();
    (0..n_states)
        .map(|from| (0..n_states).map(|to| transition_prob(config, from, to)).collect())
        .collect()
}

/// Fixed point of the joint chain found by repeated dense multiplication
/// from the uniform distribution.
pub fn stationary_by_power_iteration(config: &ScenarioConfig, iterations: usize) -> Vec<f64> {
    let m = dense_transition_matrix(config);
    let n_states = m.len();
    let mut dist = vec![1.0 / n_states as f64; n_states];
    for _ in 0..iterations {
        dist = (0..n_states)
            .map(|to| (0..n_states).map(|from| dist[from] * m[from][to]).sum())
            .collect();
    }
    dist
}

/// Next-slot activation probability by summing over every successor state.
pub fn predict_by_marginalization(state: ProcessState, k: usize, config: &ScenarioConfig) -> f64 {
    let from = state.index() as usize;
    (0..config.num_states())
        .map(|to| transition_prob(config, from, to) * active_prob(config, to, k))
        .sum()
}

/// Most probable joint pattern under independent Bernoulli marginals, found
/// by trying all `2^K` patterns. Ties keep the earliest pattern in counting
/// order, which favours zeros.
pub fn best_pattern_exhaustive(probs: &[f64]) -> Vec<bool> {
    let k = probs.len();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for pattern in 0..1usize << k {
        let p: f64 = (0..k)
            .map(|i| if bit(pattern, i) { probs[i] } else { 1.0 - probs[i] })
            .product();
        if p > best.0 {
            best = (p, pattern);
        }
    }
    (0..k).map(|i| bit(best.1, i)).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Unnormalised `p(S_T, A_1..A_T)` by summing over every hidden path
/// `S_0, ..., S_T`, with `S_0` drawn from the stationary product prior.
pub fn path_enumeration_joint(config: &ScenarioConfig, observations: &[Observation]) -> Vec<f64> {
    let n_states = config.num_states();
    let prior: Vec<f64> = (0..n_states)
        .map(|s| {
            (0..config.n_processes)
                .map(|n| {
                    let (e0, e1) = (config.eps0[n], config.eps1[n]);
                    if bit(s, n) {
                        e1 / (e0 + e1)
                    } else {
                        e0 / (e0 + e1)
                    }
                })
                .product()
        })
        .collect();
    let trans = dense_transition_matrix(config);
    let emit: Vec<Vec<f64>> = observations
        .iter()
        .map(|obs| (0..n_states).map(|s| emission(config, s, obs)).collect())
        .collect();

    fn walk(t: usize, state: usize, weight: f64, trans: &[Vec<f64>], emit: &[Vec<f64>], out: &mut [f64]) {
        if t == emit.len() {
            out[state] += weight;
            return;
        }
        for next in 0..out.len() {
            walk(t + 1, next, weight * trans[state][next] * emit[t][next], trans, emit, out);
        }
    }

    let mut out = vec![0.0; n_states];
    for (s0, &p) in prior.iter().enumerate() {
        walk(0, s0, p, &trans, &emit, &mut out);
    }
    out
}

/// Simulates `horizon` slots of the model and hides each device's evidence
/// independently with probability `unobserved_frac`.
pub fn sample_observations<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    horizon: usize,
    unobserved_frac: f64,
    rng: &mut R,
) -> Vec<Observation> {
    let mut state = initial_state(config, rng).expect("oracle scenarios have nondegenerate chains");
    (0..horizon)
        .map(|_| {
            state = step_processes(state, config, rng);
            let a = sample_activations(state, config, rng);
            Observation::new(
                a.as_slice()
                    .iter()
                    .map(|&active| {
                        if rng.gen::<f64>() < unobserved_frac {
                            Evidence::Unobserved
                        } else if active {
                            Evidence::ObservedActive
                        } else {
                            Evidence::ObservedSilent
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Draws a small random instance for the oracle suites.
pub fn random_instance(max_n: usize, max_k: usize, seed: u64) -> ScenarioConfig {
    let mut rng = RngStream::new(seed, 0, "oracle-dims");
    let n = rng.gen_range(1..=max_n);
    let k = rng.gen_range(1..=max_k);
    let template = ScenarioTemplate {
        n_processes: n,
        n_devices: k,
        n_slots: 1,
        horizon: 0,
        eps_max: 0.5,
    };
    sample_scenario(&template, seed, &mut RngStream::new(seed, 0, "oracle-scenario"))
        .expect("template is valid")
}

/// Maximum absolute deviation between the filter's unnormalised joint and
/// exhaustive path enumeration on one instance.
pub fn forward_deviation(config: &ScenarioConfig, observations: &[Observation]) -> Result<f64> {
    let model = BeliefModel::new(config)?;
    let mut belief = model.init_belief()?;
    for obs in observations {
        belief = model.forward_update(&belief, obs)?;
    }
    let expected = path_enumeration_joint(config, observations);
    Ok(belief
        .unnormalized_joint()
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Maximum absolute deviation between the closed-form predictor and
/// successor-state marginalisation over every state and device.
pub fn predictor_deviation(config: &ScenarioConfig) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..config.num_states() {
        let state = ProcessState::from_index(s as u64, config.n_processes);
        for k in 0..config.n_devices {
            let d = (predict_activation_prob(state, k, config) - predict_by_marginalization(state, k, config)).abs();
            worst = worst.max(d);
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleParams {
    pub max_n: usize,
    pub max_k: usize,
    pub max_t: usize,
    pub instances: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub forward_max_dev: f64,
    pub forward_worst_seed: u64,
    pub predictor_max_dev: f64,
    pub predictor_worst_seed: u64,
    pub instances: usize,
}

impl OracleReport {
    pub fn max_deviation(&self) -> f64 {
        self.forward_max_dev.max(self.predictor_max_dev)
    }

    pub fn worst_seed(&self) -> u64 {
        if self.forward_max_dev >= self.predictor_max_dev {
            self.forward_worst_seed
        } else {
            self.predictor_worst_seed
        }
    }
}

/// Runs the forward-algorithm and predictor oracles over randomized
/// instances. Instance `i` uses seed `params.seed + i`.
pub fn run_suite(params: &OracleParams) -> Result<OracleReport> {
    if params.max_n == 0 || params.max_n > MAX_ORACLE_PROCESSES {
        return Err(Error::config(
            "max_n",
            format!(
                "path enumeration needs 1 <= max_n <= {MAX_ORACLE_PROCESSES}, got {}",
                params.max_n
            ),
        ));
    }
    if params.max_k == 0 {
        return Err(Error::config("max_k", "must be at least 1"));
    }
    if params.max_t == 0 {
        return Err(Error::config("max_t", "must be at least 1"));
    }
    let mut report = OracleReport {
        forward_max_dev: 0.0,
        forward_worst_seed: params.seed,
        predictor_max_dev: 0.0,
        predictor_worst_seed: params.seed,
        instances: params.instances,
    };
    for i in 0..params.instances as u64 {
        let seed = params.seed.wrapping_add(i);
        let config = random_instance(params.max_n, params.max_k, seed);
        let mut rng = RngStream::new(seed, 0, "oracle-trajectory");
        let horizon = rng.gen_range(1..=params.max_t);
        let observations = sample_observations(&config, horizon, 0.3, &mut rng);
        let fwd = forward_deviation(&config, &observations)?;
        if fwd > report.forward_max_dev {
            report.forward_max_dev = fwd;
            report.forward_worst_seed = seed;
        }
        let pred = predictor_deviation(&config);
        if pred > report.predictor_max_dev {
            report.predictor_max_dev = pred;
            report.predictor_worst_seed = seed;
        }
    }
    Ok(report)
}
