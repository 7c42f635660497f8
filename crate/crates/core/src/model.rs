//! Problem instance and ground-truth generative process.
//!
//! `N` independent On-Off Markov event sources evolve in discrete slots. A
//! source that is On activates device `k` with probability `q[n][k]`; a device
//! is active when at least one source activates it. Process `n` (0-based) is
//! bit `n` of a [`ProcessState`] index, so the least significant bit is the
//! first process.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest number of event processes a [`ProcessState`] can hold.
pub const MAX_PROCESSES: usize = 64;

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_processes: usize,
    pub n_devices: usize,
    /// Grants available per time slot (`L`).
    pub n_slots: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Per-process On -> Off probability.
    pub eps0: Vec<f64>,
    /// Per-process Off -> On probability.
    pub eps1: Vec<f64>,
    /// Activation probabilities, `q[n][k]`, row-major by process.
    pub q: Vec<Vec<f64>>,
}

fn check_prob(key: impl FnOnce() -> String, p: f64) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(key(), format!("{p} is not a probability in [0, 1]")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_processes;
        let k = self.n_devices;
        if n == 0 {
            return Err(Error::config("n_processes", "must be at least 1"));
        }
        if n > MAX_PROCESSES {
            return Err(Error::config(
                "n_processes",
                format!("at most {MAX_PROCESSES} processes are supported"),
            ));
        }
        if k == 0 {
            return Err(Error::config("n_devices", "must be at least 1"));
        }
        if self.n_slots == 0 {
            return Err(Error::config("n_slots", "must be at least 1"));
        }
        if self.n_slots > k {
            return Err(Error::config(
                "n_slots",
                format!("{} grants per slot exceeds {} devices", self.n_slots, k),
            ));
        }
        for (name, eps) in [("eps0", &self.eps0), ("eps1", &self.eps1)] {
            if eps.len() != n {
                return Err(Error::config(
                    name,
                    format!("expected {n} entries (one per process), found {}", eps.len()),
                ));
            }
            for (i, &p) in eps.iter().enumerate() {
                check_prob(|| format!("{name}[{i}]"), p)?;
            }
        }
        if self.q.len() != n {
            return Err(Error::config(
                "q",
                format!("expected {n} rows (one per process), found {}", self.q.len()),
            ));
        }
        for (i, row) in self.q.iter().enumerate() {
            if row.len() != k {
                return Err(Error::config(
                    format!("q[{i}]"),
                    format!("expected {k} entries (one per device), found {}", row.len()),
                ));
            }
            for (j, &p) in row.iter().enumerate() {
                check_prob(|| format!("q[{i}][{j}]"), p)?;
            }
        }
        Ok(())
    }

    /// Parses and validates a JSON scenario document.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn num_states(&self) -> usize {
        1usize << self.n_processes
    }
}

/// Joint hidden state of all event processes, stored as a bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProcessState {
    index: u64,
    n_processes: usize,
}

impl ProcessState {
    pub fn all_off(n_processes: usize) -> Self {
        assert!(n_processes <= MAX_PROCESSES);
        ProcessState {
            index: 0,
            n_processes,
        }
    }

    pub fn from_index(index: u64, n_processes: usize) -> Self {
        assert!(n_processes <= MAX_PROCESSES);
        assert!(
            n_processes == MAX_PROCESSES || index >> n_processes == 0,
            "state index {index} out of range for {n_processes} processes"
        );
        ProcessState { index, n_processes }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut state = Self::all_off(bits.len());
        for (n, &on) in bits.iter().enumerate() {
            state.set(n, on);
        }
        state
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn n_processes(&self) -> usize {
        self.n_processes
    }

    pub fn is_on(&self, n: usize) -> bool {
        debug_assert!(n < self.n_processes);
        self.index >> n & 1 == 1
    }

    pub fn set(&mut self, n: usize, on: bool) {
        debug_assert!(n < self.n_processes);
        if on {
            self.index |= 1 << n;
        } else {
            self.index &= !(1 << n);
        }
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.n_processes).map(|n| self.is_on(n)).collect()
    }

    pub fn count_on(&self) -> u32 {
        self.index.count_ones()
    }
}

/// Ground-truth device activity in one slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationVector(Vec<bool>);

impl ActivationVector {
    pub fn new(bits: Vec<bool>) -> Self {
        ActivationVector(bits)
    }

    pub fn zeros(n_devices: usize) -> Self {
        ActivationVector(vec![false; n_devices])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.0[k]
    }

    pub fn count_active(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

/// Deterministic random stream keyed by `(master seed, run index, purpose)`.
///
/// The key is hashed with SHA-256 into a ChaCha8 seed, so distinct purposes
/// within one run never share draws and the sequence is identical on every
/// platform.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn new(master_seed: u64, run: u64, purpose: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(master_seed.to_le_bytes());
        hasher.update(run.to_le_bytes());
        hasher.update(purpose.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        RngStream(ChaCha8Rng::from_seed(seed))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// Dimensions and distribution parameters from which scenarios are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub n_processes: usize,
    pub n_devices: usize,
    pub n_slots: usize,
    pub horizon: usize,
    /// Transition probabilities are drawn uniformly from `(0, eps_max]`.
    pub eps_max: f64,
}

/// Draws a random scenario: transition probabilities uniform on
/// `(0, eps_max]`, activation probabilities uniform on `[0, 1)`.
pub fn sample_scenario<R: Rng + ?Sized>(
    template: &ScenarioTemplate,
    seed: u64,
    rng: &mut R,
) -> Result<ScenarioConfig> {
    let eps_max = template.eps_max;
    if !(eps_max > 0.0 && eps_max <= 1.0) {
        return Err(Error::config("eps_max", format!("{eps_max} is outside (0, 1]")));
    }
    let n = template.n_processes;
    let k = template.n_devices;
    // 1 - u lies in (0, 1], so no process is ever exactly frozen.
    let draw_eps = |rng: &mut R| eps_max * (1.0 - rng.gen::<f64>());
    let eps0: Vec<f64> = (0..n).map(|_| draw_eps(rng)).collect();
    let eps1: Vec<f64> = (0..n).map(|_| draw_eps(rng)).collect();
    let q = (0..n)
        .map(|_| (0..k).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let config = ScenarioConfig {
        n_processes: n,
        n_devices: k,
        n_slots: template.n_slots,
        horizon: template.horizon,
        seed,
        eps0,
        eps1,
        q,
    };
    config.validate()?;
    Ok(config)
}

/// Long-run probability that process `n` is On: `eps1 / (eps0 + eps1)`.
pub fn stationary_on_prob(config: &ScenarioConfig, n: usize) -> Result<f64> {
    let (e0, e1) = (config.eps0[n], config.eps1[n]);
    if e0 + e1 == 0.0 {
        return Err(Error::DegenerateChain { process: n });
    }
    Ok(e1 / (e0 + e1))
}

/// Draws the slot-zero hidden state from the stationary distribution.
pub fn initial_state<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<ProcessState> {
    let mut state = ProcessState::all_off(config.n_processes);
    for n in 0..config.n_processes {
        let p_on = stationary_on_prob(config, n)?;
        state.set(n, rng.gen::<f64>() < p_on);
    }
    Ok(state)
}

/// Advances every process one slot, independently.
pub fn step_processes<R: Rng + ?Sized>(
    state: ProcessState,
    config: &ScenarioConfig,
    rng: &mut R,
) -> ProcessState {
    let mut next = state;
    for n in 0..config.n_processes {
        let u = rng.gen::<f64>();
        if state.is_on(n) {
            next.set(n, u >= config.eps0[n]);
        } else {
            next.set(n, u < config.eps1[n]);
        }
    }
    next
}

/// `P(A_k = 1 | S) = 1 - prod_n (1 - q_nk)^{S_n}`.
pub fn activation_prob_given_state(state: ProcessState, k: usize, config: &ScenarioConfig) -> f64 {
    let silent: f64 = (0..config.n_processes)
        .filter(|&n| state.is_on(n))
        .map(|n| 1.0 - config.q[n][k])
        .product();
    1.0 - silent
}

/// Samples which devices are active given the hidden state.
pub fn sample_activations<R: Rng + ?Sized>(
    state: ProcessState,
    config: &ScenarioConfig,
    rng: &mut R,
) -> ActivationVector {
    let bits = (0..config.n_devices)
        .map(|k| rng.gen::<f64>() < activation_prob_given_state(state, k, config))
        .collect();
    ActivationVector(bits)
}

/// Probability that device `k` is active in the next slot given the current
/// hidden state: `1 - prod_n h(n)`, where `h(n)` is the probability that
/// process `n` does not activate the device after its transition.
pub fn predict_activation_prob(state: ProcessState, k: usize, config: &ScenarioConfig) -> f64 {
    let mut silent = 1.0;
    for n in 0..config.n_processes {
        let q = config.q[n][k];
        silent *= if state.is_on(n) {
            let e0 = config.eps0[n];
            e0 + (1.0 - e0) * (1.0 - q)
        } else {
            let e1 = config.eps1[n];
            1.0 - e1 + e1 * (1.0 - q)
        };
    }
    1.0 - silent
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Small hand-built scenario used across unit tests.
    pub(crate) fn scenario(eps0: Vec<f64>, eps1: Vec<f64>, q: Vec<Vec<f64>>, n_slots: usize) -> ScenarioConfig {
        let config = ScenarioConfig {
            n_processes: eps0.len(),
            n_devices: q[0].len(),
            n_slots,
            horizon: 10,
            seed: 0,
            eps0,
            eps1,
            q,
        };
        config.validate().unwrap();
        config
    }

    fn fig3_template() -> ScenarioTemplate {
        ScenarioTemplate {
            n_processes: 10,
            n_devices: 50,
            n_slots: 10,
            horizon: 100,
            eps_max: 0.5,
        }
    }

    #[test]
    fn sampled_scenario_respects_ranges() {
        let mut rng = RngStream::new(1, 0, "scenario");
        let config = sample_scenario(&fig3_template(), 1, &mut rng).unwrap();
        assert_eq!(config.q.len(), 10);
        assert!(config.q.iter().all(|row| row.len() == 50));
        for &e in config.eps0.iter().chain(&config.eps1) {
            assert!(e > 0.0 && e <= 0.5);
        }
    }

    #[test]
    fn zero_eps_max_is_rejected() {
        let mut template = fig3_template();
        template.eps_max = 0.0;
        let mut rng = RngStream::new(1, 0, "scenario");
        let err = sample_scenario(&template, 1, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "eps_max"));
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_scenario(&fig3_template(), 9, &mut RngStream::new(9, 3, "scenario")).unwrap();
        let b = sample_scenario(&fig3_template(), 9, &mut RngStream::new(9, 3, "scenario")).unwrap();
        assert_eq!(a, b);
        let c = sample_scenario(&fig3_template(), 9, &mut RngStream::new(9, 4, "scenario")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn streams_differ_by_purpose() {
        let mut a = RngStream::new(5, 0, "truth");
        let mut b = RngStream::new(5, 0, "ra");
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn stationary_probabilities() {
        let c = scenario(vec![0.3, 0.0, 0.1], vec![0.3, 0.4, 0.3], vec![vec![0.5]; 3], 1);
        assert_abs_diff_eq!(stationary_on_prob(&c, 0).unwrap(), 0.5);
        assert_abs_diff_eq!(stationary_on_prob(&c, 1).unwrap(), 1.0);
        // Power-iterated two-state chain: 0.75 frozen from the oracle below.
        assert_abs_diff_eq!(stationary_on_prob(&c, 2).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn stationary_matches_power_iteration() {
        let (e0, e1) = (0.1, 0.3);
        let mut dist = [1.0, 0.0];
        for _ in 0..10_000 {
            dist = [
                dist[0] * (1.0 - e1) + dist[1] * e0,
                dist[0] * e1 + dist[1] * (1.0 - e0),
            ];
        }
        assert_abs_diff_eq!(dist[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn frozen_chain_has_no_stationary_distribution() {
        let c = scenario(vec![0.0], vec![0.0], vec![vec![0.5]], 1);
        assert!(matches!(
            stationary_on_prob(&c, 0),
            Err(Error::DegenerateChain { process: 0 })
        ));
    }

    #[test]
    fn frozen_and_forced_transitions() {
        let frozen = scenario(vec![0.0; 4], vec![0.0; 4], vec![vec![0.5]; 4], 1);
        let forced = scenario(vec![1.0; 4], vec![1.0; 4], vec![vec![0.5]; 4], 1);
        let mut rng = RngStream::new(2, 0, "truth");
        for idx in 0..16 {
            let s = ProcessState::from_index(idx, 4);
            assert_eq!(step_processes(s, &frozen, &mut rng), s);
            assert_eq!(step_processes(s, &forced, &mut rng).index(), !idx & 0xF);
        }
    }

    #[test]
    fn off_to_on_frequency() {
        let c = scenario(vec![0.2], vec![0.3], vec![vec![0.5]], 1);
        let mut rng = RngStream::new(3, 0, "truth");
        let trials = 100_000;
        let on = (0..trials)
            .filter(|_| step_processes(ProcessState::all_off(1), &c, &mut rng).is_on(0))
            .count();
        assert_abs_diff_eq!(on as f64 / trials as f64, 0.3, epsilon = 0.01);
    }

    #[test]
    fn activation_probability_cases() {
        let c = scenario(vec![0.1; 2], vec![0.1; 2], vec![vec![0.5, 1.0], vec![0.5, 0.0]], 1);
        let off = ProcessState::all_off(2);
        assert_eq!(activation_prob_given_state(off, 0, &c), 0.0);
        assert_eq!(activation_prob_given_state(ProcessState::from_index(1, 2), 1, &c), 1.0);
        assert_abs_diff_eq!(activation_prob_given_state(ProcessState::from_index(3, 2), 0, &c), 0.75);
    }

    #[test]
    fn activations_follow_state() {
        let c = scenario(vec![0.1; 2], vec![0.1; 2], vec![vec![1.0, 0.2], vec![0.3, 0.4]], 1);
        let mut rng = RngStream::new(4, 0, "activation");
        for _ in 0..1000 {
            let a = sample_activations(ProcessState::all_off(2), &c, &mut rng);
            assert_eq!(a.count_active(), 0);
            let a = sample_activations(ProcessState::from_index(1, 2), &c, &mut rng);
            assert!(a.is_active(0));
        }
    }

    #[test]
    fn activation_frequency_matches_closed_form() {
        let c = scenario(
            vec![0.1; 3],
            vec![0.1; 3],
            vec![vec![0.2, 0.7, 0.05], vec![0.5, 0.1, 0.3], vec![0.9, 0.0, 0.6]],
            1,
        );
        let state = ProcessState::from_index(0b011, 3);
        let mut rng = RngStream::new(5, 0, "activation");
        let trials = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..trials {
            let a = sample_activations(state, &c, &mut rng);
            for (k, count) in counts.iter_mut().enumerate() {
                *count += a.is_active(k) as usize;
            }
        }
        for (k, &count) in counts.iter().enumerate() {
            let p = activation_prob_given_state(state, k, &c);
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            let freq = count as f64 / trials as f64;
            assert!((freq - p).abs() <= 0.01, "device {k}: {freq} vs {p}");
            assert!((freq - p).abs() <= 3.0 * sigma + 1e-12, "device {k}: {freq} vs {p}");
        }
    }

    #[test]
    fn prediction_cases() {
        let c = scenario(vec![0.3; 3], vec![0.2; 3], vec![vec![0.0; 2]; 3], 1);
        for idx in 0..8 {
            assert_eq!(predict_activation_prob(ProcessState::from_index(idx, 3), 0, &c), 0.0);
        }
        // Marginalising over the next state: P(On) * q = 0.2 * 0.5.
        let c = scenario(vec![0.7], vec![0.2], vec![vec![0.5]], 1);
        assert_abs_diff_eq!(
            predict_activation_prob(ProcessState::all_off(1), 0, &c),
            0.1,
            epsilon = 1e-15
        );
    }

    #[test]
    fn validation_names_offending_key() {
        let mut c = scenario(vec![0.1; 2], vec![0.1; 2], vec![vec![0.5; 3]; 2], 1);
        c.q[1][2] = 1.5;
        let err = c.validate().unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "q[1][2]"));
        c.q[1][2] = 0.5;
        c.eps1.pop();
        assert!(matches!(c.validate(), Err(Error::Config { ref key, .. }) if key == "eps1"));
        c.eps1.push(0.1);
        c.n_slots = 4;
        assert!(matches!(c.validate(), Err(Error::Config { ref key, .. }) if key == "n_slots"));
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let config = sample_scenario(&fig3_template(), 11, &mut RngStream::new(11, 0, "scenario")).unwrap();
        let text = config.to_json().unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), config);
    }

    #[test]
    fn bit_index_mapping() {
        let s = ProcessState::from_bits(&[true, false, true]);
        assert_eq!(s.index(), 0b101);
        assert_eq!(s.bits(), vec![true, false, true]);
        assert_eq!(s.count_on(), 2);
    }
}
