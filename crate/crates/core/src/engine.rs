//! Episode orchestration and Monte-Carlo aggregation.
//!
//! All policies in an episode are scored against one shared ground-truth
//! trajectory. At slot `t` every policy decides from what it knew at the end
//! of slot `t - 1`; the hidden state then advances, devices activate, and
//! each policy's metrics and belief are updated from that one activation
//! vector.

use std::hash::{DefaultHasher, Hash, Hasher};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefModel, BeliefState, ForecastMode};
use crate::error::{Error, Result};
use crate::metrics::{ra_slot_report, slot_report, MetricsAccumulator};
use crate::model::{
    initial_state, sample_activations, sample_scenario, step_processes, ActivationVector, ProcessState, RngStream,
    ScenarioConfig, ScenarioTemplate,
};
use crate::policies::{
    fu_grant, genie_grant, observe_feedback, observe_limited, ra_attempt, tdd_grant, PolicyId, TieBreak,
};

/// Knobs shared by all policies in an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EngineOptions {
    pub forecast_mode: ForecastMode,
    pub tie_break: TieBreak,
}

/// Metric values for one policy at one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub regret_slot: f64,
    pub regret_cum: f64,
    pub usage_avg: f64,
    pub aoi_avg: f64,
    pub aoi_peak: f64,
}

impl SeriesPoint {
    fn to_array(self) -> [f64; 5] {
        [self.regret_slot, self.regret_cum, self.usage_avg, self.aoi_avg, self.aoi_peak]
    }

    fn from_array(v: [f64; 5]) -> Self {
        SeriesPoint {
            regret_slot: v[0],
            regret_cum: v[1],
            usage_avg: v[2],
            aoi_avg: v[3],
            aoi_peak: v[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySeries {
    pub policy: PolicyId,
    /// One point per slot, slot 1 first.
    pub points: Vec<SeriesPoint>,
    /// Hash of every activation vector this policy was scored against.
    pub trajectory_digest: u64,
    /// Number of times the belief had to be reset after impossible evidence.
    pub belief_resets: u64,
}

impl PolicySeries {
    pub fn last(&self) -> Option<&SeriesPoint> {
        self.points.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub run: u64,
    pub n_processes: usize,
    pub n_devices: usize,
    pub n_slots: usize,
    pub horizon: usize,
    pub series: Vec<PolicySeries>,
}

impl EpisodeResult {
    pub fn policy(&self, id: PolicyId) -> Option<&PolicySeries> {
        self.series.iter().find(|s| s.policy == id)
    }
}

/// Removes duplicates, keeping first occurrences in order.
pub fn normalize_policies(policies: &[PolicyId]) -> Result<Vec<PolicyId>> {
    let mut out: Vec<PolicyId> = Vec::with_capacity(policies.len());
    for &p in policies {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(Error::config("policies", "at least one policy is required"));
    }
    Ok(out)
}

struct PolicyRunner {
    id: PolicyId,
    belief: Option<BeliefState>,
    acc: MetricsAccumulator,
    points: Vec<SeriesPoint>,
    digest: DefaultHasher,
    belief_resets: u64,
}

/// A single episode that can be advanced one slot at a time.
pub struct Episode {
    config: ScenarioConfig,
    model: Option<BeliefModel>,
    options: EngineOptions,
    run: u64,
    t: u64,
    state: ProcessState,
    activations: ActivationVector,
    truth_rng: RngStream,
    activation_rng: RngStream,
    ra_rng: RngStream,
    runners: Vec<PolicyRunner>,
}

impl Episode {
    pub fn new(config: &ScenarioConfig, policies: &[PolicyId], options: EngineOptions, run: u64) -> Result<Self> {
        config.validate()?;
        let policies = normalize_policies(policies)?;
        let needs_belief = policies
            .iter()
            .any(|p| matches!(p, PolicyId::FuLimited | PolicyId::FuFeedback));
        let model = needs_belief.then(|| BeliefModel::new(config)).transpose()?;
        let prior = model.as_ref().map(|m| m.init_belief()).transpose()?;
        let mut truth_rng = RngStream::new(config.seed, run, "truth");
        let state = initial_state(config, &mut truth_rng)?;
        let runners = policies
            .iter()
            .map(|&id| PolicyRunner {
                id,
                belief: matches!(id, PolicyId::FuLimited | PolicyId::FuFeedback).then(|| prior.clone().unwrap()),
                acc: MetricsAccumulator::new(config.n_devices, config.n_slots),
                points: Vec::with_capacity(config.horizon),
                digest: DefaultHasher::new(),
                belief_resets: 0,
            })
            .collect();
        Ok(Episode {
            config: config.clone(),
            model,
            options,
            run,
            t: 0,
            state,
            activations: ActivationVector::zeros(config.n_devices),
            truth_rng,
            activation_rng: RngStream::new(config.seed, run, "activation"),
            ra_rng: RngStream::new(config.seed, run, "ra"),
            runners,
        })
    }

    /// Slots completed so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn true_state(&self) -> ProcessState {
        self.state
    }

    /// Activation vector of the most recent slot.
    pub fn activations(&self) -> &ActivationVector {
        &self.activations
    }

    pub fn belief(&self, id: PolicyId) -> Option<&BeliefState> {
        self.runners.iter().find(|r| r.id == id)?.belief.as_ref()
    }

    pub fn step(&mut self) -> Result<()> {
        let config = &self.config;
        let (k, l) = (config.n_devices, config.n_slots);
        let slot_index = self.t;

        let grants: Vec<_> = self
            .runners
            .iter()
            .map(|r| {
                let ages = r.acc.ages(slot_index);
                match r.id {
                    PolicyId::Ra => None,
                    PolicyId::Tdd => Some(tdd_grant(slot_index, k, l)),
                    PolicyId::Genie => Some(genie_grant(self.state, config, l, &ages, self.options.tie_break)),
                    PolicyId::FuLimited | PolicyId::FuFeedback => {
                        let model = self.model.as_ref().expect("belief model exists for FU policies");
                        let belief = r.belief.as_ref().expect("FU runners carry a belief");
                        let forecast = model.device_forecast(belief, self.options.forecast_mode);
                        Some(fu_grant(&forecast, l, &ages, self.options.tie_break))
                    }
                }
            })
            .collect();

        self.state = step_processes(self.state, config, &mut self.truth_rng);
        self.activations = sample_activations(self.state, config, &mut self.activation_rng);
        self.t += 1;
        let t = self.t;

        for (runner, grant) in self.runners.iter_mut().zip(grants) {
            self.activations.hash(&mut runner.digest);
            let report = match &grant {
                Some(g) => slot_report(&self.activations, g)?,
                None => {
                    let outcome = ra_attempt(&self.activations, l, &mut self.ra_rng);
                    ra_slot_report(&self.activations, &outcome, l)
                }
            };
            runner.acc.record(&report);
            runner.points.push(SeriesPoint {
                regret_slot: report.regret as f64,
                regret_cum: runner.acc.cum_regret() as f64,
                usage_avg: runner.acc.usage(),
                aoi_avg: runner.acc.average_age(t),
                aoi_peak: runner.acc.peak_age(t) as f64,
            });

            if let (Some(belief), Some(model)) = (runner.belief.as_mut(), self.model.as_ref()) {
                let obs = match runner.id {
                    PolicyId::FuLimited => observe_limited(grant.as_ref().expect("FU issues grants"), &self.activations),
                    _ => observe_feedback(&self.activations),
                };
                *belief = match model.forward_update(belief, &obs) {
                    Ok(next) => next,
                    Err(Error::Contradiction) => {
                        warn!(
                            "{}: impossible evidence at slot {t} of run {}; resetting belief to prior",
                            runner.id, self.run
                        );
                        runner.belief_resets += 1;
                        model.init_belief()?
                    }
                    Err(e) => return Err(e),
                };
            }
        }
        Ok(())
    }

    pub fn finish(self) -> EpisodeResult {
        EpisodeResult {
            seed: self.config.seed,
            run: self.run,
            n_processes: self.config.n_processes,
            n_devices: self.config.n_devices,
            n_slots: self.config.n_slots,
            horizon: self.config.horizon,
            series: self
                .runners
                .into_iter()
                .map(|r| PolicySeries {
                    policy: r.id,
                    points: r.points,
                    trajectory_digest: r.digest.finish(),
                    belief_resets: r.belief_resets,
                })
                .collect(),
        }
    }
}

/// Runs every policy over `config.horizon` slots of one shared trajectory.
/// Random streams are keyed by `(config.seed, run)`.
pub fn run_episode(
    config: &ScenarioConfig,
    policies: &[PolicyId],
    options: EngineOptions,
    run: u64,
) -> Result<EpisodeResult> {
    let mut episode = Episode::new(config, policies, options, run)?;
    for _ in 0..config.horizon {
        episode.step()?;
    }
    Ok(episode.finish())
}

/// Where each Monte-Carlo run gets its scenario from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScenarioSource {
    /// Draw a fresh scenario per run (or once, with `fixed_scenario`).
    Sample(ScenarioTemplate),
    /// Use the given scenario for every run; only trajectories differ.
    Fixed(ScenarioConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MonteCarloOptions {
    pub engine: EngineOptions,
    /// Reuse the run-0 scenario for every run when sampling.
    pub fixed_scenario: bool,
    /// Execute runs on the rayon pool. Output does not depend on this.
    pub parallel: bool,
}

/// Scenario used by run `run` of a Monte-Carlo experiment.
pub fn scenario_for_run(source: &ScenarioSource, master_seed: u64, run: u64, fixed: bool) -> Result<ScenarioConfig> {
    match source {
        ScenarioSource::Sample(template) => {
            let stream_run = if fixed { 0 } else { run };
            let mut rng = RngStream::new(master_seed, stream_run, "scenario");
            sample_scenario(template, master_seed, &mut rng)
        }
        ScenarioSource::Fixed(config) => {
            let mut config = config.clone();
            config.seed = master_seed;
            config.validate()?;
            Ok(config)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSeries {
    pub policy: PolicyId,
    pub mean: Vec<SeriesPoint>,
    /// Sample standard deviation across runs (0 for a single run).
    pub std: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub master_seed: u64,
    pub runs: usize,
    pub horizon: usize,
    pub series: Vec<AggregateSeries>,
}

impl AggregateResult {
    pub fn policy(&self, id: PolicyId) -> Option<&AggregateSeries> {
        self.series.iter().find(|s| s.policy == id)
    }

    /// Combines episodes in the order given. All episodes must share the
    /// horizon and policy list.
    pub fn from_episodes(master_seed: u64, episodes: &[EpisodeResult]) -> Result<Self> {
        let first = episodes
            .first()
            .ok_or_else(|| Error::config("runs", "at least one run is required"))?;
        let runs = episodes.len();
        let n = runs as f64;
        let mut series = Vec::with_capacity(first.series.len());
        for (i, template) in first.series.iter().enumerate() {
            let horizon = template.points.len();
            let mut mean = Vec::with_capacity(horizon);
            let mut std = Vec::with_capacity(horizon);
            for slot in 0..horizon {
                let values: Vec<[f64; 5]> = episodes
                    .iter()
                    .map(|e| e.series[i].points[slot].to_array())
                    .collect();
                let mut m = [0.0; 5];
                for v in &values {
                    for j in 0..5 {
                        m[j] += v[j];
                    }
                }
                m.iter_mut().for_each(|x| *x /= n);
                let mut s = [0.0; 5];
                if runs > 1 {
                    for v in &values {
                        for j in 0..5 {
                            s[j] += (v[j] - m[j]).powi(2);
                        }
                    }
                    s.iter_mut().for_each(|x| *x = (*x / (n - 1.0)).sqrt());
                }
                mean.push(SeriesPoint::from_array(m));
                std.push(SeriesPoint::from_array(s));
            }
            series.push(AggregateSeries {
                policy: template.policy,
                mean,
                std,
            });
        }
        Ok(AggregateResult {
            master_seed,
            runs,
            horizon: first.horizon,
            series,
        })
    }
}

/// Runs `runs` independent episodes and returns them in run order.
pub fn run_episodes(
    source: &ScenarioSource,
    runs: usize,
    master_seed: u64,
    policies: &[PolicyId],
    options: MonteCarloOptions,
) -> Result<Vec<EpisodeResult>> {
    if runs == 0 {
        return Err(Error::config("runs", "must be at least 1"));
    }
    let one = |run: u64| -> Result<EpisodeResult> {
        let config = scenario_for_run(source, master_seed, run, options.fixed_scenario)?;
        run_episode(&config, policies, options.engine, run)
    };
    if options.parallel {
        (0..runs as u64).into_par_iter().map(one).collect()
    } else {
        (0..runs as u64).map(one).collect()
    }
}

pub fn run_monte_carlo(
    source: &ScenarioSource,
    runs: usize,
    master_seed: u64,
    policies: &[PolicyId],
    options: MonteCarloOptions,
) -> Result<AggregateResult> {
    let episodes = run_episodes(source, runs, master_seed, policies, options)?;
    AggregateResult::from_episodes(master_seed, &episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::scenario;

    #[test]
    fn empty_policy_set_is_rejected() {
        let c = scenario(vec![0.1], vec![0.1], vec![vec![0.5; 2]], 1);
        assert!(run_episode(&c, &[], EngineOptions::default(), 0).is_err());
    }

    #[test]
    fn zero_horizon_gives_empty_series() {
        let mut c = scenario(vec![0.1], vec![0.1], vec![vec![0.5; 2]], 1);
        c.horizon = 0;
        let r = run_episode(&c, &PolicyId::ALL, EngineOptions::default(), 0).unwrap();
        assert!(r.series.iter().all(|s| s.points.is_empty()));
    }

    #[test]
    fn duplicate_policies_collapse() {
        assert_eq!(
            normalize_policies(&[PolicyId::Tdd, PolicyId::Ra, PolicyId::Tdd]).unwrap(),
            vec![PolicyId::Tdd, PolicyId::Ra]
        );
    }

    #[test]
    fn single_run_aggregate_has_zero_std() {
        let c = scenario(vec![0.2; 2], vec![0.3; 2], vec![vec![0.5; 4]; 2], 2);
        let source = ScenarioSource::Fixed(c.clone());
        let agg = run_monte_carlo(&source, 1, 4, &PolicyId::ALL, MonteCarloOptions::default()).unwrap();
        let mut fixed = c;
        fixed.seed = 4;
        let ep = run_episode(&fixed, &PolicyId::ALL, EngineOptions::default(), 0).unwrap();
        for (a, e) in agg.series.iter().zip(&ep.series) {
            assert_eq!(a.mean, e.points);
            assert!(a.std.iter().all(|p| *p == SeriesPoint::default()));
        }
    }
}
