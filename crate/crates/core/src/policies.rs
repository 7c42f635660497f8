//! Grant-decision policies and the observation models that feed the
//! per-policy belief trackers.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{Evidence, Observation};
use crate::model::{predict_activation_prob, ActivationVector, ProcessState, ScenarioConfig};

/// Stable policy identifiers used on the command line and in output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyId {
    Ra,
    Tdd,
    FuLimited,
    FuFeedback,
    Genie,
}

impl PolicyId {
    pub const ALL: [PolicyId; 5] = [
        PolicyId::Ra,
        PolicyId::Tdd,
        PolicyId::FuLimited,
        PolicyId::FuFeedback,
        PolicyId::Genie,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyId::Ra => "ra",
            PolicyId::Tdd => "tdd",
            PolicyId::FuLimited => "fu_limited",
            PolicyId::FuFeedback => "fu_feedback",
            PolicyId::Genie => "genie",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|p| p.as_str()).join(", ")
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}`; valid names are: {}", PolicyId::valid_names()))
    }
}

/// Secondary ordering for devices with identical forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Older age of information first, then lower index.
    #[default]
    AgeThenIndex,
    /// Lower index only.
    Index,
}

/// Which devices hold a grant in one slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrantVector(Vec<bool>);

impl GrantVector {
    pub fn none(n_devices: usize) -> Self {
        GrantVector(vec![false; n_devices])
    }

    pub fn from_indices(n_devices: usize, granted: impl IntoIterator<Item = usize>) -> Self {
        let mut g = Self::none(n_devices);
        for k in granted {
            g.0[k] = true;
        }
        g
    }

    pub fn new(bits: Vec<bool>) -> Self {
        GrantVector(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_granted(&self, k: usize) -> bool {
        self.0[k]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&g| g).count()
    }

    pub fn granted(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &g)| g).map(|(k, _)| k)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

/// Grants the `n_slots` devices with the highest forecast.
pub fn fu_grant(forecast: &[f64], n_slots: usize, aoi: &[u64], tie_break: TieBreak) -> GrantVector {
    debug_assert_eq!(forecast.len(), aoi.len());
    let mut order: Vec<usize> = (0..forecast.len()).collect();
    order.sort_by(|&a, &b| {
        let primary = forecast[b].total_cmp(&forecast[a]);
        match tie_break {
            TieBreak::AgeThenIndex => primary.then(aoi[b].cmp(&aoi[a])).then(a.cmp(&b)),
            TieBreak::Index => primary.then(a.cmp(&b)),
        }
    });
    GrantVector::from_indices(forecast.len(), order.into_iter().take(n_slots))
}

/// Round-robin: slot `t` (0-based) serves devices `t*L .. t*L + L` modulo `K`.
pub fn tdd_grant(t: u64, n_devices: usize, n_slots: usize) -> GrantVector {
    let k = n_devices as u64;
    let start = (t % k) * (n_slots as u64 % k) % k;
    GrantVector::from_indices(
        n_devices,
        (0..n_slots.min(n_devices) as u64).map(|i| ((start + i) % k) as usize),
    )
}

/// Fast uplink with the true hidden state in place of the belief.
pub fn genie_grant(
    true_state: ProcessState,
    config: &ScenarioConfig,
    n_slots: usize,
    aoi: &[u64],
    tie_break: TieBreak,
) -> GrantVector {
    let forecast = genie_forecast(true_state, config);
    fu_grant(&forecast, n_slots, aoi, tie_break)
}

pub fn genie_forecast(true_state: ProcessState, config: &ScenarioConfig) -> Vec<f64> {
    (0..config.n_devices)
        .map(|k| predict_activation_prob(true_state, k, config))
        .collect()
}

/// Result of one slotted-ALOHA round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaOutcome {
    /// Number of devices that picked each slot.
    pub occupancy: Vec<u32>,
    /// Devices that were alone in their slot.
    pub success: Vec<bool>,
}

impl RaOutcome {
    pub fn successes(&self) -> usize {
        self.success.iter().filter(|&&s| s).count()
    }

    pub fn attempts(&self) -> usize {
        self.occupancy.iter().map(|&c| c as usize).sum()
    }
}

/// Every active device picks one of `n_slots` slots uniformly; a device
/// succeeds iff nobody else picked its slot.
pub fn ra_attempt<R: Rng + ?Sized>(activations: &ActivationVector, n_slots: usize, rng: &mut R) -> RaOutcome {
    let mut occupancy = vec![0u32; n_slots];
    let choices: Vec<Option<usize>> = activations
        .as_slice()
        .iter()
        .map(|&active| {
            active.then(|| {
                let slot = rng.gen_range(0..n_slots);
                occupancy[slot] += 1;
                slot
            })
        })
        .collect();
    let success = choices
        .iter()
        .map(|c| c.is_some_and(|slot| occupancy[slot] == 1))
        .collect();
    RaOutcome { occupancy, success }
}

/// Only granted devices are observed; everything else is marginalised out.
pub fn observe_limited(grants: &GrantVector, activations: &ActivationVector) -> Observation {
    Observation::new(
        grants
            .as_slice()
            .iter()
            .zip(activations.as_slice())
            .map(|(&g, &a)| match (g, a) {
                (false, _) => Evidence::Unobserved,
                (true, true) => Evidence::ObservedActive,
                (true, false) => Evidence::ObservedSilent,
            })
            .collect(),
    )
}

/// Feedback reveals every device's activity.
pub fn observe_feedback(activations: &ActivationVector) -> Observation {
    Observation::new(
        activations
            .as_slice()
            .iter()
            .map(|&a| if a { Evidence::ObservedActive } else { Evidence::ObservedSilent })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{BeliefModel, BeliefState, ForecastMode};
    use crate::model::tests::scenario;
    use crate::model::{sample_scenario, RngStream, ScenarioTemplate};
    use proptest::prelude::*;

    #[test]
    fn fu_grant_picks_top_devices() {
        let g = fu_grant(&[0.9, 0.1, 0.8, 0.2], 2, &[0; 4], TieBreak::AgeThenIndex);
        assert_eq!(g.granted().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn fu_grant_ties() {
        let g = fu_grant(&[0.5; 6], 3, &[0; 6], TieBreak::AgeThenIndex);
        assert_eq!(g.granted().collect::<Vec<_>>(), vec![0, 1, 2]);
        let g = fu_grant(&[0.5; 6], 3, &[1, 2, 3, 4, 5, 6], TieBreak::AgeThenIndex);
        assert_eq!(g.granted().collect::<Vec<_>>(), vec![3, 4, 5]);
        let g = fu_grant(&[0.5; 6], 3, &[1, 2, 3, 4, 5, 6], TieBreak::Index);
        assert_eq!(g.granted().collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn fu_grant_all_devices() {
        let g = fu_grant(&[0.0, 0.3, 0.1], 3, &[0; 3], TieBreak::Index);
        assert_eq!(g.count(), 3);
    }

    #[test]
    fn tdd_cycles() {
        let first: Vec<_> = tdd_grant(0, 50, 10).granted().collect();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        assert_eq!(tdd_grant(5, 50, 10), tdd_grant(0, 50, 10));
        assert_eq!(tdd_grant(1, 50, 10).granted().collect::<Vec<_>>(), (10..20).collect::<Vec<_>>());
        let mut counts = [0; 50];
        for t in 0..5 {
            for k in tdd_grant(t, 50, 10).granted() {
                counts[k] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn tdd_fair_over_lcm_window() {
        // K = 6, L = 4: lcm = 12, window of 3 slots.
        for start in 0..10 {
            let mut counts = vec![0; 6];
            for t in start..start + 3 {
                let g = tdd_grant(t, 6, 4);
                assert_eq!(g.count(), 4);
                for k in g.granted() {
                    counts[k] += 1;
                }
            }
            assert!(counts.iter().all(|&c| c == 2), "{counts:?}");
        }
    }

    #[test]
    fn genie_all_off_uses_age_tie_break() {
        let c = scenario(vec![0.1; 2], vec![0.0; 2], vec![vec![0.5; 4]; 2], 2);
        let g = genie_grant(ProcessState::all_off(2), &c, 2, &[1, 9, 3, 7], TieBreak::AgeThenIndex);
        assert_eq!(g.granted().collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn genie_always_grants_certain_device() {
        let c = scenario(vec![0.0, 0.3], vec![0.2, 0.3], vec![vec![0.1, 0.2, 1.0], vec![0.9, 0.9, 0.0]], 1);
        for idx in [1, 3] {
            let g = genie_grant(ProcessState::from_index(idx, 2), &c, 1, &[0; 3], TieBreak::Index);
            assert!(g.is_granted(2));
        }
    }

    #[test]
    fn genie_matches_point_mass_forecast() {
        let template = ScenarioTemplate {
            n_processes: 4,
            n_devices: 7,
            n_slots: 3,
            horizon: 1,
            eps_max: 0.5,
        };
        let c = sample_scenario(&template, 3, &mut RngStream::new(3, 0, "scenario")).unwrap();
        let model = BeliefModel::new(&c).unwrap();
        for idx in 0..16 {
            let s = ProcessState::from_index(idx, 4);
            let via_belief = model.device_forecast(&BeliefState::point_mass(s), ForecastMode::MapState);
            assert_eq!(genie_forecast(s, &c), via_belief);
        }
    }

    #[test]
    fn ra_edge_cases() {
        let mut rng = RngStream::new(1, 0, "ra");
        let out = ra_attempt(&ActivationVector::zeros(20), 10, &mut rng);
        assert_eq!(out.attempts(), 0);
        assert_eq!(out.successes(), 0);
        let mut single = vec![false; 20];
        single[7] = true;
        for _ in 0..100 {
            let out = ra_attempt(&ActivationVector::new(single.clone()), 10, &mut rng);
            assert_eq!(out.successes(), 1);
            assert!(out.success[7]);
        }
    }

    #[test]
    fn ra_expected_successes() {
        let mut rng = RngStream::new(2, 0, "ra");
        let active = ActivationVector::new(vec![true; 20]);
        let trials = 100_000;
        let total: usize = (0..trials).map(|_| ra_attempt(&active, 10, &mut rng).successes()).sum();
        let expected = 20.0 * 0.9f64.powi(19);
        assert!((total as f64 / trials as f64 - expected).abs() < 0.05);
    }

    #[test]
    fn observation_builders() {
        let a = ActivationVector::new(vec![true, false, true, false]);
        let none = observe_limited(&GrantVector::none(4), &a);
        assert!(none.as_slice().iter().all(|e| *e == Evidence::Unobserved));
        let all = GrantVector::new(vec![true; 4]);
        assert_eq!(observe_limited(&all, &a), observe_feedback(&a));
        let g = GrantVector::from_indices(4, [1, 2]);
        assert_eq!(
            observe_limited(&g, &a).as_slice(),
            &[
                Evidence::Unobserved,
                Evidence::ObservedSilent,
                Evidence::ObservedActive,
                Evidence::Unobserved
            ]
        );
        let fb = observe_feedback(&ActivationVector::zeros(3));
        assert!(fb.as_slice().iter().all(|e| *e == Evidence::ObservedSilent));
        let fb = observe_feedback(&ActivationVector::new(vec![true; 3]));
        assert!(fb.as_slice().iter().all(|e| *e == Evidence::ObservedActive));
    }

    #[test]
    fn feedback_entropy_below_limited_on_average() {
        let template = ScenarioTemplate {
            n_processes: 4,
            n_devices: 12,
            n_slots: 3,
            horizon: 1,
            eps_max: 0.5,
        };
        let (mut fb_total, mut lim_total) = (0.0, 0.0);
        for seed in 0..200 {
            let c = sample_scenario(&template, seed, &mut RngStream::new(seed, 0, "scenario")).unwrap();
            let model = BeliefModel::new(&c).unwrap();
            let mut rng = RngStream::new(seed, 0, "truth");
            let belief = model.init_belief().unwrap();
            let state = crate::model::step_processes(crate::model::initial_state(&c, &mut rng).unwrap(), &c, &mut rng);
            let a = crate::model::sample_activations(state, &c, &mut rng);
            let g = fu_grant(&model.device_forecast(&belief, ForecastMode::MapState), 3, &[0; 12], TieBreak::Index);
            fb_total += model.forward_update(&belief, &observe_feedback(&a)).unwrap().entropy();
            lim_total += model.forward_update(&belief, &observe_limited(&g, &a)).unwrap().entropy();
        }
        assert!(fb_total <= lim_total, "{fb_total} > {lim_total}");
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyId::ALL {
            assert_eq!(p.as_str().parse::<PolicyId>().unwrap(), p);
        }
        let err = "aloha".parse::<PolicyId>().unwrap_err();
        assert!(err.contains("fu_limited"));
    }

    proptest! {
        #[test]
        fn fu_grant_is_rank_based(
            forecast in prop::collection::vec(0.0f64..1.0, 1..30),
            slots in 1usize..30,
        ) {
            let k = forecast.len();
            let slots = slots.min(k);
            let aoi = vec![0; k];
            let g = fu_grant(&forecast, slots, &aoi, TieBreak::AgeThenIndex);
            prop_assert_eq!(g.count(), slots);
            let warped: Vec<f64> = forecast.iter().map(|p| (3.0 * p).exp() - 7.0).collect();
            prop_assert_eq!(fu_grant(&warped, slots, &aoi, TieBreak::AgeThenIndex), g);
        }

        #[test]
        fn tdd_grants_exactly_l(t in 0u64..10_000, k in 1usize..60, l in 1usize..60) {
            let l = l.min(k);
            prop_assert_eq!(tdd_grant(t, k, l).count(), l);
        }

        #[test]
        fn ra_success_bounded(bits in prop::collection::vec(any::<bool>(), 1..60), slots in 1usize..15, seed in any::<u64>()) {
            let a = ActivationVector::new(bits);
            let out = ra_attempt(&a, slots, &mut RngStream::new(seed, 0, "ra"));
            prop_assert_eq!(out.attempts(), a.count_active());
            prop_assert!(out.successes() <= a.count_active().min(slots));
            for (k, &s) in out.success.iter().enumerate() {
                if s { prop_assert!(a.is_active(k)); }
            }
        }
    }
}
