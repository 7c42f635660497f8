//! Regret, system usage and age of information.

use crate::error::{Error, Result};
use crate::model::ActivationVector;
use crate::policies::{GrantVector, RaOutcome};

/// Per-slot allocation outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotReport {
    /// Grants given to inactive devices (`omega`).
    pub wrong: usize,
    /// Active devices left without a grant (`gamma`).
    pub missed: usize,
    /// `min(wrong, missed)`: allocations that could have been redirected.
    pub regret: usize,
    /// Devices that transmitted successfully this slot.
    pub served: Vec<usize>,
    /// Slotted-ALOHA successes, when the slot came from random access.
    pub successes: Option<usize>,
}

impl SlotReport {
    /// Slots that carried a transmission.
    pub fn used_slots(&self) -> usize {
        self.served.len()
    }
}

pub fn slot_report(activations: &ActivationVector, grants: &GrantVector) -> Result<SlotReport> {
    if activations.len() != grants.len() {
        return Err(Error::LengthMismatch {
            expected: activations.len(),
            actual: grants.len(),
        });
    }
    let mut wrong = 0;
    let mut missed = 0;
    let mut served = Vec::new();
    for (k, (&a, &g)) in activations.as_slice().iter().zip(grants.as_slice()).enumerate() {
        match (g, a) {
            (true, false) => wrong += 1,
            (false, true) => missed += 1,
            (true, true) => served.push(k),
            (false, false) => {}
        }
    }
    Ok(SlotReport {
        wrong,
        missed,
        regret: wrong.min(missed),
        served,
        successes: None,
    })
}

/// Random access has no grant vector: wasted slots are the slots without a
/// lone transmitter, missed devices are active devices that did not get
/// through.
pub fn ra_slot_report(activations: &ActivationVector, outcome: &RaOutcome, n_slots: usize) -> SlotReport {
    let served: Vec<usize> = outcome
        .success
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(k, _)| k)
        .collect();
    let successes = served.len();
    let wrong = n_slots - successes;
    let missed = activations.count_active() - successes;
    SlotReport {
        wrong,
        missed,
        regret: wrong.min(missed),
        served,
        successes: Some(successes),
    }
}

/// Running metrics for one policy in one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAccumulator {
    t: u64,
    cum_regret: u64,
    cum_used_slots: u64,
    last_served: Vec<Option<u64>>,
    n_slots: usize,
}

impl MetricsAccumulator {
    pub fn new(n_devices: usize, n_slots: usize) -> Self {
        MetricsAccumulator {
            t: 0,
            cum_regret: 0,
            cum_used_slots: 0,
            last_served: vec![None; n_devices],
            n_slots,
        }
    }

    /// Advances to the next slot and folds in its report.
    pub fn record(&mut self, report: &SlotReport) {
        self.t += 1;
        self.update_usage(report);
        self.update_aoi(report, self.t);
    }

    pub fn update_usage(&mut self, report: &SlotReport) {
        self.cum_regret += report.regret as u64;
        self.cum_used_slots += report.used_slots() as u64;
    }

    pub fn update_aoi(&mut self, report: &SlotReport, t: u64) {
        for &k in &report.served {
            self.last_served[k] = Some(t);
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn cum_regret(&self) -> u64 {
        self.cum_regret
    }

    pub fn cum_used_slots(&self) -> u64 {
        self.cum_used_slots
    }

    /// Time-averaged fraction of grant slots that carried a transmission.
    /// Defined as 1 before the first slot.
    pub fn usage(&self) -> f64 {
        if self.t == 0 {
            1.0
        } else {
            self.cum_used_slots as f64 / (self.t as f64 * self.n_slots as f64)
        }
    }

    /// Age of device `k` at slot `t`; never-served devices count from slot 0.
    pub fn age(&self, k: usize, t: u64) -> u64 {
        t - self.last_served[k].unwrap_or(0)
    }

    pub fn ages(&self, t: u64) -> Vec<u64> {
        (0..self.last_served.len()).map(|k| self.age(k, t)).collect()
    }

    pub fn average_age(&self, t: u64) -> f64 {
        let k = self.last_served.len();
        (0..k).map(|i| self.age(i, t) as f64).sum::<f64>() / k as f64
    }

    pub fn peak_age(&self, t: u64) -> u64 {
        (0..self.last_served.len()).map(|k| self.age(k, t)).max().unwrap_or(0)
    }
}
