//! Dataset events behind the moment-matching lower bound on mm-lb.
//!
//! With `N` expert trajectories (state 1 is the rare start state, state 0
//! the rewarding one):
//!
//! * E1: every state appears at every step of the dataset.
//! * E2: state 1 starts at most `sqrt(N)` trajectories.
//! * E3: from step 1 on, the empirical state distribution is
//!   `(1/2 - delta, 1/2 + delta)` with `delta >= 2/sqrt(N)`.
//!
//! Under all three, moment matching provably deviates at the rare start
//! state and loses exactly `(H - 1) / (2 sqrt(N))`. The deviation argument
//! itself only needs E1 and `delta >= 1/(2 sqrt(N))`, which is exposed as
//! [`EventCondition::Sufficient`].

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{sample_dataset, Dataset};
use crate::error::{config, Result};
use crate::instances::make_mm_lb;
use crate::learners::mm_train;
use crate::mdp::imitation_gap;
use crate::rng::derive_seed;

/// Event statistics of one mm-lb dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetEvents {
    pub all_visited: bool,
    pub rare_starts: usize,
    /// Smallest `1/2 - freq_t(state 0)` over steps `t >= 1`.
    pub delta: f64,
}

impl DatasetEvents {
    pub fn of(dataset: &Dataset) -> Self {
        let h = dataset.horizon();
        let n = dataset.len();
        let mut count0 = vec![0usize; h];
        for tr in dataset.trajectories() {
            for (t, &(s, _)) in tr.steps.iter().enumerate() {
                if s == 0 {
                    count0[t] += 1;
                }
            }
        }
        let all_visited = count0.iter().all(|&c| c > 0 && c < n);
        let rare_starts = n - count0[0];
        let delta = (1..h)
            .map(|t| 0.5 - count0[t] as f64 / n as f64)
            .fold(f64::INFINITY, f64::min);
        Self {
            all_visited,
            rare_starts,
            delta,
        }
    }

    pub fn e1(&self) -> bool {
        self.all_visited
    }

    pub fn e2(&self, n_exp: usize) -> bool {
        (self.rare_starts as f64) <= (n_exp as f64).sqrt()
    }

    /// `delta >= coeff / sqrt(N)`.
    pub fn e3_with(&self, n_exp: usize, coeff: f64) -> bool {
        self.delta >= coeff / (n_exp as f64).sqrt() - 1e-12
    }

    pub fn e3(&self, n_exp: usize) -> bool {
        self.e3_with(n_exp, 2.0)
    }

    pub fn holds(&self, n_exp: usize, condition: EventCondition) -> bool {
        match condition {
            EventCondition::Literal => self.e1() && self.e2(n_exp) && self.e3(n_exp),
            EventCondition::Sufficient => self.e1() && self.e3_with(n_exp, 0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventCondition {
    /// E1, E2 and E3 as stated above.
    Literal,
    /// E1 and `delta >= 1/(2 sqrt(N))`.
    Sufficient,
}

/// Empirical event frequencies over independent expert datasets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventFrequencies {
    pub n_exp: usize,
    pub horizon: usize,
    pub datasets: usize,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub intersection: f64,
    /// Frequency of E1 with the relaxed threshold `delta >= 1/(2 sqrt(N))`.
    pub sufficient: f64,
}

fn dataset_events(
    n_exp: usize,
    horizon: usize,
    n_datasets: usize,
    seed: u64,
) -> Result<Vec<DatasetEvents>> {
    let inst = make_mm_lb(horizon, n_exp)?;
    (0..n_datasets)
        .into_par_iter()
        .map(|i| {
            let d = sample_dataset(
                &inst.mdp,
                &inst.expert,
                n_exp,
                derive_seed(seed, &[i as u64]),
            )?;
            Ok(DatasetEvents::of(&d))
        })
        .collect()
}

/// Frequencies of E1, E2, E3 and their intersection over `n_datasets`
/// expert datasets; dataset `i` uses seed `hash(seed, i)`.
pub fn event_probe(
    n_exp: usize,
    horizon: usize,
    n_datasets: usize,
    seed: u64,
) -> Result<EventFrequencies> {
    if n_datasets < 100 {
        return Err(config(format!(
            "event probe needs at least 100 datasets, got {n_datasets}"
        )));
    }
    let ev = dataset_events(n_exp, horizon, n_datasets, seed)?;
    let freq = |f: &dyn Fn(&DatasetEvents) -> bool| {
        ev.iter().filter(|e| f(e)).count() as f64 / n_datasets as f64
    };
    Ok(EventFrequencies {
        n_exp,
        horizon,
        datasets: n_datasets,
        e1: freq(&|e| e.e1()),
        e2: freq(&|e| e.e2(n_exp)),
        e3: freq(&|e| e.e3(n_exp)),
        intersection: freq(&|e| e.holds(n_exp, EventCondition::Literal)),
        sufficient: freq(&|e| e.holds(n_exp, EventCondition::Sufficient)),
    })
}

/// Outcome of [`conditional_gap_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalReport {
    pub n_exp: usize,
    pub horizon: usize,
    pub draws: usize,
    pub condition: EventCondition,
    pub conditioned: usize,
    pub exact: usize,
    pub expected_gap: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

impl ConditionalReport {
    /// No draw satisfied the condition, so nothing was checked.
    pub fn inconclusive(&self) -> bool {
        self.conditioned == 0
    }

    pub fn passed(&self) -> bool {
        !self.inconclusive() && self.exact == self.conditioned
    }
}

/// Trains moment matching on every dataset satisfying `condition` and checks
/// that its gap is exactly `(H - 1) / (2 sqrt(N))`.
pub fn conditional_gap_check(
    n_exp: usize,
    horizon: usize,
    n_datasets: usize,
    seed: u64,
    condition: EventCondition,
) -> Result<ConditionalReport> {
    let inst = make_mm_lb(horizon, n_exp)?;
    let expected_gap = (horizon as f64 - 1.0) / (2.0 * (n_exp as f64).sqrt());
    let tolerance = 1e-9;
    let errors: Vec<Option<f64>> = (0..n_datasets)
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            let d = sample_dataset(
                &inst.mdp,
                &inst.expert,
                n_exp,
                derive_seed(seed, &[i as u64]),
            )?;
            if !DatasetEvents::of(&d).holds(n_exp, condition) {
                return Ok(None);
            }
            let pol = mm_train(&d, &inst.mdp)?;
            let gap = imitation_gap(&inst.mdp, &inst.expert, &pol)?;
            Ok(Some((gap - expected_gap).abs()))
        })
        .collect::<Result<_>>()?;
    let hits: Vec<f64> = errors.into_iter().flatten().collect();
    Ok(ConditionalReport {
        n_exp,
        horizon,
        draws: n_datasets,
        condition,
        conditioned: hits.len(),
        exact: hits.iter().filter(|&&e| e <= tolerance).count(),
        expected_gap,
        max_abs_error: hits.iter().copied().fold(0.0, f64::max),
        tolerance,
    })
}
