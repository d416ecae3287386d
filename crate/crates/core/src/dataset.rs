//! Expert demonstration datasets.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config, dimension, Error, Result};
use crate::mdp::{
    exact_occupancy, rollout_unchecked, MarkovPolicy, MeasureKind, OccupancyMeasures, TabularMdp,
    Trajectory,
};
use crate::rng::{derive_seed, seeded_rng};

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub instance: String,
    pub policy: String,
    pub seed: u64,
}

/// Multiset of state-action trajectories of a common horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    horizon: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        trajectories: Vec<Trajectory>,
        horizon: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if let Some(tr) = trajectories.iter().find(|tr| tr.len() != horizon) {
            return Err(dimension(format!(
                "trajectory of length {} in a dataset of horizon {horizon}",
                tr.len()
            )));
        }
        Ok(Self {
            trajectories,
            horizon,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// Dataset with `extra` appended.
    pub fn extended(&self, extra: &[Trajectory]) -> Result<Dataset> {
        let mut all = self.trajectories.clone();
        all.extend_from_slice(extra);
        Dataset::new(all, self.horizon, self.provenance.clone())
    }

    /// Checks every state and action index against `(S, A)`.
    pub fn check_indices(&self, num_states: usize, num_actions: usize) -> Result<()> {
        for tr in &self.trajectories {
            if let Some(&(s, a)) = tr
                .steps
                .iter()
                .find(|(s, a)| *s >= num_states || *a >= num_actions)
            {
                return Err(dimension(format!(
                    "pair ({s}, {a}) out of range for S = {num_states}, A = {num_actions}"
                )));
            }
        }
        Ok(())
    }

    /// JSON lines: a header `{n, H, provenance}` followed by one
    /// `[[s, a], ...]` array per trajectory.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DatasetHeader {
            n: self.len(),
            horizon: self.horizon,
            provenance: self.provenance.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for tr in &self.trajectories {
            serde_json::to_writer(&mut w, tr)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: DatasetHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Invalid("missing dataset header".into())),
        };
        let mut trajectories = Vec::with_capacity(header.n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            trajectories.push(serde_json::from_str(&line)?);
        }
        if trajectories.len() != header.n {
            return Err(Error::Invalid(format!(
                "header announces {} trajectories, found {}",
                header.n,
                trajectories.len()
            )));
        }
        Dataset::new(trajectories, header.horizon, header.provenance)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    n: usize,
    #[serde(rename = "H")]
    horizon: usize,
    provenance: Provenance,
}

/// `n` independent rollouts; trajectory `i` uses seed `hash(seed, i)`.
pub fn sample_dataset(
    mdp: &TabularMdp,
    policy: &MarkovPolicy,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(config("dataset size must be at least 1"));
    }
    mdp.check_policy(policy)?;
    let trajectories = (0..n as u64)
        .map(|i| rollout_unchecked(mdp, policy, derive_seed(seed, &[i])))
        .collect();
    Ok(Dataset {
        trajectories,
        horizon: mdp.horizon(),
        provenance: Provenance {
            seed,
            ..Provenance::default()
        },
    })
}

/// Visit frequencies `d_t(s, a) = count_t(s, a) / n`.
pub fn empirical_occupancy(
    dataset: &Dataset,
    num_states: usize,
    num_actions: usize,
) -> Result<OccupancyMeasures> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset.check_indices(num_states, num_actions)?;
    let h = dataset.horizon();
    let mut counts = vec![0u64; h * num_states * num_actions];
    for tr in dataset.trajectories() {
        for (t, &(s, a)) in tr.steps.iter().enumerate() {
            counts[(t * num_states + s) * num_actions + a] += 1;
        }
    }
    let n = dataset.len() as f64;
    let d = counts.into_iter().map(|c| c as f64 / n).collect();
    Ok(OccupancyMeasures::new_unchecked(
        h,
        num_states,
        num_actions,
        MeasureKind::Empirical,
        d,
    ))
}

/// How to split a dataset into the two halves used by replay estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub frac1: f64,
    pub split_seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            frac1: 0.5,
            split_seed: 0,
        }
    }
}

impl SplitConfig {
    /// `round(frac1 * n)` with halves rounded up.
    pub fn first_size(&self, n: usize) -> Result<usize> {
        if !(self.frac1 > 0.0 && self.frac1 < 1.0) {
            return Err(config(format!(
                "frac1 must lie in (0, 1), got {}",
                self.frac1
            )));
        }
        let n1 = (self.frac1 * n as f64 + 0.5).floor() as usize;
        if n1 == 0 || n1 >= n {
            return Err(config(format!(
                "split of {n} trajectories with frac1 = {} leaves an empty half",
                self.frac1
            )));
        }
        Ok(n1)
    }
}

/// Disjoint partition by a seeded permutation of trajectory indices.
pub fn split(dataset: &Dataset, cfg: &SplitConfig) -> Result<(Dataset, Dataset)> {
    let (d1, d2) = split_indices(dataset.len(), cfg)?;
    let pick = |idx: &[usize]| {
        Dataset::new(
            idx.iter()
                .map(|&i| dataset.trajectories[i].clone())
                .collect(),
            dataset.horizon,
            dataset.provenance.clone(),
        )
    };
    Ok((pick(&d1)?, pick(&d2)?))
}

/// Index sets of the two halves; each half keeps the permuted order.
pub fn split_indices(n: usize, cfg: &SplitConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let n1 = cfg.first_size(n)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded_rng(derive_seed(cfg.split_seed, &[0x5B11])));
    let d2 = perm.split_off(n1);
    Ok((perm, d2))
}

/// For each step, the expert mass on states that `d1` never visits at that
/// step.
pub fn missing_mass(d1: &Dataset, mdp: &TabularMdp, expert: &MarkovPolicy) -> Result<Vec<f64>> {
    let (h, ns) = (mdp.horizon(), mdp.num_states());
    if d1.horizon() != h {
        return Err(dimension("dataset horizon differs from the MDP"));
    }
    d1.check_indices(ns, mdp.num_actions())?;
    let occ = exact_occupancy(mdp, expert)?;
    let mut visited = vec![false; h * ns];
    for tr in d1.trajectories() {
        for (t, &(s, _)) in tr.steps.iter().enumerate() {
            visited[t * ns + s] = true;
        }
    }
    Ok((0..h)
        .map(|t| {
            occ.state_marginal(t)
                .iter()
                .enumerate()
                .filter(|(s, _)| !visited[t * ns + s])
                .map(|(_, m)| m)
                .sum()
        })
        .collect())
}
