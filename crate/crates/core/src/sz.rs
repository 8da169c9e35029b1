//! Structural zeros by data augmentation: the observed sample is treated as
//! the admissible part of a larger sample whose remaining records fell in
//! impossible cells. Each sweep draws the probability of every condition
//! block, the number of truncated records per block, and then either the
//! records themselves or their expected sufficient statistics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DisjointConditionSet, Slot};
use crate::distributions::{draw_negative_multinomial, pick};
use crate::error::{Error, Result};
use crate::hdp::steps::{level_offsets, table_count, ExtraStats};
use crate::hdp::HdpState;
use crate::risk::{draw_unseen_weights, AlphaPolicy, PredictiveBatch, MAX_P0};
use crate::rng::{Purpose, SweepRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SzMode {
    /// Sample every truncated record.
    Exact,
    /// Replace the records by their expected sufficient statistics.
    Approximate,
}

/// Truncated records sampled in exact mode. Assignments use 0 for a
/// component that is not instantiated in the state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecords {
    pub num_vars: usize,
    /// Row-major records, 0-based categories.
    pub x: Vec<u32>,
    pub z: Vec<u32>,
    pub alpha: Vec<f64>,
    /// Index of the condition each record was drawn for.
    pub condition: Vec<u32>,
    /// Table counts per record, index 0 for tables at new components.
    pub tables: Vec<Vec<u32>>,
}

impl AugmentedRecords {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn record(&self, r: usize) -> &[u32] {
        &self.x[r * self.num_vars..(r + 1) * self.num_vars]
    }

    pub fn assignments(&self, r: usize) -> &[u32] {
        &self.z[r * self.num_vars..(r + 1) * self.num_vars]
    }
}

/// Expected sufficient statistics of the truncated records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedStats {
    /// `profile_counts[k][offset_j + x]` for k in 0..=K, row 0 for new
    /// components.
    pub profile_counts: Vec<Vec<f64>>,
    /// Expected table counts for k in 0..=K.
    pub tables: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BatchContent {
    Exact(AugmentedRecords),
    Approximate(ExpectedStats),
}

/// One sweep's augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedBatch {
    pub p: Vec<f64>,
    pub p0: f64,
    pub counts: Vec<u64>,
    pub n0: u64,
    pub content: BatchContent,
}

impl AugmentedBatch {
    /// A batch with no records, as used before the first sweep.
    pub fn empty(mode: SzMode, num_conditions: usize, num_vars: usize) -> Self {
        let content = match mode {
            SzMode::Exact => BatchContent::Exact(AugmentedRecords {
                num_vars,
                ..Default::default()
            }),
            SzMode::Approximate => BatchContent::Approximate(ExpectedStats::default()),
        };
        Self {
            p: vec![0.0; num_conditions],
            p0: 0.0,
            counts: vec![0; num_conditions],
            n0: 0,
            content,
        }
    }

    /// Follow a relabelling of the components (`map[old] = new`, 0 for
    /// removed). Mass of removed components moves to the new-component slot.
    pub fn relabel(&mut self, map: &[u32], new_k: usize) {
        match &mut self.content {
            BatchContent::Exact(rec) => {
                for z in &mut rec.z {
                    *z = map[*z as usize];
                }
            }
            BatchContent::Approximate(stats) => {
                if stats.tables.is_empty() {
                    return;
                }
                let mut tables = vec![0.0; new_k + 1];
                for (old, &t) in stats.tables.iter().enumerate() {
                    tables[map[old] as usize] += t;
                }
                let width = stats.profile_counts[0].len();
                let mut profiles = vec![vec![0.0; width]; new_k + 1];
                for (old, row) in stats.profile_counts.iter().enumerate() {
                    for (a, b) in profiles[map[old] as usize].iter_mut().zip(row) {
                        *a += b;
                    }
                }
                stats.tables = tables;
                stats.profile_counts = profiles;
            }
        }
    }

    /// Table counts of the augmented records given the current weights
    /// (exact mode only; approximate mode carries expected counts).
    pub fn draw_tables(&mut self, state: &HdpState, sweep: &SweepRng) {
        let BatchContent::Exact(rec) = &mut self.content else {
            return;
        };
        let k = state.k;
        let jn = rec.num_vars;
        let AugmentedRecords { z, alpha, tables, .. } = rec;
        tables.resize(alpha.len(), Vec::new());
        tables.par_iter_mut().enumerate().for_each(|(r, row)| {
            let mut counts = vec![0u32; k + 1];
            for &zz in &z[r * jn..(r + 1) * jn] {
                counts[zz as usize] += 1;
            }
            let mut rng = sweep.stream(Purpose::AugmentedTables, r as u64);
            row.clear();
            for kk in 0..=k {
                row.push(table_count(counts[kk], alpha[r] * state.g0[kk], &mut rng));
            }
        });
    }

    /// Contributions to the table totals and profile counts of the state.
    pub fn extra_stats(&self, state: &HdpState) -> ExtraStats {
        let total: usize = state.levels.iter().map(|&l| l as usize).sum();
        let mut extra = ExtraStats::zeros(state.k, total);
        match &self.content {
            BatchContent::Exact(rec) => {
                let offsets = level_offsets(&state.levels);
                let jn = rec.num_vars;
                for row in &rec.tables {
                    for (e, &t) in extra.tables.iter_mut().zip(row) {
                        *e += t as f64;
                    }
                }
                for (s, (&z, &x)) in rec.z.iter().zip(&rec.x).enumerate() {
                    if z > 0 {
                        extra.profile_counts[z as usize - 1][offsets[s % jn] + x as usize] += 1.0;
                    }
                }
            }
            BatchContent::Approximate(stats) => {
                if !stats.tables.is_empty() {
                    extra.tables.copy_from_slice(&stats.tables);
                    for (e, row) in extra.profile_counts.iter_mut().zip(&stats.profile_counts[1..]) {
                        e.copy_from_slice(row);
                    }
                }
            }
        }
        extra
    }

    /// Every exact-mode record lies in its condition block.
    pub fn check(&self, conditions: &DisjointConditionSet) -> std::result::Result<(), String> {
        if let BatchContent::Exact(rec) = &self.content {
            if rec.len() as u64 != self.n0 {
                return Err(format!("{} records for n0 = {}", rec.len(), self.n0));
            }
            for r in 0..rec.len() {
                let c = rec.condition[r] as usize;
                if !conditions.conditions()[c].matches(rec.record(r)) {
                    return Err(format!("augmented record {r} is outside condition {}", c + 1));
                }
            }
        }
        Ok(())
    }
}

/// p_c for every condition from a shared batch of predictive weights.
pub fn condition_probabilities_from(
    batch: &PredictiveBatch,
    conditions: &DisjointConditionSet,
) -> Result<(Vec<f64>, f64)> {
    let p: Vec<f64> = conditions
        .conditions()
        .par_iter()
        .map(|mu| batch.condition_probability(mu))
        .collect();
    let p0: f64 = p.iter().sum();
    if p0 >= MAX_P0 {
        return Err(Error::ProbabilityMassExceedsOne { p0 });
    }
    Ok((p, p0))
}

/// Monte Carlo estimate of (p_1..p_C, p₀) with T weight draws.
pub fn condition_probabilities(
    state: &HdpState,
    conditions: &DisjointConditionSet,
    t: usize,
    policy: AlphaPolicy,
    sweep: &SweepRng,
) -> Result<(Vec<f64>, f64)> {
    let batch = PredictiveBatch::draw(state, t.max(1), policy, sweep);
    condition_probabilities_from(&batch, conditions)
}

/// Truncated record counts per condition block.
pub fn draw_augmented_counts<R: Rng + ?Sized>(n: u64, p: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    draw_negative_multinomial(n, p, rng)
}

/// Sample the truncated records: fixed slots keep the condition's value and
/// draw their component given it, wildcard slots draw component then value.
/// Record r uses stream (AugmentedRecords, r).
pub fn sample_augmented_records(
    state: &HdpState,
    conditions: &DisjointConditionSet,
    counts: &[u64],
    policy: AlphaPolicy,
    sweep: &SweepRng,
) -> AugmentedRecords {
    let jn = state.levels.len();
    let owner: Vec<u32> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n as usize))
        .collect();
    let drawn: Vec<(Vec<u32>, Vec<u32>, f64)> = owner
        .par_iter()
        .enumerate()
        .map(|(r, &c)| {
            let mut rng = sweep.stream(Purpose::AugmentedRecords, r as u64);
            let a = policy.draw(&state.hyper, &mut rng);
            let mut g = vec![0.0; state.k + 1];
            draw_unseen_weights(&state.g0, a, &mut g, &mut rng);
            let mut x = vec![0u32; jn];
            let mut z = vec![0u32; jn];
            let mut w = vec![0.0; state.k + 1];
            for (j, slot) in conditions.conditions()[c as usize].slots().iter().enumerate() {
                let l = state.levels[j];
                match *slot {
                    Slot::Fixed(v) => {
                        w[0] = g[0] / l as f64;
                        for k in 1..=state.k {
                            w[k] = g[k] * state.theta[k - 1].rows[j][v as usize];
                        }
                        let total: f64 = w.iter().sum();
                        z[j] = if total > 0.0 {
                            pick(&w, total, rng.random()) as u32
                        } else {
                            0
                        };
                        x[j] = v;
                    }
                    Slot::Wildcard => {
                        let k = pick(&g, 1.0, rng.random());
                        z[j] = k as u32;
                        x[j] = if k == 0 {
                            rng.random_range(0..l)
                        } else {
                            pick(&state.theta[k - 1].rows[j], 1.0, rng.random()) as u32
                        };
                    }
                }
            }
            (x, z, a)
        })
        .collect();
    let mut rec = AugmentedRecords {
        num_vars: jn,
        condition: owner,
        ..Default::default()
    };
    for (x, z, a) in drawn {
        rec.x.extend(x);
        rec.z.extend(z);
        rec.alpha.push(a);
    }
    rec
}

/// Below this expected customer count a component's expected table count
/// is taken as the count itself; the error is of the order of its square.
const NEGLIGIBLE_CUSTOMERS: f64 = 1e-9;

/// Expected sufficient statistics of the truncated records under the
/// predictive weights of `batch`.
pub fn expected_stats_from(
    state: &HdpState,
    conditions: &DisjointConditionSet,
    counts: &[u64],
    batch: &PredictiveBatch,
) -> ExpectedStats {
    let k1 = state.k + 1;
    let offsets = level_offsets(&state.levels);
    let total: usize = state.levels.iter().map(|&l| l as usize).sum();
    let mut profiles = vec![vec![0.0; total]; k1];
    let mut tables = vec![0.0; k1];
    let t_len = batch.len() as f64;
    let active: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(c, &n)| (c, n as f64))
        .collect();
    if active.is_empty() {
        return ExpectedStats {
            profile_counts: profiles,
            tables,
        };
    }
    // wildcard slots: value and component drawn from the mixture
    let mut g_bar = vec![0.0; k1];
    for g in &batch.weights {
        for (a, b) in g_bar.iter_mut().zip(g) {
            *a += b / t_len;
        }
    }
    for (j, &l) in state.levels.iter().enumerate() {
        let wild: f64 = active
            .iter()
            .filter(|(c, _)| conditions.conditions()[*c].slots()[j] == Slot::Wildcard)
            .map(|(_, n)| n)
            .sum();
        if wild == 0.0 {
            continue;
        }
        for x in 0..l as usize {
            profiles[0][offsets[j] + x] += wild * g_bar[0] / l as f64;
            for k in 1..k1 {
                profiles[k][offsets[j] + x] += wild * g_bar[k] * state.theta[k - 1].rows[j][x];
            }
        }
    }
    // fixed slots: component given the fixed value; plus expected tables.
    // Given g_t the slots of a record pick component k independently, so
    // its customer count at k is Poisson-binomial over the J slots.
    let jn = state.levels.len();
    let mut dist = vec![0.0; jn + 1];
    let mut customers = vec![0.0; k1];
    for &(c, n_c) in &active {
        let slots = conditions.conditions()[c].slots();
        let wild = slots.iter().filter(|s| **s == Slot::Wildcard).count();
        // (offset of the fixed value, weight of each component at it)
        let fixed: Vec<(usize, Vec<f64>)> = slots
            .iter()
            .enumerate()
            .filter_map(|(j, slot)| match *slot {
                Slot::Fixed(v) => {
                    let mut col = vec![1.0 / state.levels[j] as f64; k1];
                    for k in 1..k1 {
                        col[k] = state.theta[k - 1].rows[j][v as usize];
                    }
                    Some((offsets[j] + v as usize, col))
                }
                Slot::Wildcard => None,
            })
            .collect();
        let mut probs = vec![vec![0.0; k1]; fixed.len()];
        let mut fixed_share = vec![vec![0.0; k1]; fixed.len()];
        for (t, g) in batch.weights.iter().enumerate() {
            for (f, (at, col)) in fixed.iter().enumerate() {
                let s = batch.mix[t][*at];
                let row = &mut probs[f];
                if s <= 0.0 {
                    row.fill(0.0);
                    continue;
                }
                let inv = 1.0 / s;
                for ((q, &gk), &th) in row.iter_mut().zip(g).zip(col) {
                    *q = gk * th * inv;
                }
                for (a, &q) in fixed_share[f].iter_mut().zip(row.iter()) {
                    *a += q;
                }
            }
            let alpha = batch.alpha[t];
            for k in 0..k1 {
                customers[k] = wild as f64 * g[k] + probs.iter().map(|row| row[k]).sum::<f64>();
            }
            for k in 0..k1 {
                let gamma = alpha * state.g0[k];
                if gamma <= 0.0 || customers[k] == 0.0 {
                    continue;
                }
                if customers[k] < NEGLIGIBLE_CUSTOMERS {
                    // a lone customer always opens a table
                    tables[k] += n_c / t_len * customers[k];
                    continue;
                }
                dist.fill(0.0);
                dist[0] = 1.0;
                let slot_probs = probs.iter().map(|row| row[k]).chain(std::iter::repeat_n(g[k], wild));
                for (j, q) in slot_probs.enumerate() {
                    for n in (1..=j + 1).rev() {
                        dist[n] = dist[n] * (1.0 - q) + dist[n - 1] * q;
                    }
                    dist[0] *= 1.0 - q;
                }
                let mut crp = 0.0;
                let mut expected = 0.0;
                for (n, &pn) in dist.iter().enumerate().skip(1) {
                    crp += gamma / (gamma + (n - 1) as f64);
                    expected += pn * crp;
                }
                tables[k] += n_c / t_len * expected;
            }
        }
        for ((at, _), share) in fixed.iter().zip(&fixed_share) {
            for k in 0..k1 {
                profiles[k][*at] += n_c * share[k] / t_len;
            }
        }
    }
    ExpectedStats {
        profile_counts: profiles,
        tables,
    }
}

/// Expected sufficient statistics with a fresh batch of T predictive draws.
pub fn approx_augmented_stats(
    state: &HdpState,
    conditions: &DisjointConditionSet,
    counts: &[u64],
    t: usize,
    policy: AlphaPolicy,
    sweep: &SweepRng,
) -> ExpectedStats {
    let batch = PredictiveBatch::draw(state, t.max(1), policy, sweep);
    expected_stats_from(state, conditions, counts, &batch)
}
