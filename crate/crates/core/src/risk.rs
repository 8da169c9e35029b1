//! Per-iteration τ₁ draws and trace summaries.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, DisjointConditionSet, MarginalCondition, Slot};
use crate::distributions::{dirichlet_into, gamma_rate, pick};
use crate::error::{Error, Result};
use crate::hdp::steps::level_offsets;
use crate::hdp::{HdpState, Hyper};
use crate::rng::{Purpose, SweepRng};

/// Largest p₀ accepted by the structural-zero exponent and step 7.
pub const MAX_P0: f64 = 1.0 - 1e-9;

/// Which concentration an unseen individual gets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlphaPolicy {
    /// Fresh α* ~ Ga(a, b) per individual or Monte Carlo index.
    Prior,
    /// The same α* for everyone.
    Fixed(f64),
}

impl AlphaPolicy {
    pub fn draw<R: Rng + ?Sized>(&self, hyper: &Hyper, rng: &mut R) -> f64 {
        match *self {
            AlphaPolicy::Prior => gamma_rate(hyper.a, hyper.b, rng),
            AlphaPolicy::Fixed(a) => a,
        }
    }
}

/// Weights g_t ~ Dir(α*_t g0) for t = 1..T together with the per-cell
/// marginals s_t[j][x] = Σ_k g_{t,k} θ^(k)_{j,x} + g_{t,0}/n_j.
#[derive(Clone, Debug)]
pub struct PredictiveBatch {
    pub alpha: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    /// `mix[t][offset_j + x]`
    pub mix: Vec<Vec<f64>>,
    pub offsets: Vec<usize>,
}

/// g ~ Dir(α g0), tolerating slots whose parameter underflows.
pub(crate) fn draw_unseen_weights<R: Rng + ?Sized>(g0: &[f64], alpha: f64, out: &mut [f64], rng: &mut R) {
    let mut params: Vec<f64> = g0.iter().map(|&w| alpha * w).collect();
    if params.iter().all(|&p| p <= 0.0) {
        params[0] = f64::MIN_POSITIVE;
    }
    dirichlet_into(&params, out, rng);
}

impl PredictiveBatch {
    /// Draw T weight vectors; draw t uses stream (Predictive, t) of `sweep`.
    pub fn draw(state: &HdpState, t: usize, policy: AlphaPolicy, sweep: &SweepRng) -> Self {
        let offsets = level_offsets(&state.levels);
        let total: usize = state.levels.iter().map(|&l| l as usize).sum();
        let draws: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..t)
            .into_par_iter()
            .map(|ti| {
                let mut r = sweep.stream(Purpose::Predictive, ti as u64);
                let a = policy.draw(&state.hyper, &mut r);
                let mut g = vec![0.0; state.k + 1];
                draw_unseen_weights(&state.g0, a, &mut g, &mut r);
                let mut mix = vec![0.0; total];
                for (j, &l) in state.levels.iter().enumerate() {
                    let row = &mut mix[offsets[j]..offsets[j] + l as usize];
                    row.fill(g[0] / l as f64);
                    for k in 1..=state.k {
                        let gk = g[k];
                        if gk == 0.0 {
                            continue;
                        }
                        for (m, th) in row.iter_mut().zip(&state.theta[k - 1].rows[j]) {
                            *m += gk * th;
                        }
                    }
                }
                (a, g, mix)
            })
            .collect();
        let mut alpha = Vec::with_capacity(t);
        let mut weights = Vec::with_capacity(t);
        let mut mix = Vec::with_capacity(t);
        for (a, g, m) in draws {
            alpha.push(a);
            weights.push(g);
            mix.push(m);
        }
        Self {
            alpha,
            weights,
            mix,
            offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Monte Carlo estimate of P(X_{n+1} = c | G₀).
    pub fn cell_probability(&self, coords: &[u32]) -> f64 {
        let sum: f64 = self
            .mix
            .iter()
            .map(|m| {
                coords
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| m[self.offsets[j] + x as usize])
                    .product::<f64>()
            })
            .sum();
        sum / self.len() as f64
    }

    /// Monte Carlo estimate of P(X_{n+1} ∈ μ | G₀); only Fixed slots enter
    /// the product.
    pub fn condition_probability(&self, mu: &MarginalCondition) -> f64 {
        let sum: f64 = self
            .mix
            .iter()
            .map(|m| {
                mu.slots()
                    .iter()
                    .enumerate()
                    .filter_map(|(j, s)| match s {
                        Slot::Fixed(x) => Some(m[self.offsets[j] + *x as usize]),
                        Slot::Wildcard => None,
                    })
                    .product::<f64>()
            })
            .sum();
        sum / self.len() as f64
    }

    /// τ₁ = Σ_c exp(E · ln(1 − p_c)) over the given cells.
    pub fn tau1(&self, cells: &[Cell], exponent: f64) -> f64 {
        let per_cell: Vec<f64> = cells
            .par_iter()
            .map(|c| {
                let p = self.cell_probability(c.coords()).min(1.0);
                (exponent * (-p).ln_1p()).exp()
            })
            .collect();
        per_cell.iter().sum()
    }
}

/// Monte Carlo estimate of P(X_{n+1} = c | G₀) with T draws.
pub fn cell_next_probability(state: &HdpState, cell: &Cell, t: usize, policy: AlphaPolicy, sweep: &SweepRng) -> f64 {
    PredictiveBatch::draw(state, t.max(1), policy, sweep).cell_probability(cell.coords())
}

/// The τ₁ exponent: N − n, or (N − n)/(1 − p₀) with structural zeros.
pub fn tau1_exponent(n_population: u64, n_sample: u64, p0: Option<f64>) -> Result<f64> {
    let base = n_population.saturating_sub(n_sample) as f64;
    match p0 {
        None => Ok(base),
        Some(p0) if (0.0..MAX_P0).contains(&p0) => Ok(base / (1.0 - p0)),
        Some(p0) => Err(Error::ProbabilityMassExceedsOne { p0 }),
    }
}

/// Monte Carlo τ₁ draw for the given sample-unique cells.
#[allow(clippy::too_many_arguments)]
pub fn tau1_monte_carlo(
    state: &HdpState,
    uniques: &[Cell],
    n_population: u64,
    n_sample: u64,
    t: usize,
    policy: AlphaPolicy,
    sweep: &SweepRng,
    p0: Option<f64>,
) -> Result<f64> {
    let exponent = tau1_exponent(n_population, n_sample, p0)?;
    if uniques.is_empty() {
        return Ok(0.0);
    }
    Ok(PredictiveBatch::draw(state, t.max(1), policy, sweep).tau1(uniques, exponent))
}

/// Simulated individuals handled per population-sampling stream.
const POPULATION_CHUNK: u64 = 1024;

/// Population-simulation τ₁ draw: simulate the N − n unobserved individuals
/// from the posterior predictive and count the sample uniques nobody else
/// landed on. Individuals falling in `excluded` cells are redrawn.
pub fn tau1_population_sampling(
    state: &HdpState,
    uniques: &[Cell],
    n_population: u64,
    n_sample: u64,
    policy: AlphaPolicy,
    sweep: &SweepRng,
    excluded: Option<&DisjointConditionSet>,
) -> u64 {
    if uniques.is_empty() {
        return 0;
    }
    let levels = &state.levels;
    let encode = |coords: &[u32]| {
        coords
            .iter()
            .zip(levels)
            .fold(0u128, |acc, (&x, &l)| acc * l as u128 + x as u128)
    };
    let lookup: HashMap<u128, usize> = uniques
        .iter()
        .enumerate()
        .map(|(u, c)| (encode(c.coords()), u))
        .collect();
    let remaining = n_population.saturating_sub(n_sample);
    let chunks = remaining.div_ceil(POPULATION_CHUNK);
    let hits: Vec<Vec<usize>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut r = sweep.stream(Purpose::PopulationSampling, chunk);
            let count = POPULATION_CHUNK.min(remaining - chunk * POPULATION_CHUNK);
            let mut g = vec![0.0; state.k + 1];
            let mut coords = vec![0u32; levels.len()];
            let mut found = Vec::new();
            for _ in 0..count {
                loop {
                    let a = policy.draw(&state.hyper, &mut r);
                    draw_unseen_weights(&state.g0, a, &mut g, &mut r);
                    for (j, c) in coords.iter_mut().enumerate() {
                        let k = pick(&g, 1.0, r.random());
                        *c = if k == 0 {
                            r.random_range(0..levels[j])
                        } else {
                            let row = &state.theta[k - 1].rows[j];
                            pick(row, 1.0, r.random()) as u32
                        };
                    }
                    if !excluded.is_some_and(|s| s.covers(&coords)) {
                        break;
                    }
                }
                if let Some(&u) = lookup.get(&encode(&coords)) {
                    found.push(u);
                }
            }
            found
        })
        .collect();
    let mut hit = vec![false; uniques.len()];
    for u in hits.into_iter().flatten() {
        hit[u] = true;
    }
    hit.iter().filter(|h| !**h).count() as u64
}

/// Posterior summary of a sequence of draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub draws: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl TraceSummary {
    pub fn from_draws(draws: &[f64]) -> Self {
        let n = draws.len();
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = if n > 0 {
            draws.iter().sum::<f64>() / n as f64
        } else {
            f64::NAN
        };
        let std = if n > 1 {
            (draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            draws: n,
            mean,
            median: quantile_sorted(&sorted, 0.5),
            std,
            q025: quantile_sorted(&sorted, 0.025),
            q975: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

/// Per-sweep structural-zero diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub iteration: u64,
    pub p0: f64,
    pub n0: u64,
}

/// Output of a chain: kept τ₁ draws, the K_n trace and run metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskTrace {
    pub iterations: Vec<u64>,
    pub tau1: Vec<f64>,
    pub k_n: Vec<usize>,
    pub augmentation: Vec<AugmentationRecord>,
    pub seed: u64,
    pub sample_uniques: usize,
    /// Wall-clock seconds spent in the sampler.
    pub seconds: f64,
    /// Wall-clock seconds spent computing p_c, augmented counts and
    /// augmented records.
    pub augmentation_seconds: f64,
}

impl RiskTrace {
    pub fn summary(&self) -> TraceSummary {
        TraceSummary::from_draws(&self.tau1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CategoryLayout;
    use crate::hdp::ProfileArray;

    /// State with no instantiated components: every draw puts all mass on
    /// the new-component slot.
    fn empty_state(levels: Vec<u32>) -> HdpState {
        HdpState {
            levels,
            k: 0,
            g0: vec![1.0],
            g: vec![vec![1.0]],
            z: Vec::new(),
            theta: Vec::new(),
            m: vec![vec![0]],
            alpha0: 1.0,
            alpha: vec![1.0],
            hyper: Hyper::default(),
        }
    }

    /// One component with all root mass and a point-mass profile.
    fn point_state(levels: Vec<u32>, at: &[u32]) -> HdpState {
        HdpState {
            k: 1,
            g0: vec![0.0, 1.0],
            g: vec![vec![0.0, 1.0]],
            theta: vec![ProfileArray::point_mass(&levels, at)],
            m: vec![vec![0, 1]],
            levels,
            z: Vec::new(),
            alpha0: 1.0,
            alpha: vec![1.0],
            hyper: Hyper::default(),
        }
    }

    fn cell(levels: &[u32], coords: &[u32]) -> Cell {
        Cell::new(&CategoryLayout::from_levels(levels.to_vec()).unwrap(), coords.to_vec()).unwrap()
    }

    #[test]
    fn exponent_cases() {
        assert_eq!(tau1_exponent(100, 10, None).unwrap(), 90.0);
        assert_eq!(tau1_exponent(100, 10, Some(0.0)).unwrap(), 90.0);
        assert_eq!(tau1_exponent(100, 10, Some(0.5)).unwrap(), 180.0);
        assert_eq!(tau1_exponent(10, 10, None).unwrap(), 0.0);
        assert!(matches!(
            tau1_exponent(100, 10, Some(1.0)),
            Err(Error::ProbabilityMassExceedsOne { .. })
        ));
        assert!(tau1_exponent(100, 10, Some(MAX_P0)).is_err());
    }

    #[test]
    fn new_component_only_gives_uniform_cells() {
        let st = empty_state(vec![2, 3]);
        let sweep = SweepRng::new(1, 1);
        for c in [[0, 0], [1, 2]] {
            let p = cell_next_probability(&st, &cell(&[2, 3], &c), 50, AlphaPolicy::Prior, &sweep);
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn point_mass_component() {
        let st = point_state(vec![2, 3], &[0, 1]);
        let sweep = SweepRng::new(1, 1);
        let on = cell_next_probability(&st, &cell(&[2, 3], &[0, 1]), 10, AlphaPolicy::Fixed(2.0), &sweep);
        let off = cell_next_probability(&st, &cell(&[2, 3], &[1, 1]), 10, AlphaPolicy::Fixed(2.0), &sweep);
        assert!((on - 1.0).abs() < 1e-12);
        assert_eq!(off, 0.0);
    }

    #[test]
    fn monte_carlo_tau1_closed_forms() {
        let levels = [2u32];
        let sweep = SweepRng::new(2, 1);
        let st = empty_state(levels.to_vec());
        let uniques = vec![cell(&levels, &[0]), cell(&levels, &[1])];
        // every cell has probability 1/2: τ₁ = 2 · (1/2)^3
        let t = tau1_monte_carlo(&st, &uniques, 13, 10, 7, AlphaPolicy::Prior, &sweep, None).unwrap();
        assert!((t - 0.25).abs() < 1e-14);
        // structural zeros with p0 = 1/2 double the exponent
        let t = tau1_monte_carlo(&st, &uniques, 13, 10, 7, AlphaPolicy::Prior, &sweep, Some(0.5)).unwrap();
        assert!((t - 2.0 * 0.5f64.powi(6)).abs() < 1e-14);
        // N = n: every sample unique is a population unique
        let t = tau1_monte_carlo(&st, &uniques, 10, 10, 7, AlphaPolicy::Prior, &sweep, None).unwrap();
        assert_eq!(t, 2.0);
        assert_eq!(
            tau1_monte_carlo(&st, &[], 13, 10, 7, AlphaPolicy::Prior, &sweep, None).unwrap(),
            0.0
        );
    }

    #[test]
    fn population_sampling_point_mass() {
        let levels = [2u32, 2];
        let st = point_state(levels.to_vec(), &[0, 1]);
        let sweep = SweepRng::new(3, 1);
        let uniques = vec![cell(&levels, &[0, 1]), cell(&levels, &[1, 0])];
        let policy = AlphaPolicy::Fixed(1.0);
        assert_eq!(
            tau1_population_sampling(&st, &uniques, 3000, 10, policy, &sweep, None),
            1
        );
        assert_eq!(tau1_population_sampling(&st, &uniques, 10, 10, policy, &sweep, None), 2);
        assert_eq!(tau1_population_sampling(&st, &[], 3000, 10, policy, &sweep, None), 0);
    }

    #[test]
    fn population_sampling_respects_exclusions() {
        let levels = [2u32];
        let layout = CategoryLayout::from_levels(levels.to_vec()).unwrap();
        let st = empty_state(levels.to_vec());
        let sweep = SweepRng::new(4, 1);
        let uniques = vec![cell(&levels, &[0])];
        let excluded =
            DisjointConditionSet::new(vec![MarginalCondition::new(&layout, vec![Slot::Fixed(1)]).unwrap()]).unwrap();
        // every simulated individual is pushed onto the unique's cell
        let t = tau1_population_sampling(&st, &uniques, 50, 10, AlphaPolicy::Prior, &sweep, Some(&excluded));
        assert_eq!(t, 0);
    }

    #[test]
    fn summary_of_known_draws() {
        let s = TraceSummary::from_draws(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.draws, 5);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.median, 3.0);
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((s.q025 - 1.1).abs() < 1e-12);
        assert!((s.q975 - 4.9).abs() < 1e-12);
        assert!(s.covers(1.1) && s.covers(4.0));
        assert!(!s.covers(1.0) && !s.covers(5.0));
        assert!(quantile_sorted(&[], 0.5).is_nan());
        assert_eq!(TraceSummary::from_draws(&[7.0]).std, 0.0);
    }

    #[test]
    fn batch_is_deterministic() {
        let mut r = SweepRng::new(6, 0).stream(Purpose::User, 0);
        let levels = vec![3u32, 2];
        let mut st = empty_state(levels.clone());
        st.k = 2;
        st.g0 = vec![0.2, 0.5, 0.3];
        st.theta = (0..2).map(|_| ProfileArray::from_prior(&levels, &mut r)).collect();
        let sweep = SweepRng::new(6, 4);
        let a = PredictiveBatch::draw(&st, 20, AlphaPolicy::Prior, &sweep);
        let b = PredictiveBatch::draw(&st, 20, AlphaPolicy::Prior, &sweep);
        assert_eq!(a.mix, b.mix);
        for m in &a.mix {
            assert!((m[0..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((m[3..5].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
