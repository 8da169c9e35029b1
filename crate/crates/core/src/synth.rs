//! Forward simulation of the parametric grade-of-membership model, used to
//! build populations with known risk.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryLayout, DisjointConditionSet, MicrodataSample};
use crate::distributions::{dirichlet_into, gamma_rate, pick};
use crate::error::{Error, Result};
use crate::hdp::ProfileArray;
use crate::rng::{Purpose, SweepRng};

/// Parameters of the K-component model: g_i ~ Dir(`g0_weights`), then for
/// each variable Z ~ Cat(g_i), X ~ θ^(Z)_{j,·}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GomParams {
    pub k: usize,
    /// Dirichlet parameter vector, α₀ times a point of the K-simplex.
    pub g0_weights: Vec<f64>,
    pub profiles: Vec<ProfileArray>,
    pub alpha0: f64,
}

impl GomParams {
    /// α₀ ~ Ga(2, 1), weights α₀ · Dir(1_K), profile rows Dir(1).
    pub fn random<R: Rng + ?Sized>(k: usize, layout: &CategoryLayout, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("component count must be at least 1".into()));
        }
        let alpha0 = gamma_rate(2.0, 1.0, rng);
        let mut simplex = vec![0.0; k];
        dirichlet_into(&vec![1.0; k], &mut simplex, rng);
        let profiles = (0..k).map(|_| ProfileArray::from_prior(layout.levels(), rng)).collect();
        Ok(Self {
            k,
            g0_weights: simplex.iter().map(|w| alpha0 * w).collect(),
            profiles,
            alpha0,
        })
    }

    pub fn check(&self, layout: &CategoryLayout) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 || self.g0_weights.len() != self.k || self.profiles.len() != self.k {
            return bad("component count disagrees with weights or profiles".into());
        }
        if self.g0_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return bad("Dirichlet weights must be positive".into());
        }
        for (k, p) in self.profiles.iter().enumerate() {
            if p.rows.len() != layout.num_vars() {
                return bad(format!("profile {} has {} rows", k + 1, p.rows.len()));
            }
            for (j, row) in p.rows.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != layout.level(j) as usize || row.iter().any(|v| *v < 0.0) || (sum - 1.0).abs() > 1e-10 {
                    return bad(format!("profile {} row {} is not a distribution", k + 1, j + 1));
                }
            }
        }
        Ok(())
    }

    fn draw_record<R: Rng + ?Sized>(&self, g: &mut [f64], out: &mut [u32], rng: &mut R) {
        dirichlet_into(&self.g0_weights, g, rng);
        for (j, x) in out.iter_mut().enumerate() {
            let k = pick(g, 1.0, rng.random());
            *x = pick(&self.profiles[k].rows[j], 1.0, rng.random()) as u32;
        }
    }
}

/// Simulate `n_pop` individuals; individual i uses stream (Synthesis, i).
/// Records landing in `excluded` are redrawn, giving a population with
/// structural zeros.
pub fn generate_gom_population(
    params: &GomParams,
    layout: &CategoryLayout,
    n_pop: usize,
    seed: u64,
    excluded: Option<&DisjointConditionSet>,
) -> Result<MicrodataSample> {
    if n_pop == 0 {
        return Err(Error::EmptyInput("population size"));
    }
    params.check(layout)?;
    if let Some(ex) = excluded {
        if ex.total_cardinality(layout) >= layout.cardinality() {
            return Err(Error::InvalidConfig("excluded conditions cover every cell".into()));
        }
    }
    let jn = layout.num_vars();
    let streams = SweepRng::new(seed, 0);
    let mut data = vec![0u32; n_pop * jn];
    data.par_chunks_mut(jn).enumerate().for_each(|(i, out)| {
        let mut rng = streams.stream(Purpose::Synthesis, i as u64);
        let mut g = vec![0.0; params.k];
        loop {
            params.draw_record(&mut g, out, &mut rng);
            if !excluded.is_some_and(|ex| ex.covers(out)) {
                break;
            }
        }
    });
    Ok(MicrodataSample::from_flat(layout.clone(), data))
}

/// Simple random sample of `n` records without replacement.
pub fn subsample<R: Rng + ?Sized>(population: &MicrodataSample, n: usize, rng: &mut R) -> Result<MicrodataSample> {
    if n > population.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: population.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("subsample size"));
    }
    let picked = index::sample(rng, population.len(), n);
    let mut data = Vec::with_capacity(n * population.layout().num_vars());
    for i in picked.iter() {
        data.extend_from_slice(population.record(i));
    }
    Ok(MicrodataSample::from_flat(population.layout().clone(), data))
}

/// Indices chosen by [`subsample`] for the same generator state.
pub fn subsample_indices<R: Rng + ?Sized>(population_size: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n > population_size {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: population_size,
        });
    }
    Ok(index::sample(rng, population_size, n).into_vec())
}
