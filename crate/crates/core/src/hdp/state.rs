use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryLayout, MicrodataSample};
use crate::distributions::{dirichlet_into, draw_categorical, gamma_rate};
use crate::rng::{Purpose, SweepRng};

/// Hyperparameters of the Gamma priors α_i ~ Ga(a, b), α₀ ~ Ga(a0, b0)
/// (shape, rate).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub a: f64,
    pub b: f64,
    pub a0: f64,
    pub b0: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            a0: 1.0,
            b0: 1.0,
        }
    }
}

impl Hyper {
    pub fn is_valid(&self) -> bool {
        [self.a, self.b, self.a0, self.b0]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
    }
}

/// One extreme profile: row j is a distribution over the n_j categories of
/// variable j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileArray {
    pub rows: Vec<Vec<f64>>,
}

impl ProfileArray {
    /// Draw from the base measure: every row ~ Dir(1, …, 1).
    pub fn from_prior<R: Rng + ?Sized>(levels: &[u32], rng: &mut R) -> Self {
        let rows = levels
            .iter()
            .map(|&l| {
                let ones = vec![1.0; l as usize];
                let mut row = vec![0.0; l as usize];
                dirichlet_into(&ones, &mut row, rng);
                row
            })
            .collect();
        Self { rows }
    }

    /// Every row a point mass on the given 0-based cell.
    pub fn point_mass(levels: &[u32], cell: &[u32]) -> Self {
        let rows = levels
            .iter()
            .zip(cell)
            .map(|(&l, &x)| {
                let mut row = vec![0.0; l as usize];
                row[x as usize] = 1.0;
                row
            })
            .collect();
        Self { rows }
    }

    pub fn get(&self, j: usize, x: u32) -> f64 {
        self.rows[j][x as usize]
    }
}

/// Full state of the direct-assignment sampler.
///
/// Weight vectors have length K+1: slot 0 carries the mass of all
/// components not yet instantiated, slots 1..=K the active components.
/// `z` is row-major n×J with values in 1..=K. `m` is n×(K+1) with column 0
/// unused for observed individuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdpState {
    pub levels: Vec<u32>,
    pub k: usize,
    pub g0: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub z: Vec<u32>,
    pub theta: Vec<ProfileArray>,
    pub m: Vec<Vec<u32>>,
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub hyper: Hyper,
}

/// Default number of components in the initial random assignment.
pub const DEFAULT_K_INIT: usize = 10;

impl HdpState {
    pub fn num_individuals(&self) -> usize {
        self.g.len()
    }

    pub fn num_vars(&self) -> usize {
        self.levels.len()
    }

    /// θ^(k) for k in 1..=K.
    pub fn profile(&self, k: usize) -> &ProfileArray {
        &self.theta[k - 1]
    }

    pub fn assignment(&self, i: usize, j: usize) -> u32 {
        self.z[i * self.levels.len() + j]
    }

    /// n_{i·k} for k in 0..=K.
    pub fn component_counts(&self, i: usize) -> Vec<u32> {
        let jn = self.levels.len();
        let mut counts = vec![0u32; self.k + 1];
        for &z in &self.z[i * jn..(i + 1) * jn] {
            counts[z as usize] += 1;
        }
        counts
    }

    /// m_{·k} for k in 0..=K.
    pub fn table_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.k + 1];
        for row in &self.m {
            for (t, &v) in totals.iter_mut().zip(row) {
                *t += v as u64;
            }
        }
        totals
    }

    /// Random initial state: K_init components with uniform assignments,
    /// prior profiles and concentrations, then table counts and weights
    /// drawn from their conditionals.
    pub fn init(sample: &MicrodataSample, hyper: Hyper, k_init: usize, seed: u64) -> Self {
        let layout = sample.layout();
        let levels = layout.levels().to_vec();
        let n = sample.len();
        let jn = levels.len();
        let k = k_init.max(1);
        let streams = SweepRng::new(seed, u64::MAX);

        let mut r = streams.stream(Purpose::Init, 0);
        let theta = (0..k).map(|_| ProfileArray::from_prior(&levels, &mut r)).collect();
        let alpha0 = gamma_rate(hyper.a0, hyper.b0, &mut r);
        let mut z = vec![0u32; n * jn];
        let mut alpha = vec![0.0; n];
        for i in 0..n {
            let mut ri = streams.stream(Purpose::Init, 1 + i as u64);
            for slot in &mut z[i * jn..(i + 1) * jn] {
                *slot = ri.random_range(1..=k as u32);
            }
            alpha[i] = gamma_rate(hyper.a, hyper.b, &mut ri);
        }
        let uniform = 1.0 / (k + 1) as f64;
        let mut state = Self {
            levels,
            k,
            g0: vec![uniform; k + 1],
            g: vec![vec![uniform; k + 1]; n],
            z,
            theta,
            m: vec![vec![0; k + 1]; n],
            alpha0,
            alpha,
            hyper,
        };
        state.prune_components();
        let init_rng = SweepRng::new(seed, u64::MAX - 1);
        state.step_table_counts(&init_rng);
        let zeros = vec![0.0; state.k + 1];
        state.step_global_weights(&zeros, &mut init_rng.stream(Purpose::GlobalWeights, 0));
        state.step_local_weights(&init_rng);
        state
    }

    /// Drop components that no observation is assigned to. Their weight is
    /// returned to the new-component slot. Returns the old→new label map
    /// (index 0 maps to 0; removed labels map to 0).
    pub fn prune_components(&mut self) -> Vec<u32> {
        let mut used = vec![false; self.k + 1];
        for &z in &self.z {
            used[z as usize] = true;
        }
        let mut map = vec![0u32; self.k + 1];
        let mut next = 0u32;
        for k in 1..=self.k {
            if used[k] {
                next += 1;
                map[k] = next;
            }
        }
        if next as usize == self.k {
            return map;
        }
        let fold = |w: &mut Vec<f64>| {
            let mut out = vec![0.0; next as usize + 1];
            out[0] = w[0];
            for k in 1..w.len() {
                out[map[k] as usize] += w[k];
            }
            *w = out;
        };
        fold(&mut self.g0);
        for gi in &mut self.g {
            fold(gi);
        }
        for row in &mut self.m {
            let mut out = vec![0u32; next as usize + 1];
            for k in 1..row.len() {
                if map[k] > 0 {
                    out[map[k] as usize] = row[k];
                }
            }
            *row = out;
        }
        let mut k = 0;
        self.theta.retain(|_| {
            k += 1;
            used[k]
        });
        for z in &mut self.z {
            *z = map[*z as usize];
        }
        self.k = next as usize;
        map
    }

    /// Check every structural invariant. Table counts are checked against
    /// the current assignments, so call this after a full sweep.
    pub fn check_invariants(&self) -> Result<(), String> {
        let jn = self.levels.len();
        let n = self.g.len();
        let simplex = |w: &[f64], what: &str| -> Result<(), String> {
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err(format!("{what} has a negative or NaN entry"));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(format!("{what} sums to {s}"));
            }
            Ok(())
        };
        if self.g0.len() != self.k + 1 {
            return Err(format!("g0 has length {} for K = {}", self.g0.len(), self.k));
        }
        simplex(&self.g0, "g0")?;
        if self.theta.len() != self.k {
            return Err("profile count differs from K".into());
        }
        for (k, th) in self.theta.iter().enumerate() {
            for (j, row) in th.rows.iter().enumerate() {
                if row.len() != self.levels[j] as usize {
                    return Err(format!("theta[{}] row {} has wrong length", k + 1, j + 1));
                }
                simplex(row, &format!("theta[{}] row {}", k + 1, j + 1))?;
            }
        }
        if self.z.len() != n * jn || self.m.len() != n || self.alpha.len() != n {
            return Err("per-individual arrays disagree on n".into());
        }
        let mut used = vec![false; self.k + 1];
        for &z in &self.z {
            if z == 0 || z as usize > self.k {
                return Err(format!("assignment {z} outside 1..={}", self.k));
            }
            used[z as usize] = true;
        }
        if let Some(k) = (1..=self.k).find(|&k| !used[k]) {
            return Err(format!("component {k} has no assignment"));
        }
        for i in 0..n {
            if self.g[i].len() != self.k + 1 {
                return Err(format!("g[{i}] has wrong length"));
            }
            simplex(&self.g[i], &format!("g[{i}]"))?;
            let counts = self.component_counts(i);
            for k in 1..=self.k {
                let (mk, nk) = (self.m[i][k], counts[k]);
                if (nk == 0) != (mk == 0) || mk > nk {
                    return Err(format!("m[{i}][{k}] = {mk} with n = {nk}"));
                }
            }
            if !(self.alpha[i] > 0.0) {
                return Err(format!("alpha[{i}] = {}", self.alpha[i]));
            }
        }
        if !(self.alpha0 > 0.0) {
            return Err(format!("alpha0 = {}", self.alpha0));
        }
        Ok(())
    }

    /// Forward simulation of the model for n individuals: concentrations
    /// from their priors, assignments and table counts through the Chinese
    /// restaurant franchise, then weights and profiles from their
    /// conditionals given the seating.
    pub fn sample_prior<R: Rng + ?Sized>(levels: &[u32], n: usize, hyper: Hyper, rng: &mut R) -> Self {
        let jn = levels.len();
        let alpha0 = gamma_rate(hyper.a0, hyper.b0, rng);
        let alpha: Vec<f64> = (0..n).map(|_| gamma_rate(hyper.a, hyper.b, rng)).collect();
        let mut dish_tables: Vec<u64> = Vec::new();
        let mut z = vec![0u32; n * jn];
        let mut m_lists: Vec<Vec<(usize, u32)>> = Vec::with_capacity(n);
        for i in 0..n {
            // (dish, customers) per table
            let mut tables: Vec<(usize, u32)> = Vec::new();
            for j in 0..jn {
                let mut w: Vec<f64> = tables.iter().map(|t| t.1 as f64).collect();
                w.push(alpha[i]);
                let t = draw_categorical(&w, rng);
                if t == tables.len() {
                    let mut dw: Vec<f64> = dish_tables.iter().map(|&c| c as f64).collect();
                    dw.push(alpha0);
                    let d = draw_categorical(&dw, rng);
                    if d == dish_tables.len() {
                        dish_tables.push(0);
                    }
                    dish_tables[d] += 1;
                    tables.push((d, 0));
                }
                tables[t].1 += 1;
                z[i * jn + j] = tables[t].0 as u32 + 1;
            }
            m_lists.push(tables);
        }
        let k = dish_tables.len();
        let mut m = vec![vec![0u32; k + 1]; n];
        for (i, tables) in m_lists.iter().enumerate() {
            for &(d, _) in tables {
                m[i][d + 1] += 1;
            }
        }
        let mut params = vec![alpha0];
        params.extend(dish_tables.iter().map(|&c| c as f64));
        let mut g0 = vec![0.0; k + 1];
        dirichlet_into(&params, &mut g0, rng);
        let theta = (0..k).map(|_| ProfileArray::from_prior(levels, rng)).collect();
        let mut state = Self {
            levels: levels.to_vec(),
            k,
            g0,
            g: vec![vec![0.0; k + 1]; n],
            z,
            theta,
            m,
            alpha0,
            alpha,
            hyper,
        };
        for i in 0..n {
            let counts = state.component_counts(i);
            let p: Vec<f64> = (0..=k)
                .map(|kk| state.alpha[i] * state.g0[kk] + if kk > 0 { counts[kk] as f64 } else { 0.0 })
                .collect();
            dirichlet_into(&p, &mut state.g[i], rng);
        }
        state
    }

    /// Draw X_{i,j} ~ θ^(Z_{i,j})_{j,·} for every individual.
    pub fn sample_observations<R: Rng + ?Sized>(&self, layout: &CategoryLayout, rng: &mut R) -> MicrodataSample {
        let jn = self.levels.len();
        let mut data = vec![0u32; self.z.len()];
        for (idx, &z) in self.z.iter().enumerate() {
            let row = &self.profile(z as usize).rows[idx % jn];
            data[idx] = draw_categorical(row, rng) as u32;
        }
        MicrodataSample::from_flat(layout.clone(), data)
    }
}
