//! The individual Gibbs steps. Each step reads whatever it needs from the
//! state and takes its randomness from per-unit streams of a [`SweepRng`],
//! so the parallel and sequential executions agree bit for bit.

use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;

use super::state::{HdpState, ProfileArray};
use crate::distributions::{
    dirichlet_into, draw_antoniak, draw_beta, draw_crp_table_count, gamma_rate, StirlingLogTable,
};
use crate::error::{Error, Result};
use crate::rng::{Purpose, SweepRng};

/// Largest customer count handled by exact Antoniak sampling; bigger counts
/// fall back to CRP simulation.
pub const ANTONIAK_MAX_N: usize = 64;

/// Mass below which the new-component slot of g0 is treated as underflowed.
pub const MIN_NEW_MASS: f64 = 1e-300;

/// Sites resolved per speculative parallel block in step 1.
const ASSIGN_BLOCK: usize = 4096;

pub(crate) fn stirling_table() -> &'static StirlingLogTable {
    static TABLE: OnceLock<StirlingLogTable> = OnceLock::new();
    TABLE.get_or_init(|| StirlingLogTable::new(ANTONIAK_MAX_N))
}

/// One table-count draw: Antoniak for small counts, CRP simulation above the
/// table bound.
pub(crate) fn table_count<R: Rng + ?Sized>(customers: u32, gamma: f64, rng: &mut R) -> u32 {
    if customers == 0 {
        return 0;
    }
    let gamma = gamma.max(f64::MIN_POSITIVE);
    let n = customers as usize;
    let m = if n <= ANTONIAK_MAX_N {
        draw_antoniak(n, gamma, stirling_table(), rng).expect("count within table bound")
    } else {
        draw_crp_table_count(n, gamma, rng)
    };
    m as u32
}

/// Offsets of each variable's block in a flattened (variable, category)
/// index.
pub(crate) fn level_offsets(levels: &[u32]) -> Vec<usize> {
    let mut acc = 0;
    levels
        .iter()
        .map(|&l| {
            let o = acc;
            acc += l as usize;
            o
        })
        .collect()
}

/// Extra sufficient statistics contributed by augmented records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExtraStats {
    /// Table counts per component, index 0 for tables at new components.
    pub tables: Vec<f64>,
    /// `profile_counts[k - 1][offset_j + x]` for k in 1..=K.
    pub profile_counts: Vec<Vec<f64>>,
}

impl ExtraStats {
    pub fn zeros(k: usize, total_levels: usize) -> Self {
        Self {
            tables: vec![0.0; k + 1],
            profile_counts: vec![vec![0.0; total_levels]; k],
        }
    }
}

impl HdpState {
    /// Likelihood table for step 1: entry `(offset_j + x) * (K + 1) + k` is
    /// θ^(k)_{j,x} for k ≥ 1 and 1/n_j for k = 0.
    fn likelihood_table(&self, offsets: &[usize]) -> Vec<f64> {
        let width = self.k + 1;
        let total: usize = self.levels.iter().map(|&l| l as usize).sum();
        let mut lik = vec![0.0; total * width];
        for (j, &l) in self.levels.iter().enumerate() {
            for x in 0..l as usize {
                let row = &mut lik[(offsets[j] + x) * width..(offsets[j] + x + 1) * width];
                row[0] = 1.0 / l as f64;
                for k in 1..=self.k {
                    row[k] = self.theta[k - 1].rows[j][x];
                }
            }
        }
        lik
    }

    fn draw_label(&self, site: usize, x: u32, lik: &[f64], offsets: &[usize], u: f64) -> u32 {
        let jn = self.levels.len();
        let (i, j) = (site / jn, site % jn);
        let width = self.k + 1;
        let row = &lik[(offsets[j] + x as usize) * width..][..width];
        let g = &self.g[i];
        let total: f64 = g.iter().zip(row).map(|(a, b)| a * b).sum();
        if !(total > 0.0 && total.is_finite()) {
            // every weight underflowed: fall back to the heaviest active component
            let mut best = 1;
            for k in 2..=self.k {
                if g[k] > g[best] {
                    best = k;
                }
            }
            return best as u32;
        }
        let target = u * total;
        let mut acc = 0.0;
        let mut last = 0;
        for k in 0..width {
            let w = g[k] * row[k];
            if w > 0.0 {
                acc += w;
                last = k;
                if target < acc {
                    return k as u32;
                }
            }
        }
        last as u32
    }

    /// Step 1: resample every Z_{i,j}. Returns the number of components born.
    ///
    /// Given g and θ the sites are conditionally independent except through
    /// births, so labels are computed in parallel blocks and only the first
    /// site of a block that picks the new component is committed before the
    /// block is recomputed from the following site. The uniform for each
    /// site is fixed up front, which makes the result identical to a
    /// sequential scan.
    pub fn step_assignments(&mut self, x: &[u32], sweep: &SweepRng) -> Result<usize> {
        let jn = self.levels.len();
        let n = self.g.len();
        let offsets = level_offsets(&self.levels);
        let uniforms: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut r = sweep.stream(Purpose::Assign, i as u64);
                (0..jn).map(move |_| r.random::<f64>())
            })
            .collect();
        let sites = n * jn;
        let mut lik = self.likelihood_table(&offsets);
        let mut births = 0usize;
        let mut pos = 0;
        while pos < sites {
            let end = (pos + ASSIGN_BLOCK).min(sites);
            let labels: Vec<u32> = (pos..end)
                .into_par_iter()
                .map(|s| self.draw_label(s, x[s], &lik, &offsets, uniforms[s]))
                .collect();
            match labels.iter().position(|&l| l == 0) {
                None => {
                    self.z[pos..end].copy_from_slice(&labels);
                    pos = end;
                }
                Some(q) => {
                    self.z[pos..pos + q].copy_from_slice(&labels[..q]);
                    let site = pos + q;
                    let mut r = sweep.stream(Purpose::Birth, births as u64);
                    self.birth_component(&mut r)?;
                    let j = site % jn;
                    let l = self.levels[j] as usize;
                    let mut params = vec![1.0; l];
                    params[x[site] as usize] += 1.0;
                    dirichlet_into(&params, &mut self.theta[self.k - 1].rows[j], &mut r);
                    self.z[site] = self.k as u32;
                    births += 1;
                    lik = self.likelihood_table(&offsets);
                    pos = site + 1;
                }
            }
        }
        Ok(births)
    }

    /// Instantiate a new component: split the new-component mass of g0 with
    /// ν₀ ~ Beta(α₀, 1) and of each g_i with
    /// ν_i ~ Beta(α_i g₀₀ ν₀, α_i g₀₀ (1 − ν₀)), and draw its profile from
    /// the base measure.
    pub fn birth_component<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.g0[0] < MIN_NEW_MASS {
            let totals = self.table_totals();
            let mut params: Vec<f64> = totals.iter().map(|&t| t as f64).collect();
            params[0] = self.alpha0;
            dirichlet_into(&params, &mut self.g0, rng);
            if self.g0[0] < MIN_NEW_MASS {
                return Err(Error::DegenerateMass);
            }
        }
        let g00 = self.g0[0];
        let nu0 = draw_beta(self.alpha0, 1.0, rng);
        let nus: Vec<f64> = self
            .alpha
            .iter()
            .map(|&a| {
                let s = a * g00;
                draw_beta(s * nu0, s * (1.0 - nu0), rng)
            })
            .collect();
        self.split_new_component(nu0, &nus);
        self.theta.push(ProfileArray::from_prior(&self.levels, rng));
        for row in &mut self.m {
            row.push(0);
        }
        Ok(())
    }

    /// The arithmetic of a birth with given split fractions: slot 0 keeps
    /// fraction ν and the new last slot gets 1 − ν.
    pub fn split_new_component(&mut self, nu0: f64, nus: &[f64]) {
        let split = |w: &mut Vec<f64>, nu: f64| {
            let rest = w[0];
            w[0] = nu * rest;
            w.push((1.0 - nu) * rest);
        };
        split(&mut self.g0, nu0);
        for (gi, &nu) in self.g.iter_mut().zip(nus) {
            split(gi, nu);
        }
        self.k += 1;
    }

    /// Step 2: m_{ik} ~ Antoniak(n_{i·k}, α_i g_{0,k}).
    pub fn step_table_counts(&mut self, sweep: &SweepRng) {
        let jn = self.levels.len();
        let k = self.k;
        let HdpState { m, z, alpha, g0, .. } = self;
        m.par_iter_mut().enumerate().for_each(|(i, mi)| {
            let mut counts = vec![0u32; k + 1];
            for &zz in &z[i * jn..(i + 1) * jn] {
                counts[zz as usize] += 1;
            }
            let mut r = sweep.stream(Purpose::Tables, i as u64);
            mi.clear();
            mi.push(0);
            for kk in 1..=k {
                mi.push(table_count(counts[kk], alpha[i] * g0[kk], &mut r));
            }
        });
    }

    /// Step 3: g0 ~ Dir(α₀ + extra₀, m_{·1} + extra₁, …).
    pub fn step_global_weights<R: Rng + ?Sized>(&mut self, extra_tables: &[f64], rng: &mut R) {
        let totals = self.table_totals();
        let mut params: Vec<f64> = totals.iter().map(|&t| t as f64).collect();
        params[0] = self.alpha0;
        for (p, &e) in params.iter_mut().zip(extra_tables) {
            *p += e;
        }
        self.g0.resize(self.k + 1, 0.0);
        dirichlet_into(&params, &mut self.g0, rng);
    }

    /// Step 4: g_i ~ Dir(α_i g_{0,0}, α_i g_{0,k} + n_{i·k}).
    pub fn step_local_weights(&mut self, sweep: &SweepRng) {
        let jn = self.levels.len();
        let k = self.k;
        let HdpState { g, z, alpha, g0, .. } = self;
        g.par_iter_mut().enumerate().for_each(|(i, gi)| {
            let mut params: Vec<f64> = g0.iter().map(|&w| alpha[i] * w).collect();
            for &zz in &z[i * jn..(i + 1) * jn] {
                params[zz as usize] += 1.0;
            }
            if params.iter().all(|&p| p <= 0.0) {
                // α_i g0 underflowed everywhere; only possible with no data
                params[0] = f64::MIN_POSITIVE;
            }
            gi.resize(k + 1, 0.0);
            let mut r = sweep.stream(Purpose::LocalWeights, i as u64);
            dirichlet_into(&params, gi, &mut r);
        });
    }

    /// Per-component (variable, category) counts of the observed data.
    pub fn profile_counts(&self, x: &[u32]) -> Vec<Vec<f64>> {
        let jn = self.levels.len();
        let offsets = level_offsets(&self.levels);
        let total: usize = self.levels.iter().map(|&l| l as usize).sum();
        let mut counts = vec![vec![0.0; total]; self.k];
        for (s, (&zz, &xx)) in self.z.iter().zip(x).enumerate() {
            counts[zz as usize - 1][offsets[s % jn] + xx as usize] += 1.0;
        }
        counts
    }

    /// Step 5: θ^(k)_{j,·} ~ Dir(1 + counts), counts including `extra`
    /// (indexed like [`HdpState::profile_counts`]).
    pub fn step_profiles(&mut self, x: &[u32], extra: Option<&[Vec<f64>]>, sweep: &SweepRng) {
        let mut counts = self.profile_counts(x);
        if let Some(extra) = extra {
            for (c, e) in counts.iter_mut().zip(extra) {
                for (a, b) in c.iter_mut().zip(e) {
                    *a += b;
                }
            }
        }
        let offsets = level_offsets(&self.levels);
        let levels = &self.levels;
        self.theta.par_iter_mut().enumerate().for_each(|(k, th)| {
            let mut r = sweep.stream(Purpose::Profiles, k as u64);
            for (j, row) in th.rows.iter_mut().enumerate() {
                let l = levels[j] as usize;
                let params: Vec<f64> = counts[k][offsets[j]..offsets[j] + l].iter().map(|c| 1.0 + c).collect();
                dirichlet_into(&params, row, &mut r);
            }
        });
    }

    /// Step 6: auxiliary-variable updates of α_i (J customers, m_{i·}
    /// tables) and α₀ (m_{··} tables, `dishes` dishes). With no tables the
    /// α₀ update is skipped and [`Error::DegenerateTableCount`] is returned
    /// after the α_i have been updated.
    pub fn step_concentrations(&mut self, total_tables: u64, dishes: u64, sweep: &SweepRng) -> Result<()> {
        let jn = self.levels.len() as f64;
        let hyper = self.hyper;
        let HdpState { alpha, m, .. } = self;
        alpha.par_iter_mut().enumerate().for_each(|(i, a)| {
            let tables: u64 = m[i].iter().map(|&v| v as u64).sum();
            let mut r = sweep.stream(Purpose::LocalConcentration, i as u64);
            *a = escobar_west(*a, tables as f64, jn, hyper.a, hyper.b, &mut r);
        });
        if total_tables == 0 {
            return Err(Error::DegenerateTableCount);
        }
        let mut r = sweep.stream(Purpose::RootConcentration, 0);
        self.alpha0 = escobar_west(
            self.alpha0,
            dishes as f64,
            total_tables as f64,
            hyper.a0,
            hyper.b0,
            &mut r,
        );
        Ok(())
    }
}

/// One auxiliary-variable update of a DP concentration with a Ga(a, b)
/// prior, given `clusters` occupied clusters among `items` items.
pub fn escobar_west<R: Rng + ?Sized>(current: f64, clusters: f64, items: f64, a: f64, b: f64, rng: &mut R) -> f64 {
    let eta = draw_beta(current + 1.0, items, rng);
    let rate = b - eta.ln();
    let odds_num = items * rate;
    let p_minus = odds_num / (clusters + a - 1.0 + odds_num);
    let s = if rng.random::<f64>() < p_minus { 1.0 } else { 0.0 };
    let shape = if a + clusters - s > 0.0 {
        a + clusters - s
    } else {
        a + clusters
    };
    let draw = gamma_rate(shape, rate, rng);
    draw.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdp::Hyper;

    fn state(k: usize) -> HdpState {
        let levels = vec![2, 3];
        let mut r = SweepRng::new(1, 0).stream(Purpose::User, 0);
        let theta = (0..k).map(|_| ProfileArray::from_prior(&levels, &mut r)).collect();
        let w = 1.0 / (k + 1) as f64;
        HdpState {
            levels,
            k,
            g0: vec![w; k + 1],
            g: vec![vec![w; k + 1]; 3],
            z: vec![1; 6],
            theta,
            m: vec![vec![0; k + 1]; 3],
            alpha0: 1.0,
            alpha: vec![1.0; 3],
            hyper: Hyper::default(),
        }
    }

    #[test]
    fn split_arithmetic() {
        let mut st = state(1);
        st.g0 = vec![0.3, 0.7];
        st.g = vec![vec![0.5, 0.5]; 3];
        st.split_new_component(0.4, &[0.5, 1.0, 0.0]);
        assert_eq!(st.k, 2);
        assert!((st.g0[0] - 0.12).abs() < 1e-15);
        assert_eq!(st.g0[1], 0.7);
        assert!((st.g0[2] - 0.18).abs() < 1e-15);
        assert_eq!(st.g[0], vec![0.25, 0.5, 0.25]);
        assert_eq!(st.g[1], vec![0.5, 0.5, 0.0]);
        assert_eq!(st.g[2], vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn birth_keeps_old_coordinates() {
        let mut st = state(2);
        let before = st.clone();
        let mut r = SweepRng::new(2, 0).stream(Purpose::User, 0);
        st.birth_component(&mut r).unwrap();
        assert_eq!(st.k, 3);
        assert_eq!(&st.g0[1..3], &before.g0[1..3]);
        for (a, b) in st.g.iter().zip(&before.g) {
            assert_eq!(&a[1..3], &b[1..3]);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(st.theta.len(), 3);
        assert!(st.m.iter().all(|row| row.len() == 4));
    }

    #[test]
    fn birth_with_large_root_concentration_keeps_mass_on_new_slot() {
        let mut st = state(1);
        st.alpha0 = 1e6;
        let mut r = SweepRng::new(3, 0).stream(Purpose::User, 0);
        let g00 = st.g0[0];
        st.birth_component(&mut r).unwrap();
        assert!(st.g0[0] > 0.999 * g00);
    }

    #[test]
    fn birth_reports_degenerate_mass() {
        let mut st = state(1);
        st.g0 = vec![0.0, 1.0];
        st.m = vec![vec![0, 1_000_000]; 3];
        st.alpha0 = 1e-300;
        let mut r = SweepRng::new(4, 0).stream(Purpose::User, 0);
        assert!(matches!(st.birth_component(&mut r), Err(Error::DegenerateMass)));
    }

    #[test]
    fn assignments_without_new_mass_stay_on_single_component() {
        let mut st = state(1);
        st.g = vec![vec![0.0, 1.0]; 3];
        let x = vec![0, 1, 1, 2, 0, 0];
        st.step_assignments(&x, &SweepRng::new(5, 1)).unwrap();
        assert_eq!(st.k, 1);
        assert!(st.z.iter().all(|&z| z == 1));
    }

    #[test]
    fn assignments_with_all_new_mass_give_births() {
        let mut st = state(1);
        st.g = vec![vec![1.0, 0.0]; 3];
        let x = vec![0, 1, 1, 2, 0, 0];
        let births = st.step_assignments(&x, &SweepRng::new(5, 1)).unwrap();
        assert!(births >= 1);
        assert!(st.z.iter().all(|&z| z >= 2));
    }

    #[test]
    fn table_counts_bounds() {
        let mut st = state(2);
        st.z = vec![1, 1, 1, 2, 2, 2];
        st.step_table_counts(&SweepRng::new(6, 1));
        for i in 0..3 {
            let counts = st.component_counts(i);
            for k in 1..=2 {
                assert_eq!(counts[k] == 0, st.m[i][k] == 0);
                assert!(st.m[i][k] <= counts[k]);
            }
        }
        // individual 1 has one customer at each component
        assert_eq!(st.m[1][1], 1);
        assert_eq!(st.m[1][2], 1);
    }

    #[test]
    fn global_weights_with_no_components() {
        let mut st = state(0);
        st.m = vec![vec![0]; 3];
        let mut r = SweepRng::new(7, 0).stream(Purpose::User, 0);
        st.step_global_weights(&[0.0], &mut r);
        assert_eq!(st.g0, vec![1.0]);
    }

    #[test]
    fn concentrations_with_no_tables_skip_root() {
        let mut st = state(1);
        st.m = vec![vec![0, 1]; 3];
        let a0 = st.alpha0;
        let r = st.step_concentrations(0, 0, &SweepRng::new(8, 1));
        assert!(matches!(r, Err(Error::DegenerateTableCount)));
        assert_eq!(st.alpha0, a0);
        assert!(st.alpha.iter().all(|&a| a > 0.0 && a != 1.0));
    }

    #[test]
    fn escobar_west_grows_with_prior_shape() {
        let mut r = SweepRng::new(9, 0).stream(Purpose::User, 0);
        let mean = |a: f64, r: &mut rand_chacha::ChaCha8Rng| {
            let mut v = 1.0;
            let mut acc = 0.0;
            for _ in 0..20_000 {
                v = escobar_west(v, 3.0, 20.0, a, 1.0, r);
                acc += v;
            }
            acc / 20_000.0
        };
        let small = mean(1.0, &mut r);
        let large = mean(100.0, &mut r);
        assert!(small.is_finite() && small > 0.0);
        assert!(large > 5.0 * small);
    }

    #[test]
    fn level_offsets_are_cumulative() {
        assert_eq!(level_offsets(&[2, 3, 4]), vec![0, 2, 5]);
    }
}
