//! Direct-assignment Gibbs sampler for the HDP mixed-membership model.

mod chain;
mod state;
pub mod steps;

pub use chain::{run_chain, run_chain_sz, ChainConfig, Checkpoint, Estimator, Sampler, StructuralZeros};
pub use state::{HdpState, Hyper, ProfileArray, DEFAULT_K_INIT};
pub use steps::{escobar_west, ExtraStats, ANTONIAK_MAX_N};

use crate::error::{Error, Result};
use crate::rng::{Purpose, SweepRng};
use crate::sz::AugmentedBatch;

/// Stream unit for the number of dishes among augmented new-component tables.
const NEW_DISH_UNIT: u64 = 1 << 32;

impl HdpState {
    /// One full sweep. Assignments are resampled first and empty components
    /// pruned; then table counts, concentrations, global weights, local
    /// weights and profiles are drawn in that order so that each
    /// concentration update is immediately followed by fresh weights drawn
    /// under it. Augmented records, if any, enter every step but the first.
    /// Returns the number of components born.
    pub fn sweep(&mut self, x: &[u32], sweep: &SweepRng, mut batch: Option<&mut AugmentedBatch>) -> Result<usize> {
        let births = self.step_assignments(x, sweep)?;
        let map = self.prune_components();
        if let Some(b) = batch.as_deref_mut() {
            b.relabel(&map, self.k);
        }
        self.step_table_counts(sweep);
        let extra = match batch {
            Some(b) => {
                b.draw_tables(self, sweep);
                b.extra_stats(self)
            }
            None => {
                let total = self.levels.iter().map(|&l| l as usize).sum();
                ExtraStats::zeros(self.k, total)
            }
        };
        let observed: u64 = self.table_totals().iter().sum();
        let augmented: f64 = extra.tables.iter().sum();
        let total_tables = observed + augmented.round() as u64;
        // tables at components not yet instantiated pick their dishes from a
        // DP(α₀) restaurant of their own
        let new_tables = extra.tables[0].round() as u32;
        let new_dishes = if new_tables == 0 {
            0
        } else {
            let mut r = sweep.stream(Purpose::RootConcentration, NEW_DISH_UNIT);
            steps::table_count(new_tables, self.alpha0, &mut r) as u64
        };
        let dishes = self.k as u64 + new_dishes;
        match self.step_concentrations(total_tables, dishes, sweep) {
            Ok(()) | Err(Error::DegenerateTableCount) => {}
            Err(e) => return Err(e),
        }
        self.step_global_weights(&extra.tables, &mut sweep.stream(Purpose::GlobalWeights, 0));
        self.step_local_weights(sweep);
        self.step_profiles(x, Some(&extra.profile_counts), sweep);
        Ok(births)
    }
}
