use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::state::{HdpState, Hyper, DEFAULT_K_INIT};
use crate::data::{build_frequency_table, sample_unique_cells, Cell, DisjointConditionSet, MicrodataSample};
use crate::error::{Error, Result};
use crate::risk::{
    tau1_exponent, tau1_population_sampling, AlphaPolicy, AugmentationRecord, PredictiveBatch, RiskTrace,
};
use crate::rng::{Purpose, SweepRng};
use crate::sz::{
    condition_probabilities_from, draw_augmented_counts, expected_stats_from, sample_augmented_records, AugmentedBatch,
    BatchContent, SzMode,
};

/// Checkpoint layout version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    PopulationSampling,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thinning: u64,
    /// Monte Carlo draws T per τ₁ evaluation and per p_c evaluation.
    pub t_mc: usize,
    pub hyper: Hyper,
    pub seed: u64,
    pub estimator: Estimator,
    pub n_population: u64,
    pub k_init: usize,
    pub alpha_policy: AlphaPolicy,
    /// Check every state invariant after each sweep.
    pub validate: bool,
}

impl ChainConfig {
    pub fn new(n_population: u64, seed: u64) -> Self {
        Self {
            iterations: 2000,
            burn_in: 1000,
            thinning: 1,
            t_mc: 100,
            hyper: Hyper::default(),
            seed,
            estimator: Estimator::MonteCarlo,
            n_population,
            k_init: DEFAULT_K_INIT,
            alpha_policy: AlphaPolicy::Prior,
            validate: false,
        }
    }

    pub fn check(&self, n_sample: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            ));
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1".into());
        }
        if self.t_mc == 0 {
            return bad("T must be at least 1".into());
        }
        if self.k_init == 0 {
            return bad("initial component count must be at least 1".into());
        }
        if !self.hyper.is_valid() {
            return bad("hyperparameters must be positive".into());
        }
        if let AlphaPolicy::Fixed(a) = self.alpha_policy {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("fixed concentration {a} must be positive"));
            }
        }
        if self.n_population < n_sample as u64 {
            return bad(format!(
                "population size {} is below the sample size {n_sample}",
                self.n_population
            ));
        }
        Ok(())
    }

    /// Whether the draw after sweep `iteration` (1-based) is kept.
    pub fn is_kept(&self, iteration: u64) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thinning)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralZeros {
    pub conditions: DisjointConditionSet,
    pub mode: SzMode,
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ChainConfig,
    pub structural_zeros: Option<StructuralZeros>,
    pub iteration: u64,
    pub state: HdpState,
    pub trace: RiskTrace,
    pub batch: Option<AugmentedBatch>,
}

/// A chain in progress.
#[derive(Clone, Debug)]
pub struct Sampler {
    config: ChainConfig,
    sz: Option<StructuralZeros>,
    x: Vec<u32>,
    n: u64,
    uniques: Vec<Cell>,
    state: HdpState,
    iteration: u64,
    trace: RiskTrace,
    batch: Option<AugmentedBatch>,
}

impl Sampler {
    pub fn new(sample: &MicrodataSample, config: ChainConfig, sz: Option<StructuralZeros>) -> Result<Self> {
        config.check(sample.len())?;
        let state = HdpState::init(sample, config.hyper, config.k_init, config.seed);
        let batch = sz
            .as_ref()
            .map(|s| AugmentedBatch::empty(s.mode, s.conditions.len(), sample.layout().num_vars()));
        let uniques: Vec<Cell> = sample_unique_cells(&build_frequency_table(sample))
            .into_iter()
            .collect();
        let trace = RiskTrace {
            seed: config.seed,
            sample_uniques: uniques.len(),
            ..Default::default()
        };
        Ok(Self {
            x: sample.records().flatten().copied().collect(),
            n: sample.len() as u64,
            uniques,
            state,
            iteration: 0,
            trace,
            batch,
            config,
            sz,
        })
    }

    /// Continue from a checkpoint taken on the same sample.
    pub fn resume(sample: &MicrodataSample, checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.format_version != CHECKPOINT_VERSION {
            return Err(Error::FormatVersion {
                what: "checkpoint",
                found: checkpoint.format_version.to_string(),
                expected: CHECKPOINT_VERSION,
            });
        }
        if checkpoint.state.levels != sample.layout().levels() || checkpoint.state.g.len() != sample.len() {
            return Err(Error::InvalidConfig("checkpoint does not belong to this sample".into()));
        }
        let mut s = Self::new(sample, checkpoint.config, checkpoint.structural_zeros)?;
        s.state = checkpoint.state;
        s.iteration = checkpoint.iteration;
        s.trace = checkpoint.trace;
        s.batch = checkpoint.batch;
        Ok(s)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            structural_zeros: self.sz.clone(),
            iteration: self.iteration,
            state: self.state.clone(),
            trace: self.trace.clone(),
            batch: self.batch.clone(),
        }
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn state(&self) -> &HdpState {
        &self.state
    }

    pub fn trace(&self) -> &RiskTrace {
        &self.trace
    }

    pub fn batch(&self) -> Option<&AugmentedBatch> {
        self.batch.as_ref()
    }

    /// Sample-unique cells of the observed data.
    pub fn uniques(&self) -> &[Cell] {
        &self.uniques
    }

    /// Number of completed sweeps.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Run one sweep (plus augmentation) and, if this iteration is kept,
    /// the τ₁ draw, which is also returned.
    pub fn step(&mut self) -> Result<Option<f64>> {
        let started = Instant::now();
        let it = self.iteration + 1;
        let sweep = SweepRng::new(self.config.seed, it);
        self.state.sweep(&self.x, &sweep, self.batch.as_mut())?;

        let mut p0 = None;
        let mut predictive = None;
        if let Some(sz) = &self.sz {
            let t0 = Instant::now();
            let pred = PredictiveBatch::draw(&self.state, self.config.t_mc, self.config.alpha_policy, &sweep);
            let (p, p_total) = condition_probabilities_from(&pred, &sz.conditions)?;
            let counts = draw_augmented_counts(self.n, &p, &mut sweep.stream(Purpose::AugmentedCounts, 0))?;
            let content = match sz.mode {
                SzMode::Exact => BatchContent::Exact(sample_augmented_records(
                    &self.state,
                    &sz.conditions,
                    &counts,
                    self.config.alpha_policy,
                    &sweep,
                )),
                SzMode::Approximate => {
                    BatchContent::Approximate(expected_stats_from(&self.state, &sz.conditions, &counts, &pred))
                }
            };
            let n0 = counts.iter().sum();
            self.batch = Some(AugmentedBatch {
                p,
                p0: p_total,
                counts,
                n0,
                content,
            });
            self.trace.augmentation_seconds += t0.elapsed().as_secs_f64();
            self.trace.augmentation.push(AugmentationRecord {
                iteration: it,
                p0: p_total,
                n0,
            });
            p0 = Some(p_total);
            predictive = Some(pred);
        }

        if self.config.validate {
            let violated = |message| Error::InvariantViolated { iteration: it, message };
            self.state.check_invariants().map_err(violated)?;
            if let (Some(sz), Some(b)) = (&self.sz, &self.batch) {
                b.check(&sz.conditions).map_err(violated)?;
            }
        }

        let mut draw = None;
        if self.config.is_kept(it) {
            let tau = match self.config.estimator {
                Estimator::MonteCarlo => {
                    let exponent = tau1_exponent(self.config.n_population, self.n, p0)?;
                    let pred = predictive.unwrap_or_else(|| {
                        PredictiveBatch::draw(&self.state, self.config.t_mc, self.config.alpha_policy, &sweep)
                    });
                    pred.tau1(&self.uniques, exponent)
                }
                Estimator::PopulationSampling => tau1_population_sampling(
                    &self.state,
                    &self.uniques,
                    self.config.n_population,
                    self.n,
                    self.config.alpha_policy,
                    &sweep,
                    self.sz.as_ref().map(|s| &s.conditions),
                ) as f64,
            };
            self.trace.iterations.push(it);
            self.trace.tau1.push(tau);
            self.trace.k_n.push(self.state.k);
            draw = Some(tau);
        }
        self.iteration = it;
        self.trace.seconds += started.elapsed().as_secs_f64();
        Ok(draw)
    }

    /// Run sweeps until `iteration` sweeps are complete (capped at the
    /// configured total).
    pub fn run_until(&mut self, iteration: u64) -> Result<()> {
        while self.iteration < iteration.min(self.config.iterations) {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<RiskTrace> {
        self.run_until(self.config.iterations)?;
        Ok(self.trace)
    }
}

/// Run a full chain without structural zeros.
pub fn run_chain(sample: &MicrodataSample, config: ChainConfig) -> Result<RiskTrace> {
    Sampler::new(sample, config, None)?.run()
}

/// Run a full chain with structural-zero augmentation.
pub fn run_chain_sz(
    sample: &MicrodataSample,
    config: ChainConfig,
    conditions: DisjointConditionSet,
    mode: SzMode,
) -> Result<RiskTrace> {
    Sampler::new(sample, config, Some(StructuralZeros { conditions, mode }))?.run()
}
