//! Categorical microdata, sparse frequency tables and structural-zero
//! conditions.
//!
//! Category codes are 0-based inside the library. Everything that crosses a
//! file or display boundary is 1-based.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of the cross-classified key-variable space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryLayout {
    names: Vec<String>,
    levels: Vec<u32>,
}

impl CategoryLayout {
    pub fn new(names: Vec<String>, levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidLayout("at least one key variable is required".into()));
        }
        if names.len() != levels.len() {
            return Err(Error::InvalidLayout(format!(
                "{} names for {} variables",
                names.len(),
                levels.len()
            )));
        }
        if let Some((j, &l)) = levels.iter().enumerate().find(|(_, &l)| l < 2) {
            return Err(Error::InvalidLayout(format!(
                "variable {} ({}) has {} categories, need at least 2",
                j + 1,
                names[j],
                l
            )));
        }
        let layout = Self { names, levels };
        if layout.checked_cardinality().is_none() {
            return Err(Error::InvalidLayout("total cell count overflows 128 bits".into()));
        }
        Ok(layout)
    }

    /// Layout with generated variable names `V1..VJ`.
    pub fn from_levels(levels: Vec<u32>) -> Result<Self> {
        let names = (1..=levels.len()).map(|j| format!("V{j}")).collect();
        Self::new(names, levels)
    }

    /// Number of key variables J.
    pub fn num_vars(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> u32 {
        self.levels[j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn checked_cardinality(&self) -> Option<u128> {
        self.levels.iter().try_fold(1u128, |acc, &l| acc.checked_mul(l as u128))
    }

    /// |𝒞| = ∏ n_j.
    pub fn cardinality(&self) -> u128 {
        self.checked_cardinality().expect("validated at construction")
    }

    /// Sum of the category counts, the length of a flattened profile array.
    pub fn total_levels(&self) -> usize {
        self.levels.iter().map(|&l| l as usize).sum()
    }

    /// Start of each variable's block in a flattened profile array.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0usize;
        self.levels
            .iter()
            .map(|&l| {
                let start = acc;
                acc += l as usize;
                start
            })
            .collect()
    }

    pub fn is_valid(&self, coords: &[u32]) -> bool {
        coords.len() == self.levels.len() && coords.iter().zip(&self.levels).all(|(&c, &l)| c < l)
    }

    /// Mixed-radix code of a (0-based) cell, in lexicographic order.
    pub fn encode(&self, coords: &[u32]) -> u128 {
        coords
            .iter()
            .zip(&self.levels)
            .fold(0u128, |acc, (&c, &l)| acc * l as u128 + c as u128)
    }

    /// Every cell of the layout in lexicographic order. Only sensible for
    /// small layouts.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let total = self.cardinality();
        (0..total).map(move |mut code| {
            let mut coords = vec![0u32; self.levels.len()];
            for (slot, &l) in coords.iter_mut().zip(&self.levels).rev() {
                *slot = (code % l as u128) as u32;
                code /= l as u128;
            }
            Cell(coords)
        })
    }
}

/// A point of the cross-classified space, 0-based coordinates.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell(Vec<u32>);

impl Cell {
    pub fn new(layout: &CategoryLayout, coords: Vec<u32>) -> Result<Self> {
        if !layout.is_valid(&coords) {
            return Err(Error::InvalidCell(format!(
                "{:?} (0-based) is outside layout {:?}",
                coords,
                layout.levels()
            )));
        }
        Ok(Self(coords))
    }

    pub fn from_one_based(layout: &CategoryLayout, coords: &[u32]) -> Result<Self> {
        if coords.contains(&0) {
            return Err(Error::InvalidCell(format!("{coords:?}: category codes start at 1")));
        }
        Self::new(layout, coords.iter().map(|&c| c - 1).collect())
    }

    pub fn coords(&self) -> &[u32] {
        &self.0
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (j, c) in self.0.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", c + 1)?;
        }
        write!(f, ")")
    }
}

/// The observed records X_{1:n}, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicrodataSample {
    layout: CategoryLayout,
    data: Vec<u32>,
}

impl MicrodataSample {
    /// Build from 0-based rows.
    pub fn new(layout: CategoryLayout, records: Vec<Vec<u32>>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("microdata sample has no records"));
        }
        let mut data = Vec::with_capacity(records.len() * layout.num_vars());
        for (i, r) in records.iter().enumerate() {
            if !layout.is_valid(r) {
                return Err(Error::InvalidCell(format!("record {} is {:?} (0-based)", i + 1, r)));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { layout, data })
    }

    pub fn from_cells(layout: CategoryLayout, cells: &[Cell]) -> Result<Self> {
        Self::new(layout, cells.iter().map(|c| c.0.clone()).collect())
    }

    /// Row-major data already known to be valid.
    pub(crate) fn from_flat(layout: CategoryLayout, data: Vec<u32>) -> Self {
        debug_assert_eq!(data.len() % layout.num_vars(), 0);
        Self { layout, data }
    }

    pub fn layout(&self) -> &CategoryLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.layout.num_vars()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn record(&self, i: usize) -> &[u32] {
        let j = self.layout.num_vars();
        &self.data[i * j..(i + 1) * j]
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.data.chunks_exact(self.layout.num_vars())
    }

    pub fn cell(&self, i: usize) -> Cell {
        Cell(self.record(i).to_vec())
    }
}

/// Sparse cell → count map. Zero counts are never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    layout: CategoryLayout,
    counts: BTreeMap<Cell, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn from_counts(layout: CategoryLayout, counts: BTreeMap<Cell, u64>) -> Result<Self> {
        let mut cleaned = BTreeMap::new();
        let mut total = 0u64;
        for (cell, count) in counts {
            if !layout.is_valid(cell.coords()) {
                return Err(Error::InvalidCell(format!("{cell} is outside the layout")));
            }
            if count > 0 {
                total += count;
                cleaned.insert(cell, count);
            }
        }
        Ok(Self {
            layout,
            counts: cleaned,
            total,
        })
    }

    pub fn layout(&self) -> &CategoryLayout {
        &self.layout
    }

    pub fn get(&self, cell: &Cell) -> u64 {
        self.counts.get(cell).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Cell, u64)> + '_ {
        self.counts.iter().map(|(c, &n)| (c, n))
    }

    /// Number of occupied cells.
    pub fn occupied(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// f_c = #{i : X_i = c}.
pub fn build_frequency_table(sample: &MicrodataSample) -> FrequencyTable {
    let mut counts: BTreeMap<Cell, u64> = BTreeMap::new();
    for r in sample.records() {
        *counts.entry(Cell(r.to_vec())).or_insert(0) += 1;
    }
    FrequencyTable {
        layout: sample.layout.clone(),
        total: sample.len() as u64,
        counts,
    }
}

/// Cells with frequency exactly one.
pub fn sample_unique_cells(f: &FrequencyTable) -> BTreeSet<Cell> {
    f.counts
        .iter()
        .filter(|(_, &n)| n == 1)
        .map(|(c, _)| c.clone())
        .collect()
}

/// File-level risk measures computed from known sample and population tables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactRisk {
    /// Sample uniques that are population uniques.
    pub tau1: u64,
    /// Σ over sample uniques of 1/F_c.
    pub tau2: f64,
}

pub fn exact_tau_oracle(sample: &FrequencyTable, population: &FrequencyTable) -> Result<ExactRisk> {
    if sample.layout.levels != population.layout.levels {
        return Err(Error::LayoutMismatch);
    }
    let mut tau1 = 0u64;
    let mut tau2 = 0.0;
    for (cell, f) in sample.iter() {
        let big_f = population.get(cell);
        if f > big_f {
            return Err(Error::NotASubsample {
                cell: cell.to_string(),
                sample: f,
                population: big_f,
            });
        }
        if f == 1 {
            if big_f == 1 {
                tau1 += 1;
            }
            tau2 += 1.0 / big_f as f64;
        }
    }
    Ok(ExactRisk { tau1, tau2 })
}

/// One slot of a marginal condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Wildcard,
    /// 0-based category.
    Fixed(u32),
}

/// A block of cells given by fixing some variables and leaving the rest free.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarginalCondition {
    slots: Vec<Slot>,
}

impl MarginalCondition {
    pub fn new(layout: &CategoryLayout, slots: Vec<Slot>) -> Result<Self> {
        if slots.len() != layout.num_vars() {
            return Err(Error::InvalidCondition(format!(
                "{} slots for {} variables",
                slots.len(),
                layout.num_vars()
            )));
        }
        if slots.iter().all(|s| *s == Slot::Wildcard) {
            return Err(Error::InvalidCondition("at least one slot must be fixed".into()));
        }
        for (j, s) in slots.iter().enumerate() {
            if let Slot::Fixed(v) = s {
                if *v >= layout.level(j) {
                    return Err(Error::InvalidCondition(format!(
                        "slot {} fixes category {} but the variable has {} levels",
                        j + 1,
                        v + 1,
                        layout.level(j)
                    )));
                }
            }
        }
        Ok(Self { slots })
    }

    /// Parse tokens such as `["*", "1", "2"]` (1-based categories).
    pub fn parse_tokens<S: AsRef<str>>(layout: &CategoryLayout, tokens: &[S]) -> Result<Self> {
        let slots = tokens
            .iter()
            .map(|t| {
                let t = t.as_ref().trim();
                if t == "*" {
                    Ok(Slot::Wildcard)
                } else {
                    match t.parse::<u32>() {
                        Ok(v) if v >= 1 => Ok(Slot::Fixed(v - 1)),
                        _ => Err(Error::InvalidCondition(format!("bad token {t:?}"))),
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layout, slots)
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn matches(&self, coords: &[u32]) -> bool {
        self.slots.iter().zip(coords).all(|(s, &c)| match s {
            Slot::Wildcard => true,
            Slot::Fixed(v) => *v == c,
        })
    }

    /// True when some variable is fixed to different values in the two
    /// conditions.
    pub fn is_disjoint_from(&self, other: &MarginalCondition) -> bool {
        self.slots
            .iter()
            .zip(&other.slots)
            .any(|pair| matches!(pair, (Slot::Fixed(a), Slot::Fixed(b)) if a != b))
    }

    fn is_subset_of(&self, other: &MarginalCondition) -> bool {
        self.slots.iter().zip(&other.slots).all(|pair| match pair {
            (_, Slot::Wildcard) => true,
            (Slot::Fixed(a), Slot::Fixed(b)) => a == b,
            (Slot::Wildcard, Slot::Fixed(_)) => false,
        })
    }

    /// Tokens in file order, e.g. `*,1,2`.
    pub fn to_tokens(&self) -> String {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Wildcard => "*".to_string(),
                Slot::Fixed(v) => (v + 1).to_string(),
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for MarginalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.to_tokens())
    }
}

pub fn match_condition(cell: &Cell, mu: &MarginalCondition) -> bool {
    mu.matches(cell.coords())
}

/// Number of cells matched: ∏ of the wildcard variables' category counts.
pub fn condition_cardinality(mu: &MarginalCondition, layout: &CategoryLayout) -> u128 {
    mu.slots
        .iter()
        .zip(layout.levels())
        .filter(|(s, _)| **s == Slot::Wildcard)
        .map(|(_, &l)| l as u128)
        .product()
}

/// Pairwise disjoint marginal conditions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DisjointConditionSet {
    conditions: Vec<MarginalCondition>,
}

impl DisjointConditionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Checks pairwise disjointness.
    pub fn new(conditions: Vec<MarginalCondition>) -> Result<Self> {
        for (a, ca) in conditions.iter().enumerate() {
            for cb in &conditions[a + 1..] {
                if !ca.is_disjoint_from(cb) {
                    return Err(Error::InvalidCondition(format!("{ca} and {cb} overlap")));
                }
            }
        }
        Ok(Self { conditions })
    }

    pub fn conditions(&self) -> &[MarginalCondition] {
        &self.conditions
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Index of the condition containing the cell, if any.
    pub fn find(&self, coords: &[u32]) -> Option<usize> {
        self.conditions.iter().position(|c| c.matches(coords))
    }

    pub fn covers(&self, coords: &[u32]) -> bool {
        self.find(coords).is_some()
    }

    /// |S|, the number of structural-zero cells.
    pub fn total_cardinality(&self, layout: &CategoryLayout) -> u128 {
        self.conditions.iter().map(|c| condition_cardinality(c, layout)).sum()
    }
}

/// Pieces of `piece` not covered by `emitted`, as disjoint conditions.
fn subtract(piece: &MarginalCondition, emitted: &MarginalCondition, layout: &CategoryLayout) -> Vec<MarginalCondition> {
    if piece.is_disjoint_from(emitted) {
        return vec![piece.clone()];
    }
    if piece.is_subset_of(emitted) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut rest = piece.slots.clone();
    for (j, slot) in emitted.slots.iter().enumerate() {
        if let (Slot::Fixed(v), Slot::Wildcard) = (slot, rest[j]) {
            for w in (0..layout.level(j)).filter(|w| w != v) {
                let mut slice = rest.clone();
                slice[j] = Slot::Fixed(w);
                out.push(MarginalCondition { slots: slice });
            }
            rest[j] = Slot::Fixed(*v);
        }
    }
    // what remains of `rest` lies inside `emitted`
    out
}

/// Rewrite possibly overlapping conditions as a disjoint set covering the
/// same cells. Conditions are processed in order; each new one has the
/// already-emitted blocks carved out of it.
pub fn disjointify_conditions(
    overlapping: &[MarginalCondition],
    layout: &CategoryLayout,
) -> Result<DisjointConditionSet> {
    if overlapping.is_empty() {
        return Err(Error::EmptyInput("no marginal conditions"));
    }
    let mut emitted: Vec<MarginalCondition> = Vec::new();
    for cond in overlapping {
        if cond.slots.len() != layout.num_vars() {
            return Err(Error::InvalidCondition(format!("{cond} does not fit the layout")));
        }
        let mut pieces = vec![cond.clone()];
        for e in &emitted {
            pieces = pieces.iter().flat_map(|p| subtract(p, e, layout)).collect();
            if pieces.is_empty() {
                break;
            }
        }
        emitted.extend(pieces);
    }
    Ok(DisjointConditionSet { conditions: emitted })
}
