//! Online bin-packing over unit-capacity bins.
//!
//! Items are CPU fractions in `(0, 1]`, bins are workers with capacity `1.0`.
//! Items are placed one at a time in arrival order, with no knowledge of the
//! items that follow. The only placement criterion implemented is First-Fit:
//! the lowest-index open bin with enough residual capacity wins, and a new bin
//! is appended only when no open bin fits.
//!
//! [`optimal_bins`] is an exact branch-and-bound solver used as a test oracle
//! for small instances.

use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;

use thiserror::Error;

/// Capacity of every bin.
pub const BIN_CAPACITY: f64 = 1.0;

/// Slack applied to fit tests so exact fills survive rounding noise.
pub const FIT_EPSILON: f64 = 1e-9;

/// Default largest instance accepted by [`optimal_bins`].
pub const DEFAULT_ORACLE_LIMIT: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PackError {
    #[error("invalid item {id}: size {size} is outside (0, 1]")]
    InvalidItem { id: String, size: f64 },
    #[error("duplicate item id {0}")]
    DuplicateItem(String),
    #[error("instance of {len} items exceeds the oracle limit of {limit}")]
    InstanceTooLarge { len: usize, limit: usize },
}

/// A single item to pack: an opaque id and a CPU fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct PackItem<I> {
    pub id: I,
    pub size: f64,
}

impl<I: fmt::Debug> PackItem<I> {
    pub fn new(id: I, size: f64) -> Self {
        Self { id, size }
    }

    pub fn validate(&self) -> Result<(), PackError> {
        if self.size > 0.0 && self.size <= BIN_CAPACITY {
            Ok(())
        } else {
            Err(PackError::InvalidItem {
                id: format!("{:?}", self.id),
                size: self.size,
            })
        }
    }
}

/// A unit-capacity bin.
///
/// Closed bins keep their index but never receive items.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin<I> {
    pub index: usize,
    pub capacity: f64,
    pub residual: f64,
    pub items: Vec<I>,
    pub closed: bool,
}

impl<I> Bin<I> {
    pub fn empty(index: usize) -> Self {
        Self {
            index,
            capacity: BIN_CAPACITY,
            residual: BIN_CAPACITY,
            items: Vec::new(),
            closed: false,
        }
    }

    /// A bin that already carries `load` of capacity from items placed
    /// outside this packing run.
    pub fn with_load(index: usize, load: f64) -> Self {
        Self {
            residual: (BIN_CAPACITY - load).clamp(0.0, BIN_CAPACITY),
            ..Self::empty(index)
        }
    }

    pub fn closed(index: usize) -> Self {
        Self {
            closed: true,
            ..Self::empty(index)
        }
    }

    pub fn load(&self) -> f64 {
        self.capacity - self.residual
    }

    pub fn fits(&self, size: f64) -> bool {
        !self.closed && self.residual + FIT_EPSILON >= size
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty() && self.residual >= self.capacity - FIT_EPSILON
    }

    fn place(&mut self, id: I, size: f64) {
        self.residual = (self.residual - size).max(0.0);
        self.items.push(id);
    }
}

/// Bin selection rule for [`pack_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[non_exhaustive]
pub enum FitCriterion {
    #[default]
    FirstFit,
}

impl FitCriterion {
    fn select<I>(self, bins: &[Bin<I>], size: f64) -> Option<usize> {
        match self {
            FitCriterion::FirstFit => bins.iter().position(|b| b.fits(size)),
        }
    }
}

/// One step of a packing run, kept so callers can audit the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// Position of the item in the input sequence.
    pub step: usize,
    /// Position of the chosen bin in the bin list.
    pub position: usize,
    /// The chosen bin's `index`.
    pub bin: usize,
    pub opened: bool,
}

/// Result of packing a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PackingPlan<I> {
    /// Item id to bin index, in input order.
    pub placements: Vec<(I, usize)>,
    /// Non-empty bins after the run, pre-existing load included.
    pub bins_used: usize,
    /// Indices of bins appended by this run.
    pub opened_bins: Vec<usize>,
    pub trace: Vec<Placement>,
    pub bins: Vec<Bin<I>>,
}

impl<I: PartialEq> PackingPlan<I> {
    pub fn bin_of(&self, id: &I) -> Option<usize> {
        self.placements
            .iter()
            .find(|(item, _)| item == id)
            .map(|(_, bin)| *bin)
    }
}

fn next_index<I>(bins: &[Bin<I>]) -> usize {
    bins.iter().map(|b| b.index + 1).max().unwrap_or(0)
}

/// Places one item with First-Fit, appending a bin when nothing fits.
///
/// Returns the position of the bin in `bins` that received the item.
pub fn first_fit_place<I: Clone + fmt::Debug>(
    item: &PackItem<I>,
    bins: &mut Vec<Bin<I>>,
) -> Result<usize, PackError> {
    place_with(FitCriterion::FirstFit, item, bins).map(|(pos, _)| pos)
}

fn place_with<I: Clone + fmt::Debug>(
    criterion: FitCriterion,
    item: &PackItem<I>,
    bins: &mut Vec<Bin<I>>,
) -> Result<(usize, bool), PackError> {
    item.validate()?;
    match criterion.select(bins, item.size) {
        Some(pos) => {
            bins[pos].place(item.id.clone(), item.size);
            Ok((pos, false))
        }
        None => {
            let mut bin = Bin::empty(next_index(bins));
            bin.place(item.id.clone(), item.size);
            bins.push(bin);
            Ok((bins.len() - 1, true))
        }
    }
}

/// Packs `items` in order into `bins`, opening new bins as needed.
pub fn pack_sequence<I>(
    items: &[PackItem<I>],
    mut bins: Vec<Bin<I>>,
    criterion: FitCriterion,
) -> Result<PackingPlan<I>, PackError>
where
    I: Clone + Eq + Hash + fmt::Debug,
{
    let mut seen = HashSet::with_capacity(items.len());
    for item in items {
        item.validate()?;
        if !seen.insert(&item.id) {
            return Err(PackError::DuplicateItem(format!("{:?}", item.id)));
        }
    }

    let mut placements = Vec::with_capacity(items.len());
    let mut opened_bins = Vec::new();
    let mut trace = Vec::with_capacity(items.len());
    for (step, item) in items.iter().enumerate() {
        let (position, opened) = place_with(criterion, item, &mut bins)?;
        let index = bins[position].index;
        if opened {
            opened_bins.push(index);
        }
        placements.push((item.id.clone(), index));
        trace.push(Placement {
            step,
            position,
            bin: index,
            opened,
        });
    }

    let bins_used = bins.iter().filter(|b| !b.closed && !b.is_empty()).count();
    Ok(PackingPlan {
        placements,
        bins_used,
        opened_bins,
        trace,
        bins,
    })
}

/// Exact minimum number of unit bins for `items`, up to [`DEFAULT_ORACLE_LIMIT`] items.
pub fn optimal_bins<I: fmt::Debug>(items: &[PackItem<I>]) -> Result<usize, PackError> {
    optimal_bins_with_limit(items, DEFAULT_ORACLE_LIMIT)
}

pub fn optimal_bins_with_limit<I: fmt::Debug>(
    items: &[PackItem<I>],
    limit: usize,
) -> Result<usize, PackError> {
    if items.len() > limit {
        return Err(PackError::InstanceTooLarge {
            len: items.len(),
            limit,
        });
    }
    for item in items {
        item.validate()?;
    }
    if items.is_empty() {
        return Ok(0);
    }

    let mut sizes: Vec<f64> = items.iter().map(|i| i.size).collect();
    sizes.sort_by(|a, b| b.total_cmp(a));
    let mut suffix = vec![0.0; sizes.len() + 1];
    for i in (0..sizes.len()).rev() {
        suffix[i] = suffix[i + 1] + sizes[i];
    }

    // First-Fit Decreasing gives the initial upper bound.
    let mut ffd: Vec<f64> = Vec::new();
    for &s in &sizes {
        match ffd.iter_mut().find(|r| **r + FIT_EPSILON >= s) {
            Some(r) => *r -= s,
            None => ffd.push(BIN_CAPACITY - s),
        }
    }
    let lower = ceil_tolerant(suffix[0]).max(1);
    let mut best = ffd.len();
    if best == lower {
        return Ok(best);
    }

    let mut residuals = Vec::with_capacity(sizes.len());
    search(&sizes, &suffix, 0, &mut residuals, &mut best, lower);
    Ok(best)
}

fn ceil_tolerant(x: f64) -> usize {
    (x - FIT_EPSILON).ceil().max(0.0) as usize
}

fn search(
    sizes: &[f64],
    suffix: &[f64],
    next: usize,
    residuals: &mut Vec<f64>,
    best: &mut usize,
    lower: usize,
) -> bool {
    if next == sizes.len() {
        if residuals.len() < *best {
            *best = residuals.len();
        }
        return *best == lower;
    }
    let free: f64 = residuals.iter().sum();
    let needed = residuals.len() + ceil_tolerant(suffix[next] - free);
    if needed >= *best {
        return false;
    }

    let size = sizes[next];
    let mut tried: Vec<f64> = Vec::new();
    for i in 0..residuals.len() {
        let r = residuals[i];
        if r + FIT_EPSILON < size || tried.iter().any(|t| (t - r).abs() < FIT_EPSILON) {
            continue;
        }
        tried.push(r);
        residuals[i] -= size;
        let done = search(sizes, suffix, next + 1, residuals, best, lower);
        residuals[i] = r;
        if done {
            return true;
        }
    }
    if residuals.len() + 1 < *best {
        residuals.push(BIN_CAPACITY - size);
        let done = search(sizes, suffix, next + 1, residuals, best, lower);
        residuals.pop();
        if done {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(sizes: &[f64]) -> Vec<PackItem<usize>> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| PackItem::new(i, s))
            .collect()
    }

    #[test]
    fn first_item_opens_bin_zero() {
        let mut bins: Vec<Bin<usize>> = Vec::new();
        let pos = first_fit_place(&PackItem::new(7, 0.5), &mut bins).unwrap();
        assert_eq!(pos, 0);
        assert_eq!(bins.len(), 1);
        assert!((bins[0].residual - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unit_item_skips_partial_bin() {
        let mut bins = vec![Bin::<usize>::with_load(0, 0.7), Bin::empty(1)];
        let pos = first_fit_place(&PackItem::new(0, 1.0), &mut bins).unwrap();
        assert_eq!(pos, 1);
        assert_eq!(bins.len(), 2);
    }

    #[test]
    fn rejects_out_of_range_sizes() {
        let mut bins: Vec<Bin<usize>> = Vec::new();
        for size in [0.0, -0.1, 1.0001, f64::NAN] {
            let err = first_fit_place(&PackItem::new(3, size), &mut bins).unwrap_err();
            assert!(matches!(err, PackError::InvalidItem { .. }));
        }
        assert!(bins.is_empty());
    }

    #[test]
    fn hand_simulated_sequence() {
        // 0.6 -> b0; 0.5 -> b1; 0.4 -> b0 (0.4 left); 0.3 -> b1; 0.2 -> b1.
        let plan = pack_sequence(
            &items(&[0.6, 0.5, 0.4, 0.3, 0.2]),
            Vec::new(),
            FitCriterion::FirstFit,
        )
        .unwrap();
        assert_eq!(plan.bins_used, 2);
        assert_eq!(plan.bins[0].items, vec![0, 2]);
        assert_eq!(plan.bins[1].items, vec![1, 3, 4]);
        assert_eq!(plan.opened_bins, vec![0, 1]);
    }

    #[test]
    fn empty_sequence_is_a_noop() {
        let plan = pack_sequence::<usize>(&[], vec![Bin::with_load(0, 0.3)], FitCriterion::FirstFit)
            .unwrap();
        assert!(plan.placements.is_empty());
        assert!(plan.opened_bins.is_empty());
        assert_eq!(plan.bins_used, 1);
    }

    #[test]
    fn unit_items_never_share() {
        let plan =
            pack_sequence(&items(&[1.0; 6]), Vec::new(), FitCriterion::FirstFit).unwrap();
        assert_eq!(plan.bins_used, 6);
        assert!(plan.bins.iter().all(|b| b.items.len() == 1));
    }

    #[test]
    fn closed_bins_keep_index_and_are_skipped() {
        let bins = vec![Bin::empty(0), Bin::closed(1), Bin::empty(2)];
        let plan = pack_sequence(&items(&[0.8, 0.8, 0.8]), bins, FitCriterion::FirstFit).unwrap();
        assert_eq!(plan.bin_of(&0), Some(0));
        assert_eq!(plan.bin_of(&1), Some(2));
        assert_eq!(plan.bin_of(&2), Some(3));
        assert_eq!(plan.opened_bins, vec![3]);
    }

    #[test]
    fn exact_fill_tolerates_rounding() {
        let plan = pack_sequence(
            &items(&[0.1, 0.2, 0.3, 0.4]),
            Vec::new(),
            FitCriterion::FirstFit,
        )
        .unwrap();
        assert_eq!(plan.bins_used, 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dup = vec![PackItem::new(1, 0.2), PackItem::new(1, 0.3)];
        assert!(matches!(
            pack_sequence(&dup, Vec::new(), FitCriterion::FirstFit),
            Err(PackError::DuplicateItem(_))
        ));
    }

    #[test]
    fn oracle_small_cases() {
        assert_eq!(optimal_bins(&items(&[0.6, 0.5, 0.4, 0.3, 0.2])).unwrap(), 2);
        assert_eq!(optimal_bins(&items(&[1.0, 1.0, 1.0])).unwrap(), 3);
        assert_eq!(optimal_bins(&items(&[0.5, 0.5])).unwrap(), 1);
        assert_eq!(optimal_bins::<usize>(&[]).unwrap(), 0);
    }

    #[test]
    fn oracle_beats_first_fit_decreasing_gap() {
        // FFD needs 3 bins; the optimum is {0.4,0.3,0.3} + {0.35,0.35,0.3}.
        let inst = items(&[0.4, 0.35, 0.35, 0.3, 0.3, 0.3]);
        assert_eq!(optimal_bins(&inst).unwrap(), 2);
    }

    #[test]
    fn oracle_limit_enforced() {
        let inst = items(&[0.1; 13]);
        assert_eq!(
            optimal_bins(&inst),
            Err(PackError::InstanceTooLarge { len: 13, limit: 12 })
        );
        assert_eq!(optimal_bins_with_limit(&inst, 13).unwrap(), 2);
    }
}
