//! Worker-count targets.

/// Warm workers kept beyond packing demand: `max(1, ceil(log2(active + 1)))`.
pub fn idle_buffer(active: usize) -> usize {
    let bits = (active + 1).next_power_of_two().trailing_zeros() as usize;
    bits.max(1)
}

pub fn target_workers(bins_needed: usize, active: usize, max_workers: usize) -> usize {
    (bins_needed + idle_buffer(active)).min(max_workers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingStep {
    Hold,
    /// Bring this many more workers up.
    Grow(usize),
    /// Retire this many empty workers.
    Shrink(usize),
}

/// What to do given the target, the active count and workers already on the way.
pub fn scaling_step(target: usize, active: usize, incoming: usize) -> ScalingStep {
    let planned = active + incoming;
    if target > planned {
        ScalingStep::Grow(target - planned)
    } else if target < active {
        ScalingStep::Shrink(active - target)
    } else {
        ScalingStep::Hold
    }
}
