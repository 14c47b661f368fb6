//! Packs a short item sequence with First-Fit, starting from one bin that
//! already carries load, and prints the placement trace.

use streambin::binpack::{pack_sequence, Bin, FitCriterion, PackItem};

fn main() {
    let items: Vec<PackItem<&str>> = [("a", 0.5), ("b", 0.7), ("c", 0.3), ("d", 0.2), ("e", 0.6)]
        .into_iter()
        .map(|(id, size)| PackItem::new(id, size))
        .collect();
    let existing = vec![Bin::with_load(0, 0.4)];

    let plan = pack_sequence(&items, existing, FitCriterion::FirstFit).expect("valid items");
    for (step, (id, bin)) in plan.trace.iter().zip(&plan.placements) {
        let note = if step.opened { " (opened)" } else { "" };
        println!("{id} -> bin {bin}{note}");
    }
    for bin in &plan.bins {
        println!("bin {}: load {:.2}", bin.index, bin.load());
    }
    println!("bins used: {}", plan.bins_used);
}
