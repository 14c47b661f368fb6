//! Compares First-Fit with the exact optimum on random instances.
//!
//! `cargo run --example ratio_oracle -- 2000` checks 2000 instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streambin::binpack::{optimal_bins, pack_sequence, FitCriterion, PackItem};

fn main() {
    let instances: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0_f64;
    let mut over_opt = 0;
    for _ in 0..instances {
        let n = rng.gen_range(1..=12);
        let items: Vec<PackItem<usize>> = (0..n)
            .map(|i| PackItem::new(i, 1.0 - rng.gen::<f64>()))
            .collect();
        let ff = pack_sequence(&items, Vec::new(), FitCriterion::FirstFit)
            .expect("valid items")
            .bins_used;
        let opt = optimal_bins(&items).expect("within oracle limit");
        assert!(ff as f64 <= 1.7 * opt as f64 + 1.0, "bound broken: ff={ff} opt={opt}");
        worst = worst.max(ff as f64 / opt as f64);
        if ff > opt {
            over_opt += 1;
        }
    }
    println!("{instances} instances, {over_opt} above optimal, worst ratio {worst:.3}");
}
