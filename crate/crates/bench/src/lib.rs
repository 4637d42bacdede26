//! Shared fixtures for the criterion benchmarks in `benches/`.

use popdyn_core::{MarketConfig, Permutation, RepetitionMode, UserClass};

/// Quality orders of three user classes over ten items, lowest quality first.
pub const THREE_CLASS_ORDERS: [[usize; 10]; 3] =
    [[6, 8, 5, 10, 9, 2, 3, 7, 4, 1], [4, 2, 3, 6, 10, 8, 5, 9, 1, 7], [8, 10, 1, 5, 3, 4, 9, 2, 6, 7]];

/// Ten items, K = 5, three equally likely classes, without repetition.
pub fn three_class_market(alpha: f64) -> MarketConfig {
    let classes = THREE_CLASS_ORDERS
        .iter()
        .map(|o| UserClass { class_probability: 1.0 / 3.0, quality_order: o.to_vec() })
        .collect();
    MarketConfig::new(10, 5, alpha, RepetitionMode::WithoutRepetition).with_classes(classes)
}

/// A fixed, far-from-natural popularity order: items interleaved from both ends.
pub fn scrambled(n: usize) -> Permutation {
    let mut order = Vec::with_capacity(n);
    let (mut lo, mut hi) = (1, n);
    while lo <= hi {
        order.push(hi);
        if lo != hi {
            order.push(lo);
        }
        lo += 1;
        hi -= 1;
    }
    Permutation::new(order).expect("interleaving is a permutation")
}
