//! Exact 0/1 knapsack for channel selection.

use crate::error::{Error, Result};

/// Indices maximizing total importance with total cost within `budget`.
///
/// Solved by dynamic programming over suffixes so the reconstruction can
/// walk forward and take an item whenever taking it is still optimal; among
/// optimal selections this prefers lower indices. Returned indices ascend.
pub fn knapsack_channel_prune(importances: &[f64], costs: &[usize], budget: usize) -> Result<Vec<usize>> {
    if importances.len() != costs.len() {
        return Err(Error::shape(
            "knapsack",
            format!("{} importances vs {} costs", importances.len(), costs.len()),
        ));
    }
    if importances.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("importances must be finite and >= 0"));
    }
    if costs.contains(&0) {
        return Err(Error::invalid("costs must be positive"));
    }
    let n = importances.len();
    let total: usize = costs.iter().sum();
    if budget >= total {
        return Ok((0..n).collect());
    }
    let width = budget + 1;
    // best[i * width + c]: best value from items i.. with capacity c
    let mut best = vec![0.0f64; (n + 1) * width];
    for i in (0..n).rev() {
        let (cur, next) = best.split_at_mut((i + 1) * width);
        let cur = &mut cur[i * width..];
        for c in 0..width {
            let skip = next[c];
            cur[c] = if costs[i] <= c {
                let take = importances[i] + next[c - costs[i]];
                if take >= skip {
                    take
                } else {
                    skip
                }
            } else {
                skip
            };
        }
    }
    let mut chosen = Vec::new();
    let mut c = budget;
    for i in 0..n {
        if costs[i] <= c {
            let take = importances[i] + best[(i + 1) * width + c - costs[i]];
            if take == best[i * width + c] {
                chosen.push(i);
                c -= costs[i];
            }
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn brute_force(imp: &[f64], costs: &[usize], budget: usize) -> f64 {
        let n = imp.len();
        (0u32..1 << n)
            .filter(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| costs[i]).sum::<usize>() <= budget)
            .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| imp[i]).sum::<f64>())
            .fold(0.0, f64::max)
    }

    #[test]
    fn hand_instance() {
        let sel = knapsack_channel_prune(&[6.0, 10.0, 12.0], &[1, 2, 3], 5).unwrap();
        assert_eq!(sel, vec![1, 2]);
        assert_eq!(brute_force(&[6.0, 10.0, 12.0], &[1, 2, 3], 5), 22.0);
    }

    #[test]
    fn budget_edges() {
        assert_eq!(knapsack_channel_prune(&[1.0, 2.0], &[1, 1], 10).unwrap(), vec![0, 1]);
        assert!(knapsack_channel_prune(&[1.0, 2.0], &[1, 1], 0).unwrap().is_empty());
        assert!(knapsack_channel_prune(&[1.0], &[1, 2], 1).is_err());
    }

    #[test]
    fn ties_prefer_lower_indices() {
        assert_eq!(knapsack_channel_prune(&[1.0, 1.0, 1.0], &[1, 1, 1], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn twelve_channels_match_enumeration() {
        let mut rng = Rng::new(12);
        for _ in 0..20 {
            let imp: Vec<f64> = (0..12).map(|_| rng.uniform() * 10.0).collect();
            let costs: Vec<usize> = (0..12).map(|_| 1 + rng.below(9)).collect();
            let budget = rng.below(40);
            let sel = knapsack_channel_prune(&imp, &costs, budget).unwrap();
            assert!(sel.iter().map(|&i| costs[i]).sum::<usize>() <= budget);
            let got: f64 = sel.iter().map(|&i| imp[i]).sum();
            assert!((got - brute_force(&imp, &costs, budget)).abs() < 1e-9);
        }
    }
}
