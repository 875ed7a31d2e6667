use std::collections::BTreeSet;

use crate::scalar::Real;

/// NDCG at `cutoff` with binary relevance and `2^rel − 1` gain.
///
/// The ideal ranking places `min(|relevant|, cutoff)` relevant items first.
/// Returns zero when `relevant` is empty. An item repeated in `ranked`
/// counts only at its first position.
pub fn ndcg_at<F: Real, T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, cutoff: usize) -> F {
    assert!(cutoff >= 1, "cutoff must be at least 1");
    if relevant.is_empty() {
        return F::zero();
    }
    let discount = |pos: usize| F::one() / F::from_count(pos + 2).log2();
    let mut seen: BTreeSet<&T> = BTreeSet::new();
    let dcg: F = ranked
        .iter()
        .take(cutoff)
        .enumerate()
        .filter(|(_, item)| relevant.contains(*item) && seen.insert(*item))
        .map(|(pos, _)| discount(pos))
        .sum();
    let ideal: F = (0..relevant.len().min(cutoff)).map(discount).sum();
    dcg / ideal
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_empty() {
        let rel: BTreeSet<u32> = [1, 2].into();
        assert_eq!(ndcg_at::<f64, _>(&[1, 2, 3], &rel, 3), 1.0);
        assert_eq!(ndcg_at::<f64, _>(&[3, 4, 5], &rel, 3), 0.0);
        assert_eq!(ndcg_at::<f64, _>(&[1], &BTreeSet::new(), 1), 0.0);
        assert_eq!(ndcg_at::<f64, u32>(&[], &rel, 5), 0.0);
    }

    #[test]
    fn hand_computed_pattern() {
        // relevance [0, 1, 1], two relevant items, cutoff 3
        let rel: BTreeSet<u32> = [2, 3].into();
        let got: f64 = ndcg_at(&[1, 2, 3], &rel, 3);
        let want = (1.0 / 3f64.log2() + 1.0 / 4f64.log2()) / (1.0 + 1.0 / 3f64.log2());
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.6934).abs() < 1e-4);
    }

    #[test]
    fn repeated_items_count_once() {
        let rel: BTreeSet<u32> = [7].into();
        assert_eq!(ndcg_at::<f32, _>(&[7, 7, 7], &rel, 3), 1.0);
    }
}
