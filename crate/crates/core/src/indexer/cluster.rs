//! Seeded Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

const MAX_ITERATIONS: usize = 50;

fn sq_dist<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Cluster assignment for each point, in `0..k`. Some clusters may end up
/// empty (e.g. when points coincide).
pub fn kmeans<F: Real>(points: &[&[F]], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers: Vec<Vec<F>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].to_vec());
    let mut nearest: Vec<F> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: F = nearest.iter().copied().sum();
        let pick = if total > F::zero() {
            let mut target = F::lit(rng.gen::<f64>()) * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target = target - d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[pick].to_vec());
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, centers.last().unwrap());
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(p, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = sq_dist(p, center);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![F::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(p.iter()) {
                *s = *s + v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let m = F::from_count(counts[c]);
                centers[c] = sums[c].iter().map(|&s| s / m).collect();
            }
        }
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_obvious_groups() {
        let pts: Vec<[f64; 2]> = vec![[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let a = kmeans(&refs, 2, 3);
        assert_eq!(a[0], a[1]);
        assert_eq!(a[2], a[3]);
        assert_ne!(a[0], a[2]);
    }

    #[test]
    fn identical_points_collapse() {
        let pts = [[1.0f32, 1.0]; 5];
        let refs: Vec<&[f32]> = pts.iter().map(|p| p.as_slice()).collect();
        let a = kmeans(&refs, 3, 0);
        assert!(a.iter().all(|&c| c == a[0]));
    }

    #[test]
    fn seeded_runs_agree() {
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, (i % 5) as f64]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        assert_eq!(kmeans(&refs, 4, 11), kmeans(&refs, 4, 11));
    }
}
