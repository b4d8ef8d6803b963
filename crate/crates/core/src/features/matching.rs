use super::Descriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    /// Hamming distance in bits.
    pub distance: u32,
}

/// Best and second-best distances from `query` into `set`; ties keep the lower index.
fn two_nearest(query: &Descriptor, set: &[Descriptor]) -> (usize, u32, Option<u32>) {
    let mut best = (usize::MAX, u32::MAX);
    let mut second: Option<u32> = None;
    for (j, d) in set.iter().enumerate() {
        let dist = query.hamming(d);
        if dist < best.1 {
            if best.0 != usize::MAX {
                second = Some(best.1);
            }
            best = (j, dist);
        } else if second.is_none_or(|s| dist < s) {
            second = Some(dist);
        }
    }
    (best.0, best.1, second)
}

/// Brute-force Hamming matching with Lowe's ratio test and optional
/// mutual-nearest-neighbour check.
///
/// A match for `a` is kept when `d(best) < ratio · d(second)`; a zero
/// second-best distance means the nearest neighbour is ambiguous and the
/// match is dropped. With a single candidate in `set_b` no ratio test applies.
pub fn match_descriptors(
    set_a: &[Descriptor],
    set_b: &[Descriptor],
    ratio: f64,
    cross_check: bool,
) -> Vec<Match> {
    if set_a.is_empty() || set_b.is_empty() {
        return Vec::new();
    }
    let reverse_best: Vec<usize> = if cross_check {
        set_b.iter().map(|d| two_nearest(d, set_a).0).collect()
    } else {
        Vec::new()
    };
    set_a
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let (j, best, second) = two_nearest(d, set_b);
            if let Some(second) = second {
                if second == 0 || (best as f64) >= ratio * second as f64 {
                    return None;
                }
            }
            if cross_check && reverse_best[j] != i {
                return None;
            }
            Some(Match {
                index_a: i,
                index_b: j,
                distance: best,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_descriptor(rng: &mut impl Rng) -> Descriptor {
        Descriptor([rng.random(), rng.random(), rng.random(), rng.random()])
    }

    fn flip_bits(d: &Descriptor, n: usize, rng: &mut impl Rng) -> Descriptor {
        let mut out = *d;
        let idx = rand::seq::index::sample(rng, 256, n);
        for i in idx {
            out.0[i / 64] ^= 1 << (i % 64);
        }
        out
    }

    #[test]
    fn self_matching_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let set: Vec<_> = (0..50).map(|_| random_descriptor(&mut rng)).collect();
        let m = match_descriptors(&set, &set, 0.8, true);
        assert_eq!(m.len(), 50);
        for (i, mm) in m.iter().enumerate() {
            assert_eq!((mm.index_a, mm.index_b, mm.distance), (i, i, 0));
        }
    }

    #[test]
    fn planted_pairs_are_recovered() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<_> = (0..30).map(|_| random_descriptor(&mut rng)).collect();
            // b: corrupted copies of a in shuffled order, plus decoys
            let mut b: Vec<(Option<usize>, Descriptor)> = a
                .iter()
                .enumerate()
                .map(|(i, d)| (Some(i), flip_bits(d, rng.random_range(0..=20), &mut rng)))
                .collect();
            b.extend((0..60).map(|_| (None, random_descriptor(&mut rng))));
            for i in (1..b.len()).rev() {
                b.swap(i, rng.random_range(0..=i));
            }
            let descs: Vec<_> = b.iter().map(|(_, d)| *d).collect();
            // exhaustive oracle: every planted partner is the unique nearest in b
            for (i, d) in a.iter().enumerate() {
                let dists: Vec<u32> = descs.iter().map(|x| x.hamming(d)).collect();
                let min = *dists.iter().min().unwrap();
                let argmin: Vec<_> = (0..dists.len()).filter(|&j| dists[j] == min).collect();
                assert_eq!(argmin.len(), 1);
                assert_eq!(b[argmin[0]].0, Some(i));
            }
            let m = match_descriptors(&a, &descs, 0.8, true);
            assert_eq!(m.len(), a.len(), "seed {seed}");
            for mm in m {
                assert_eq!(b[mm.index_b].0, Some(mm.index_a));
                assert!(mm.distance <= 20);
            }
        }
    }

    #[test]
    fn cross_check_rejects_non_mutual_pairs() {
        // a0 = 0, a1 = ones in the first 10 bits, b0 = ones in the first 8 bits.
        // a0's nearest in b is b0 (distance 8), but b0's nearest in a is a1 (distance 2).
        let a0 = Descriptor([0, 0, 0, 0]);
        let a1 = Descriptor([0x3ff, 0, 0, 0]);
        let b0 = Descriptor([0xff, 0, 0, 0]);
        let set_a = [a0, a1];
        let set_b = [b0];
        assert_eq!(a0.hamming(&b0), 8);
        assert_eq!(a1.hamming(&b0), 2);
        let with = match_descriptors(&set_a, &set_b, 0.8, true);
        assert!(with.iter().all(|m| m.index_a != 0));
        assert_eq!(with, vec![Match { index_a: 1, index_b: 0, distance: 2 }]);
        let without = match_descriptors(&set_a, &set_b, 0.8, false);
        assert!(without.iter().any(|m| m.index_a == 0 && m.index_b == 0));
    }

    #[test]
    fn duplicate_candidates_fail_the_ratio_test() {
        let d = Descriptor([1, 2, 3, 4]);
        assert!(match_descriptors(&[d], &[d, d], 0.8, false).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn matches_are_unique_and_deterministic(seed in any::<u64>(), cross in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<_> = (0..40).map(|_| random_descriptor(&mut rng)).collect();
            let mut b: Vec<_> = a.iter().map(|d| flip_bits(d, 30, &mut rng)).collect();
            b.extend((0..20).map(|_| random_descriptor(&mut rng)));
            let m = match_descriptors(&a, &b, 0.9, cross);
            let mut seen_a = std::collections::HashSet::new();
            let mut seen_b = std::collections::HashSet::new();
            for mm in &m {
                prop_assert!(seen_a.insert(mm.index_a));
                if cross { prop_assert!(seen_b.insert(mm.index_b)); }
                prop_assert_eq!(mm.distance, a[mm.index_a].hamming(&b[mm.index_b]));
            }
            prop_assert_eq!(m, match_descriptors(&a, &b, 0.9, cross));
        }
    }
}
