use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

use super::PoolEntry;

/// Indices into the pool, in selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub indices: Vec<usize>,
    /// Fewer than `m` unevaluated candidates were left.
    pub exhausted: bool,
}

/// Higher score first, then the lexicographically smaller encoding.
fn better(pool: &[PoolEntry], scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b]
        .total_cmp(&scores[a])
        .then_with(|| pool[a].encoded.lex_cmp(&pool[b].encoded))
}

/// Picks up to `m` unevaluated pool members.
///
/// Without scores (first iteration) the pick is uniform. With scores the FLOP
/// `window` is cut into `m` equal bins, each non-empty bin contributes its
/// best candidate, and empty bins are backfilled with the best remaining
/// candidates overall.
pub fn select_batch<R: Rng + ?Sized>(
    pool: &[PoolEntry],
    evaluated: &BTreeSet<usize>,
    scores: Option<&[f64]>,
    m: usize,
    window: (u64, u64),
    rng: &mut R,
) -> Selection {
    let open: Vec<usize> = (0..pool.len()).filter(|i| !evaluated.contains(i)).collect();
    let exhausted = open.len() < m;
    let take = m.min(open.len());
    let Some(scores) = scores else {
        let mut picked: Vec<usize> = sample(rng, open.len(), take)
            .into_iter()
            .map(|k| open[k])
            .collect();
        picked.sort_unstable();
        return Selection {
            indices: picked,
            exhausted,
        };
    };

    let (lo, hi) = window;
    let span = hi.saturating_sub(lo) as f64;
    let bin_of = |flops: u64| -> usize {
        if span == 0.0 || m == 0 {
            return 0;
        }
        let pos = (flops.saturating_sub(lo)) as f64 / span;
        ((pos * m as f64).floor() as usize).min(m - 1)
    };
    let mut best: Vec<Option<usize>> = vec![None; m];
    for &i in &open {
        let b = bin_of(pool[i].flops);
        if best[b].is_none_or(|cur| better(pool, scores, i, cur) == Ordering::Less) {
            best[b] = Some(i);
        }
    }
    let mut picked: Vec<usize> = best.into_iter().flatten().collect();
    if picked.len() < take {
        let chosen: BTreeSet<usize> = picked.iter().copied().collect();
        let mut rest: Vec<usize> = open.into_iter().filter(|i| !chosen.contains(i)).collect();
        rest.sort_by(|&a, &b| better(pool, scores, a, b));
        picked.extend(rest.into_iter().take(take - picked.len()));
    }
    Selection {
        indices: picked,
        exhausted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::cost::ConstraintSet;
    use crate::engine::build_pool;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_pool(n: usize) -> Vec<PoolEntry> {
        build_pool(&builtin::toy_space(), n, 0, None, &ConstraintSet::new())
    }

    #[test]
    fn argmax_in_single_bin() {
        let pool = toy_pool(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = select_batch(
            &pool,
            &BTreeSet::new(),
            Some(&[0.3, 0.7]),
            1,
            (0, 0),
            &mut rng,
        );
        assert_eq!(s.indices, vec![1]);
    }

    #[test]
    fn backfill_matches_top_k() {
        let pool = toy_pool(10);
        let scores: Vec<f64> = (0..10).map(|i| ((i * 37) % 10) as f64 / 10.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = select_batch(&pool, &BTreeSet::new(), Some(&scores), 4, (0, 0), &mut rng);
        let mut brute: Vec<usize> = (0..10).collect();
        brute.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut got = s.indices.clone();
        got.sort_unstable();
        let mut want = brute[..4].to_vec();
        want.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn never_reselects() {
        let pool = toy_pool(30);
        let scores = vec![0.5; 30];
        let mut evaluated = BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lo = pool.iter().map(|e| e.flops).min().unwrap();
        let hi = pool.iter().map(|e| e.flops).max().unwrap();
        for round in 0..4 {
            let sc = (round > 0).then_some(&scores[..]);
            let s = select_batch(&pool, &evaluated, sc, 8, (lo, hi), &mut rng);
            for i in &s.indices {
                assert!(evaluated.insert(*i), "reselected {i}");
            }
            assert_eq!(s.indices.len(), if round < 3 { 8 } else { 6 });
            assert_eq!(s.exhausted, round == 3);
        }
    }

    #[test]
    fn each_bin_winner_dominates_its_bin() {
        let pool = toy_pool(200);
        let scores: Vec<f64> = pool
            .iter()
            .map(|e| e.encoded.values.iter().sum::<f64>())
            .collect();
        let lo = pool.iter().map(|e| e.flops).min().unwrap();
        let hi = pool.iter().map(|e| e.flops).max().unwrap();
        let m = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = select_batch(
            &pool,
            &BTreeSet::new(),
            Some(&scores),
            m,
            (lo, hi),
            &mut rng,
        );
        let width = (hi - lo) as f64 / m as f64;
        let bin = |f: u64| (((f - lo) as f64 / width).floor() as usize).min(m - 1);
        for &i in &s.indices {
            let b = bin(pool[i].flops);
            let winner = s
                .indices
                .iter()
                .find(|&&j| bin(pool[j].flops) == b)
                .unwrap();
            for (j, e) in pool.iter().enumerate() {
                if bin(e.flops) == b {
                    assert!(scores[j] <= scores[*winner]);
                }
            }
        }
    }
}
