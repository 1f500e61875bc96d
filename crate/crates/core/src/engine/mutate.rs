use rand::Rng;

use crate::error::Result;
use crate::space::{Candidate, GeneKind, Genome, SearchSpaceDef};

/// Resamples each gene with probability `rate`. Grid genes move one step up
/// or down (reflecting at the ends); categorical genes jump to a different
/// choice uniformly. A shared group is one gene, so it always moves as a
/// whole.
pub fn mutate_genome<R: Rng + ?Sized>(
    space: &SearchSpaceDef,
    genome: &Genome,
    rate: f64,
    rng: &mut R,
) -> Genome {
    let mut out = genome.clone();
    for (slot, gene) in out.0.iter_mut().zip(space.genes()) {
        if !rng.random_bool(rate.clamp(0.0, 1.0)) {
            continue;
        }
        let n = gene.len();
        *slot = match gene.kind {
            GeneKind::Continuous => {
                let up = rng.random_bool(0.5);
                match (*slot, up) {
                    (0, _) => 1,
                    (i, _) if i == n - 1 => i - 1,
                    (i, true) => i + 1,
                    (i, false) => i - 1,
                }
            }
            GeneKind::Categorical => {
                let k = rng.random_range(0..n - 1);
                if k >= *slot {
                    k + 1
                } else {
                    k
                }
            }
        };
    }
    out
}

/// Candidate-level wrapper around [`mutate_genome`].
pub fn mutate<R: Rng + ?Sized>(
    space: &SearchSpaceDef,
    candidate: &Candidate,
    rate: f64,
    rng: &mut R,
) -> Result<Candidate> {
    let g = space.genome(candidate)?;
    Ok(space.decode(&mutate_genome(space, &g, rate, rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::space::sample_genome;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Always returns the largest word, so every Bernoulli draw is false.
    struct Never;

    impl rand::RngCore for Never {
        fn next_u32(&mut self) -> u32 {
            u32::MAX
        }
        fn next_u64(&mut self) -> u64 {
            u64::MAX
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0xff);
        }
    }

    #[test]
    fn no_draw_no_change() {
        let space = builtin::default_space();
        let c = crate::space::sample_uniform(&space, 4);
        assert_eq!(mutate(&space, &c, 0.5, &mut Never).unwrap(), c);
    }

    #[test]
    fn lower_bound_reflects_up() {
        let space = builtin::default_space();
        let g = Genome(vec![0; space.genes().len()]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let m = mutate_genome(&space, &g, 1.0, &mut rng);
            for (gene, (&before, &after)) in space.genes().iter().zip(g.0.iter().zip(&m.0)) {
                assert_ne!(before, after);
                if gene.kind == GeneKind::Continuous {
                    assert_eq!(after, 1, "{}", gene.name);
                }
            }
        }
    }

    #[test]
    fn steps_are_single_and_in_range() {
        let space = builtin::default_space();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let g = sample_genome(&space, &mut rng);
            let m = mutate_genome(&space, &g, 0.3, &mut rng);
            for (gene, (&a, &b)) in space.genes().iter().zip(g.0.iter().zip(&m.0)) {
                assert!(b < gene.len());
                if gene.kind == GeneKind::Continuous {
                    assert!(a.abs_diff(b) <= 1);
                }
            }
            // shared groups are single genes, so decoded members agree
            space.validate(&space.decode(&m)).unwrap();
        }
    }

    #[test]
    fn mutation_count_is_binomial() {
        let space = builtin::default_space();
        let d = space.genes().len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = sample_genome(&space, &mut rng);
        let trials = 10_000;
        let total: usize = (0..trials)
            .map(|_| {
                let m = mutate_genome(&space, &g, 0.1, &mut rng);
                g.0.iter().zip(&m.0).filter(|(a, b)| a != b).count()
            })
            .sum();
        let mean = total as f64 / trials as f64;
        let sigma = (d * 0.1 * 0.9 / trials as f64).sqrt();
        assert!(
            (mean - 0.1 * d).abs() < 3.0 * sigma,
            "mean {mean}, expected {}",
            0.1 * d
        );
    }
}
