use std::sync::OnceLock;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sobol::params::JoeKuoD6;
use sobol::Sobol;

use super::{Candidate, Genome, SearchSpaceDef};

/// Draws every gene independently and uniformly.
pub fn sample_genome<R: Rng + ?Sized>(space: &SearchSpaceDef, rng: &mut R) -> Genome {
    Genome(
        space
            .genes()
            .iter()
            .map(|g| rng.random_range(0..g.len()))
            .collect(),
    )
}

pub fn sample_uniform(space: &SearchSpaceDef, seed: u64) -> Candidate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    space.decode(&sample_genome(space, &mut rng))
}

fn joe_kuo(dims: usize) -> &'static JoeKuoD6 {
    static MINIMAL: OnceLock<JoeKuoD6> = OnceLock::new();
    static STANDARD: OnceLock<JoeKuoD6> = OnceLock::new();
    if dims <= 100 {
        MINIMAL.get_or_init(JoeKuoD6::minimal)
    } else {
        STANDARD.get_or_init(JoeKuoD6::standard)
    }
}

/// `n` points of the `dims`-dimensional Sobol sequence in Gray-code order,
/// starting after the origin. A non-zero `seed` applies a random digital
/// shift (XOR with a seeded per-dimension word), which keeps the point set's
/// stratification.
pub fn sobol_points(dims: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    if dims == 0 {
        return vec![Vec::new(); n];
    }
    let shift: Vec<u32> = if seed == 0 {
        vec![0; dims]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dims).map(|_| rng.next_u32()).collect()
    };
    Sobol::<u32>::new(dims, joe_kuo(dims))
        .skip(1)
        .take(n)
        .map(|p| {
            p.iter()
                .zip(&shift)
                .map(|(&x, &s)| f64::from(x ^ s) / 4_294_967_296.0)
                .collect()
        })
        .collect()
}

/// Maps a unit-cube point onto gene indices with `floor(u * |grid|)`.
pub fn genome_from_point(space: &SearchSpaceDef, point: &[f64]) -> Genome {
    Genome(
        space
            .genes()
            .iter()
            .zip(point)
            .map(|(g, &u)| ((u * g.len() as f64).floor() as usize).min(g.len() - 1))
            .collect(),
    )
}

/// Quasi-Monte-Carlo pool: one Sobol dimension per gene (shared groups
/// included), deterministic in `(n, seed)`.
pub fn sample_qmc_pool(space: &SearchSpaceDef, n: usize, seed: u64) -> Vec<Candidate> {
    sobol_points(space.genes().len(), n, seed)
        .iter()
        .map(|p| space.decode(&genome_from_point(space, p)))
        .collect()
}
