mod common;

use common::cost_oracle;
use nars::builtin;
use nars::cost::cost;
use nars::space::sample_uniform;

#[test]
fn cost_model_matches_brute_force_counter() {
    for space in [
        builtin::default_space(),
        builtin::toy_space(),
        builtin::baseline_space(),
    ] {
        for seed in 0..100 {
            let a = sample_uniform(&space, seed).arch;
            let r = cost(&a);
            assert_eq!(
                (r.total_flops, r.total_params),
                cost_oracle::count(&a),
                "{} seed {seed}",
                space.name
            );
        }
    }
}

#[test]
fn qmc_pool_matches_brute_force_counter() {
    let space = builtin::default_space();
    for c in nars::space::sample_qmc_pool(&space, 64, 3) {
        let r = cost(&c.arch);
        assert_eq!((r.total_flops, r.total_params), cost_oracle::count(&c.arch));
    }
}
