//! Joint neural architecture and training-recipe search.
//!
//! The pipeline has three stages:
//!
//! 1. pretrain the predictor's architecture encoder on FLOP/parameter counts
//!    of a quasi-random candidate pool ([`predictor::pretrain_proxy`]);
//! 2. iteratively pick promising candidates, evaluate them with an early-stop
//!    budget and refit the accuracy head ([`engine::stage2_run`]);
//! 3. run a constrained evolutionary search against the trained predictor,
//!    once per resource constraint ([`engine::stage3_evolve`]).
//!
//! [`engine::run_nars`] chains all three from a [`engine::RunConfig`].

pub mod cost;
pub mod engine;
pub mod error;
pub mod evaluator;
pub mod io;
pub mod predictor;
pub mod space;
pub mod stats;

pub use error::{Error, Result};

/// Space files shipped with the crate.
pub mod builtin {
    use crate::space::SearchSpaceDef;

    pub const FBNETV3: &str = include_str!("../spaces/fbnetv3_space.toml");
    pub const BASELINE: &str = include_str!("../spaces/fbnetv2_l3.toml");
    pub const TOY: &str = include_str!("../spaces/toy_space.toml");

    /// The default joint search space.
    pub fn default_space() -> SearchSpaceDef {
        SearchSpaceDef::load(FBNETV3).expect("bundled space parses")
    }

    /// Fixed baseline architecture with the default recipe ranges; used for
    /// recipe-only search.
    pub fn baseline_space() -> SearchSpaceDef {
        SearchSpaceDef::load(BASELINE).expect("bundled space parses")
    }

    /// Small space that can be enumerated exhaustively.
    pub fn toy_space() -> SearchSpaceDef {
        SearchSpaceDef::load(TOY).expect("bundled space parses")
    }
}
