// range checks are written as negated comparisons so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod geo;
pub mod geomap;
pub mod interpret;
pub mod mlm;
pub mod qa;
pub mod ranking;
pub mod scheduler;
pub mod stats;
pub mod synth;
pub mod votes;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub struct Sampling;
    #[doc = include_str!("../../../book/src/quality.md")]
    pub struct Quality;
    #[doc = include_str!("../../../book/src/ranking.md")]
    pub struct Ranking;
    #[doc = include_str!("../../../book/src/groups.md")]
    pub struct Groups;
    #[doc = include_str!("../../../book/src/interpret.md")]
    pub struct Interpret;
    #[doc = include_str!("../../../book/src/maps.md")]
    pub struct Maps;
}
