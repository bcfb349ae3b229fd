//! Minimax value intervals for off-policy evaluation in tabular MDPs.

pub mod classes;
pub mod empirical;
pub mod error;
pub mod interval;
pub mod lp;
pub mod mdp;
pub mod policy_opt;
pub mod regularized;
pub mod saddle;

pub use classes::FunctionClass;
pub use error::{Error, Result};
pub use lp::Sense;
pub use mdp::{Policy, StateActionVector, TabularMdp};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/unified-interval.md")]
    mod unified_interval {}
    #[doc = include_str!("../../../book/src/function-classes.md")]
    mod function_classes {}
    #[doc = include_str!("../../../book/src/empirical.md")]
    mod empirical {}
    #[doc = include_str!("../../../book/src/policy-optimization.md")]
    mod policy_optimization {}
    #[doc = include_str!("../../../book/src/variants.md")]
    mod variants {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
