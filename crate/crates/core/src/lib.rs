pub mod dataset;
pub mod error;
pub mod field;
pub mod metrics;
pub mod recon;
pub mod register;
mod rng;
pub mod simulate;
pub mod trajectory;

pub use dataset::FrameStack;
pub use error::{Error, Result};
pub use field::ComplexField;
pub use trajectory::ScanTrajectory;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/forward-model.md")]
    mod forward_model {}
    #[doc = include_str!("../../../book/src/registration.md")]
    mod registration {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
}
