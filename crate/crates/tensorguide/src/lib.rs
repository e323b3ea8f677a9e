//! Joint tensor-train generation of low-rank adaptation weights.
//!
//! A frozen backbone maps raw inputs to features and logits; an adapter adds
//! a trainable correction on top. Three adapter families live behind one
//! interface:
//!
//! * low-rank pairs trained directly,
//! * low-rank pairs each represented by its own tensor train,
//! * a single tensor train that generates both matrices of a small MLP from
//!   one Gaussian latent, so hidden width scales almost free of parameters.
//!
//! The crate also ships an exact reverse-mode trainer for all three, empirical
//! neural-tangent-kernel diagnostics with a Jacobi eigensolver, calculators
//! for approximation/optimization/generalization bounds, and deterministic
//! synthetic tasks. Everything is reproducible bit-for-bit from explicit
//! seeds; see [`rng`] for the documented generator.

pub mod adapters;
pub mod bounds;
pub mod error;
pub mod ntk;
pub mod presets;
pub mod rng;
pub mod svd;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod tt;

pub use adapters::{Activation, Adapter, FrozenBackbone};
pub use error::{Error, Result};
pub use tensor::{frob_rel_error, init_gaussian, init_xavier_uniform, matmul, DenseTensor, Shape};
pub use tt::{
    tt_apply, tt_init, tt_materialize, tt_param_count, tt_svd, validate_adapter_format, TTFormat,
    TTMatrix,
};

#[cfg(doctest)]
mod booktests {
    //! Chapters of the guide in `book/src/` double as doc-tests, so every
    //! code block in the book compiles and runs against the current API.
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(dense_tensors, "../../../book/src/dense-tensors.md");
    chapter!(tensor_trains, "../../../book/src/tensor-trains.md");
    chapter!(adapters, "../../../book/src/adapters.md");
    chapter!(training, "../../../book/src/training.md");
    chapter!(ntk_diagnostics, "../../../book/src/ntk-diagnostics.md");
    chapter!(datasets, "../../../book/src/datasets.md");
    chapter!(cli, "../../../book/src/cli.md");
}
