//! Separated Gaussian representations of radial convolution kernels and
//! their application in non-standard form.

pub mod apply;
pub mod block;
pub mod fit;

pub use apply::{apply, bsh_cutoff, ApplyStats, SeparatedOperator};
pub use block::{
    build_conv1d_block, build_summed_block_dd, Conv1DBlockCache, OperatorBlock, Sector,
};
pub use fit::{fit_bsh, fit_coulomb, FitCheck, GaussianTerm, KernelKind, SeparatedKernel};
