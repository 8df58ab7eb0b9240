//! Regularizers for ill-posed problems, certified by their worst-case error
//! over every solution consistent with the noisy data and the a-priori set.

pub mod error;
pub mod function_space;
pub mod linreg;
pub mod matrix;
pub mod numdiff;
pub mod seeds;
pub mod spectral;
pub mod varreg;

pub use error::{Error, Result};
pub use function_space::{
    add_noise, holder_norm, integrate_volterra, sup_distance, Grid, HolderSpec, NoiseModel, NoisyData,
    SampledFunction,
};
