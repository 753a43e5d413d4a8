//! Scalar special functions, seeded sampling and empirical quantiles.

mod activation;
mod quantile;
mod rng;
mod special;

pub use activation::Activation;
pub use quantile::{empirical_top_quantile, mc_quantile_table, top_count, QuantileTable};
pub use rng::Rng64;
pub use special::{erf, erfc, erfinv, half_normal_quantile, std_normal_cdf};
