//! Minimal layer toolkit on top of candle tensors.

mod conv;
mod layers;
mod params;

pub use layers::{
    instance_norm, leaky_relu, log_sigmoid, resize_nearest, Conv2d, ConvTranspose2d, Module, INSTANCE_NORM_EPS,
};
pub use params::{ParamStore, Scope, INIT_STD};
