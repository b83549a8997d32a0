//! Physical-layer spoofing detection from distorted channel state information.

pub mod channel;
pub mod detector;
pub mod estimator;
pub mod harness;
pub mod numerics;
pub mod observation;
pub mod reference;
