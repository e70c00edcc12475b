//! Telematics driving-risk scoring: wavelet features, a severity mixture for
//! tail layers, empirical-Bayes Poisson risk indices and a trip classifier.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod pipeline;
pub mod portfolio;
pub mod risk;
pub mod seeds;
pub mod severity;
pub mod trip;
pub mod wavelet;
