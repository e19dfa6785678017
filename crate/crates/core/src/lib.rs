//! Synthetic-to-real bearing fault diagnosis.
//!
//! This crate implements a two-stage pipeline for diagnosing bearing faults
//! from unlabeled vibration data:
//!
//! 1. **Fault synthesis** ([`siggen`]): labeled fault signals are generated by
//!    injecting modulated pulse trains into real healthy recordings, using the
//!    bearing kinematics (defect frequencies) to place the impacts.
//! 2. **Domain adaptation** ([`adapt`]): a convolutional classifier is trained
//!    on the synthetic (source) data and adversarially aligned with the
//!    unlabeled real (target) data. Three alignment variants are provided:
//!    marginal feature alignment (DANN), class-conditional alignment via a
//!    multilinear feature/prediction map, and the conditional variant with
//!    mixup-style feature-space augmentation, which is robust to severe class
//!    imbalance in the target domain.
//!
//! Supporting modules: [`dsp`] converts waveforms into 1000-point
//! speed-order-normalized envelope spectra (the model input), [`tensor`] is a
//! small dense reverse-mode autodiff engine with an Adam optimizer, [`model`]
//! assembles the extractor/classifier/discriminator network, [`metrics`]
//! provides imbalance-aware evaluation, and [`datastore`] handles dataset
//! containers, segmentation and imbalance protocols.

pub mod adapt;
pub mod datastore;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod siggen;
pub mod tensor;

pub use error::{Error, Result};
pub use siggen::{BearingGeometry, DefectSpec, DomainTag, FaultClass, Segment};
