//! Emergence measures for feedforward networks and the layer-wise α-scaled
//! initialization that raises them.
//!
//! * [`graph`] – quivers, layered graphs, exact path counting
//! * [`emergence`] – closed-form measures, derived-functor dimension, pivot rule
//! * [`init`] – Xavier/Kaiming base schemes and the α-scaling schedule
//! * [`nn`] – a small deterministic MLP trainer
//! * [`data`] – datasets and on-disk formats
//! * [`experiment`] – paired base-vs-scaled training runs
//! * [`verify`] – randomized oracle battery

pub mod data;
pub mod emergence;
pub mod experiment;
pub mod graph;
pub mod init;
pub mod nn;
pub mod rng;
pub mod verify;

pub use emergence::{EmergenceValue, PivotReport};
pub use graph::{ActivationProfile, LayeredShape, Quiver, QuiverRep};
pub use init::{BaseScheme, InitConfig, ScaleSchedule, WeightSet};
