//! Regression of average RNFL thickness from optic disc photographs with a
//! residual CNN, plus the evaluation statistics, Grad-CAM explanations and a
//! synthetic phantom cohort used to exercise the whole pipeline.

pub mod ndtensor;
pub mod rng;
pub mod resnet;
pub mod dataio;
pub mod optim;
pub mod phantom;
pub mod explain;
pub mod evalstats;
