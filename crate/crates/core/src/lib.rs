pub mod composition;
pub mod error;
pub mod inference;
pub mod io;
pub mod linops;
pub mod scalar;
pub mod scorer;
pub mod simgen;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Design = composition::MultiViewDesign<f64>;
pub type Design32 = composition::MultiViewDesign<f32>;
pub type Dataset = composition::SubCompositionalDataset<f64>;
pub type Dataset32 = composition::SubCompositionalDataset<f32>;
pub type Fit = solver::ScaledFit<f64>;
pub type Fit32 = solver::ScaledFit<f32>;
pub type Weights = solver::PenaltyWeights<f64>;
pub type Weights32 = solver::PenaltyWeights<f32>;
pub type Score = scorer::ScoreProjection<f64>;
pub type Score32 = scorer::ScoreProjection<f32>;
pub type Debiased = inference::DebiasedEstimate<f64>;
pub type Debiased32 = inference::DebiasedEstimate<f32>;
