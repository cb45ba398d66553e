pub mod batch;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod synth;
pub mod training;
pub mod variant;
