pub mod colormatch;
pub mod fit;
pub mod model;
pub mod sample;
pub mod synth;
