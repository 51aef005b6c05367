pub mod edit;
pub mod eval;
pub mod pairs;
pub mod refine;
pub mod sample;
pub mod shared;
pub mod synth;
pub mod train;
pub mod verify;
