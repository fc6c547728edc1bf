pub mod data;
pub mod eval;
pub mod models;
pub mod nn;
pub mod synthetic;
pub mod train;
