pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod layers;
pub mod model;
pub mod search;
pub mod tensor;
pub mod train;
