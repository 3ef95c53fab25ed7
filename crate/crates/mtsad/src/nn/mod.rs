pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;
