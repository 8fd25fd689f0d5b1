pub mod agent;
pub mod analysis;
pub mod bounds;
pub mod game;
pub mod tensor;
pub mod trainer;
