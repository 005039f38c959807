pub mod diffcore;
pub mod geometry;
pub mod shapemodel;
pub mod dataset;
pub mod imageae;
pub mod meshae;
pub mod mapping;
pub mod evalcli;
