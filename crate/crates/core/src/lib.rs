pub mod depgraph;
pub mod distfit;
pub mod model;
pub mod versioning;
pub mod propagation;
pub mod regression;
pub mod survival;
