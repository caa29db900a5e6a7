pub mod analysis;
pub mod graph;
pub mod model;
pub mod net_eval;
pub mod numerics;
pub mod text;
pub mod training;
