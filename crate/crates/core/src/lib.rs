pub mod admm;
pub mod bilevel;
pub mod evaluate;
pub mod experiment;
pub mod model;
pub mod program;
pub mod scenarios;
pub mod solver;
pub mod weights;
