pub mod algorithms;
pub mod dispatch;
pub mod grid;
pub mod harness;
pub mod lp;
pub mod risk;
pub mod scenarios;
