pub mod contact;
pub mod diffengine;
pub mod dynamics;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod optimizer;
pub mod real;
pub mod scenarios;
pub mod se3;
