#![allow(dead_code)]

pub mod graphs;
pub mod rows;
pub mod parser;
pub mod metrics;
