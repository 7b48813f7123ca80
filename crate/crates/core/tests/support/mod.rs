#![allow(dead_code)]

pub mod causality;
pub mod enumerate;
pub mod fixtures;
pub mod gradcheck;
pub mod metric_oracle;
pub mod pipeline;
