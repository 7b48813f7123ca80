#![allow(dead_code)]
pub mod cli_run;
pub mod experiments;
