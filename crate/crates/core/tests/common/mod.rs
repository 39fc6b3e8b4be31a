#![allow(dead_code)]

pub mod dense;
pub mod lp_oracle;
