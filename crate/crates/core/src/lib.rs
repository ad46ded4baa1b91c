//! Exact Shapley values of database facts for Boolean queries, together with
//! generalized model counting and the polynomial-time reductions linking them.

pub mod analyzer;
pub mod counting;
pub mod dbformat;
pub mod error;
pub mod linalg;
pub mod lineage;
pub mod query;
pub mod rational;
pub mod reduction;
pub mod relational;
pub mod shapley;
pub mod supports;
pub mod verify;
