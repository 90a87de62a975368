//! Evolutionary discovery of actor-critic loss functions.
//!
//! Loss functions are typed directed acyclic graphs over transition batches,
//! networks, and primitive operations. A population of graphs is evolved
//! with NSGA-II against two stability-adjusted objectives: single-task
//! performance and zero-shot generalization across perturbed environment
//! configurations. Functional hashing of gradient signatures caches
//! evaluations, and a cheap hurdle environment gates the expensive ones.

pub mod controller;
pub mod envs;
pub mod exec;
pub mod fitness;
pub mod graph;
pub mod hash;
pub mod mutation;
pub mod nsga2;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod trainer;
