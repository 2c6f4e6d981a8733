//! Unbiased learning to rank from simulated clicks, with logging-policy-aware
//! propensity estimation and backdoor adjustment.

pub mod autodiff;
pub mod causal;
pub mod cli;
pub mod click;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod propensity;
pub mod ranking;
pub mod seeding;
