//! Perception-risk monitoring and mitigation toolkit.
//!
//! The pipeline: fuse an ensemble of object detections into clustered
//! objects ([`fusion`]), quantify each object's classification uncertainty
//! as an entropy with alert levels ([`entropy`]), inflate uncertainty-aware
//! potential fields around the objects ([`field`]), and plan through the
//! field with a constrained receding-horizon controller ([`planner`]) over
//! a single-track vehicle model ([`dynamics`]). A closed-loop scenario
//! harness ([`sim`]) reproduces the sanitation-worker test cases and logs
//! telemetry ([`simlog`]).

pub mod config;
pub mod dynamics;
pub mod entropy;
pub mod field;
pub mod fusion;
pub mod jsonl;
pub mod planner;
pub mod qp;
pub mod sim;
pub mod simlog;
