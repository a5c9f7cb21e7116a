//! Battery remaining-useful-life classification and charge automation.
//!
//! The crate covers the whole host side of the system: dataset ingestion and
//! tercile labelling ([`data`]), three classifiers ([`mlp`], [`gru`],
//! [`gbdt`]), metrics and cross-validation ([`eval`]), the relay policy
//! ([`controller`]), the framed serial protocol with a device simulator
//! ([`link`]), versioned model/report files ([`artifact`]) and the closed-loop
//! replay used by `rul simulate` ([`sim`]).

pub mod artifact;
pub mod controller;
pub mod data;
pub mod error;
pub mod eval;
pub mod gbdt;
pub mod gru;
pub mod link;
pub mod mlp;
pub mod model;
pub mod nn;
pub mod optim;
pub mod sim;

pub use error::{Error, Result};
