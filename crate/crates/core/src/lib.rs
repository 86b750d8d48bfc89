//! Cyber-physical data fusion and intrusion detection for DNP3/SCADA networks.
//!
//! The pipeline runs in stages: synthesize or load sensor streams
//! ([`scenario`], [`ingest`]), dissect DNP3 traffic ([`dnp3`]), merge the
//! cyber and physical sides into one time-aligned table ([`fusion`]),
//! analyze features ([`featan`]), and train detectors — supervised
//! ([`learn`]), unsupervised ([`cluster`], [`manifold`]) and
//! semi-supervised ([`cotrain`]). [`pipeline`] orchestrates the whole run.

pub mod cluster;
pub mod cotrain;
pub mod dnp3;
pub mod featan;
pub mod fusion;
pub mod ingest;
pub mod learn;
pub mod manifold;
pub mod pipeline;
pub mod scenario;
