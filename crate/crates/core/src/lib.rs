//! Building blocks for turning longitudinal EHR event streams into
//! instruction samples with graph-grounded reasoning traces, and for scoring
//! model outputs on them.

pub mod cooccur;
pub mod ehr;
pub mod eval;
pub mod knowledge;
pub mod sampler;
pub mod serialize;
pub mod synthesis;
pub mod task;
pub mod warning;
