//! Estimating legislators' positions on a controversy from what they say in
//! parliament.
//!
//! Speeches are split into sentences, opinion sentences are kept, each
//! speaker's opinion sentences are embedded and averaged, and every speaker
//! mean is projected onto the line joining a contra anchor and a pro anchor.

pub mod corpus;
pub mod embedding;
pub mod evalcmp;
pub mod nlproc;
pub mod pipeline;
pub mod reduce;
pub mod scaling;
pub mod seedgen;
pub mod stats;
pub mod topics;
pub mod util;
