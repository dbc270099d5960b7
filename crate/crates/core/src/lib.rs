//! Open-retrieval conversational machine reading, end to end: ingest rule
//! documents, retrieve candidates for a user question, track per-condition
//! entailment over a discourse graph, make a four-way decision and generate
//! a clarification question when the decision is to inquire.

pub mod corpus;
pub mod decision;
pub mod discourse;
pub mod encoder;
pub mod error;
pub mod numerics;
pub mod retrieval;
pub mod text;

pub use corpus::{CorpusSplit, Decision, DialogueExample, FollowUpAnswer, HistoryTurn, RuleDocument};
pub use error::{Error, Result};
pub use numerics::{Graph, NodeId, ParamId, ParamStore, Tensor};
pub use text::Vocab;
