//! Knowledge-graph-grounded reasoning dataset tooling for pathology QA.
//!
//! The crate covers two halves of one pipeline:
//!
//! 1. **Data construction** — fuse two source knowledge graphs into a single
//!    multi-scale graph ([`kg`]), anchor extracted entity mentions to graph
//!    nodes and retrieve priority-weighted shortest reasoning paths
//!    ([`reasoning`]), synthesize question/answer/chain triplets through a
//!    generation client and filter them for quality ([`synthesis`]), and emit
//!    a trajectory-masked SFT corpus ([`corpus`]).
//! 2. **Reward / optimization core** — structured-response parsing and the
//!    format + semantic + entity reward stack ([`rewards`]), group-relative
//!    policy optimization math with a toy trainable policy ([`grpo`]), and
//!    answer/reasoning quality metrics ([`evalmetrics`]).
//!
//! External services (embedding provider, extractor/generator/judge LLM
//! clients) are abstracted in [`services`] with deterministic offline mocks,
//! so the whole pipeline runs reproducibly without network access.

pub mod config;
pub mod corpus;
pub mod evalmetrics;
pub mod grpo;
pub mod kg;
pub mod parallel;
pub mod prompts;
pub mod reasoning;
pub mod rewards;
pub mod services;
pub mod synthesis;
pub mod text;
