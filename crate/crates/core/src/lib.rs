//! Behavior-log storage engine.
//!
//! Events are matched against feature filters and written as fixed-width
//! rows into sharded log files. An offline optimizer merges filters whose
//! rows overlap into shared rows and packs heterogeneous behaviors densely
//! by attribute count; an incremental updater migrates an existing log from
//! one layout to the next. Feature values computed from any layout are
//! identical.

pub mod catalog;
pub mod logstore;
pub mod matching;
pub mod seqset;
pub mod value;
pub mod featcomp;
pub mod ingest;
pub mod layout;
pub mod merge_opt;
pub mod profiler;
pub mod split_opt;
pub mod updater;
pub mod workload;
pub mod pipeline;
