//! Cross-validated experiments, the two-step grid, automated search and the
//! result store.

pub mod cv;
pub mod grid;
pub mod search;
pub mod step1;
pub mod store;

pub use cv::{run_cv, CvConfig};
pub use grid::{run_grid, run_pipelines, GridSpec, GridSummary, Step1Grid};
pub use search::{auto_search, cv_blended_score, dataset_refs, ParamRange, SearchBudget, SearchResult, SearchSpace, SearchTrial};
pub use step1::{select_step1, select_step1_with, summarize, FilterAudit, KindChoice, PipelineSummary, SelectionMetric, Step1Choice};
pub use store::{Failure, RecordKey, Store, TrialRecord, SCHEMA};
