//! Accuracy, the keyword-masked probe, local Lipschitz scores, Welch
//! t-tests and the campaign-incremental evaluation grid.

mod incremental;
mod lipschitz;
mod metrics;
mod report;
mod ttest;

pub use incremental::{
    run_grid, AuditSummary, CampaignAudit, CellResult, EvalConfig, GridResult, Protocol,
};
pub use lipschitz::{
    lipschitz_score, pairwise_lipschitz, LipschitzReport, ProxyLipschitz, MIN_EMBEDDING_DISTANCE,
};
pub use metrics::{accuracy, keyword_masked_eval};
pub use report::{incremental_eval, CampaignSummary, EvalReport, MeanStd, ModeSummary};
pub use ttest::{ttest, MIN_RUNS};
