//! Statistics used to compare proxies with reference utilities.

pub mod bootstrap;
pub mod concentration;
pub mod detection;
pub mod hypothesis;
pub mod rank;

pub use bootstrap::{bootstrap_block_spatial, bootstrap_iid, percentile, BootstrapCI, Scheme};
pub use concentration::gini;
pub use detection::{pr_auc, pr_curve, top_k_indices, topk_hit_rate};
pub use hypothesis::{bh_fdr, wilcoxon_signed_rank, Wilcoxon};
pub use rank::{average_ranks, spearman, topk_overlap, RankCorrelation};
