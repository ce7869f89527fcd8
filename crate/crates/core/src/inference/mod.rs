//! Likelihood, per-run MAP fits, hierarchical MCMC, DIC, posterior
//! predictive checks and parameter recovery.

pub mod diagnostics;
pub mod dic;
pub mod hierarchical;
pub mod likelihood;
pub mod map;
pub mod ppc;
pub mod recovery;
pub mod transform;

pub use dic::{compare_dic, dic, dic_unchecked, DIC_MARGIN, DicComparison, DicReport};
pub use hierarchical::{
    fit_hierarchical, Chain, HierarchicalModelSpec, McmcConfig, ParamSummary, PosteriorSummary, Priors, SummaryReport,
    RHAT_GATE,
};
pub use likelihood::{loglik, loglik_data, ChoiceData, LogLik};
pub use map::{map_fit, MapConfig, MapFit, MapPrior};
pub use ppc::{posterior_predictive, PpcConfig, PpcMetric, PpcReport};
pub use recovery::{recovery_study, GroupTruth, RecoveryReport, RecoveryRow};
pub use transform::{param_names, TransformedParams, MAX_PARAMS, PARAM_NAMES};
