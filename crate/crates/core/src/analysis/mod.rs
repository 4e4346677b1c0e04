//! Representation analysis: clustering, purity, pooling, CCA and the
//! anchor-normalized benchmark score.

pub mod cca;
pub mod kmeans;
pub mod labels;
pub mod report;
pub mod superb;

pub use cca::cca_similarity;
pub use kmeans::{kmeans, KMeans, KMeansOptions};
pub use labels::{one_hot, phone_purity, pool_phone_level, pool_utterance, FrameLabels, LabelKind};
pub use superb::{parse_metrics, superb_score, MetricTable, ScoreAnchors};
pub use report::{
    encode_corpus, layerwise_report, report_from_states, AnalysisItem, Attribute, LayerReport, LayerRow, ReportOptions,
    DEFAULT_KS,
};
