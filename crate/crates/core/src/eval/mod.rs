//! Stemmed-match evaluation, TitleRelated statistics and title-ratio buckets.

mod metrics;
mod porter;
mod stats;

pub use metrics::{
    compute_metrics, evaluate, score_at_k, split_present_absent, stem_phrase, BucketReport,
    EvalInput, EvalReport, MetricAtK, MetricTable, Scores, SplitReport,
};
pub use porter::porter_stem;
pub use stats::{
    bucket_by_title_ratio, default_stopwords, is_title_related, title_related_stats, SplitCount,
    TitleRelatedStats, BUCKET_COUNT, STOPWORDS_VERSION,
};
