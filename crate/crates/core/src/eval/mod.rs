//! Detection metrics, layout fidelity, grasp success and the comparison
//! report.

mod layout;
mod matching;
mod metrics;
mod report;

pub use layout::{layout_miou, mean_layout_miou, segment};
pub use matching::{match_detections, ranked_indices, GtBox, MatchPair, MatchResult};
pub use metrics::{
    average_precision, center_deviation, coco_thresholds, counts, detection_metrics,
    interpolated_ap, map50, map50_95, matched_pairs, mean_average_precision, success_fraction,
    success_rate, thresholded_matches, Counts, DetectionMetrics, DeviationStats, ImageEval,
};
pub use report::{build_report, MethodMetrics, MetricsReport, CSV_HEADER, METHOD_ORDER, REPORT_SCHEMA_VERSION};
