//! Lesion segmentation metrics, per-case reports and rank aggregation.

mod components;
mod distance;
mod metrics;
mod overlay;
mod ranking;
mod report;

pub use components::{label_components, Connectivity};
pub use distance::squared_distance_to;
pub use metrics::{
    boundary, bounding_diagonal, confusion, dice, dice_masks, hausdorff, hausdorff_masks,
    lesion_rates, lesion_rates_masks, ppv_sensitivity, ppv_sensitivity_masks, volume_difference,
    volume_difference_masks, Flag, Scored,
};
pub use overlay::{
    overlay_slice, write_overlays, FALSE_NEGATIVE, FALSE_POSITIVE, OUTLINE, TRUE_POSITIVE,
};
pub use ranking::{
    average_ranks, rank_methods, wilcoxon_greater, MethodRank, RankTable, DEFAULT_ALPHA,
    LOW_POWER_SUBJECTS,
};
pub use report::{evaluate_case, Metric, MetricRow, MetricsReport, CSV_HEADER};
