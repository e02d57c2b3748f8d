use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::components::Connectivity;
use super::metrics::{
    dice_masks, hausdorff_masks, lesion_rates_masks, ppv_sensitivity_masks,
    volume_difference_masks, Scored,
};
use crate::data::LabelMap;
use crate::error::{Error, Result};

/// The ranked metrics, in report column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dice,
    Hausdorff,
    Lfpr,
    Ltpr,
    Ppv,
    Sensitivity,
    /// Relative volume difference.
    VolDiff,
}

impl Metric {
    pub const RANKED: [Metric; 7] = [
        Metric::Dice,
        Metric::Hausdorff,
        Metric::Lfpr,
        Metric::Ltpr,
        Metric::Ppv,
        Metric::Sensitivity,
        Metric::VolDiff,
    ];

    pub fn higher_is_better(self) -> bool {
        matches!(
            self,
            Metric::Dice | Metric::Ltpr | Metric::Ppv | Metric::Sensitivity
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Hausdorff => "hausdorff",
            Metric::Lfpr => "lfpr",
            Metric::Ltpr => "ltpr",
            Metric::Ppv => "ppv",
            Metric::Sensitivity => "sensitivity",
            Metric::VolDiff => "vol_diff",
        }
    }
}

/// All metrics of one method on one subject. `None` marks an undefined value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub subject: String,
    pub dice: Option<f64>,
    pub hausdorff: Option<f64>,
    pub lfpr: Option<f64>,
    pub ltpr: Option<f64>,
    pub ppv: Option<f64>,
    pub sensitivity: Option<f64>,
    pub vol_diff_rel: Option<f64>,
    pub vol_diff_abs: Option<f64>,
    /// `metric:flag` entries for conventional or undefined values.
    pub flags: Vec<String>,
}

impl MetricRow {
    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dice => self.dice,
            Metric::Hausdorff => self.hausdorff,
            Metric::Lfpr => self.lfpr,
            Metric::Ltpr => self.ltpr,
            Metric::Ppv => self.ppv,
            Metric::Sensitivity => self.sensitivity,
            Metric::VolDiff => self.vol_diff_rel,
        }
    }

    pub fn value_mut(&mut self, metric: Metric) -> &mut Option<f64> {
        match metric {
            Metric::Dice => &mut self.dice,
            Metric::Hausdorff => &mut self.hausdorff,
            Metric::Lfpr => &mut self.lfpr,
            Metric::Ltpr => &mut self.ltpr,
            Metric::Ppv => &mut self.ppv,
            Metric::Sensitivity => &mut self.sensitivity,
            Metric::VolDiff => &mut self.vol_diff_rel,
        }
    }
}

/// Score one prediction against its ground truth. Reads each mask once.
pub fn evaluate_case(
    method: &str,
    subject: &str,
    pred: &LabelMap,
    gt: &LabelMap,
    spacing: [f64; 3],
    connectivity: Connectivity,
) -> Result<MetricRow> {
    if pred.dims() != gt.dims() {
        return Err(Error::Contract(format!(
            "{method}/{subject}: prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let dims = gt.dims();
    let (p, g) = (pred.read(), gt.read());
    let dice = dice_masks(p, g)?;
    let hd = hausdorff_masks(p, g, dims, spacing)?;
    let (ltpr, lfpr) = lesion_rates_masks(p, g, dims, connectivity)?;
    let (ppv, sens) = ppv_sensitivity_masks(p, g)?;
    let (rel, abs) = volume_difference_masks(p, g, spacing)?;
    let mut flags = Vec::new();
    let named: [(&str, &Scored); 8] = [
        ("dice", &dice),
        ("hausdorff", &hd),
        ("lfpr", &lfpr),
        ("ltpr", &ltpr),
        ("ppv", &ppv),
        ("sensitivity", &sens),
        ("vol_diff_rel", &rel),
        ("vol_diff_abs", &abs),
    ];
    for (name, s) in named {
        if let Some(f) = s.flag {
            flags.push(format!("{name}:{}", f.name()));
        }
    }
    Ok(MetricRow {
        method: method.to_owned(),
        subject: subject.to_owned(),
        dice: dice.value,
        hausdorff: hd.value,
        lfpr: lfpr.value,
        ltpr: ltpr.value,
        ppv: ppv.value,
        sensitivity: sens.value,
        vol_diff_rel: rel.value,
        vol_diff_abs: abs.value,
        flags,
    })
}

pub const CSV_HEADER: &str =
    "method,subject,dice,hausdorff,lfpr,ltpr,ppv,sensitivity,vol_diff_rel,vol_diff_abs,flags";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn new(rows: Vec<MetricRow>) -> Self {
        Self { rows }
    }

    /// Distinct method names in first-seen order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Distinct subjects in first-seen order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.subject) {
                out.push(r.subject.clone());
            }
        }
        out
    }

    pub fn value(&self, method: &str, subject: &str, metric: Metric) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.subject == subject)
            .and_then(|r| r.value(metric))
    }

    /// Mean of the defined values of `metric` for `method`.
    pub fn mean(&self, method: &str, metric: Metric) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.value(metric))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.subject,
                cell(r.dice),
                cell(r.hausdorff),
                cell(r.lfpr),
                cell(r.ltpr),
                cell(r.ppv),
                cell(r.sensitivity),
                cell(r.vol_diff_rel),
                cell(r.vol_diff_abs),
                r.flags.join(";")
            );
        }
        out
    }
}
