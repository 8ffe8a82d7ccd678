//! Episode scoring and batch aggregation.
//!
//! TE, RE and LR are averaged over successful episodes only; SR counts
//! every episode.

use serde::{Deserialize, Serialize};

use crate::control::relative_pose;
use crate::lie::{axis_angle, Vec3};
use crate::model::ObjectModel;
use crate::pose::Pose;
use crate::sim::{EpisodeRecord, Termination, Variant};

/// Success threshold on ADD as a fraction of the object diameter.
pub const ADD_SUCCESS_FRACTION: f64 = 0.1;

/// Chi-square(6) interval the mean NEES of a consistent filter falls in.
pub const NEES_INTERVAL: (f64, f64) = (5.39, 6.64);

/// Mean distance between model points placed by `a` and by `b` (m).
pub fn add_metric(a: &Pose, b: &Pose, model: &ObjectModel) -> f64 {
    let pts = model.points();
    let total: f64 = pts.iter().map(|x| (a.transform_point(x) - b.transform_point(x)).norm()).sum();
    total / pts.len() as f64
}

/// Translation error (mm) and rotation error (deg) of the achieved camera
/// pose with respect to the desired one.
pub fn te_re(final_co: &Pose, desired_co: &Pose) -> (f64, f64) {
    let rel = relative_pose(desired_co, final_co);
    (rel.translation.norm() * 1000.0, axis_angle(&rel.rotation).norm().to_degrees())
}

/// Polyline length through the given positions.
pub fn path_length(positions: &[Vec3]) -> f64 {
    positions.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Camera path length of the episode divided by the geodesic length.
pub fn length_ratio(record: &EpisodeRecord, geodesic_length: f64) -> f64 {
    record.path_length() / geodesic_length
}

/// Converged and the final object placement is within
/// [`ADD_SUCCESS_FRACTION`] of the diameter of the desired one.
pub fn success(record: &EpisodeRecord, model: &ObjectModel) -> bool {
    let Some(last) = record.frames.last() else { return false };
    record.termination == Termination::Converged
        && add_metric(&last.gt, &record.desired, model) < ADD_SUCCESS_FRACTION * model.diameter()
}

/// Pearson correlation coefficient; `None` when either input has zero
/// variance or fewer than two pairs are given.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Entropy and velocity-error pairs of every frame that has both.
pub fn entropy_error_pairs(records: &[EpisodeRecord]) -> (Vec<f64>, Vec<f64>) {
    records
        .iter()
        .flat_map(|r| &r.frames)
        .filter_map(|f| Some((f.entropy?, f.velocity_error?)))
        .filter(|(h, e)| h.is_finite() && e.is_finite())
        .unzip()
}

/// Pearson r between twist entropy and `‖v − v_gt‖` over all frames.
pub fn uncertainty_correlation(records: &[EpisodeRecord]) -> Option<f64> {
    let (h, e) = entropy_error_pairs(records);
    pearson(&h, &e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeesStats {
    pub mean: f64,
    pub frames: usize,
    pub within_interval: bool,
}

/// Mean NEES over every filtered frame of every episode.
pub fn nees(records: &[EpisodeRecord]) -> Option<NeesStats> {
    let values: Vec<f64> = records.iter().flat_map(|r| &r.frames).filter_map(|f| f.nees).collect();
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Some(NeesStats { mean, frames: values.len(), within_interval: (NEES_INTERVAL.0..=NEES_INTERVAL.1).contains(&mean) })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TerminationCounts {
    pub converged: usize,
    pub max_frames: usize,
    pub target_lost: usize,
    pub numerical_failure: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub variant: Variant,
    pub trials: usize,
    pub successes: usize,
    /// Percent of all trials.
    pub success_rate: f64,
    pub te_mm: Option<Stat>,
    pub re_deg: Option<Stat>,
    pub lr: Option<Stat>,
    pub correlation: Option<f64>,
    pub correlation_frames: usize,
    pub nees: Option<NeesStats>,
    pub terminations: TerminationCounts,
}

/// Column names of [`Summary::csv_row`].
pub const SUMMARY_CSV_HEADER: &str = "variant,trials,successes,success_rate,te_mm_mean,te_mm_std,\
re_deg_mean,re_deg_std,lr_mean,lr_std,correlation,nees_mean";

impl Summary {
    pub fn from_records(variant: Variant, records: &[EpisodeRecord]) -> Summary {
        let ok: Vec<&EpisodeRecord> = records.iter().filter(|r| r.metrics.success).collect();
        let collect = |f: fn(&EpisodeRecord) -> f64| Stat::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
        let mut terminations = TerminationCounts::default();
        for r in records {
            match r.termination {
                Termination::Converged => terminations.converged += 1,
                Termination::MaxFrames => terminations.max_frames += 1,
                Termination::TargetLost => terminations.target_lost += 1,
                Termination::NumericalFailure => terminations.numerical_failure += 1,
            }
        }
        let (h, _) = entropy_error_pairs(records);
        Summary {
            variant,
            trials: records.len(),
            successes: ok.len(),
            success_rate: if records.is_empty() { 0.0 } else { 100.0 * ok.len() as f64 / records.len() as f64 },
            te_mm: collect(|r| r.metrics.te_mm),
            re_deg: collect(|r| r.metrics.re_deg),
            lr: collect(|r| r.metrics.length_ratio),
            correlation: uncertainty_correlation(records),
            correlation_frames: h.len(),
            nees: nees(records),
            terminations,
        }
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let stat = |s: Option<Stat>| format!("{},{}", opt(s.map(|s| s.mean)), opt(s.map(|s| s.std)));
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.trials,
            self.successes,
            self.success_rate,
            stat(self.te_mm),
            stat(self.re_deg),
            stat(self.lr),
            opt(self.correlation),
            opt(self.nees.map(|n| n.mean)),
        )
    }
}
