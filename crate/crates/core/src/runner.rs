//! Batch front end: runs a scenario and writes the output tree.
//!
//! ```text
//! <out>/summary.json          run parameters, Summary, per-episode table
//! <out>/summary.csv           SUMMARY_CSV_HEADER + one row
//! <out>/episodes.csv          EPISODES_CSV_HEADER, one row per trial
//! <out>/episodes/episode_NNNN.csv   FRAME_CSV_HEADER, one row per frame
//! <out>/series/pose_error.csv       POSE_ERROR_CSV_HEADER
//! <out>/series/velocity.csv         VELOCITY_CSV_HEADER
//! <out>/series/trajectory.csv       TRAJECTORY_CSV_HEADER
//! ```
//!
//! `compare` writes one such tree per variant under `<out>/<variant>/` plus
//! `<out>/compare.json` and `<out>/compare.csv`. Files contain no
//! timestamps or paths, so identical invocations give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Error;
use crate::metrics::{Summary, SUMMARY_CSV_HEADER};
use crate::pose::Pose;
use crate::scenario::Scenario;
use crate::sim::{run_batch, BatchResult, EpisodeContext, EpisodeOptions, EpisodeRecord, Variant};

pub const EPISODES_CSV_HEADER: &str = "trial,seed,termination,frames,success,add_m,te_mm,re_deg,\
path_length_m,geodesic_length_m,length_ratio";

pub const FRAME_CSV_HEADER: &str = "frame,time,status,\
gt_qw,gt_qx,gt_qy,gt_qz,gt_tx,gt_ty,gt_tz,\
est_qw,est_qx,est_qy,est_qz,est_tx,est_ty,est_tz,\
cmd_vx,cmd_vy,cmd_vz,cmd_wx,cmd_wy,cmd_wz,\
entropy,residual_rms,visible,accepted,velocity_error,nees";

pub const POSE_ERROR_CSV_HEADER: &str = "trial,frame,time,te_mm,re_deg";
pub const VELOCITY_CSV_HEADER: &str = "trial,frame,time,vx,vy,vz,wx,wy,wz,entropy";
pub const TRAJECTORY_CSV_HEADER: &str = "trial,frame,time,x,y,z";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub trials: usize,
    /// Overrides the scenario's base seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub parallelism: usize,
    pub variant: Variant,
    pub uncertainty_policy: bool,
}

#[derive(Serialize)]
struct EpisodeRow {
    trial: usize,
    seed: u64,
    termination: &'static str,
    frames: usize,
    success: bool,
    add_m: f64,
    te_mm: f64,
    re_deg: f64,
    path_length_m: f64,
    geodesic_length_m: f64,
    length_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic: Option<String>,
}

impl EpisodeRow {
    fn new(r: &EpisodeRecord) -> Self {
        EpisodeRow {
            trial: r.trial,
            seed: r.seed,
            termination: r.termination.as_str(),
            frames: r.frame_count(),
            success: r.metrics.success,
            add_m: r.metrics.add,
            te_mm: r.metrics.te_mm,
            re_deg: r.metrics.re_deg,
            path_length_m: r.metrics.path_length,
            geodesic_length_m: r.metrics.geodesic_length,
            length_ratio: r.metrics.length_ratio,
            diagnostic: r.diagnostic.clone(),
        }
    }
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    variant: Variant,
    trials: usize,
    base_seed: u64,
    uncertainty_policy: bool,
    summary: &'a Summary,
    episodes: Vec<EpisodeRow>,
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pose_fields(p: &Pose) -> String {
    let q = p.quaternion_wxyz();
    let t = p.translation;
    format!("{},{},{},{},{},{},{}", q[0], q[1], q[2], q[3], t.x, t.y, t.z)
}

/// Per-frame CSV of one episode.
pub fn episode_csv(r: &EpisodeRecord) -> String {
    let mut s = String::from(FRAME_CSV_HEADER);
    s.push('\n');
    for f in &r.frames {
        let est = f.estimate.map(|p| pose_fields(&p)).unwrap_or_else(|| ",,,,,,".into());
        let c = f.command.to_vec6();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f.frame,
            f.time,
            f.status.as_str(),
            pose_fields(&f.gt),
            est,
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            c[5],
            opt(f.entropy),
            opt(f.residual_rms),
            f.visible,
            f.accepted,
            opt(f.velocity_error),
            opt(f.nees),
        );
    }
    s
}

fn episodes_csv(records: &[EpisodeRecord]) -> String {
    let mut s = String::from(EPISODES_CSV_HEADER);
    s.push('\n');
    for r in records {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.seed,
            r.termination.as_str(),
            r.frame_count(),
            m.success,
            m.add,
            m.te_mm,
            m.re_deg,
            m.path_length,
            m.geodesic_length,
            m.length_ratio
        );
    }
    s
}

fn series_csvs(records: &[EpisodeRecord]) -> (String, String, String) {
    let mut pose = format!("{POSE_ERROR_CSV_HEADER}\n");
    let mut vel = format!("{VELOCITY_CSV_HEADER}\n");
    let mut traj = format!("{TRAJECTORY_CSV_HEADER}\n");
    for r in records {
        for f in &r.frames {
            let (te, re) = crate::metrics::te_re(&f.gt, &r.desired);
            let _ = writeln!(pose, "{},{},{},{},{}", r.trial, f.frame, f.time, te, re);
            let c = f.command.to_vec6();
            let _ = writeln!(
                vel,
                "{},{},{},{},{},{},{},{},{},{}",
                r.trial,
                f.frame,
                f.time,
                c[0],
                c[1],
                c[2],
                c[3],
                c[4],
                c[5],
                opt(f.entropy)
            );
            let p = f.camera_position;
            let _ = writeln!(traj, "{},{},{},{},{},{}", r.trial, f.frame, f.time, p.x, p.y, p.z);
        }
    }
    (pose, vel, traj)
}

/// Writes the output tree of one batch into `out`.
pub fn write_batch(out: &Path, batch: &BatchResult, base_seed: u64, uncertainty_policy: bool) -> Result<(), Error> {
    let file = SummaryFile {
        variant: batch.summary.variant,
        trials: batch.summary.trials,
        base_seed,
        uncertainty_policy,
        summary: &batch.summary,
        episodes: batch.records.iter().map(EpisodeRow::new).collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("summary serializes");
    write(&out.join("summary.json"), &(json + "\n"))?;
    write(&out.join("summary.csv"), &format!("{SUMMARY_CSV_HEADER}\n{}\n", batch.summary.csv_row()))?;
    write(&out.join("episodes.csv"), &episodes_csv(&batch.records))?;
    fs::create_dir_all(out.join("episodes")).map_err(|source| Error::Io { path: out.join("episodes"), source })?;
    for r in &batch.records {
        write(&out.join("episodes").join(format!("episode_{:04}.csv", r.trial)), &episode_csv(r))?;
    }
    let (pose, vel, traj) = series_csvs(&batch.records);
    write(&out.join("series/pose_error.csv"), &pose)?;
    write(&out.join("series/velocity.csv"), &vel)?;
    write(&out.join("series/trajectory.csv"), &traj)?;
    Ok(())
}

fn prepare(cfg: &RunConfig) -> Result<(EpisodeContext, u64), Error> {
    let scenario = Scenario::load(&cfg.scenario)?;
    let seed = cfg.seed.unwrap_or(scenario.seed);
    Ok((EpisodeContext::new(scenario)?, seed))
}

/// Runs `cfg.variant` and writes the output tree.
pub fn run(cfg: &RunConfig) -> Result<Summary, Error> {
    let (ctx, seed) = prepare(cfg)?;
    let opts = EpisodeOptions { variant: cfg.variant, uncertainty_policy: cfg.uncertainty_policy };
    log::info!("running {} trials of {} (seed {seed})", cfg.trials, cfg.variant);
    let batch = run_batch(&ctx, opts, cfg.trials, seed, cfg.parallelism)?;
    write_batch(&cfg.out, &batch, seed, cfg.uncertainty_policy)?;
    Ok(batch.summary)
}

/// Variants run side by side by [`compare`].
pub const COMPARED_VARIANTS: [Variant; 2] = [Variant::CoupledEkf, Variant::PbvsPerframe];

/// Runs the coupled EKF and the per-frame baseline on the same seeds.
/// `cfg.variant` is ignored.
pub fn compare(cfg: &RunConfig) -> Result<Vec<Summary>, Error> {
    let (ctx, seed) = prepare(cfg)?;
    let mut summaries = Vec::new();
    for variant in COMPARED_VARIANTS {
        let opts = EpisodeOptions { variant, uncertainty_policy: cfg.uncertainty_policy };
        log::info!("running {} trials of {variant} (seed {seed})", cfg.trials);
        let batch = run_batch(&ctx, opts, cfg.trials, seed, cfg.parallelism)?;
        write_batch(&cfg.out.join(variant.as_str()), &batch, seed, cfg.uncertainty_policy)?;
        summaries.push(batch.summary);
    }
    let json = serde_json::to_string_pretty(&summaries).expect("summary serializes");
    write(&cfg.out.join("compare.json"), &(json + "\n"))?;
    let mut csv = format!("{SUMMARY_CSV_HEADER}\n");
    for s in &summaries {
        csv.push_str(&s.csv_row());
        csv.push('\n');
    }
    write(&cfg.out.join("compare.csv"), &csv)?;
    Ok(summaries)
}

/// Fixed-width text table of summaries for the terminal.
pub fn format_table(summaries: &[Summary]) -> String {
    let stat = |s: Option<crate::metrics::Stat>, digits: usize| {
        s.map(|s| format!("{:.d$} ± {:.d$}", s.mean, s.std, d = digits)).unwrap_or_else(|| "-".into())
    };
    let mut out = format!(
        "{:<14} {:>7} {:>8} {:>18} {:>18} {:>16}\n",
        "variant", "trials", "SR (%)", "TE (mm)", "RE (deg)", "LR"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>8.2} {:>18} {:>18} {:>16}",
            s.variant.as_str(),
            s.trials,
            s.success_rate,
            stat(s.te_mm, 2),
            stat(s.re_deg, 3),
            stat(s.lr, 3)
        );
    }
    out
}
