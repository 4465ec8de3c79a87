//! CSV and SVG artifact writers for runs, metrics tables and divergence
//! series.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::SimError;
use crate::estimation::tuning::LAP_LOG_HEADER;
use crate::harness::metrics::{divergence_window, region_metrics, RegionMetrics, WindowError};
use crate::harness::{ExperimentSpec, RunLog};
use crate::scenario::TrackModel;

const TRACE_EXTRA_HEADER: &str = "est_beta,est_yaw_rate,est_heading,est_fy_f,est_fy_r,est_vx,est_x,est_y,est_delta,ref_x,ref_y,ref_psi,s,dy,v_cmd,nmpc_iterations";

/// Writes the region × run metrics table with a stable column order and
/// fixed-precision formatting so repeated grids produce identical bytes.
pub fn write_metrics_csv(
    path: &Path,
    table: &[(ExperimentSpec, Vec<RegionMetrics>)],
) -> Result<(), SimError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "region,mode,noiseSet,delay,maxDY,rmsDY,minSpeed,steerReversals")?;
    for (spec, regions) in table {
        for m in regions {
            writeln!(
                f,
                "{},{},{},{},{:.6},{:.6},{:.6},{}",
                m.label,
                spec.mode.as_str(),
                spec.noise_set.as_str(),
                if spec.delay_enabled { "on" } else { "off" },
                m.max_abs_dy,
                m.rms_dy,
                m.min_speed,
                m.steer_reversals
            )?;
        }
    }
    Ok(())
}

/// Writes one run trace. The leading columns match the lap-log layout that
/// the process-noise tuner reads; estimator, reference and metric columns
/// follow.
pub fn write_trace_csv(path: &Path, log: &RunLog) -> Result<(), SimError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{LAP_LOG_HEADER},{TRACE_EXTRA_HEADER}")?;
    for r in &log.rows {
        write!(f, "{:.3}", r.t)?;
        for v in r.truth {
            write!(f, ",{v:.9}")?;
        }
        for v in r.z {
            write!(f, ",{v:.9}")?;
        }
        for v in r.u {
            write!(f, ",{v:.9}")?;
        }
        for v in r.est {
            write!(f, ",{v:.9}")?;
        }
        for v in r.ref_pose {
            write!(f, ",{v:.9}")?;
        }
        writeln!(f, ",{:.6},{:.6},{:.6},{}", r.s, r.dy, r.v_cmd, r.nmpc_iterations)?;
    }
    Ok(())
}

fn svg_open(f: &mut impl Write, w: f64, h: f64) -> std::io::Result<()> {
    writeln!(
        f,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    )?;
    writeln!(f, "<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct Mapper {
    min_x: f64,
    min_y: f64,
    scale: f64,
    h: f64,
    margin: f64,
}

impl Mapper {
    fn fit(xs: impl Iterator<Item = (f64, f64)>, w: f64, h: f64, margin: f64) -> Self {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for (x, y) in xs {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        let span_x = (max_x - min_x).max(1e-9);
        let span_y = (max_y - min_y).max(1e-9);
        let scale = ((w - 2.0 * margin) / span_x).min((h - 2.0 * margin) / span_y);
        Self {
            min_x,
            min_y,
            scale,
            h,
            margin,
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.margin + (x - self.min_x) * self.scale,
            self.h - self.margin - (y - self.min_y) * self.scale,
        )
    }
}

fn polyline(f: &mut impl Write, pts: &[(f64, f64)], color: &str, width: f64) -> std::io::Result<()> {
    write!(f, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"")?;
    for (x, y) in pts {
        write!(f, "{x:.2},{y:.2} ")?;
    }
    writeln!(f, "\"/>")
}

/// Track centerline with each run's driven path overlaid.
pub fn write_trajectory_svg(
    path: &Path,
    track: &TrackModel,
    runs: &[&RunLog],
) -> Result<(), SimError> {
    let (w, h) = (900.0, 700.0);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let m = Mapper::fit(track.points().iter().map(|p| (p.x, p.y)), w, h, 40.0);
    svg_open(&mut f, w, h)?;
    let center: Vec<_> = track.points().iter().map(|p| m.map(p.x, p.y)).collect();
    polyline(&mut f, &center, "#bbbbbb", 3.0)?;
    for (i, log) in runs.iter().enumerate() {
        let pts: Vec<_> = log.rows.iter().map(|r| m.map(r.truth[6], r.truth[7])).collect();
        let color = PALETTE[i % PALETTE.len()];
        polyline(&mut f, &pts, color, 1.2)?;
        writeln!(
            f,
            "<text x=\"10\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            16 + 14 * i,
            log.spec.label()
        )?;
    }
    writeln!(f, "</svg>")?;
    Ok(())
}

/// Grouped bars of max and RMS cross-track error per region, one pair of
/// groups per run.
pub fn write_region_bars_svg(
    path: &Path,
    table: &[(ExperimentSpec, Vec<RegionMetrics>)],
) -> Result<(), SimError> {
    let (w, h) = (1000.0, 500.0);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    svg_open(&mut f, w, h)?;
    let peak = table
        .iter()
        .flat_map(|(_, ms)| ms.iter().map(|m| m.max_abs_dy))
        .fold(0.1f64, f64::max);
    let regions: Vec<char> = table
        .first()
        .map(|(_, ms)| ms.iter().map(|m| m.label).collect())
        .unwrap_or_default();
    let n_runs = table.len().max(1);
    let group_w = (w - 80.0) / regions.len().max(1) as f64;
    let bar_w = (group_w - 10.0) / n_runs as f64;
    for (gi, region) in regions.iter().enumerate() {
        let x0 = 40.0 + gi as f64 * group_w;
        writeln!(
            f,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"14\">{}</text>",
            x0 + group_w / 2.0 - 5.0,
            h - 10.0,
            region
        )?;
        for (ri, (_, ms)) in table.iter().enumerate() {
            if let Some(m) = ms.iter().find(|m| m.label == *region) {
                let bar_h = (m.max_abs_dy / peak) * (h - 80.0);
                let rms_h = (m.rms_dy / peak) * (h - 80.0);
                let x = x0 + ri as f64 * bar_w;
                let color = PALETTE[ri % PALETTE.len()];
                writeln!(
                    f,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.35\"/>",
                    x,
                    h - 40.0 - bar_h,
                    bar_w * 0.9,
                    bar_h
                )?;
                writeln!(
                    f,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\"/>",
                    x,
                    h - 40.0 - rms_h,
                    bar_w * 0.9,
                    rms_h
                )?;
            }
        }
    }
    writeln!(f, "</svg>")?;
    Ok(())
}

/// Time series of the window-divergence components for one run.
pub fn write_divergence_svg(path: &Path, series: &[WindowError]) -> Result<(), SimError> {
    let (w, h) = (1000.0, 400.0);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    svg_open(&mut f, w, h)?;
    if !series.is_empty() {
        let all = series.iter().flat_map(|e| {
            [(e.t, e.ex), (e.t, e.ey), (e.t, e.epsi)]
        });
        let m = Mapper::fit(all, w, h, 30.0);
        for (idx, pick) in [0usize, 1, 2].iter().enumerate() {
            let pts: Vec<_> = series
                .iter()
                .map(|e| {
                    let v = match pick {
                        0 => e.ex,
                        1 => e.ey,
                        _ => e.epsi,
                    };
                    m.map(e.t, v)
                })
                .collect();
            polyline(&mut f, &pts, PALETTE[idx], 1.0)?;
        }
        let (_, zero_y) = m.map(series[0].t, 0.0);
        writeln!(
            f,
            "<line x1=\"30\" y1=\"{zero_y:.1}\" x2=\"{:.1}\" y2=\"{zero_y:.1}\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>",
            w - 30.0
        )?;
    }
    writeln!(f, "</svg>")?;
    Ok(())
}

/// Everything one grid invocation leaves on disk.
#[derive(Debug)]
pub struct GridArtifacts {
    pub metrics_path: PathBuf,
    pub trace_paths: Vec<PathBuf>,
    pub table: Vec<(ExperimentSpec, Vec<RegionMetrics>)>,
    pub any_diverged: bool,
}

/// Writes metrics.csv, per-run traces and the three plot files for a set of
/// completed runs.
pub fn export_artifacts(
    out_dir: &Path,
    logs: &[RunLog],
    track: &TrackModel,
) -> Result<GridArtifacts, SimError> {
    std::fs::create_dir_all(out_dir)?;
    let traces_dir = out_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;

    let mut table = Vec::with_capacity(logs.len());
    let mut trace_paths = Vec::with_capacity(logs.len());
    let mut any_diverged = false;
    for log in logs {
        any_diverged |= log.diverged;
        table.push((log.spec, region_metrics(log, track)));
        let trace = traces_dir.join(format!("trace_{}_seed{}.csv", log.spec.label(), log.spec.seed));
        write_trace_csv(&trace, log)?;
        trace_paths.push(trace);
    }

    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &table)?;

    let refs: Vec<&RunLog> = logs.iter().collect();
    write_trajectory_svg(&out_dir.join("trajectories.svg"), track, &refs)?;
    write_region_bars_svg(&out_dir.join("region_errors.svg"), &table)?;
    if let Some(log) = logs.iter().find(|l| !l.diverged && !l.rows.is_empty()) {
        write_divergence_svg(
            &out_dir.join("divergence_window.svg"),
            &divergence_window(log, 0.3),
        )?;
    }
    Ok(GridArtifacts {
        metrics_path,
        trace_paths,
        table,
        any_diverged,
    })
}
