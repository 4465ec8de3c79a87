//! Track centerline, region map and environment lookup.
//!
//! The geometry realizes every declared feature: R15 and R8 corners, an
//! ISO-style double lane change, a low-adhesion R12 corner, two crosswind
//! straights, an R10 U-turn at mu = 0.33 and a five-gate slalom, joined with
//! tangent continuity and a closing straight that lands the total at 438 m.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::error::SimError;
use crate::geometry::{lerp_angle, wrap_angle, Pose};
use crate::vehicle::EnvironmentSample;

pub const TARGET_LENGTH: f64 = 438.0;
pub const WIND_PEAK_SPEED: f64 = 22.22; // 80 km/h
/// Continuity search window around the previous closest-point result.
pub const CURSOR_WINDOW: f64 = 10.0;

const SAMPLE_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
pub struct TrackPoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Region {
    pub label: char,
    pub s_start: f64,
    pub s_end: f64,
    pub mu: f64,
    pub wind: bool,
}

#[derive(Debug, Clone)]
pub struct TrackModel {
    points: Vec<TrackPoint>,
    pub regions: Vec<Region>,
    pub total_length: f64,
}

struct Builder {
    points: Vec<(f64, f64, f64)>, // x, y, psi
    regions: Vec<Region>,
    s: f64,
}

impl Builder {
    fn new() -> Self {
        Self {
            points: vec![(0.0, 0.0, 0.0)],
            regions: Vec::new(),
            s: 0.0,
        }
    }

    fn head(&self) -> (f64, f64, f64) {
        *self.points.last().unwrap()
    }

    fn push(&mut self, x: f64, y: f64, psi: f64) {
        let (px, py, _) = self.head();
        self.s += (x - px).hypot(y - py);
        self.points.push((x, y, psi));
    }

    fn straight(&mut self, len: f64) {
        let (x0, y0, psi) = self.head();
        let n = (len / SAMPLE_STEP).ceil() as usize;
        for i in 1..=n {
            let d = len * i as f64 / n as f64;
            self.push(x0 + d * psi.cos(), y0 + d * psi.sin(), psi);
        }
    }

    /// Circular arc; positive angle turns left.
    fn arc(&mut self, radius: f64, angle: f64) {
        let (x0, y0, psi0) = self.head();
        let sign = angle.signum();
        let cx = x0 - sign * radius * psi0.sin();
        let cy = y0 + sign * radius * psi0.cos();
        let len = radius * angle.abs();
        let n = (len / SAMPLE_STEP).ceil() as usize;
        for i in 1..=n {
            let a = angle * i as f64 / n as f64;
            let psi = psi0 + a;
            let x = cx + sign * radius * psi.sin();
            let y = cy - sign * radius * psi.cos();
            self.push(x, y, psi);
        }
    }

    /// Lateral profile y = f(x) in the entry frame, with slope fp = f'.
    fn lateral(&mut self, len_x: f64, f: impl Fn(f64) -> f64, fp: impl Fn(f64) -> f64) {
        let (x0, y0, psi0) = self.head();
        let (sin0, cos0) = psi0.sin_cos();
        let n = (len_x / (SAMPLE_STEP * 0.8)).ceil() as usize;
        for i in 1..=n {
            let xl = len_x * i as f64 / n as f64;
            let yl = f(xl);
            self.push(
                x0 + cos0 * xl - sin0 * yl,
                y0 + sin0 * xl + cos0 * yl,
                psi0 + fp(xl).atan(),
            );
        }
    }

    fn begin_region(&self) -> f64 {
        self.s
    }

    fn end_region(&mut self, label: char, start: f64, mu: f64, wind: bool) {
        self.regions.push(Region {
            label,
            s_start: start,
            s_end: self.s,
            mu,
            wind,
        });
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn smoothstep_d(u: f64) -> f64 {
    if (0.0..=1.0).contains(&u) {
        6.0 * u * (1.0 - u)
    } else {
        0.0
    }
}

/// Builds the declared track geometry; arclength 0 is the pose (0, 0, 0).
pub fn build_track() -> TrackModel {
    let mut b = Builder::new();

    b.straight(30.0);

    let a = b.begin_region(); // A: R15 corner
    b.arc(15.0, PI / 2.0);
    b.end_region('A', a, 1.0, false);

    b.straight(20.0);

    let a = b.begin_region(); // B: R8 corner on mu = 0.7
    b.arc(8.0, -2.0 * PI / 3.0);
    b.end_region('B', a, 0.7, false);

    b.straight(15.0);

    let a = b.begin_region(); // C: double lane change
    {
        let offset = 3.5;
        let out = 13.5;
        let back = 12.5;
        b.lateral(
            out,
            move |x| offset * 0.5 * (1.0 - (PI * x / out).cos()),
            move |x| offset * 0.5 * (PI / out) * (PI * x / out).sin(),
        );
        b.straight(11.0);
        b.lateral(
            back,
            move |x| -offset * 0.5 * (1.0 - (PI * x / back).cos()),
            move |x| -offset * 0.5 * (PI / back) * (PI * x / back).sin(),
        );
    }
    b.end_region('C', a, 1.0, false);

    b.straight(15.0);

    let a = b.begin_region(); // D: R12 corner on mu = 0.5
    b.arc(12.0, PI / 2.0);
    b.end_region('D', a, 0.5, false);

    let a = b.begin_region(); // E: crosswind straight
    b.straight(40.0);
    b.end_region('E', a, 1.0, true);

    let a = b.begin_region(); // F: crosswind straight
    b.straight(40.0);
    b.end_region('F', a, 1.0, true);

    let a = b.begin_region(); // G: R10 U-turn on mu = 0.33
    b.arc(10.0, PI);
    b.end_region('G', a, 0.33, false);

    b.straight(15.0);

    let a = b.begin_region(); // H: five-gate slalom, +/-2 m at 15 m spacing
    {
        let amp = 2.0;
        let gate = 15.0;
        let len = 5.0 * gate; // gates at 7.5 + 15 k, k = 0..4
        let ramp = 7.5;
        let omega = 2.0 * PI / (2.0 * gate);
        let env = move |x: f64| {
            if x < ramp {
                smoothstep(x / ramp)
            } else if x > len - ramp {
                smoothstep((len - x) / ramp)
            } else {
                1.0
            }
        };
        let env_d = move |x: f64| {
            if x < ramp {
                smoothstep_d(x / ramp) / ramp
            } else if x > len - ramp {
                -smoothstep_d((len - x) / ramp) / ramp
            } else {
                0.0
            }
        };
        b.lateral(
            len,
            move |x| amp * (omega * x).sin() * env(x),
            move |x| amp * (omega * (omega * x).cos() * env(x) + (omega * x).sin() * env_d(x)),
        );
    }
    b.end_region('H', a, 1.0, false);

    let closing = TARGET_LENGTH - b.s;
    assert!(
        closing > 5.0,
        "track segments overshoot the target length (built {})",
        b.s
    );
    b.straight(closing);

    let mut pts: Vec<TrackPoint> = b
        .points
        .iter()
        .map(|&(x, y, psi)| TrackPoint {
            s: 0.0,
            x,
            y,
            psi: wrap_angle(psi),
        })
        .collect();
    // Arclength from the sampled polyline.
    let mut acc = 0.0;
    for i in 1..pts.len() {
        let dx = pts[i].x - pts[i - 1].x;
        let dy = pts[i].y - pts[i - 1].y;
        acc += dx.hypot(dy);
        pts[i].s = acc;
    }
    TrackModel {
        total_length: acc,
        points: pts,
        regions: b.regions,
    }
}

impl TrackModel {
    pub fn start_pose(&self) -> Pose {
        let p = self.points[0];
        Pose::new(p.x, p.y, p.psi)
    }

    /// Centerline pose at arclength `s` (clamped to the track).
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.total_length);
        let i = match self
            .points
            .binary_search_by(|p| p.s.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
        .min(self.points.len() - 2);
        let a = self.points[i];
        let b = self.points[i + 1];
        let t = if b.s > a.s { (s - a.s) / (b.s - a.s) } else { 0.0 };
        Pose::new(
            a.x + (b.x - a.x) * t,
            a.y + (b.y - a.y) * t,
            lerp_angle(a.psi, b.psi, t),
        )
    }

    /// Region containing `s`, if any.
    pub fn region_at(&self, s: f64) -> Option<&Region> {
        self.regions
            .iter()
            .find(|r| s >= r.s_start && s < r.s_end)
    }

    /// Adhesion and wind at arclength `s`. The wind in each flagged region
    /// follows a trapezoid: ramp over the first 30 %, flat peak for 40 %,
    /// ramp down over the last 30 %.
    pub fn environment_at(&self, s: f64, _t: f64) -> EnvironmentSample {
        match self.region_at(s) {
            Some(r) => {
                let wind = if r.wind {
                    let u = (s - r.s_start) / (r.s_end - r.s_start);
                    let shape = if u < 0.3 {
                        u / 0.3
                    } else if u <= 0.7 {
                        1.0
                    } else {
                        (1.0 - u) / 0.3
                    };
                    WIND_PEAK_SPEED * shape.clamp(0.0, 1.0)
                } else {
                    0.0
                };
                EnvironmentSample {
                    mu: r.mu,
                    wind_speed_lateral: wind,
                }
            }
            None => EnvironmentSample::default(),
        }
    }

    /// Arclength of the centerline point closest to `p`, warm-started within
    /// +/-10 m of `warm` when given. Ties break to the smallest arclength.
    pub fn closest_s(&self, p: (f64, f64), warm: Option<f64>) -> f64 {
        let (lo, hi) = match warm {
            Some(w) => (
                self.index_at(w - CURSOR_WINDOW),
                self.index_at(w + CURSOR_WINDOW),
            ),
            None => (0, self.points.len() - 1),
        };
        let mut best_d2 = f64::INFINITY;
        let mut best_s = 0.0;
        for i in lo..hi.max(lo + 1) {
            let a = &self.points[i];
            let b = &self.points[i + 1];
            let abx = b.x - a.x;
            let aby = b.y - a.y;
            let len2 = abx * abx + aby * aby;
            if len2 == 0.0 {
                continue;
            }
            let t = (((p.0 - a.x) * abx + (p.1 - a.y) * aby) / len2).clamp(0.0, 1.0);
            let fx = a.x + abx * t;
            let fy = a.y + aby * t;
            let d2 = (p.0 - fx).powi(2) + (p.1 - fy).powi(2);
            if d2 < best_d2 - 1e-12 {
                best_d2 = d2;
                best_s = a.s + (b.s - a.s) * t;
            }
        }
        best_s
    }

    /// Closest arclength and the signed lateral offset (positive left of the
    /// centerline tangent).
    pub fn cross_track(&self, p: (f64, f64), warm: Option<f64>) -> (f64, f64) {
        let s = self.closest_s(p, warm);
        let c = self.pose_at(s);
        let dy = -(c.psi.sin()) * (p.0 - c.x) + c.psi.cos() * (p.1 - c.y);
        (s, dy)
    }

    fn index_at(&self, s: f64) -> usize {
        let s = s.clamp(0.0, self.total_length);
        match self
            .points
            .binary_search_by(|p| p.s.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
        .min(self.points.len() - 2)
    }

    /// Exports the centerline and environment map as CSV.
    pub fn export_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "s,x,y,psi,mu,wind_flag")?;
        for p in &self.points {
            let env = self.environment_at(p.s, 0.0);
            let windy = self.region_at(p.s).map(|r| r.wind).unwrap_or(false);
            writeln!(
                f,
                "{:.4},{:.6},{:.6},{:.6},{:.3},{}",
                p.s,
                p.x,
                p.y,
                p.psi,
                env.mu,
                if windy { 1 } else { 0 }
            )?;
        }
        Ok(())
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }
}
