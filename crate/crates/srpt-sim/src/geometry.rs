//! SE(2) pose arithmetic shared by the estimator, the operator model and the
//! metrics code.

use std::f64::consts::PI;

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Shortest-arc interpolation between two headings, t in [0, 1].
pub fn lerp_angle(a: f64, b: f64, t: f64) -> f64 {
    wrap_angle(a + wrap_angle(b - a) * t)
}

/// A planar pose in the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi: wrap_angle(psi),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.psi.is_finite()
    }
}

/// A pose expressed in another pose's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub dx: f64,
    pub dy: f64,
    pub dpsi: f64,
}

impl RelativePose {
    pub fn position_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Expresses `b` in `a`'s frame: rotate (b - a) by -psi_a.
pub fn relative_pose(a: &Pose, b: &Pose) -> RelativePose {
    let (s, c) = a.psi.sin_cos();
    let ex = b.x - a.x;
    let ey = b.y - a.y;
    RelativePose {
        dx: c * ex + s * ey,
        dy: -s * ex + c * ey,
        dpsi: wrap_angle(b.psi - a.psi),
    }
}

/// Applies the relative pose `r` in `a`'s frame, the inverse of
/// [`relative_pose`].
pub fn compose(a: &Pose, r: &RelativePose) -> Pose {
    let (s, c) = a.psi.sin_cos();
    Pose {
        x: a.x + c * r.dx - s * r.dy,
        y: a.y + s * r.dx + c * r.dy,
        psi: wrap_angle(a.psi + r.dpsi),
    }
}
