//! Scratch: replay recorded traces through the EKF with candidate Q/R.

use srpt_sim::estimation::{
    ekf_predict, ekf_update, EkfBelief, MeasurementCovariance, MeasurementVector,
    ProcessCovariance,
};
use srpt_sim::vehicle::{ControlCommand, VehicleParams, VehicleState};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = &args[1];
    let q_fyf: f64 = args[2].parse().unwrap();
    let q_fyr: f64 = args[3].parse().unwrap();
    let r_ay: f64 = args[4].parse().unwrap();
    let r_psidot: f64 = args[5].parse().unwrap();
    let q_psidot: f64 = args[6].parse().unwrap();
    let stiff: f64 = args.get(7).map_or(1.0, |s| s.parse().unwrap());

    let mut q = ProcessCovariance::default();
    q.diag[1] = q_psidot;
    q.diag[3] = q_fyf;
    q.diag[4] = q_fyr;
    let base = MeasurementCovariance::default();
    let mut r = MeasurementCovariance::operational();
    r.diag[0] = base.diag[0] * r_ay;
    r.diag[1] = base.diag[1] * r_psidot;
    let mut p = VehicleParams::default();
    p.c_sigma_f *= stiff;
    p.c_sigma_r *= stiff;

    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = |n: &str| header.iter().position(|h| *h == n).unwrap();
    let (i_s, i_bt) = (idx("s"), idx("true_beta"));
    let i_tx = idx("true_x");
    let i_ty = idx("true_y");
    let i_th = idx("true_heading");
    let i_z = idx("z_ay");
    let i_u = idx("u_steer_rate");
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for l in lines {
        rows.push(l.split(',').map(|v| v.parse().unwrap()).collect());
    }

    // seed belief from the true state columns of the first row
    let first = &rows[0];
    let mut x0 = VehicleState::default();
    x0.vx = first[idx("true_vx")];
    x0.heading = first[i_th];
    x0.x = first[i_tx];
    x0.y = first[i_ty];
    x0.beta = first[i_bt];
    let mut b = EkfBelief::initialize(x0);

    let regions = [
        ('A', 0.0, 73.6),
        ('B', 73.6, 90.3),
        ('C', 90.3, 158.4),
        ('D', 158.4, 177.3),
        ('E', 177.3, 217.3),
        ('F', 217.3, 257.3),
        ('G', 257.3, 288.7),
        ('H', 288.7, 1e9),
    ];
    let mut bmax = [0.0f64; 8];
    let mut drift = [0.0f64; 8];
    let mut abse = [0.0f64; 8];
    let mut hist: Vec<([f64; 3], [f64; 3])> = Vec::new(); // est pose, true pose
    for row in rows.iter().skip(1) {
        let u = ControlCommand {
            steer_rate: row[i_u],
            accel: row[i_u + 1],
        };
        b = ekf_predict(&b, &u, 0.01, &q, &p).unwrap();
        let z = MeasurementVector::from_array(&[row[i_z], row[i_z + 1], row[i_z + 2], row[i_z + 3]]);
        b = ekf_update(&b, &z, &r, &p).unwrap();
        let s = row[i_s];
        let ri = regions.iter().position(|&(_, a, bb)| a <= s && s < bb).unwrap();
        bmax[ri] = bmax[ri].max((b.xhat.beta - row[i_bt]).abs());
        abse[ri] = abse[ri].max(((b.xhat.x - row[i_tx]).powi(2) + (b.xhat.y - row[i_ty]).powi(2)).sqrt());
        hist.push(([b.xhat.x, b.xhat.y, b.xhat.heading], [row[i_tx], row[i_ty], row[i_th]]));
        let w = 130;
        if hist.len() > w {
            let (e0, t0) = hist[hist.len() - 1 - w];
            let rel = |a: [f64; 3], c: [f64; 3]| {
                let (dx, dy) = (c[0] - a[0], c[1] - a[1]);
                let (sn, cs) = (-a[2]).sin_cos();
                (cs * dx - sn * dy, sn * dx + cs * dy)
            };
            let e = rel(e0, [b.xhat.x, b.xhat.y, b.xhat.heading]);
            let t = rel(t0, hist[hist.len() - 1].1);
            drift[ri] = drift[ri].max(((e.0 - t.0).powi(2) + (e.1 - t.1).powi(2)).sqrt());
        }
    }
    for (i, (lab, _, _)) in regions.iter().enumerate() {
        print!("{lab}:{:.2}/{:.3}/{:.2} ", bmax[i].to_degrees(), drift[i], abse[i]);
    }
    println!();
}
