//! Brute-force replay of the outage tolerance at one operating point: each
//! probe re-simulates the loop from the start of the track with the outage
//! injected, using a separate implementation of the track and controller.

use std::f64::consts::PI;

use gvstab::gv_control::{estimate_outage_tolerance, Controller, OutageToleranceSpec, TrackSpec};

const R: f64 = 2.0;
const L: f64 = PI * R;
const V: f64 = 2.0;
const TS: f64 = 1e-3;
const THRESHOLD: f64 = 0.1;
const HORIZON: usize = 2000;

fn wrap(a: f64) -> f64 {
    let mut a = a;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Reference (x, y, θ, v, w) after travelling `s` meters.
fn reference(s: f64) -> [f64; 5] {
    let lap = 2.0 * L + 2.0 * PI * R;
    let s = s % lap;
    let turn = V / R;
    if s < L {
        [s, -R, 0.0, V, 0.0]
    } else if s < L + PI * R {
        let a = (s - L) / R;
        [L + R * a.sin(), -R * a.cos(), wrap(a), V, turn]
    } else if s < 2.0 * L + PI * R {
        [L - (s - L - PI * R), R, PI, V, 0.0]
    } else {
        let a = (s - 2.0 * L - PI * R) / R;
        [-R * a.sin(), R * a.cos(), wrap(PI + a), V, turn]
    }
}

/// Replays the whole run with packets k0..k0+n lost and reports whether
/// the error stayed bounded and recovered.
fn survives(k0: usize, n: usize) -> bool {
    let (mut x, mut y, mut th) = (0.0, -R, 0.0f64);
    let (mut v, mut w) = (0.0f64, 0.0f64);
    for k in 0..k0 + n + HORIZON {
        let r = reference(V * k as f64 * TS);
        let (dx, dy) = (r[0] - x, r[1] - y);
        let xe = th.cos() * dx + th.sin() * dy;
        let ye = -th.sin() * dx + th.cos() * dy;
        let te = wrap(r[2] - th);
        if k >= k0 && xe.hypot(ye) > THRESHOLD {
            return false;
        }
        if !(k0..k0 + n).contains(&k) {
            v = r[3] * te.cos() + 3.0 * xe;
            w = r[4] + r[3] * (12.0 * ye + 4.0 * te.sin());
        }
        x += TS * v * th.cos();
        y += TS * v * th.sin();
        th = wrap(th + TS * w);
    }
    let r = reference(V * (k0 + n + HORIZON) as f64 * TS);
    let (dx, dy) = (r[0] - x, r[1] - y);
    dx.hypot(dy) < 0.1 * THRESHOLD
}

#[test]
fn outage_tolerance_at_two_meters_per_second() {
    let track = TrackSpec {
        straight_length: L,
        arc_radius: R,
        reference_speed: V,
        sample_time: TS,
    };
    let tol = OutageToleranceSpec::default();
    let est = estimate_outage_tolerance(&track, &Controller::default(), &tol).unwrap();
    assert_eq!(est.n_max, 279);
    assert!(!est.capped);

    let lap_steps = (2.0 * L + 2.0 * PI * R) / (V * TS);
    let probes: Vec<usize> = (0..16)
        .map(|i| (lap_steps * (1.0 + i as f64 / 16.0)).round() as usize)
        .collect();
    assert!(probes.iter().all(|&k0| survives(k0, 279)));
    assert!(probes.iter().any(|&k0| !survives(k0, 280)));
}
