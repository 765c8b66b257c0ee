//! Small explicit integrators for low-dimensional ODE systems.

use crate::error::{Error, Result};

mod dp {
    pub const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    pub const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    pub const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
}

#[derive(Clone, Copy, Debug)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, h_init: 1e-3, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }
}

/// Accepted steps with derivatives, for cubic Hermite dense output.
#[derive(Clone, Debug)]
pub struct Trajectory<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub dy: Vec<[f64; N]>,
}

impl<const N: usize> Trajectory<N> {
    pub fn t_start(&self) -> f64 {
        self.t[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().expect("non-empty trajectory")
    }

    pub fn last(&self) -> [f64; N] {
        *self.y.last().expect("non-empty trajectory")
    }

    /// Index `i` with `t[i] <= t <= t[i+1]`, clamped to the stored range.
    fn bracket(&self, t: f64) -> usize {
        let n = self.t.len();
        match self.t.binary_search_by(|v| v.partial_cmp(&t).expect("finite times")) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Cubic Hermite interpolation; exact at stored nodes.
    pub fn eval(&self, t: f64) -> [f64; N] {
        if self.t.len() == 1 {
            return self.y[0];
        }
        let i = self.bracket(t);
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        if t == t0 {
            return self.y[i];
        }
        if t == t1 {
            return self.y[i + 1];
        }
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let mut out = [0.0; N];
        for k in 0..N {
            out[k] = h00 * self.y[i][k]
                + h10 * h * self.dy[i][k]
                + h01 * self.y[i + 1][k]
                + h11 * h * self.dy[i + 1][k];
        }
        out
    }
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, ks: &[[f64; N]], coef: &[f64]) -> [f64; N] {
    let mut out = *y;
    for (k, &c) in ks.iter().zip(coef) {
        if c != 0.0 {
            for i in 0..N {
                out[i] += h * c * k[i];
            }
        }
    }
    out
}

/// Dormand-Prince 5(4) with standard step control. Every time in `stops`
/// that lies inside `(t0, t_end)` is hit exactly and stored.
pub fn dopri5<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    stops: &[f64],
    opts: &Dopri5Options,
) -> Result<Trajectory<N>> {
    if !(t_end > t0) {
        return Err(Error::InvalidParameter(format!("need t_end > t0, got {t0} and {t_end}")));
    }
    let mut targets: Vec<f64> = stops.iter().copied().filter(|&s| s > t0 && s < t_end).collect();
    targets.push(t_end);
    targets.sort_by(|a, b| a.partial_cmp(b).expect("finite stop times"));
    targets.dedup();

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut traj = Trajectory { t: vec![t], y: vec![y], dy: vec![k1] };
    let mut h = opts.h_init.min(opts.h_max);
    let mut next_target = 0;
    let mut steps = 0;
    while next_target < targets.len() {
        let target = targets[next_target];
        let scale = 1e-13 * t.abs().max(1.0);
        if target - t <= scale {
            t = target;
            *traj.t.last_mut().expect("non-empty") = t;
            next_target += 1;
            continue;
        }
        let mut h_try = h.min(target - t);
        let landing = h_try >= target - t;
        if h_try < scale {
            return Err(Error::StepUnderflow(t));
        }
        let mut ks = [[0.0; N]; 7];
        ks[0] = k1;
        for s in 1..7 {
            let ys = axpy(&y, h_try, &ks[..s], &dp::A[s][..s]);
            ks[s] = f(t + dp::C[s] * h_try, &ys);
        }
        let y_new = axpy(&y, h_try, &ks[..6], &dp::A[6][..6]);
        let mut err = 0.0;
        for i in 0..N {
            let e: f64 = (0..7).map(|s| dp::E[s] * ks[s][i]).sum::<f64>() * h_try;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::BlowUp { t, what: "non-finite ODE state".into() });
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 {
            t = if landing { target } else { t + h_try };
            y = y_new;
            k1 = ks[6];
            if landing {
                k1 = f(t, &y);
                next_target += 1;
            }
            traj.t.push(t);
            traj.y.push(y);
            traj.dy.push(k1);
            if !landing || fac < 1.0 {
                h = (h_try * fac).min(opts.h_max);
            }
        } else {
            h_try *= fac.min(1.0);
            h = h_try;
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::NoConvergence(format!("dopri5 exceeded {} steps", opts.max_steps)));
        }
    }
    Ok(traj)
}

/// Classical fixed-step RK4 from `t0` to `t_end` in `steps` steps.
pub fn rk4<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    steps: usize,
) -> [f64; N] {
    let h = (t_end - t0) / steps as f64;
    let mut y = y0;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &[k1], &[1.0]));
        let k3 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &[k2], &[1.0]));
        let k4 = f(t + h, &axpy(&y, h, &[k3], &[1.0]));
        y = axpy(&y, h, &[k1, k2, k3, k4], &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0]);
    }
    y
}
