//! Kuramoto–Sivashinsky equation `u_t + u u_x + u_xx + ν u_xxxx = 0` on a
//! periodic domain: Fourier pseudo-spectral in space, ETDRK4 in time, 3/2-rule
//! dealiasing of the quadratic term.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{Grid, ParamPoint, Trajectory};
use crate::{rng, Error, Result};

const BLOW_UP: f64 = 1e6;
const CONTOUR_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KsSettings {
    pub n_x: usize,
    pub domain_length: f64,
    /// Interval between recorded snapshots.
    pub dt: f64,
    /// ETDRK4 steps per recorded interval.
    pub substeps: usize,
    /// Recorded snapshots.
    pub n_t: usize,
    /// Intervals integrated and discarded before recording starts.
    pub burn_in: usize,
    pub init_amplitude: f64,
    pub init_seed: u64,
}

impl Default for KsSettings {
    fn default() -> Self {
        Self {
            n_x: 64,
            domain_length: 22.0,
            dt: 0.1,
            substeps: 1,
            n_t: 1000,
            burn_in: 1000,
            init_amplitude: 0.1,
            init_seed: 0,
        }
    }
}

/// Smooth random initial condition: the first four Fourier modes with
/// uniform random amplitudes in `[-amplitude, amplitude]` and random phases.
pub fn ks_initial_profile(n_x: usize, domain_length: f64, amplitude: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    let modes: Vec<(f64, f64)> = (1..=4)
        .map(|_| (r.random_range(-1.0..1.0), r.random_range(0.0..2.0 * PI)))
        .collect();
    (0..n_x)
        .map(|j| {
            let x = j as f64 * domain_length / n_x as f64;
            modes
                .iter()
                .enumerate()
                .map(|(m, &(a, phase))| {
                    let k = 2.0 * PI * (m + 1) as f64 / domain_length;
                    amplitude * a * (k * x + phase).cos()
                })
                .sum::<f64>()
        })
        .collect()
}

struct Integrator {
    n: usize,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    fwd_pad: Arc<dyn Fft<f64>>,
    inv_pad: Arc<dyn Fft<f64>>,
    /// `-i k / 2` with the Nyquist derivative zeroed.
    g: Vec<Complex64>,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

impl Integrator {
    fn new(nu: f64, n: usize, length: f64, h: f64) -> Self {
        let m = 3 * n / 2;
        let mut planner = FftPlanner::new();
        let wavenumber = |j: usize| {
            let signed = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            2.0 * PI * signed / length
        };
        let g = (0..n)
            .map(|j| {
                let k = if j == n / 2 { 0.0 } else { wavenumber(j) };
                Complex64::new(0.0, -0.5 * k)
            })
            .collect();
        let lin: Vec<f64> = (0..n)
            .map(|j| {
                let k = wavenumber(j);
                k * k - nu * k.powi(4)
            })
            .collect();

        // phi-function coefficients by contour averaging around each h·L
        let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64))
            .collect();
        let contour_mean = |hl: f64, f: &dyn Fn(Complex64) -> Complex64| {
            roots.iter().map(|&r| f(Complex64::new(hl, 0.0) + r)).sum::<Complex64>().re
                / CONTOUR_POINTS as f64
        };
        let mut e = Vec::with_capacity(n);
        let mut e2 = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut f1 = Vec::with_capacity(n);
        let mut f2 = Vec::with_capacity(n);
        let mut f3 = Vec::with_capacity(n);
        for &l in &lin {
            let hl = h * l;
            e.push(hl.exp());
            e2.push((hl / 2.0).exp());
            q.push(h * contour_mean(hl, &|z| ((z / 2.0).exp() - 1.0) / z));
            f1.push(h * contour_mean(hl, &|z| {
                (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / (z * z * z)
            }));
            f2.push(h * contour_mean(hl, &|z| (2.0 + z + z.exp() * (-2.0 + z)) / (z * z * z)));
            f3.push(h * contour_mean(hl, &|z| {
                (-4.0 - 3.0 * z - z * z + z.exp() * (4.0 - z)) / (z * z * z)
            }));
        }
        Self {
            n,
            m,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            fwd_pad: planner.plan_fft_forward(m),
            inv_pad: planner.plan_fft_inverse(m),
            g,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
        }
    }

    /// Spectrum of `-(u²)_x / 2`, products formed on the padded `3n/2` grid.
    fn nonlinear(&self, v: &[Complex64]) -> Vec<Complex64> {
        let (n, m) = (self.n, self.m);
        let half = n / 2;
        let mut pad = vec![Complex64::new(0.0, 0.0); m];
        pad[..half].copy_from_slice(&v[..half]);
        // negative frequencies; the Nyquist mode is dropped
        pad[m - half + 1..].copy_from_slice(&v[half + 1..]);
        self.inv_pad.process(&mut pad);
        let scale = 1.0 / n as f64;
        for z in pad.iter_mut() {
            let u = z.re * scale;
            *z = Complex64::new(u * u, 0.0);
        }
        self.fwd_pad.process(&mut pad);
        let back = n as f64 / m as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..half {
            out[j] = pad[j] * back * self.g[j];
        }
        for j in half + 1..n {
            out[j] = pad[m - n + j] * back * self.g[j];
        }
        out
    }

    fn step(&self, v: &mut [Complex64]) {
        let nv = self.nonlinear(v);
        let a: Vec<Complex64> = (0..self.n).map(|j| v[j] * self.e2[j] + nv[j] * self.q[j]).collect();
        let na = self.nonlinear(&a);
        let b: Vec<Complex64> = (0..self.n).map(|j| v[j] * self.e2[j] + na[j] * self.q[j]).collect();
        let nb = self.nonlinear(&b);
        let c: Vec<Complex64> = (0..self.n)
            .map(|j| a[j] * self.e2[j] + (nb[j] * 2.0 - nv[j]) * self.q[j])
            .collect();
        let nc = self.nonlinear(&c);
        for j in 0..self.n {
            v[j] = v[j] * self.e[j]
                + nv[j] * self.f1[j]
                + (na[j] + nb[j]) * (2.0 * self.f2[j])
                + nc[j] * self.f3[j];
        }
    }

    fn to_physical(&self, v: &[Complex64]) -> Vec<f64> {
        let mut buf = v.to_vec();
        self.inv.process(&mut buf);
        buf.iter().map(|z| z.re / self.n as f64).collect()
    }

    fn to_spectral(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }
}

/// Integrates the KS equation from `init` and records `settings.n_t`
/// snapshots spaced `settings.dt` apart (after `burn_in` discarded intervals).
pub fn solve_ks(nu: f64, settings: &KsSettings, init: &[f64]) -> Result<Trajectory> {
    let n = settings.n_x;
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::InvalidInput(format!("KS viscosity must be positive, got {nu}")));
    }
    if !n.is_power_of_two() || n < 4 {
        return Err(Error::InvalidInput(format!("KS grid size must be a power of two, got {n}")));
    }
    if init.len() != n {
        return Err(Error::Dimension {
            context: "KS initial profile",
            expected: n,
            got: init.len(),
        });
    }
    if settings.substeps == 0 || settings.n_t < 2 || !(settings.dt > 0.0) {
        return Err(Error::InvalidInput(
            "KS settings need substeps >= 1, n_t >= 2 and dt > 0".into(),
        ));
    }
    let h = settings.dt / settings.substeps as f64;
    let integ = Integrator::new(nu, n, settings.domain_length, h);
    let mut v = integ.to_spectral(init);
    let mut states = Vec::with_capacity(settings.n_t * n);
    let mut step = 0;
    for interval in 0..settings.burn_in + settings.n_t {
        if interval >= settings.burn_in {
            let u = integ.to_physical(&v);
            states.extend_from_slice(&u);
        }
        if interval + 1 == settings.burn_in + settings.n_t {
            break;
        }
        for _ in 0..settings.substeps {
            integ.step(&mut v);
            step += 1;
            let bad = v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
                || integ.to_physical(&v).iter().any(|u| u.abs() > BLOW_UP);
            if bad {
                return Err(Error::Divergence { what: "KS solver", step });
            }
        }
    }
    Trajectory::new(
        states,
        n,
        settings.dt,
        Grid::line(n, settings.domain_length),
        ParamPoint::single("ks_nu", nu),
    )
}
