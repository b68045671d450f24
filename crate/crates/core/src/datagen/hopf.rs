//! Desk-scale stand-in for a flow that bifurcates from a steady state to a
//! limit cycle: the Stuart–Landau oscillator
//! `dA/dt = (μ + iω) A − (1 + ic) |A|² A`, lifted to a field
//! `Φ(x, t) = Re A(t) g₁(x) + Im A(t) g₂(x) + s(x)`.
//!
//! μ < 0 decays to the base state `s`, μ > 0 settles on a cycle of radius √μ.
//! Mode shapes (version 1): `g₁ = sin 2πx`, `g₂ = cos 2πx` on the unit
//! periodic domain; `s` is a Gaussian bump centred at `x = 1/2` with width
//! `0.1`, with its first-harmonic content projected out so that `s ⟂ g₁, g₂`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Grid, ParamPoint, Trajectory};
use crate::{Error, Result};

const BLOW_UP: f64 = 1e6;
const BUMP_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HopfSettings {
    pub omega: f64,
    /// Nonlinear frequency shift `c`.
    pub shear: f64,
    pub n_x: usize,
    /// Interval between recorded snapshots.
    pub dt: f64,
    /// RK4 steps per recorded interval.
    pub substeps: usize,
    pub n_t: usize,
    pub init_amplitude: f64,
}

impl Default for HopfSettings {
    fn default() -> Self {
        Self {
            omega: 1.0,
            shear: 0.0,
            n_x: 32,
            dt: 0.1,
            substeps: 10,
            n_t: 400,
            init_amplitude: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HopfSolution {
    pub trajectory: Trajectory,
    /// Complex amplitude at every recorded time.
    pub amplitude: Vec<Complex64>,
}

/// `(g₁, g₂, s)` sampled on `n_x` uniform points of `[0, 1)`.
pub fn mode_shapes(n_x: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..n_x).map(|j| j as f64 / n_x as f64).collect();
    let g1: Vec<f64> = xs.iter().map(|x| (2.0 * PI * x).sin()).collect();
    let g2: Vec<f64> = xs.iter().map(|x| (2.0 * PI * x).cos()).collect();
    let mut s: Vec<f64> = xs
        .iter()
        .map(|x| (-0.5 * ((x - 0.5) / BUMP_WIDTH).powi(2)).exp())
        .collect();
    for g in [&g1, &g2] {
        let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
        let norm: f64 = g.iter().map(|v| v * v).sum();
        for (sv, gv) in s.iter_mut().zip(g) {
            *sv -= dot / norm * gv;
        }
    }
    (g1, g2, s)
}

/// Lifts an amplitude series to state vectors.
pub fn lift_amplitude(amplitude: &[Complex64], n_x: usize) -> Vec<f64> {
    let (g1, g2, s) = mode_shapes(n_x);
    amplitude
        .iter()
        .flat_map(|a| (0..n_x).map(move |j| (a.re, a.im, j)))
        .map(|(re, im, j)| re * g1[j] + im * g2[j] + s[j])
        .collect()
}

fn rhs(a: Complex64, mu: f64, omega: f64, shear: f64) -> Complex64 {
    Complex64::new(mu, omega) * a - Complex64::new(1.0, shear) * a.norm_sqr() * a
}

pub fn solve_hopf_surrogate(mu: f64, settings: &HopfSettings) -> Result<HopfSolution> {
    if !mu.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite growth rate {mu}")));
    }
    if !(settings.init_amplitude > 0.0) {
        return Err(Error::InvalidInput("initial amplitude must be positive".into()));
    }
    if settings.substeps == 0 || settings.n_t < 2 || !(settings.dt > 0.0) || settings.n_x == 0 {
        return Err(Error::InvalidInput(
            "surrogate settings need substeps >= 1, n_t >= 2, n_x >= 1 and dt > 0".into(),
        ));
    }
    let h = settings.dt / settings.substeps as f64;
    let f = |a| rhs(a, mu, settings.omega, settings.shear);
    let mut a = Complex64::new(settings.init_amplitude, 0.0);
    let mut amplitude = Vec::with_capacity(settings.n_t);
    amplitude.push(a);
    for step in 1..settings.n_t {
        for _ in 0..settings.substeps {
            let k1 = f(a);
            let k2 = f(a + k1 * (h / 2.0));
            let k3 = f(a + k2 * (h / 2.0));
            let k4 = f(a + k3 * h);
            a += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        if !a.re.is_finite() || !a.im.is_finite() || a.norm() > BLOW_UP {
            return Err(Error::Divergence { what: "Stuart-Landau integrator", step });
        }
        amplitude.push(a);
    }
    let states = lift_amplitude(&amplitude, settings.n_x);
    let trajectory = Trajectory::new(
        states,
        settings.n_x,
        settings.dt,
        Grid::line(settings.n_x, 1.0),
        ParamPoint::single("mu", mu),
    )?;
    Ok(HopfSolution {
        trajectory,
        amplitude,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_side_decays() {
        let s = HopfSettings {
            n_t: 601,
            ..HopfSettings::default()
        };
        let sol = solve_hopf_surrogate(-0.5, &s).unwrap();
        assert!(sol.amplitude.last().unwrap().norm() < 1e-4);
    }

    #[test]
    fn unstable_side_reaches_sqrt_mu() {
        let s = HopfSettings {
            n_t: 601,
            ..HopfSettings::default()
        };
        let sol = solve_hopf_surrogate(0.5, &s).unwrap();
        let r = sol.amplitude.last().unwrap().norm();
        assert!((r - 0.5f64.sqrt()).abs() / 0.5f64.sqrt() < 0.01, "{r}");
    }

    #[test]
    fn critical_point_decays_algebraically() {
        let s = HopfSettings {
            n_t: 501,
            ..HopfSettings::default()
        };
        let sol = solve_hopf_surrogate(0.0, &s).unwrap();
        let a0 = s.init_amplitude;
        for (i, w) in sol.amplitude.windows(2).enumerate() {
            assert!(w[1].norm() <= w[0].norm());
            let t = (i + 1) as f64 * s.dt;
            let exact = (1.0 / (2.0 * t + 1.0 / (a0 * a0))).sqrt();
            assert!((w[1].norm() - exact).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn base_profile_is_orthogonal_to_modes() {
        let (g1, g2, s) = mode_shapes(32);
        for g in [&g1, &g2] {
            let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-12);
        }
        assert!(s.iter().cloned().fold(f64::MIN, f64::max) > 0.5);
    }

    #[test]
    fn rejects_non_positive_amplitude() {
        let s = HopfSettings {
            init_amplitude: 0.0,
            ..HopfSettings::default()
        };
        assert!(solve_hopf_surrogate(0.1, &s).is_err());
    }
}
