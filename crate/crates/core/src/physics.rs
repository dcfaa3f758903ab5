//! Poiseuille flow field and the dispersive channel response between two
//! terminals in a cylindrical vessel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot count at which the ISI tail is cut even if it has not decayed
/// below `isi_epsilon` (only reached with negligible flow).
pub const MAX_MEMORY_SLOTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionMode {
    /// Aris-Taylor: `D_m + (v_eff R_v)^2 / (48 D_m)`.
    #[default]
    Corrected,
    /// The printed form `1 + (v_eff R_v)^2 / (48 D_m)`, kept for comparison.
    #[serde(rename = "paper")]
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    /// Fluid viscosity (Pa s).
    pub mu: f64,
    /// Pressure gradient magnitude (Pa/m).
    pub kappa: f64,
    /// Vessel radius (m).
    pub r_v: f64,
    pub l_vessel: f64,
    /// Viscosity used for the mean velocity; equal to `mu` unless overridden.
    pub eta: f64,
    pub d_m: f64,
    pub d_tx: f64,
    pub d_rx: f64,
    pub r_tx: f64,
    pub r_rx: f64,
    /// Receiver volume (m^3).
    pub v_rx: f64,
    /// Step interval (s).
    pub t: f64,
    pub steps_per_bit: u32,
    pub diffusion_mode: DiffusionMode,
    /// Sampling instant inside a slot; `None` samples at the end of the slot.
    pub t_samp: Option<f64>,
    pub isi_epsilon: f64,
    /// Factor encoding "much less than" in the dispersion check.
    pub ratio_margin: f64,
}

pub fn sphere_volume(r: f64) -> f64 {
    4.0 / 3.0 * PI * r.powi(3)
}

impl Default for PhysicalParams {
    fn default() -> Self {
        let r_rx = 2.5e-6;
        Self {
            mu: 1.3e-3,
            kappa: 5.2e4,
            r_v: 1e-5,
            l_vessel: 4e-3,
            eta: 1.3e-3,
            d_m: 9e-9,
            d_tx: 2e-9,
            d_rx: 1e-10,
            r_tx: 2.5e-6,
            r_rx,
            v_rx: sphere_volume(r_rx),
            t: 1e-4,
            steps_per_bit: 2500,
            diffusion_mode: DiffusionMode::Corrected,
            t_samp: None,
            isi_epsilon: 1e-9,
            ratio_margin: 0.1,
        }
    }
}

impl PhysicalParams {
    /// Bit interval `T_b = steps_per_bit * T`.
    pub fn bit_interval(&self) -> f64 {
        self.steps_per_bit as f64 * self.t
    }

    pub fn sampling_instant(&self) -> f64 {
        self.t_samp.unwrap_or_else(|| self.bit_interval())
    }

    /// Collects every violated invariant instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let positive = [
            ("viscosity (mu)", self.mu),
            ("vessel_radius (R_v)", self.r_v),
            ("vessel_length (L_vessel)", self.l_vessel),
            ("eta", self.eta),
            ("molecular_diffusion (D_m)", self.d_m),
            ("tx_diffusion (D_tx)", self.d_tx),
            ("rx_diffusion (D_rx)", self.d_rx),
            ("tx_radius (r_tx)", self.r_tx),
            ("rx_radius (r_rx)", self.r_rx),
            ("rx_volume (V_rx)", self.v_rx),
            ("step_interval (T)", self.t),
            ("isi_epsilon", self.isi_epsilon),
            ("ratio_margin", self.ratio_margin),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            bad.push(format!(
                "pressure_gradient (kappa) must be non-negative, got {}",
                self.kappa
            ));
        }
        if self.r_rx >= self.r_v {
            bad.push(format!(
                "rx_radius {} must be below vessel_radius {}",
                self.r_rx, self.r_v
            ));
        }
        if self.r_tx >= self.r_v {
            bad.push(format!(
                "tx_radius {} must be below vessel_radius {}",
                self.r_tx, self.r_v
            ));
        }
        if self.steps_per_bit < 1 {
            bad.push("steps_per_bit must be at least 1".into());
        }
        if let Some(ts) = self.t_samp {
            if !(ts > 0.0 && ts.is_finite()) {
                bad.push(format!("sampling_instant must be positive, got {ts}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(bad))
        }
    }
}

/// Axial velocity at radial distance `r_perp` from the axis; zero outside
/// the wall.
pub fn velocity_at(r_perp: f64, p: &PhysicalParams) -> f64 {
    if r_perp >= p.r_v {
        return 0.0;
    }
    p.kappa * (p.r_v * p.r_v - r_perp * r_perp) / (4.0 * p.mu)
}

pub fn effective_velocity(p: &PhysicalParams) -> f64 {
    p.kappa * p.r_v * p.r_v / (8.0 * p.eta)
}

pub fn effective_diffusion(p: &PhysicalParams) -> f64 {
    let shear = (effective_velocity(p) * p.r_v).powi(2) / (48.0 * p.d_m);
    match p.diffusion_mode {
        DiffusionMode::Corrected => p.d_m + shear,
        DiffusionMode::Literal => 1.0 + shear,
    }
}

/// `D_eff + D_rx`, the coefficient entering the impulse response.
pub fn total_diffusion(p: &PhysicalParams) -> f64 {
    effective_diffusion(p) + p.d_rx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn dispersion_regime_check(d_x: f64, p: &PhysicalParams) -> DispersionCheck {
    let lhs = effective_velocity(p) * p.r_v / p.d_m;
    let rhs = 4.0 * d_x / p.r_v;
    DispersionCheck {
        holds: lhs <= p.ratio_margin * rhs,
        lhs,
        rhs,
    }
}

fn response_raw(t: f64, d_x: f64, v_eff: f64, d_tot: f64, p: &PhysicalParams) -> f64 {
    let prefactor = p.v_rx / (PI * p.r_v * p.r_v);
    let spread = 4.0 * d_tot * t;
    let val = prefactor / (PI * spread).sqrt() * (-(d_x - v_eff * t).powi(2) / spread).exp();
    val.clamp(0.0, 1.0)
}

/// Probability that a released molecule is inside the receiver volume `t`
/// seconds after release at axial separation `d_x`.
pub fn impulse_response(t: f64, d_x: f64, p: &PhysicalParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    Ok(response_raw(
        t,
        d_x,
        effective_velocity(p),
        total_diffusion(p),
        p,
    ))
}

/// `P_j`: the response sampled `j - 1` slots after release.
///
/// # Panics
/// If `j == 0`.
pub fn slot_arrival_probability(j: usize, d_x: f64, p: &PhysicalParams) -> f64 {
    assert!(j >= 1, "slot offsets start at 1");
    let t = (j - 1) as f64 * p.bit_interval() + p.sampling_instant();
    let v = response_raw(t, d_x, effective_velocity(p), total_diffusion(p), p);
    if v < p.isi_epsilon {
        0.0
    } else {
        v
    }
}

/// `[P_1, P_2, ..., P_M]` where every entry past `M` would fall below
/// `isi_epsilon` on the decaying side of the pulse. Values on the rising
/// side below the cut are reported as zero but do not end the tail.
pub fn arrival_probabilities(d_x: f64, p: &PhysicalParams) -> Vec<f64> {
    let v_eff = effective_velocity(p);
    let d_tot = total_diffusion(p);
    let tb = p.bit_interval();
    let ts = p.sampling_instant();
    let mut out = Vec::new();
    let mut prev = 0.0;
    for j in 0..MAX_MEMORY_SLOTS {
        let raw = response_raw(j as f64 * tb + ts, d_x, v_eff, d_tot, p);
        if raw < p.isi_epsilon {
            if j > 0 && raw <= prev {
                break;
            }
            out.push(0.0);
        } else {
            out.push(raw);
        }
        prev = raw;
    }
    while out.len() > 1 && *out.last().unwrap() == 0.0 {
        out.pop();
    }
    if out.is_empty() {
        out.push(0.0);
    }
    out
}
