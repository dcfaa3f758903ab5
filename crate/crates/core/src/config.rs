//! Run configuration: TOML schema, defaults, validation.
//!
//! Every section is optional and every key has a default, so an empty file
//! resolves to the standard parameter set. Unknown keys are rejected with a
//! closest-match suggestion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ekf::{EkfConfig, ObservationMode, ProcessNoise};
use crate::error::{Error, Result};
use crate::link::{CountModel, DEFAULT_P_MIN};
use crate::physics::{sphere_volume, DiffusionMode, PhysicalParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub viscosity: f64,
    pub pressure_gradient: f64,
    pub vessel_radius: f64,
    pub vessel_length: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub molecular_diffusion: f64,
    pub tx_diffusion: f64,
    pub rx_diffusion: f64,
    pub tx_radius: f64,
    pub rx_radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rx_volume: Option<f64>,
    pub step_interval: f64,
    pub steps_per_bit: u32,
    pub diffusion_mode: DiffusionMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_instant: Option<f64>,
    pub isi_epsilon: f64,
    pub ratio_margin: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        let p = PhysicalParams::default();
        Self {
            viscosity: p.mu,
            pressure_gradient: p.kappa,
            vessel_radius: p.r_v,
            vessel_length: p.l_vessel,
            eta: None,
            molecular_diffusion: p.d_m,
            tx_diffusion: p.d_tx,
            rx_diffusion: p.d_rx,
            tx_radius: p.r_tx,
            rx_radius: p.r_rx,
            rx_volume: None,
            step_interval: p.t,
            steps_per_bit: p.steps_per_bit,
            diffusion_mode: p.diffusion_mode,
            sampling_instant: None,
            isi_epsilon: p.isi_epsilon,
            ratio_margin: p.ratio_margin,
        }
    }
}

impl PhysicsSection {
    pub fn params(&self) -> PhysicalParams {
        PhysicalParams {
            mu: self.viscosity,
            kappa: self.pressure_gradient,
            r_v: self.vessel_radius,
            l_vessel: self.vessel_length,
            eta: self.eta.unwrap_or(self.viscosity),
            d_m: self.molecular_diffusion,
            d_tx: self.tx_diffusion,
            d_rx: self.rx_diffusion,
            r_tx: self.tx_radius,
            r_rx: self.rx_radius,
            v_rx: self
                .rx_volume
                .unwrap_or_else(|| sphere_volume(self.rx_radius)),
            t: self.step_interval,
            steps_per_bit: self.steps_per_bit,
            diffusion_mode: self.diffusion_mode,
            t_samp: self.sampling_instant,
            isi_epsilon: self.isi_epsilon,
            ratio_margin: self.ratio_margin,
        }
    }
}

/// Named starting geometries. The figure captions place the terminals at
/// radial offsets of 40-60 um, outside a 10 um vessel; the presets keep the
/// axial coordinates and scale the radial ones by 1/10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Tracking figures: tx (0, 6, 6) um, rx (100, 5, 5) um.
    #[default]
    Tracking,
    /// Link figures: tx (0, 6, 6) um, rx (75, 4, 4) um.
    Link,
}

impl Preset {
    pub fn positions(self) -> ([f64; 3], [f64; 3]) {
        match self {
            Preset::Tracking => ([0.0, 6e-6, 6e-6], [1e-4, 5e-6, 5e-6]),
            Preset::Link => ([0.0, 6e-6, 6e-6], [7.5e-5, 4e-6, 4e-6]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rx: Option<[f64; 3]>,
}

impl InitialSection {
    pub fn positions(&self) -> ([f64; 3], [f64; 3]) {
        let (tx, rx) = self.preset.positions();
        (self.tx.unwrap_or(tx), self.rx.unwrap_or(rx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfSection {
    pub mode: ObservationMode,
    pub sigma_obs: f64,
    pub process_noise: ProcessNoise,
}

impl Default for EkfSection {
    fn default() -> Self {
        let c = EkfConfig::default();
        Self {
            mode: c.mode,
            sigma_obs: c.sigma_obs,
            process_noise: c.process_noise,
        }
    }
}

impl EkfSection {
    pub fn config(&self) -> EkfConfig {
        EkfConfig {
            mode: self.mode,
            sigma_obs: self.sigma_obs,
            process_noise: self.process_noise,
        }
    }
}

/// Which distance the receiver uses when designing its thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    /// The transmitter's (possibly estimated) distance.
    #[default]
    Predicted,
    /// The true distance.
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    /// Expected bit-1 count under power control.
    pub target: f64,
    /// Received count over counting-noise variance. Ignored when
    /// `noise_scale` is given.
    pub snr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    pub count_model: CountModel,
    pub constant_levels: Vec<f64>,
    pub p_min: f64,
    pub threshold_source: ThresholdSource,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            target: 150.0,
            snr: 15.0,
            noise_scale: None,
            count_model: CountModel::Binomial,
            constant_levels: vec![8e4, 1e5],
            p_min: DEFAULT_P_MIN,
            threshold_source: ThresholdSource::Predicted,
        }
    }
}

impl LinkSection {
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale.unwrap_or(1.0 / self.snr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Bits per sweep point.
    pub trials: u64,
    /// Bits per independent Monte Carlo batch.
    pub batch_bits: u64,
    /// Filter iterations for the tracking experiments.
    pub steps: usize,
    /// Operating distance for single-distance experiments (m).
    pub distance: f64,
    pub distances: Vec<f64>,
    /// Explicit threshold grid; derived from the statistics when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    /// Filter steps between the distance samples that drive one slot.
    pub ekf_stride: usize,
    /// Filter steps after which the sweep tracker restarts from the known
    /// initial position.
    pub ekf_horizon: usize,
    /// Slot count for the exhaustive error enumeration.
    pub exact_slots: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seed: None,
            trials: 100_000,
            batch_bits: 12_500,
            steps: 100_000,
            distance: 1.5e-4,
            distances: (0..=8).map(|i| 1e-4 + i as f64 * 1.25e-5).collect(),
            thresholds: None,
            ekf_stride: 1,
            ekf_horizon: 1000,
            exact_slots: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub physics: PhysicsSection,
    pub initial: InitialSection,
    pub ekf: EkfSection,
    pub link: LinkSection,
    pub experiment: ExperimentSection,
}

const SECTIONS: [(&str, &[&str]); 5] = [
    (
        "physics",
        &[
            "viscosity",
            "pressure_gradient",
            "vessel_radius",
            "vessel_length",
            "eta",
            "molecular_diffusion",
            "tx_diffusion",
            "rx_diffusion",
            "tx_radius",
            "rx_radius",
            "rx_volume",
            "step_interval",
            "steps_per_bit",
            "diffusion_mode",
            "sampling_instant",
            "isi_epsilon",
            "ratio_margin",
        ],
    ),
    ("initial", &["preset", "tx", "rx"]),
    ("ekf", &["mode", "sigma_obs", "process_noise"]),
    (
        "link",
        &[
            "target",
            "snr",
            "noise_scale",
            "count_model",
            "constant_levels",
            "p_min",
            "threshold_source",
        ],
    ),
    (
        "experiment",
        &[
            "seed",
            "trials",
            "batch_bits",
            "steps",
            "distance",
            "distances",
            "thresholds",
            "ekf_stride",
            "ekf_horizon",
            "exact_slots",
        ],
    ),
];

fn suggest(key: &str, known: &[&str]) -> Option<String> {
    known
        .iter()
        .map(|k| (strsim::jaro_winkler(key, k), *k))
        .filter(|(s, _)| *s > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.to_string())
}

fn unknown_key(path: &str, key: &str, known: &[&str]) -> String {
    match suggest(key, known) {
        Some(s) => format!("unknown key `{path}{key}` (did you mean `{s}`?)"),
        None => format!(
            "unknown key `{path}{key}`; expected one of {}",
            known.join(", ")
        ),
    }
}

/// Every unrecognized key in the document, with suggestions. A key placed
/// at top level that belongs to a section is pointed to that section.
fn unknown_keys(doc: &toml::Table) -> Vec<String> {
    let names: Vec<&str> = SECTIONS.iter().map(|(n, _)| *n).collect();
    let mut out = Vec::new();
    for (key, value) in doc {
        match SECTIONS.iter().find(|(n, _)| n == key) {
            Some((name, fields)) => {
                if let toml::Value::Table(t) = value {
                    for k in t.keys() {
                        if !fields.contains(&k.as_str()) {
                            out.push(unknown_key(&format!("{name}."), k, fields));
                        }
                    }
                }
            }
            None => {
                let home = SECTIONS
                    .iter()
                    .find(|(_, f)| f.contains(&key.as_str()))
                    .map(|(n, _)| *n);
                let all: Vec<&str> = SECTIONS
                    .iter()
                    .flat_map(|(_, f)| f.iter().copied())
                    .collect();
                out.push(match (home, suggest(key, &all)) {
                    (Some(h), _) => format!("unknown top-level key `{key}` (it belongs in [{h}])"),
                    (None, Some(s)) => {
                        let h = SECTIONS
                            .iter()
                            .find(|(_, f)| f.contains(&s.as_str()))
                            .unwrap()
                            .0;
                        format!("unknown key `{key}` (did you mean `{h}.{s}`?)")
                    }
                    (None, None) => unknown_key("", key, &names),
                });
            }
        }
    }
    out
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let unknown = unknown_keys(&doc);
        if !unknown.is_empty() {
            return Err(Error::Config(unknown.join("; ")));
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn params(&self) -> PhysicalParams {
        self.physics.params()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = match self.params().validate() {
            Ok(()) => Vec::new(),
            Err(Error::InvalidParams(v)) => v,
            Err(e) => vec![e.to_string()],
        };
        let r_v = self.physics.vessel_radius;
        let (tx, rx) = self.initial.positions();
        for (name, pos) in [("initial.tx", tx), ("initial.rx", rx)] {
            if pos.iter().any(|v| !v.is_finite()) {
                bad.push(format!("{name} must be finite"));
            } else if pos[1].hypot(pos[2]) > r_v {
                bad.push(format!(
                    "{name} radial offset {:e} m lies outside the vessel radius {r_v:e} m",
                    pos[1].hypot(pos[2])
                ));
            }
        }
        if !(self.ekf.sigma_obs >= 0.0 && self.ekf.sigma_obs.is_finite()) {
            bad.push(format!(
                "ekf.sigma_obs must be non-negative, got {}",
                self.ekf.sigma_obs
            ));
        }
        let l = &self.link;
        if !(l.target > 0.0 && l.target.is_finite()) {
            bad.push(format!("link.target must be positive, got {}", l.target));
        }
        if l.noise_scale.is_none() && !(l.snr > 0.0) {
            bad.push(format!("link.snr must be positive, got {}", l.snr));
        }
        if let Some(ns) = l.noise_scale {
            if !(ns >= 0.0 && ns.is_finite()) {
                bad.push(format!("link.noise_scale must be non-negative, got {ns}"));
            }
        }
        if l.constant_levels
            .iter()
            .any(|n| !(*n >= 1.0 && n.is_finite()))
        {
            bad.push("link.constant_levels must all be at least 1".into());
        }
        if !(l.p_min > 0.0) {
            bad.push(format!("link.p_min must be positive, got {}", l.p_min));
        }
        let x = &self.experiment;
        if x.trials < 1 {
            bad.push("experiment.trials must be at least 1".into());
        }
        if x.batch_bits < 1 {
            bad.push("experiment.batch_bits must be at least 1".into());
        }
        if x.steps < 1 {
            bad.push("experiment.steps must be at least 1".into());
        }
        if !(x.distance > 0.0) {
            bad.push(format!(
                "experiment.distance must be positive, got {}",
                x.distance
            ));
        }
        if x.distances.is_empty() || x.distances.iter().any(|d| !(*d > 0.0)) {
            bad.push("experiment.distances must be a non-empty list of positive values".into());
        }
        if let Some(t) = &x.thresholds {
            if t.is_empty() {
                bad.push("experiment.thresholds must not be empty".into());
            }
        }
        if x.ekf_stride < 1 {
            bad.push("experiment.ekf_stride must be at least 1".into());
        }
        if x.ekf_horizon < x.ekf_stride {
            bad.push(format!(
                "experiment.ekf_horizon ({}) must be at least experiment.ekf_stride ({})",
                x.ekf_horizon, x.ekf_stride
            ));
        }
        if !(1..=20).contains(&x.exact_slots) {
            bad.push(format!(
                "experiment.exact_slots must be in 1..=20, got {}",
                x.exact_slots
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_table_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        let p = cfg.params();
        assert_eq!(p.mu, 1.3e-3);
        assert_eq!(p.r_v, 1e-5);
        assert_eq!(p.r_rx, 2.5e-6);
        assert_eq!(p.l_vessel, 4e-3);
        assert_eq!(p.d_m, 9e-9);
        assert_eq!(p.d_tx, 2e-9);
        assert_eq!(p.d_rx, 1e-10);
        assert_eq!(p.t, 1e-4);
        assert_eq!(p.eta, p.mu);
        assert!((p.v_rx - sphere_volume(2.5e-6)).abs() < 1e-30);
    }

    #[test]
    fn nonpositive_radius_is_named() {
        let err = RunConfig::from_toml_str("[physics]\nvessel_radius = 0.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("R_v"), "{msg}");
    }

    #[test]
    fn every_violation_is_listed() {
        let err = RunConfig::from_toml_str(
            "[physics]\nvessel_radius = -1.0\nstep_interval = 0.0\n[link]\ntarget = -3.0\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        for needle in ["R_v", "(T)", "link.target"] {
            assert!(msg.contains(needle), "{needle} missing from {msg}");
        }
    }

    #[test]
    fn misspelled_key_gets_suggestion() {
        let err = RunConfig::from_toml_str("[physics]\nvescel_radius = 1e-5\n").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("vescel_radius") && msg.contains("vessel_radius"),
            "{msg}"
        );
        let err = RunConfig::from_toml_str("vescel_radius = 1e-5\n").unwrap_err();
        assert!(err.to_string().contains("physics.vessel_radius"), "{err}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = RunConfig::from_toml_str("[physics]\nviscosity = = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn resolved_echo_round_trips() {
        let cfg =
            RunConfig::from_toml_str("[link]\nsnr = 10.0\n[initial]\npreset = \"link\"\n").unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert!((back.link.noise_scale() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn presets_lie_inside_vessel() {
        for p in [Preset::Tracking, Preset::Link] {
            let (tx, rx) = p.positions();
            assert!(tx[1].hypot(tx[2]) < 1e-5 && rx[1].hypot(rx[2]) < 1e-5);
        }
        let err = RunConfig::from_toml_str("[initial]\nrx = [0.0, 6e-5, 6e-5]\n").unwrap_err();
        assert!(err.to_string().contains("initial.rx"));
    }
}
