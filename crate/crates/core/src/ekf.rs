//! Extended Kalman filter for the receiver position.
//!
//! State `L = [X, Y, Z]`, identity observation model. All matrix arithmetic
//! goes through the small counted kernels below so that every phase of an
//! iteration reports its multiplications and additions.
//!
//! Counting convention (dense, no structure exploited):
//! * 3x3 by 3x3 product: 27 mults, 18 adds; 3x3 sum or difference: 9 adds
//! * 3x3 by 3-vector product: 9 mults, 6 adds; vector sum: 3 adds
//! * inverse by adjugate: 9 cofactors at 2 mults + 1 add each, determinant
//!   by full cofactor expansion (9 mults, 5 adds), one reciprocal (not
//!   counted) and 9 scalings (9 mults)
//! * `I - K` counts as a dense difference
//! * state transition uses the precomputed constant `kappa T / (4 mu)`
//! * symmetrization is bookkeeping and is not counted

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::PhysicalParams;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCount {
    pub mults: u64,
    pub adds: u64,
}

impl OpCount {
    fn bump(&mut self, mults: u64, adds: u64) {
        self.mults += mults;
        self.adds += adds;
    }
}

impl std::ops::Add for OpCount {
    type Output = OpCount;
    fn add(self, o: OpCount) -> OpCount {
        OpCount {
            mults: self.mults + o.mults,
            adds: self.adds + o.adds,
        }
    }
}

impl std::ops::Sub for OpCount {
    type Output = OpCount;
    fn sub(self, o: OpCount) -> OpCount {
        OpCount {
            mults: self.mults - o.mults,
            adds: self.adds - o.adds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PredictedState,
    PredictedCovariance,
    KalmanGain,
    UpdatedState,
    UpdatedCovariance,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::PredictedState,
        Phase::PredictedCovariance,
        Phase::KalmanGain,
        Phase::UpdatedState,
        Phase::UpdatedCovariance,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Phase::PredictedState => "predicted state",
            Phase::PredictedCovariance => "predicted covariance",
            Phase::KalmanGain => "Kalman gain",
            Phase::UpdatedState => "updated state",
            Phase::UpdatedCovariance => "updated covariance",
        }
    }

    /// Per-iteration counts as tabulated in the reference complexity table.
    pub fn reference(self) -> OpCount {
        let (mults, adds) = match self {
            Phase::PredictedState => (3, 3),
            Phase::PredictedCovariance => (54, 45),
            Phase::KalmanGain => (63, 36),
            Phase::UpdatedState => (9, 12),
            Phase::UpdatedCovariance => (27, 27),
        };
        OpCount { mults, adds }
    }
}

/// Cumulative counters per phase. The Jacobian evaluation is tracked
/// separately and is not part of the per-iteration total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub predicted_state: OpCount,
    pub predicted_covariance: OpCount,
    pub kalman_gain: OpCount,
    pub updated_state: OpCount,
    pub updated_covariance: OpCount,
    pub jacobian: OpCount,
}

impl Counters {
    pub fn get(&self, phase: Phase) -> OpCount {
        match phase {
            Phase::PredictedState => self.predicted_state,
            Phase::PredictedCovariance => self.predicted_covariance,
            Phase::KalmanGain => self.kalman_gain,
            Phase::UpdatedState => self.updated_state,
            Phase::UpdatedCovariance => self.updated_covariance,
        }
    }

    pub fn total(&self) -> OpCount {
        Phase::ALL
            .iter()
            .fold(OpCount::default(), |acc, &ph| acc + self.get(ph))
    }
}

fn mat_mul(a: &Mat3, b: &Mat3, c: &mut OpCount) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c.bump(27, 18);
    out
}

fn mat_add(a: &Mat3, b: &Mat3, c: &mut OpCount) -> Mat3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    c.bump(0, 9);
    out
}

fn mat_sub(a: &Mat3, b: &Mat3, c: &mut OpCount) -> Mat3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] -= b[i][j];
        }
    }
    c.bump(0, 9);
    out
}

fn mat_vec(a: &Mat3, v: &Vec3, c: &mut OpCount) -> Vec3 {
    c.bump(9, 6);
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

fn vec_add(a: &Vec3, b: &Vec3, c: &mut OpCount) -> Vec3 {
    c.bump(0, 3);
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn vec_sub(a: &Vec3, b: &Vec3, c: &mut OpCount) -> Vec3 {
    c.bump(0, 3);
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn symmetrize(a: &Mat3) -> Mat3 {
    let mut s = *a;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let m = 0.5 * (a[i][j] + a[j][i]);
            s[i][j] = m;
            s[j][i] = m;
        }
    }
    s
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Adjugate inverse. Fails when `|det|` is negligible against the scale of
/// the entries.
fn inverse(a: &Mat3, c: &mut OpCount) -> Result<Mat3> {
    let cof =
        |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    // adj[i][j] = cofactor of a[j][i]
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    c.bump(18, 9);
    let det = determinant(a);
    c.bump(9, 5);
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !det.is_finite() || scale == 0.0 || det.abs() <= 1e-14 * scale.powi(3) {
        return Err(Error::SingularInnovation(det));
    }
    let r = 1.0 / det;
    let mut out = adj;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= r;
        }
    }
    c.bump(9, 0);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationMode {
    /// Noisy observations of the true receiver position.
    #[default]
    Feedback,
    /// Noisy copies of the filter's own one-step prediction.
    Update,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessNoise {
    /// `Q = 2 D_rx T I`, the variance of one Wiener increment.
    #[default]
    Variance,
    /// `Q = sqrt(2 D_rx T) I` as printed.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkfConfig {
    pub mode: ObservationMode,
    /// Per-axis observation noise standard deviation (m).
    pub sigma_obs: f64,
    pub process_noise: ProcessNoise,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            mode: ObservationMode::Feedback,
            sigma_obs: 1e-6,
            process_noise: ProcessNoise::Variance,
        }
    }
}

/// Constants of the drift model shared by `f` and its Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftModel {
    /// `kappa T / (4 mu)`.
    pub c: f64,
    pub r_v2: f64,
}

impl DriftModel {
    pub fn new(p: &PhysicalParams) -> Self {
        Self {
            c: p.kappa * p.t / (4.0 * p.mu),
            r_v2: p.r_v * p.r_v,
        }
    }

    fn apply(&self, l: &Vec3, c: &mut OpCount) -> Vec3 {
        let r2 = l[1] * l[1] + l[2] * l[2];
        c.bump(3, 3);
        [l[0] + self.c * (self.r_v2 - r2), l[1], l[2]]
    }

    fn jacobian(&self, l: &Vec3, c: &mut OpCount) -> Mat3 {
        c.bump(4, 0);
        let g = -2.0 * self.c;
        [[1.0, g * l[1], g * l[2]], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }
}

/// `f(L) = [X + kappa/(4 mu) (R_v^2 - Y^2 - Z^2) T, Y, Z]`.
pub fn state_transition(l: &Vec3, p: &PhysicalParams) -> Vec3 {
    DriftModel::new(p).apply(l, &mut OpCount::default())
}

/// Rows `[1, -kappa Y T/(2 mu), -kappa Z T/(2 mu)], [0,1,0], [0,0,1]`.
pub fn jacobian(l: &Vec3, p: &PhysicalParams) -> Mat3 {
    DriftModel::new(p).jacobian(l, &mut OpCount::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub estimate: Vec3,
    pub covariance: Mat3,
    pub mode: ObservationMode,
    pub q: Mat3,
    pub r: Mat3,
    pub counters: Counters,
    drift: DriftModel,
    predicted: bool,
}

pub fn process_noise(p: &PhysicalParams, conv: ProcessNoise) -> Mat3 {
    let v = 2.0 * p.d_rx * p.t;
    let q = match conv {
        ProcessNoise::Variance => v,
        ProcessNoise::Literal => v.sqrt(),
    };
    diag(q)
}

pub fn diag(v: f64) -> Mat3 {
    [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]]
}

impl EkfState {
    /// Starts at the expected initial position with covariance `Q`.
    pub fn new(initial: Vec3, p: &PhysicalParams, cfg: &EkfConfig) -> Self {
        let q = process_noise(p, cfg.process_noise);
        Self {
            estimate: initial,
            covariance: q,
            mode: cfg.mode,
            q,
            r: diag(cfg.sigma_obs * cfg.sigma_obs),
            counters: Counters::default(),
            drift: DriftModel::new(p),
            predicted: false,
        }
    }

    pub fn predict(&mut self) {
        let c = &mut self.counters;
        let f = self.drift.jacobian(&self.estimate, &mut c.jacobian);
        self.estimate = self.drift.apply(&self.estimate, &mut c.predicted_state);
        let fp = mat_mul(&f, &self.covariance, &mut c.predicted_covariance);
        let fpf = mat_mul(&fp, &transpose(&f), &mut c.predicted_covariance);
        self.covariance = symmetrize(&mat_add(&fpf, &self.q, &mut c.predicted_covariance));
        self.predicted = true;
    }

    /// Gain `K = P (P + R)^-1`, then state and covariance correction. On a
    /// singular innovation covariance the state is left untouched.
    pub fn update(&mut self, z: &Vec3) -> Result<()> {
        if !self.predicted {
            return Err(Error::UpdateWithoutPredict);
        }
        let mut gain_ops = OpCount::default();
        let s = mat_add(&self.covariance, &self.r, &mut gain_ops);
        let s_inv = inverse(&s, &mut gain_ops)?;
        let k = mat_mul(&self.covariance, &s_inv, &mut gain_ops);
        let c = &mut self.counters;
        c.kalman_gain = c.kalman_gain + gain_ops;

        let innov = vec_sub(z, &self.estimate, &mut c.updated_state);
        let corr = mat_vec(&k, &innov, &mut c.updated_state);
        self.estimate = vec_add(&self.estimate, &corr, &mut c.updated_state);

        let i_k = mat_sub(&IDENTITY, &k, &mut c.updated_covariance);
        self.covariance = symmetrize(&mat_mul(&i_k, &self.covariance, &mut c.updated_covariance));
        self.predicted = false;
        Ok(())
    }

    /// Feedback mode observes `truth`; update mode observes the current
    /// estimate (the one-step prediction once `predict` has run). Both add
    /// `N(0, R)` noise per axis.
    pub fn observe<R: Rng + ?Sized>(&self, truth: &Vec3, rng: &mut R) -> Vec3 {
        let base = match self.mode {
            ObservationMode::Feedback => *truth,
            ObservationMode::Update => self.estimate,
        };
        let mut out = base;
        for (i, o) in out.iter_mut().enumerate() {
            let sd = self.r[i][i].sqrt();
            if sd > 0.0 {
                *o += Normal::new(0.0, sd).expect("finite sigma").sample(rng);
            }
        }
        out
    }

    /// Axial distance from the estimate to a known transmitter position.
    pub fn predicted_distance(&self, l_tx: &Vec3) -> f64 {
        (self.estimate[0] - l_tx[0]).abs()
    }
}

pub fn mean_abs_error(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

/// Eigenvalues of a symmetric 3x3 matrix (trigonometric closed form),
/// ascending.
pub fn symmetric_eigenvalues(a: &Mat3) -> [f64; 3] {
    let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
    if p1 == 0.0 {
        let mut e = [a[0][0], a[1][1], a[2][2]];
        e.sort_by(f64::total_cmp);
        return e;
    }
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *a;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (a[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let r = (determinant(&b) / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e3, e2, e1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn low_flow() -> PhysicalParams {
        PhysicalParams {
            kappa: 5.2e2,
            ..PhysicalParams::default()
        }
    }

    #[test]
    fn transition_examples() {
        let p = low_flow();
        let on_axis = state_transition(&[0.0, 0.0, 0.0], &p);
        assert!((on_axis[0] - p.kappa * p.r_v * p.r_v * p.t / (4.0 * p.mu)).abs() < 1e-22);
        let wall = [3e-5, p.r_v, 0.0];
        assert_eq!(state_transition(&wall, &p), wall);
        let l = state_transition(&[0.0, 5e-6, 0.0], &p);
        assert!((l[0] - 7.5e-10).abs() < 1e-22, "{}", l[0]);
        assert_eq!(&l[1..], &[5e-6, 0.0]);
    }

    #[test]
    fn jacobian_on_axis_is_identity() {
        let p = low_flow();
        assert_eq!(jacobian(&[1e-4, 0.0, 0.0], &p), IDENTITY);
        assert_eq!(determinant(&jacobian(&[1e-4, 3e-6, -2e-6], &p)), 1.0);
    }

    #[test]
    fn predict_unit_covariance() {
        let p = PhysicalParams {
            kappa: 0.0,
            ..low_flow()
        };
        let mut f = EkfState::new([0.0; 3], &p, &EkfConfig::default());
        let q = f.q[0][0];
        f.covariance = IDENTITY;
        f.predict();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 + q } else { 0.0 };
                assert!((f.covariance[i][j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_noise_predict_is_deterministic() {
        let p = PhysicalParams {
            d_rx: 1e-300,
            ..low_flow()
        };
        let mut f = EkfState::new([0.0; 3], &p, &EkfConfig::default());
        f.q = [[0.0; 3]; 3];
        f.covariance = [[0.0; 3]; 3];
        f.predict();
        assert_eq!(f.covariance, [[0.0; 3]; 3]);
        assert_eq!(f.estimate, state_transition(&[0.0; 3], &p));
    }

    #[test]
    fn phase_counts_per_iteration() {
        let p = PhysicalParams::default();
        let mut f = EkfState::new([1e-4, 5e-6, 5e-6], &p, &EkfConfig::default());
        f.predict();
        f.update(&[1e-4, 5e-6, 5e-6]).unwrap();
        let c = f.counters;
        assert_eq!(c.predicted_state, OpCount { mults: 3, adds: 3 });
        assert_eq!(
            c.predicted_covariance,
            OpCount {
                mults: 54,
                adds: 45
            }
        );
        assert_eq!(
            c.kalman_gain,
            OpCount {
                mults: 63,
                adds: 41
            }
        );
        assert_eq!(c.updated_state, OpCount { mults: 9, adds: 12 });
        assert_eq!(
            c.updated_covariance,
            OpCount {
                mults: 27,
                adds: 27
            }
        );
        assert_eq!(
            c.total(),
            OpCount {
                mults: 156,
                adds: 128
            }
        );
    }

    #[test]
    fn update_limits() {
        let p = PhysicalParams::default();
        let cfg = EkfConfig {
            sigma_obs: 0.0,
            ..EkfConfig::default()
        };
        let mut f = EkfState::new([1e-4, 0.0, 0.0], &p, &cfg);
        f.predict();
        let z = [1.2e-4, 1e-6, -1e-6];
        f.update(&z).unwrap();
        for i in 0..3 {
            assert!((f.estimate[i] - z[i]).abs() < 1e-18);
            for j in 0..3 {
                assert!(f.covariance[i][j].abs() < 1e-25);
            }
        }

        let cfg = EkfConfig {
            sigma_obs: 1e6,
            ..EkfConfig::default()
        };
        let mut f = EkfState::new([1e-4, 0.0, 0.0], &p, &cfg);
        f.predict();
        let before = f.estimate;
        f.update(&[5.0, 5.0, 5.0]).unwrap();
        for i in 0..3 {
            assert!((f.estimate[i] - before[i]).abs() <= 1e-6 * before[0].abs());
        }
    }

    #[test]
    fn update_requires_predict() {
        let p = PhysicalParams::default();
        let mut f = EkfState::new([0.0; 3], &p, &EkfConfig::default());
        assert!(matches!(
            f.update(&[0.0; 3]),
            Err(Error::UpdateWithoutPredict)
        ));
    }

    #[test]
    fn singular_innovation_is_reported() {
        let p = PhysicalParams::default();
        let cfg = EkfConfig {
            sigma_obs: 0.0,
            ..EkfConfig::default()
        };
        let mut f = EkfState::new([0.0; 3], &p, &cfg);
        f.q = [[0.0; 3]; 3];
        f.covariance = [[0.0; 3]; 3];
        f.predict();
        let before = f.clone();
        assert!(matches!(
            f.update(&[0.0; 3]),
            Err(Error::SingularInnovation(_))
        ));
        assert_eq!(f.estimate, before.estimate);
    }

    #[test]
    fn update_mode_with_zero_noise_is_self_consistent() {
        let p = PhysicalParams::default();
        let cfg = EkfConfig {
            mode: ObservationMode::Update,
            sigma_obs: 0.0,
            ..EkfConfig::default()
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let mut f = EkfState::new([1e-4, 2e-6, 0.0], &p, &cfg);
        f.predict();
        let pred = f.estimate;
        let z = f.observe(&[0.0; 3], &mut rng);
        assert_eq!(z, pred);
        f.update(&z).unwrap();
        assert_eq!(f.estimate, pred);
    }

    #[test]
    fn distance_and_error_helpers() {
        let p = PhysicalParams::default();
        let mut f = EkfState::new([1e-5, 0.0, 0.0], &p, &EkfConfig::default());
        assert_eq!(f.predicted_distance(&[1e-5, 3.0, 4.0]), 0.0);
        f.estimate = [1.1e-4, 7.0, -2.0];
        assert!((f.predicted_distance(&[1e-5, 0.0, 0.0]) - 1e-4).abs() < 1e-18);
        assert!((mean_abs_error(&[1e-6, -1e-6, 1e-6]).unwrap() - 1e-6).abs() < 1e-21);
        assert_eq!(mean_abs_error(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(mean_abs_error(&[]).is_err());
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        let a = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let e = symmetric_eigenvalues(&a);
        for (got, want) in e.iter().zip([1.0, 3.0, 5.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
