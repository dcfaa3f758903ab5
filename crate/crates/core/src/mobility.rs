//! Drift-diffusion random walks of the two terminals.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::physics::{velocity_at, PhysicalParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tx,
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NanomachineState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub diffusion: f64,
    pub radius: f64,
    pub role: Role,
}

impl NanomachineState {
    pub fn new(pos: [f64; 3], diffusion: f64, radius: f64, role: Role) -> Self {
        Self {
            x: pos[0],
            y: pos[1],
            z: pos[2],
            diffusion,
            radius,
            role,
        }
    }

    pub fn transmitter(pos: [f64; 3], p: &PhysicalParams) -> Self {
        Self::new(pos, p.d_tx, p.r_tx, Role::Tx)
    }

    pub fn receiver(pos: [f64; 3], p: &PhysicalParams) -> Self {
        Self::new(pos, p.d_rx, p.r_rx, Role::Rx)
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

pub fn perpendicular_distance(s: &NanomachineState) -> f64 {
    s.y.hypot(s.z)
}

/// Specular reflection across the wall circle of radius `r_v`; repeated
/// folding handles steps longer than the vessel diameter.
pub fn reflect_into_vessel(y: f64, z: f64, r_v: f64) -> (f64, f64) {
    let r = y.hypot(z);
    if r <= r_v {
        return (y, z);
    }
    let m = r % (2.0 * r_v);
    let folded = if m > r_v { 2.0 * r_v - m } else { m };
    let s = folded / r;
    (y * s, z * s)
}

/// One explicit Euler step: velocity taken at the pre-step radius, Gaussian
/// increments of variance `2 D T` on each axis, then wall reflection.
pub fn step<R: Rng + ?Sized>(
    s: &NanomachineState,
    p: &PhysicalParams,
    rng: &mut R,
) -> NanomachineState {
    let drift = velocity_at(perpendicular_distance(s), p) * p.t;
    let (bx, by, bz) = if s.diffusion > 0.0 {
        let n = Normal::new(0.0, (2.0 * s.diffusion * p.t).sqrt()).expect("finite sigma");
        (n.sample(rng), n.sample(rng), n.sample(rng))
    } else {
        (0.0, 0.0, 0.0)
    };
    let (y, z) = reflect_into_vessel(s.y + by, s.z + bz, p.r_v);
    NanomachineState {
        x: s.x + bx + drift,
        y,
        z,
        ..*s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub k: usize,
    pub state: NanomachineState,
    /// Axial flow velocity at this position (m/s).
    pub velocity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    fn start(s: NanomachineState, p: &PhysicalParams) -> Self {
        Self {
            points: vec![TrajectoryPoint {
                k: 0,
                state: s,
                velocity: velocity_at(perpendicular_distance(&s), p),
            }],
        }
    }

    fn push(&mut self, s: NanomachineState, p: &PhysicalParams) {
        let k = self.points.len();
        self.points.push(TrajectoryPoint {
            k,
            state: s,
            velocity: velocity_at(perpendicular_distance(&s), p),
        });
    }

    pub fn last(&self) -> &NanomachineState {
        &self
            .points
            .last()
            .expect("trajectory starts non-empty")
            .state
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRun {
    pub tx: Trajectory,
    pub rx: Trajectory,
    /// `|X_rx - X_tx|` at every step, including step 0.
    pub d_x: Vec<f64>,
}

/// Runs both terminals for `k_steps`, each on its own RNG stream.
pub fn simulate_pair<R: Rng + ?Sized>(
    k_steps: usize,
    init_tx: NanomachineState,
    init_rx: NanomachineState,
    p: &PhysicalParams,
    rng_tx: &mut R,
    rng_rx: &mut R,
) -> PairRun {
    let mut tx = Trajectory::start(init_tx, p);
    let mut rx = Trajectory::start(init_rx, p);
    let mut d_x = Vec::with_capacity(k_steps + 1);
    d_x.push((init_rx.x - init_tx.x).abs());
    let (mut a, mut b) = (init_tx, init_rx);
    for _ in 0..k_steps {
        a = step(&a, p, rng_tx);
        b = step(&b, p, rng_rx);
        tx.push(a, p);
        rx.push(b, p);
        d_x.push((b.x - a.x).abs());
    }
    PairRun { tx, rx, d_x }
}

pub const TRAJECTORY_COLUMNS: [&str; 10] = [
    "k", "x_tx", "y_tx", "z_tx", "v_tx", "x_rx", "y_rx", "z_rx", "v_rx", "d_x",
];

pub fn write_pair_csv<W: Write>(w: W, run: &PairRun) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRAJECTORY_COLUMNS)?;
    for ((a, b), d) in run.tx.points.iter().zip(&run.rx.points).zip(&run.d_x) {
        out.write_record(&[
            a.k.to_string(),
            fmt(a.state.x),
            fmt(a.state.y),
            fmt(a.state.z),
            fmt(a.velocity),
            fmt(b.state.x),
            fmt(b.state.y),
            fmt(b.state.z),
            fmt(b.velocity),
            fmt(*d),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perpendicular_distance_examples() {
        let p = PhysicalParams::default();
        let mut s = NanomachineState::receiver([0.0; 3], &p);
        assert_eq!(perpendicular_distance(&s), 0.0);
        s.y = 3e-6;
        s.z = 4e-6;
        assert!((perpendicular_distance(&s) - 5e-6).abs() < 1e-20);
        s.y = -5e-6;
        s.z = 0.0;
        assert_eq!(perpendicular_distance(&s), 5e-6);
    }

    #[test]
    fn noiseless_on_axis_advances_by_peak_velocity() {
        let p = PhysicalParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = NanomachineState::new([0.0; 3], 0.0, 1e-6, Role::Rx);
        let n = step(&s, &p, &mut rng);
        assert_eq!(n.x, velocity_at(0.0, &p) * p.t);
        assert_eq!((n.y, n.z), (0.0, 0.0));
    }

    #[test]
    fn noiseless_at_wall_is_static() {
        let p = PhysicalParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = NanomachineState::new([1e-5, p.r_v, 0.0], 0.0, 1e-6, Role::Rx);
        assert_eq!(step(&s, &p, &mut rng), s);
    }

    #[test]
    fn reflection_examples() {
        let (y, z) = reflect_into_vessel(1.2e-5, 0.0, 1e-5);
        assert!((y - 0.8e-5).abs() < 1e-18 && z == 0.0);
        let (y, z) = reflect_into_vessel(0.0, -1.5e-5, 1e-5);
        assert!(y == 0.0 && (z + 0.5e-5).abs() < 1e-18);
        let (y, z) = reflect_into_vessel(3.5e-5, 0.0, 1e-5);
        assert!((y - 0.5e-5).abs() < 1e-18 && z == 0.0);
        assert_eq!(reflect_into_vessel(1e-6, 2e-6, 1e-5), (1e-6, 2e-6));
    }

    #[test]
    fn equal_deterministic_terminals_keep_separation() {
        let p = PhysicalParams::default();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = NanomachineState::new([0.0, 2e-6, 1e-6], 0.0, 1e-6, Role::Tx);
        let b = NanomachineState::new([1e-4, 2e-6, 1e-6], 0.0, 1e-6, Role::Rx);
        let run = simulate_pair(100, a, b, &p, &mut r1, &mut r2);
        assert_eq!(run.d_x.len(), 101);
        for d in &run.d_x {
            assert!((d - 1e-4).abs() < 1e-15);
        }
        assert_eq!(run.tx.points.last().unwrap().k, 100);
    }

    #[test]
    fn csv_header_and_rows() {
        let p = PhysicalParams::default();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = NanomachineState::transmitter([0.0, 6e-6, 6e-6], &p);
        let b = NanomachineState::receiver([1e-4, 5e-6, 5e-6], &p);
        let run = simulate_pair(5, a, b, &p, &mut r1, &mut r2);
        let mut buf = Vec::new();
        write_pair_csv(&mut buf, &run).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,x_tx,y_tx,z_tx,v_tx,x_rx,y_rx,z_rx,v_rx,d_x"
        );
        assert_eq!(lines.count(), 6);
    }
}
