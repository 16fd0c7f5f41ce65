//! Planar multirotor in the vertical x–z plane.
//!
//! The body z-axis is `(−sin θ, 0, cos θ)` in world coordinates so the 3D
//! inversion code runs unchanged with `y ≡ 0`. With that embedding a
//! positive pitch rate θ̇ is a negative body rate about y: `θ̇ = −ω_y`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, Vector2, Vector6};

use crate::errmodel::{FeatureMap, LinearErrorModel, StateVec, TracePoint};
use crate::flatness::{ff_generate, FlatControl, PhysicalParams, Strategy};
use crate::trajgen::{fmt17, Trajectory, TrajectoryPoint};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarState {
    pub x: f64,
    pub z: f64,
    /// Pitch, wrapped to (−π, π].
    pub theta: f64,
    pub x_dot: f64,
    pub z_dot: f64,
    pub theta_dot: f64,
}

impl PlanarState {
    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(self.x, self.z, self.theta, self.x_dot, self.z_dot, self.theta_dot)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        PlanarState {
            x: v[0],
            z: v[1],
            theta: wrap_angle(v[2]),
            x_dot: v[3],
            z_dot: v[4],
            theta_dot: v[5],
        }
    }

    /// 3D state with y ≡ 0.
    pub fn eta(&self) -> StateVec {
        StateVec::new(
            Vec3::new(self.x, 0.0, self.z),
            Vec3::new(self.x_dot, 0.0, self.z_dot),
        )
    }

    pub fn body_z(&self) -> Vec3 {
        Vec3::new(-self.theta.sin(), 0.0, self.theta.cos())
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Pitch whose body z-axis is `z` (projected on the x–z plane).
pub fn pitch_of(z: &Vec3) -> f64 {
    (-z.x).atan2(z.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarInput {
    /// Total thrust, N.
    pub thrust: f64,
    /// Pitch torque, N·m.
    pub torque: f64,
}

/// Ground-truth perturbations of the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DisturbanceSpec {
    /// ẍ −= 4.1
    pub constant_x: bool,
    /// ẍ −= 3.1 ẋ
    pub drag_x: bool,
    /// ẍ += 1.4 sin θ
    pub tilt_x: bool,
    /// z̈ −= 3.1 ż
    pub drag_z: bool,
    /// true mass = nominal + 2 kg
    pub extra_mass: bool,
}

pub const CONSTANT_X: f64 = 4.1;
pub const DRAG: f64 = 3.1;
pub const TILT_GAIN: f64 = 1.4;
pub const MASS_OFFSET: f64 = 2.0;

impl DisturbanceSpec {
    pub fn none() -> Self {
        DisturbanceSpec::default()
    }

    /// Mass used by the plant's translational dynamics.
    pub fn true_mass(&self, params: &PhysicalParams) -> f64 {
        if self.extra_mass {
            params.mass + MASS_OFFSET
        } else {
            params.mass
        }
    }
}

/// The four disturbance combinations of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DisturbanceSet {
    A,
    B,
    C,
    D,
}

impl DisturbanceSet {
    pub const ALL: [DisturbanceSet; 4] = [
        DisturbanceSet::A,
        DisturbanceSet::B,
        DisturbanceSet::C,
        DisturbanceSet::D,
    ];

    pub fn spec(self) -> DisturbanceSpec {
        match self {
            DisturbanceSet::A => DisturbanceSpec {
                constant_x: true,
                ..Default::default()
            },
            DisturbanceSet::B => DisturbanceSpec {
                constant_x: true,
                drag_x: true,
                drag_z: true,
                ..Default::default()
            },
            DisturbanceSet::C => DisturbanceSpec {
                tilt_x: true,
                extra_mass: true,
                ..Default::default()
            },
            DisturbanceSet::D => DisturbanceSpec {
                constant_x: true,
                drag_x: true,
                tilt_x: true,
                drag_z: true,
                extra_mass: true,
            },
        }
    }
}

impl std::fmt::Display for DisturbanceSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for DisturbanceSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(DisturbanceSet::A),
            "B" => Ok(DisturbanceSet::B),
            "C" => Ok(DisturbanceSet::C),
            "D" => Ok(DisturbanceSet::D),
            _ => Err(Error::InvalidArgument(format!("unknown disturbance set `{s}`"))),
        }
    }
}

/// Cascaded PD gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub kp_pos: f64,
    pub kd_pos: f64,
    pub kp_att: f64,
    pub kd_att: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            kp_pos: 10.0,
            kd_pos: 10.0,
            kp_att: 300.0,
            kd_att: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub params: PhysicalParams,
    pub gains: Gains,
    pub feedback: bool,
    pub strategy: Strategy,
    pub disturbances: DisturbanceSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            params: PhysicalParams::default(),
            gains: Gains::default(),
            feedback: false,
            strategy: Strategy::FF1,
            disturbances: DisturbanceSpec::none(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        self.params.validate()?;
        let g = &self.gains;
        for (name, v) in [
            ("kp_pos", g.kp_pos),
            ("kd_pos", g.kd_pos),
            ("kp_att", g.kp_att),
            ("kd_att", g.kd_att),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("gain {name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Time derivative of the planar state, in the layout of [`PlanarState::as_vector`].
pub fn dynamics_deriv(
    state: &PlanarState,
    input: &PlanarInput,
    dist: &DisturbanceSpec,
    params: &PhysicalParams,
) -> Vector6<f64> {
    let m = dist.true_mass(params);
    let (s, c) = state.theta.sin_cos();
    let mut ax = -input.thrust / m * s;
    let mut az = input.thrust / m * c - params.gravity;
    if dist.constant_x {
        ax -= CONSTANT_X;
    }
    if dist.drag_x {
        ax -= DRAG * state.x_dot;
    }
    if dist.tilt_x {
        ax += TILT_GAIN * s;
    }
    if dist.drag_z {
        az -= DRAG * state.z_dot;
    }
    Vector6::new(
        state.x_dot,
        state.z_dot,
        state.theta_dot,
        ax,
        az,
        input.torque / params.inertia,
    )
}

/// Classical RK4 with the input held over the step.
pub fn rk4_step(
    state: &PlanarState,
    input: &PlanarInput,
    dist: &DisturbanceSpec,
    params: &PhysicalParams,
    dt: f64,
) -> PlanarState {
    // Integrate the unwrapped angle; wrap only the result.
    let y0 = state.as_vector();
    let f = |y: &Vector6<f64>| {
        let s = PlanarState {
            x: y[0],
            z: y[1],
            theta: y[2],
            x_dot: y[3],
            z_dot: y[4],
            theta_dot: y[5],
        };
        dynamics_deriv(&s, input, dist, params)
    };
    let k1 = f(&y0);
    let k2 = f(&(y0 + 0.5 * dt * k1));
    let k3 = f(&(y0 + 0.5 * dt * k2));
    let k4 = f(&(y0 + dt * k3));
    PlanarState::from_vector(&(y0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)))
}

/// RK4 step with the controller re-evaluated at every stage. `first` is the
/// input already computed at the start of the step; `control(τ, state)`
/// gives the input at time offset τ into the step.
pub fn rk4_step_controlled<F>(
    state: &PlanarState,
    first: &PlanarInput,
    cfg: &SimConfig,
    mut control: F,
) -> Result<PlanarState>
where
    F: FnMut(f64, &PlanarState) -> Result<PlanarInput>,
{
    let (dist, params, dt) = (&cfg.disturbances, &cfg.params, cfg.dt);
    let y0 = state.as_vector();
    let at = |y: &Vector6<f64>| PlanarState {
        x: y[0],
        z: y[1],
        theta: y[2],
        x_dot: y[3],
        z_dot: y[4],
        theta_dot: y[5],
    };
    let k1 = dynamics_deriv(state, first, dist, params);
    let s2 = at(&(y0 + 0.5 * dt * k1));
    let k2 = dynamics_deriv(&s2, &control(0.5 * dt, &s2)?, dist, params);
    let s3 = at(&(y0 + 0.5 * dt * k2));
    let k3 = dynamics_deriv(&s3, &control(0.5 * dt, &s3)?, dist, params);
    let s4 = at(&(y0 + dt * k3));
    let k4 = dynamics_deriv(&s4, &control(dt, &s4)?, dist, params);
    Ok(PlanarState::from_vector(
        &(y0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)),
    ))
}

/// Pitch at which hover thrust also cancels the horizontal disturbances.
pub fn trim_pitch(dist: &DisturbanceSpec, params: &PhysicalParams) -> f64 {
    if !(dist.constant_x || dist.tilt_x) {
        return 0.0;
    }
    // At rest with z̈ = 0: F/m = g / cos θ, so ẍ(θ) = −g tan θ + disturbances.
    let ax = |theta: f64| {
        let s = PlanarState {
            theta,
            ..Default::default()
        };
        let m = dist.true_mass(params);
        let input = PlanarInput {
            thrust: m * params.gravity / theta.cos(),
            torque: 0.0,
        };
        dynamics_deriv(&s, &input, dist, params)[3]
    };
    // ẍ is strictly decreasing in θ on (−π/2, π/2) for these disturbances.
    let (mut lo, mut hi) = (-PI / 2.0 + 1e-6, PI / 2.0 - 1e-6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ax(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Initial state: at rest at the origin, trimmed in pitch whenever the
/// constant horizontal disturbance is active.
pub fn initial_state(dist: &DisturbanceSpec, params: &PhysicalParams) -> PlanarState {
    let theta = if dist.constant_x {
        trim_pitch(dist, params)
    } else {
        0.0
    };
    PlanarState {
        theta,
        ..Default::default()
    }
}

pub fn initial_state_for_set(set: DisturbanceSet, params: &PhysicalParams) -> PlanarState {
    initial_state(&set.spec(), params)
}

/// Error model that reproduces `dist` exactly over the planar feature map.
pub fn ideal_model(dist: &DisturbanceSpec, params: &PhysicalParams) -> LinearErrorModel {
    let mut w = DMatrix::zeros(8, 3);
    if dist.constant_x {
        w[(7, 0)] = -CONSTANT_X;
    }
    if dist.drag_x {
        w[(2, 0)] = -DRAG;
    }
    if dist.tilt_x {
        w[(4, 0)] = TILT_GAIN;
    }
    if dist.drag_z {
        w[(3, 2)] = -DRAG;
    }
    if dist.extra_mass {
        let k = 1.0 / params.mass - 1.0 / dist.true_mass(params);
        w[(5, 0)] = k;
        w[(6, 2)] = -k;
    }
    LinearErrorModel::new(FeatureMap::planar(params.mass), w).expect("planar weights are 8x3")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOutput {
    pub input: PlanarInput,
    /// Commanded acceleration vector u·z.
    pub u_vec: Vec3,
    pub flat: FlatControl,
    /// Thrust was negative and clamped to zero.
    pub clamped: bool,
}

/// PD on position added to the reference acceleration, feedforward
/// inversion, then PD on pitch added to the feedforward angular acceleration.
pub fn controller_step(
    reference: &TrajectoryPoint,
    state: &PlanarState,
    model: Option<&LinearErrorModel>,
    cfg: &SimConfig,
    prev_u: Option<Vec3>,
) -> Result<ControllerOutput> {
    let g = &cfg.gains;
    let mut commanded = *reference;
    if cfg.feedback {
        let eta = state.eta();
        commanded.acc += g.kp_pos * (reference.pos - eta.pos) + g.kd_pos * (reference.vel - eta.vel);
    }
    let flat = ff_generate(cfg.strategy, &commanded, model, &cfg.params, prev_u)?;

    let theta_ddot_ff = -flat.omega_dot.y;
    let theta_ddot = if cfg.feedback {
        let theta_des = pitch_of(&flat.z);
        let theta_dot_des = -flat.omega.y;
        theta_ddot_ff
            + g.kp_att * wrap_angle(theta_des - state.theta)
            + g.kd_att * (theta_dot_des - state.theta_dot)
    } else {
        theta_ddot_ff
    };

    let thrust = cfg.params.mass * flat.u;
    let clamped = thrust < 0.0;
    Ok(ControllerOutput {
        input: PlanarInput {
            thrust: thrust.max(0.0),
            torque: cfg.params.inertia * theta_ddot,
        },
        u_vec: flat.u_vec,
        flat,
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub state: PlanarState,
    pub input: PlanarInput,
    pub u_vec: Vec3,
    pub reference: TrajectoryPoint,
    /// Actual minus reference position, (x, z).
    pub error: Vector2<f64>,
}

/// Per-step record of a closed-loop run at uniform spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub dt: f64,
    pub records: Vec<LogRecord>,
    pub clamp_events: usize,
}

pub const RUN_LOG_COLUMNS: [&str; 13] = [
    "t", "x", "z", "theta", "xd", "zd", "thetad", "F", "tau", "ux", "uz", "ex", "ez",
];

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Samples for regression. The input is the thrust vector actually
    /// applied, `F/m · z_b`, along the vehicle's real pitch.
    pub fn trace(&self, nominal_mass: f64) -> Vec<TracePoint> {
        self.records
            .iter()
            .map(|r| TracePoint {
                t: r.t,
                eta: r.state.eta(),
                u_vec: r.input.thrust / nominal_mass * r.state.body_z(),
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(RUN_LOG_COLUMNS)?;
        for r in &self.records {
            let s = &r.state;
            let row = [
                r.t,
                s.x,
                s.z,
                s.theta,
                s.x_dot,
                s.z_dot,
                s.theta_dot,
                r.input.thrust,
                r.input.torque,
                r.u_vec.x,
                r.u_vec.z,
                r.error.x,
                r.error.y,
            ];
            w.write_record(row.iter().map(|&v| fmt17(v)))?;
        }
        w.flush().map_err(|e| Error::io("<run log csv>", e))?;
        Ok(())
    }
}

/// Runs the closed loop over the whole trajectory. The controller is
/// evaluated at every RK4 stage, so the feedforward is not delayed by a
/// sample-and-hold. The log holds the start-of-step evaluation for
/// `t = 0, dt, …, T`.
pub fn run_trajectory<T: Trajectory + ?Sized>(
    cfg: &SimConfig,
    traj: &T,
    model: Option<&LinearErrorModel>,
) -> Result<RunLog> {
    cfg.validate()?;
    let duration = traj.duration();
    let steps = (duration / cfg.dt).round() as usize;
    if ((steps as f64) * cfg.dt - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "trajectory duration {duration} is not a multiple of dt {}",
            cfg.dt
        )));
    }

    let mut state = initial_state(&cfg.disturbances, &cfg.params);
    let mut records = Vec::with_capacity(steps + 1);
    let mut clamp_events = 0;
    let mut prev_u = None;
    for k in 0..=steps {
        let t = (k as f64 * cfg.dt).min(duration);
        let abort = |e| Error::SimAbort {
            step: k,
            source: Box::new(e),
        };
        let reference = traj.sample(t).map_err(abort)?;
        let out = controller_step(&reference, &state, model, cfg, prev_u).map_err(abort)?;
        if out.clamped {
            clamp_events += 1;
        }
        prev_u = Some(out.u_vec);
        records.push(LogRecord {
            t,
            state,
            input: out.input,
            u_vec: out.u_vec,
            reference,
            error: Vector2::new(state.x - reference.pos.x, state.z - reference.pos.z),
        });
        if k < steps {
            state = rk4_step_controlled(&state, &out.input, cfg, |dt_stage, s| {
                let r = traj.sample((t + dt_stage).min(duration))?;
                Ok(controller_step(&r, s, model, cfg, prev_u)?.input)
            })
            .map_err(abort)?;
        }
    }
    Ok(RunLog {
        dt: cfg.dt,
        records,
        clamp_events,
    })
}
