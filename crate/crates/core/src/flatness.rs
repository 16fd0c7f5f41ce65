//! Inversion of `a = u·z + g + f_e(η, u)` into thrust, attitude, body rates
//! and body angular accelerations.
//!
//! Two paths exist. When the error model does not depend on the input the
//! commanded acceleration follows in closed form and its time derivatives
//! subtract the model's total derivatives from the reference jerk and snap.
//! When it does, the commanded acceleration vector solves a 3×3 nonlinear
//! system by Newton's method and its derivatives come from the implicit
//! function theorem applied to `F(u, t) = u + g + f_e(η(t), u) − a_d(t) = 0`.
//!
//! State derivatives entering the chain rule (η̇, η̈) are always taken from
//! the reference, so every inversion is a pure function of its arguments.

use std::fmt;
use std::str::FromStr;

use crate::errmodel::{LinearErrorModel, StateVec};
use crate::trajgen::TrajectoryPoint;
use crate::{Error, Mat3, Result, Vec3, Vec6};

/// Smallest admissible ‖u·z‖ in m/s².
pub const U_MIN: f64 = 1e-3;

/// Closeness of `z` to the singular directions of the yaw-frame construction.
const ATTITUDE_SINGULARITY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    /// Nominal mass, kg.
    pub mass: f64,
    /// Gravity magnitude, m/s²; the world gravity vector is (0, 0, −g).
    pub gravity: f64,
    /// Planar pitch inertia, kg·m².
    pub inertia: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            mass: 4.19,
            gravity: 10.18,
            inertia: 0.123,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("inertia", self.inertia),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn gravity_vector(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, -self.gravity)
    }
}

/// Feedforward generation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// No error model.
    FF1,
    /// Model in the acceleration balance only.
    FF2,
    /// Model solved numerically, derivatives without model terms.
    FF3,
    /// Model with derivative propagation, input-independent.
    FF4,
    /// Model solved numerically with derivative propagation.
    FF5,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::FF1,
        Strategy::FF2,
        Strategy::FF3,
        Strategy::FF4,
        Strategy::FF5,
    ];

    pub fn uses_model(self) -> bool {
        self != Strategy::FF1
    }

    pub fn solves_numerically(self) -> bool {
        matches!(self, Strategy::FF3 | Strategy::FF5)
    }

    pub fn model_dynamics(self) -> bool {
        matches!(self, Strategy::FF4 | Strategy::FF5)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            Strategy::FF1 => 1,
            Strategy::FF2 => 2,
            Strategy::FF3 => 3,
            Strategy::FF4 => 4,
            Strategy::FF5 => 5,
        };
        write!(f, "FF{n}")
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FF1" => Ok(Strategy::FF1),
            "FF2" => Ok(Strategy::FF2),
            "FF3" => Ok(Strategy::FF3),
            "FF4" => Ok(Strategy::FF4),
            "FF5" => Ok(Strategy::FF5),
            _ => Err(Error::InvalidArgument(format!("unknown strategy `{s}`"))),
        }
    }
}

/// Output of an inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatControl {
    /// Body acceleration (thrust / nominal mass), m/s².
    pub u: f64,
    /// Body z-axis.
    pub z: Vec3,
    pub u_dot: f64,
    pub z_dot: Vec3,
    pub u_ddot: f64,
    pub z_ddot: Vec3,
    /// Body rates (p, q, r).
    pub omega: Vec3,
    /// Body angular acceleration.
    pub omega_dot: Vec3,
    /// Commanded acceleration vector u·z.
    pub u_vec: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Condition number of I + ∂f_e/∂u above which the system is singular.
    pub max_condition: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 50,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSolution {
    pub u_vec: Vec3,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Solves `u + g + f_e(η, u) − a_cmd = 0` for u. Without a guess the
/// model-free solution `a_cmd − g` seeds the iteration.
pub fn newton_solve(
    a_cmd: &Vec3,
    model: &LinearErrorModel,
    eta: &StateVec,
    guess: Option<Vec3>,
    gravity: f64,
    opts: &NewtonOptions,
) -> Result<NewtonSolution> {
    let g_world = Vec3::new(0.0, 0.0, -gravity);
    let mut u = guess.unwrap_or(a_cmd - g_world);
    if u.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite newton guess".into()));
    }
    let mut iterations = 0;
    loop {
        let d = model.derivatives(eta, &u)?;
        let residual = u + g_world + d.value - a_cmd;
        let norm = residual.norm();
        if norm <= opts.tol {
            return Ok(NewtonSolution {
                u_vec: u,
                iterations,
                residual_norm: norm,
            });
        }
        if iterations >= opts.max_iter || !norm.is_finite() {
            return Err(Error::NoConvergence {
                iterations,
                residual: norm,
            });
        }
        let jac = Mat3::identity() + d.jacobians.d_u;
        u -= solve_checked(&jac, &residual, opts.max_condition)?;
        iterations += 1;
    }
}

pub fn condition_number(m: &Mat3) -> f64 {
    let s = m.singular_values();
    let (hi, lo) = (s.max(), s.min());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn solve_checked(m: &Mat3, rhs: &Vec3, max_condition: f64) -> Result<Vec3> {
    let condition = condition_number(m);
    if condition.is_nan() || condition > max_condition {
        return Err(Error::SingularJacobian { condition });
    }
    m.lu()
        .solve(rhs)
        .ok_or(Error::SingularJacobian { condition })
}

fn state_and_rates(r: &TrajectoryPoint) -> (StateVec, Vec6, Vec6) {
    let eta = StateVec::new(r.pos, r.vel);
    let eta_dot = StateVec::new(r.vel, r.acc).to_vector();
    let eta_ddot = StateVec::new(r.acc, r.jerk).to_vector();
    (eta, eta_dot, eta_ddot)
}

/// Closed-form inversion for models treated as independent of the input.
///
/// An input-dependent model is evaluated at the model-free command
/// `a_d − g`; only its state partials enter the derivative terms.
pub fn invert_independent(
    r: &TrajectoryPoint,
    model: Option<&LinearErrorModel>,
    params: &PhysicalParams,
    use_model_dynamics: bool,
) -> Result<FlatControl> {
    let nominal = r.acc - params.gravity_vector();
    let Some(model) = model else {
        return assemble(nominal, r.jerk, r.snap);
    };
    let (eta, eta_dot, eta_ddot) = state_and_rates(r);
    let d = model.derivatives(&eta, &nominal)?;
    let u_vec = nominal - d.value;
    if !use_model_dynamics {
        return assemble(u_vec, r.jerk, r.snap);
    }
    let fe_dot = d.jacobians.d_eta * eta_dot;
    let fe_ddot = d.hessians.eta_eta_form(&eta_dot, &eta_dot) + d.jacobians.d_eta * eta_ddot;
    assemble(u_vec, r.jerk - fe_dot, r.snap - fe_ddot)
}

/// Numerical inversion for input-dependent models.
///
/// With `use_model_dynamics` clear the derivatives of u fall back to the
/// reference jerk and snap.
pub fn invert_dependent(
    r: &TrajectoryPoint,
    model: &LinearErrorModel,
    params: &PhysicalParams,
    prev_solution: Option<Vec3>,
    use_model_dynamics: bool,
) -> Result<FlatControl> {
    invert_dependent_with(
        r,
        model,
        params,
        prev_solution,
        use_model_dynamics,
        &NewtonOptions::default(),
    )
}

pub fn invert_dependent_with(
    r: &TrajectoryPoint,
    model: &LinearErrorModel,
    params: &PhysicalParams,
    prev_solution: Option<Vec3>,
    use_model_dynamics: bool,
    opts: &NewtonOptions,
) -> Result<FlatControl> {
    let (eta, eta_dot, eta_ddot) = state_and_rates(r);
    let sol = newton_solve(&r.acc, model, &eta, prev_solution, params.gravity, opts)?;
    let u_vec = sol.u_vec;
    if !use_model_dynamics {
        return assemble(u_vec, r.jerk, r.snap);
    }

    let d = model.derivatives(&eta, &u_vec)?;
    let f_u = Mat3::identity() + d.jacobians.d_u;
    let f_t = d.jacobians.d_eta * eta_dot - r.jerk;
    let u_dot = -solve_checked(&f_u, &f_t, opts.max_condition)?;

    let f_tt = d.hessians.eta_eta_form(&eta_dot, &eta_dot) + d.jacobians.d_eta * eta_ddot - r.snap;
    let curvature =
        d.hessians.u_u_form(&u_dot, &u_dot) + 2.0 * d.hessians.u_eta_form(&u_dot, &eta_dot);
    let u_ddot = solve_checked(&f_u, &(-curvature - f_tt), opts.max_condition)?;

    assemble(u_vec, u_dot, u_ddot)
}

/// Splits u·z and its first two derivatives into magnitude and direction.
fn assemble(u_vec: Vec3, u_vec_dot: Vec3, u_vec_ddot: Vec3) -> Result<FlatControl> {
    let u = u_vec.norm();
    if u.is_nan() || u < U_MIN {
        return Err(Error::DegenerateThrust { norm: u, min: U_MIN });
    }
    let z = u_vec / u;
    let u_dot = u_vec_dot.dot(&z);
    let z_dot = (u_vec_dot - u_dot * z) / u;
    let u_ddot = u_vec_ddot.dot(&z) + u * z_dot.dot(&z_dot);
    let z_ddot = (u_vec_ddot - u_ddot * z - 2.0 * u_dot * z_dot) / u;
    let omega = body_rates(&z, &z_dot)?;
    let omega_dot = body_ang_accel(&z, &z_dot, &z_ddot, &omega)?;
    Ok(FlatControl {
        u,
        z,
        u_dot,
        z_dot,
        u_ddot,
        z_ddot,
        omega,
        omega_dot,
        u_vec,
    })
}

/// Body x and y axes for zero yaw (heading along world x).
fn body_frame(z: &Vec3) -> Result<(Vec3, Vec3)> {
    if z.z < -1.0 + ATTITUDE_SINGULARITY {
        return Err(Error::DegenerateAttitude(format!("body z-axis {z:?} points down")));
    }
    let y = z.cross(&Vec3::x());
    let n = y.norm();
    if n < ATTITUDE_SINGULARITY {
        return Err(Error::DegenerateAttitude(format!(
            "body z-axis {z:?} aligned with the heading"
        )));
    }
    let y_b = y / n;
    Ok((y_b.cross(z), y_b))
}

/// Body rates from ż at zero yaw and zero yaw rate.
pub fn body_rates(z: &Vec3, z_dot: &Vec3) -> Result<Vec3> {
    let (x_b, y_b) = body_frame(z)?;
    Ok(Vec3::new(-z_dot.dot(&y_b), z_dot.dot(&x_b), 0.0))
}

/// Body angular acceleration from z̈ = ω̇ × z + ω × ż.
pub fn body_ang_accel(z: &Vec3, z_dot: &Vec3, z_ddot: &Vec3, omega: &Vec3) -> Result<Vec3> {
    let (x_b, y_b) = body_frame(z)?;
    let omega_world = omega.x * x_b + omega.y * y_b + omega.z * z;
    let v = z_ddot - omega_world.cross(z_dot);
    Ok(Vec3::new(-v.dot(&y_b), v.dot(&x_b), 0.0))
}

/// Dispatches to the inversion path for `strategy`.
pub fn ff_generate(
    strategy: Strategy,
    r: &TrajectoryPoint,
    model: Option<&LinearErrorModel>,
    params: &PhysicalParams,
    prev_solution: Option<Vec3>,
) -> Result<FlatControl> {
    if strategy == Strategy::FF1 {
        return invert_independent(r, None, params, false);
    }
    let model = model.ok_or_else(|| {
        Error::InvalidArgument(format!("strategy {strategy} needs an error model"))
    })?;
    match strategy {
        Strategy::FF1 => unreachable!(),
        Strategy::FF2 => invert_independent(r, Some(model), params, false),
        Strategy::FF3 => invert_dependent(r, model, params, prev_solution, false),
        Strategy::FF4 => invert_independent(r, Some(model), params, true),
        Strategy::FF5 => invert_dependent(r, model, params, prev_solution, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::errmodel::FeatureMap;
    use nalgebra::{DMatrix, Rotation3};

    const G: f64 = 10.18;

    fn params() -> PhysicalParams {
        PhysicalParams::default()
    }

    fn constant_x_model(c: f64) -> LinearErrorModel {
        let mut w = DMatrix::zeros(7, 3);
        w[(6, 0)] = c;
        LinearErrorModel::new(FeatureMap::velocity_input(), w).unwrap()
    }

    /// f_e = k u through the 6D map.
    fn gain_model(k: f64) -> LinearErrorModel {
        let mut w = DMatrix::zeros(7, 3);
        for i in 0..3 {
            w[(3 + i, i)] = k;
        }
        LinearErrorModel::new(FeatureMap::velocity_input(), w).unwrap()
    }

    #[test]
    fn hover_without_model() {
        let c = invert_independent(&TrajectoryPoint::hover(Vec3::zeros(), 0.0), None, &params(), false)
            .unwrap();
        assert_eq!(c.u, G);
        assert_eq!(c.z, Vec3::z());
        assert_eq!(c.omega, Vec3::zeros());
        assert_eq!(c.omega_dot, Vec3::zeros());
    }

    #[test]
    fn hover_with_constant_offset() {
        let m = constant_x_model(-4.1);
        let c = invert_independent(&TrajectoryPoint::hover(Vec3::zeros(), 0.0), Some(&m), &params(), true)
            .unwrap();
        let expect = Vec3::new(4.1, 0.0, G);
        assert!((c.u_vec - expect).amax() < 1e-14);
        assert!((c.u - expect.norm()).abs() < 1e-12);
        assert!((c.u - 10.974_625).abs() < 1e-6);
        assert!((c.z - Vec3::new(0.373_589, 0.0, 0.927_594)).amax() < 1e-6);
    }

    #[test]
    fn drag_model_with_constant_velocity() {
        let mut w = DMatrix::zeros(7, 3);
        w[(0, 0)] = -3.1;
        let m = LinearErrorModel::new(FeatureMap::velocity_input(), w).unwrap();
        let mut r = TrajectoryPoint::hover(Vec3::zeros(), 0.0);
        r.vel = Vec3::x();
        let c = invert_independent(&r, Some(&m), &params(), true).unwrap();
        assert!((c.u_vec - Vec3::new(3.1, 0.0, G)).amax() < 1e-14);
        assert_eq!(c.omega, Vec3::zeros());
        assert_eq!(c.z_dot, Vec3::zeros());
    }

    #[test]
    fn degenerate_thrust() {
        let mut r = TrajectoryPoint::hover(Vec3::zeros(), 0.0);
        r.acc = Vec3::new(0.0, 0.0, -G);
        assert!(matches!(
            invert_independent(&r, None, &params(), false),
            Err(Error::DegenerateThrust { .. })
        ));
    }

    #[test]
    fn newton_without_model_is_immediate() {
        let m = LinearErrorModel::zeros(FeatureMap::velocity_input());
        let a = Vec3::new(1.0, -2.0, 0.5);
        let s = newton_solve(&a, &m, &StateVec::default(), None, G, &NewtonOptions::default()).unwrap();
        assert!(s.iterations <= 1);
        assert_eq!(s.u_vec, a - Vec3::new(0.0, 0.0, -G));
    }

    #[test]
    fn newton_mass_mismatch_closed_form() {
        let k: f64 = 4.19 / 6.19 - 1.0;
        assert!((k + 0.323102).abs() < 1e-6);
        let m = gain_model(k);
        let s = newton_solve(&Vec3::zeros(), &m, &StateVec::default(), None, G, &NewtonOptions::default())
            .unwrap();
        let expect = Vec3::new(0.0, 0.0, G) / (1.0 + k);
        assert!((s.u_vec - expect).amax() < 1e-12);
        assert!((s.u_vec.z - 15.039_19).abs() < 1e-5);
        assert!(s.residual_norm <= 1e-12);
        // Thrust from the nominal mass accelerates the true mass at exactly g.
        assert!((4.19 * s.u_vec.z / 6.19 - G).abs() < 1e-12);
        assert!((4.19 * s.u_vec.z - 63.0).abs() < 0.02);

        let s = newton_solve(&Vec3::x(), &m, &StateVec::default(), None, G, &NewtonOptions::default())
            .unwrap();
        assert!((s.u_vec - Vec3::new(1.0, 0.0, G) / (1.0 + k)).amax() < 1e-12);
    }

    #[test]
    fn newton_complete_negation_is_singular() {
        let m = gain_model(-1.0);
        assert!(matches!(
            newton_solve(&Vec3::x(), &m, &StateVec::default(), None, G, &NewtonOptions::default()),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn newton_iteration_cap() {
        // Strongly nonlinear model with a single iteration allowed.
        let mut w = DMatrix::zeros(55, 3);
        w[(10 + 45 - 1, 2)] = 0.05;
        let m = LinearErrorModel::new(FeatureMap::quadratic(), w).unwrap();
        let opts = NewtonOptions {
            max_iter: 1,
            ..Default::default()
        };
        assert!(matches!(
            newton_solve(&Vec3::new(0.0, 0.0, 5.0), &m, &StateVec::default(), None, G, &opts),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn body_rates_examples() {
        assert_eq!(body_rates(&Vec3::z(), &Vec3::zeros()).unwrap(), Vec3::zeros());
        let w = body_rates(&Vec3::z(), &Vec3::new(0.7, 0.0, 0.0)).unwrap();
        assert!((w - Vec3::new(0.0, 0.7, 0.0)).amax() < 1e-15);
        assert!(body_rates(&-Vec3::z(), &Vec3::zeros()).is_err());
        assert!(body_rates(&Vec3::x(), &Vec3::zeros()).is_err());
    }

    #[test]
    fn body_rates_match_rotation_oracle() {
        // Rotate the body frame by exp([ω] dt) and compare z(t+dt) with z + ż dt.
        let z = Vec3::new(0.3, -0.2, 0.9).normalize();
        let raw = Vec3::new(0.4, 1.1, -0.3);
        let z_dot = raw - raw.dot(&z) * z;
        let w = body_rates(&z, &z_dot).unwrap();
        let (x_b, y_b) = body_frame(&z).unwrap();
        let r = nalgebra::Matrix3::from_columns(&[x_b, y_b, z]);
        let dt = 1e-6;
        let step = Rotation3::new(w * dt);
        let z_next = r * (step * Vec3::z());
        let fd = (z_next - z) / dt;
        assert!((fd - z_dot).amax() < 1e-5, "{fd} vs {z_dot}");
        assert!(w.z == 0.0);
    }

    #[test]
    fn body_ang_accel_examples() {
        let zero = body_ang_accel(&Vec3::z(), &Vec3::zeros(), &Vec3::zeros(), &Vec3::zeros()).unwrap();
        assert_eq!(zero, Vec3::zeros());
        let a = body_ang_accel(&Vec3::z(), &Vec3::zeros(), &Vec3::new(2.5, 0.0, 0.0), &Vec3::zeros())
            .unwrap();
        assert!((a - Vec3::new(0.0, 2.5, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn body_ang_accel_reconstructs_z_ddot() {
        let z = Vec3::new(-0.2, 0.25, 0.95).normalize();
        let raw = Vec3::new(0.5, -0.3, 0.2);
        let z_dot = raw - raw.dot(&z) * z;
        let raw2 = Vec3::new(-1.0, 2.0, 0.4);
        // Enforce zᵀz̈ = −żᵀż.
        let z_ddot = raw2 - raw2.dot(&z) * z - z_dot.norm_squared() * z;
        let w = body_rates(&z, &z_dot).unwrap();
        let a = body_ang_accel(&z, &z_dot, &z_ddot, &w).unwrap();
        let (x_b, y_b) = body_frame(&z).unwrap();
        let ww = w.x * x_b + w.y * y_b;
        let aw = a.x * x_b + a.y * y_b;
        let rebuilt = aw.cross(&z) + ww.cross(&z_dot);
        assert!((rebuilt - z_ddot).amax() < 1e-10);
    }

    #[test]
    fn ff_generate_requires_model() {
        let r = TrajectoryPoint::hover(Vec3::zeros(), 0.0);
        assert!(ff_generate(Strategy::FF1, &r, None, &params(), None).is_ok());
        for s in &Strategy::ALL[1..] {
            assert!(ff_generate(*s, &r, None, &params(), None).is_err());
        }
    }

    #[test]
    fn strategy_parse_and_display() {
        for s in Strategy::ALL {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("ff5".parse::<Strategy>().unwrap(), Strategy::FF5);
        assert!("FF6".parse::<Strategy>().is_err());
    }
}
