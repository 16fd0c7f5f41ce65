//! Reference trajectories with analytic derivatives up to snap.
//!
//! Two families are provided: rest-to-rest degree-7 polynomial segments and
//! periodic analytic primitives (circle, figure-8). Both are evaluated
//! without finite differences.

use std::io::Write;

use nalgebra::{SMatrix, SVector};

use crate::{Error, Result, Vec3};

const POLY_COEFFS: usize = 8;

/// Flat output (position) and its first four time derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    pub jerk: Vec3,
    pub snap: Vec3,
}

impl TrajectoryPoint {
    /// Stationary point at `pos`.
    pub fn hover(pos: Vec3, t: f64) -> Self {
        TrajectoryPoint {
            t,
            pos,
            vel: Vec3::zeros(),
            acc: Vec3::zeros(),
            jerk: Vec3::zeros(),
            snap: Vec3::zeros(),
        }
    }

    /// Derivative of order `k` (0 = position, 4 = snap).
    pub fn derivative(&self, k: usize) -> Vec3 {
        match k {
            0 => self.pos,
            1 => self.vel,
            2 => self.acc,
            3 => self.jerk,
            4 => self.snap,
            _ => panic!("derivative order {k} not tracked"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && (0..5).all(|k| self.derivative(k).iter().all(|c| c.is_finite()))
    }
}

/// Anything that can be sampled for a [`TrajectoryPoint`].
pub trait Trajectory {
    fn duration(&self) -> f64;
    fn sample(&self, t: f64) -> Result<TrajectoryPoint>;
}

/// Degree-7 polynomial per axis on `[0, duration]`, coefficients in
/// ascending degree.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySegment {
    coeffs: [[f64; POLY_COEFFS]; 3],
    duration: f64,
}

impl PolySegment {
    pub fn from_coeffs(coeffs: [[f64; POLY_COEFFS]; 3], duration: f64) -> Result<Self> {
        check_duration(duration)?;
        Ok(PolySegment { coeffs, duration })
    }

    /// Segment from `start` to `end` with zero velocity, acceleration and
    /// jerk at both ends.
    pub fn rest_to_rest(start: Vec3, end: Vec3, duration: f64) -> Result<Self> {
        check_duration(duration)?;

        // Solved on normalised time s = t / T, then rescaled: c_n = ĉ_n / T^n.
        let mut bc = SMatrix::<f64, POLY_COEFFS, POLY_COEFFS>::zeros();
        for k in 0..4 {
            for n in 0..POLY_COEFFS {
                bc[(k, n)] = basis_derivative(n, k, 0.0);
                bc[(4 + k, n)] = basis_derivative(n, k, 1.0);
            }
        }
        let lu = bc.lu();

        let mut coeffs = [[0.0; POLY_COEFFS]; 3];
        for axis in 0..3 {
            let mut rhs = SVector::<f64, POLY_COEFFS>::zeros();
            rhs[0] = start[axis];
            rhs[4] = end[axis];
            let sol = lu
                .solve(&rhs)
                .ok_or_else(|| Error::InvalidArgument("boundary system is singular".into()))?;
            let mut scale = 1.0;
            for n in 0..POLY_COEFFS {
                coeffs[axis][n] = sol[n] / scale;
                scale *= duration;
            }
        }
        Ok(PolySegment { coeffs, duration })
    }

    pub fn coeffs(&self) -> &[[f64; POLY_COEFFS]; 3] {
        &self.coeffs
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Position and derivatives up to snap at `t`, evaluated analytically.
    pub fn eval(&self, t: f64) -> Result<TrajectoryPoint> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(Error::OutOfRange {
                t,
                duration: self.duration,
            });
        }
        let mut derivs = [Vec3::zeros(); 5];
        for (k, d) in derivs.iter_mut().enumerate() {
            for axis in 0..3 {
                d[axis] = poly_derivative(&self.coeffs[axis], k, t);
            }
        }
        Ok(TrajectoryPoint {
            t,
            pos: derivs[0],
            vel: derivs[1],
            acc: derivs[2],
            jerk: derivs[3],
            snap: derivs[4],
        })
    }
}

impl Trajectory for PolySegment {
    fn duration(&self) -> f64 {
        self.duration
    }

    fn sample(&self, t: f64) -> Result<TrajectoryPoint> {
        self.eval(t)
    }
}

fn check_duration(duration: f64) -> Result<()> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive and finite, got {duration}"
        )));
    }
    Ok(())
}

/// k-th derivative of t^n at t.
fn basis_derivative(n: usize, k: usize, t: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    falling_factorial(n, k) * t.powi((n - k) as i32)
}

fn falling_factorial(n: usize, k: usize) -> f64 {
    ((n - k + 1)..=n).map(|i| i as f64).product()
}

fn poly_derivative(coeffs: &[f64; POLY_COEFFS], k: usize, t: f64) -> f64 {
    // Horner over the differentiated coefficients.
    let mut acc = 0.0;
    for n in (k..POLY_COEFFS).rev() {
        acc = acc * t + coeffs[n] * falling_factorial(n, k);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    Circle,
    /// Lissajous figure-8: x = r sin ωt, y = r sin ωt cos ωt.
    Figure8,
}

/// Periodic horizontal trajectory at constant altitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub radius: f64,
    pub rate: f64,
    pub center: Vec3,
    duration: f64,
}

impl Primitive {
    /// One full period starting at t = 0.
    pub fn new(kind: PrimitiveKind, radius: f64, rate: f64, center: Vec3) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius must be positive, got {radius}"
            )));
        }
        if !(rate != 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "angular rate must be nonzero, got {rate}"
            )));
        }
        Ok(Primitive {
            kind,
            radius,
            rate,
            center,
            duration: 2.0 * std::f64::consts::PI / rate.abs(),
        })
    }

    pub fn with_duration(mut self, duration: f64) -> Result<Self> {
        check_duration(duration)?;
        self.duration = duration;
        Ok(self)
    }

    pub fn eval(&self, t: f64) -> TrajectoryPoint {
        let r = self.radius;
        let w = self.rate;
        let mut d = [Vec3::zeros(); 5];
        match self.kind {
            PrimitiveKind::Circle => {
                // k-th derivative of (cos wt, sin wt) is w^k (cos(wt + kπ/2), sin(wt + kπ/2)).
                for (k, dk) in d.iter_mut().enumerate() {
                    let phase = w * t + k as f64 * std::f64::consts::FRAC_PI_2;
                    let gain = r * w.powi(k as i32);
                    dk[0] = gain * phase.cos();
                    dk[1] = gain * phase.sin();
                }
            }
            PrimitiveKind::Figure8 => {
                // y = (r/2) sin 2wt.
                for (k, dk) in d.iter_mut().enumerate() {
                    let shift = k as f64 * std::f64::consts::FRAC_PI_2;
                    dk[0] = r * w.powi(k as i32) * (w * t + shift).sin();
                    dk[1] = 0.5 * r * (2.0 * w).powi(k as i32) * (2.0 * w * t + shift).sin();
                }
            }
        }
        d[0] += self.center;
        TrajectoryPoint {
            t,
            pos: d[0],
            vel: d[1],
            acc: d[2],
            jerk: d[3],
            snap: d[4],
        }
    }
}

impl Trajectory for Primitive {
    fn duration(&self) -> f64 {
        self.duration
    }

    fn sample(&self, t: f64) -> Result<TrajectoryPoint> {
        Ok(self.eval(t))
    }
}

pub fn analytic_primitive(
    kind: PrimitiveKind,
    radius: f64,
    rate: f64,
    center: Vec3,
    t: f64,
) -> Result<TrajectoryPoint> {
    Ok(Primitive::new(kind, radius, rate, center)?.eval(t))
}

/// Samples at `0, h, 2h, …` up to and including the end of the trajectory.
pub fn sample_uniform<T: Trajectory + ?Sized>(traj: &T, h: f64) -> Result<Vec<TrajectoryPoint>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("sample step must be positive, got {h}")));
    }
    let duration = traj.duration();
    let steps = (duration / h + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(steps + 2);
    for i in 0..=steps {
        out.push(traj.sample((i as f64 * h).min(duration))?);
    }
    if duration - steps as f64 * h > 1e-9 * h.max(1.0) {
        out.push(traj.sample(duration)?);
    }
    Ok(out)
}

/// Per-derivative maxima of the ∞-norm over a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeMaxima {
    pub pos: f64,
    pub vel: f64,
    pub acc: f64,
    pub jerk: f64,
    pub snap: f64,
}

impl DerivativeMaxima {
    pub fn as_array(&self) -> [f64; 5] {
        [self.pos, self.vel, self.acc, self.jerk, self.snap]
    }
}

pub fn max_abs_derivatives(samples: &[TrajectoryPoint]) -> Result<DerivativeMaxima> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mut m = [0.0f64; 5];
    for p in samples {
        for (k, mk) in m.iter_mut().enumerate() {
            *mk = mk.max(p.derivative(k).amax());
        }
    }
    Ok(DerivativeMaxima {
        pos: m[0],
        vel: m[1],
        acc: m[2],
        jerk: m[3],
        snap: m[4],
    })
}

/// CSV with columns `t,px,py,pz,vx,vy,vz,ax,ay,az,jx,jy,jz,sx,sy,sz`.
pub fn write_csv<W: Write>(samples: &[TrajectoryPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    for prefix in ["p", "v", "a", "j", "s"] {
        for axis in ["x", "y", "z"] {
            header.push(format!("{prefix}{axis}"));
        }
    }
    w.write_record(&header)?;
    for p in samples {
        let mut row = vec![fmt17(p.t)];
        for k in 0..5 {
            row.extend(p.derivative(k).iter().map(|&c| fmt17(c)));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

/// 17 significant digits.
pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
