//! Learned additive acceleration-error models `f_e(η, u) = Wᵀ φ(η, u)`.
//!
//! Feature maps are evaluated on the joint 9-vector `[x, ẋ, u]`
//! (position, velocity, commanded acceleration) and provide exact first and
//! second partials; the model's Jacobians and Hessians are linear images of
//! those through `W`.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::flatness::PhysicalParams;
use crate::sim2d::RunLog;
use crate::trajgen::fmt17;
use crate::{Error, Mat3, Mat3x6, Mat6, Result, Vec3, Vec6};

/// Number of joint variables: η (6) followed by u (3).
pub const JOINT_DIM: usize = 9;
const U0: usize = 6;

pub type Joint = SVector<f64, JOINT_DIM>;
pub type JointHessian = SMatrix<f64, JOINT_DIM, JOINT_DIM>;

/// Below this commanded-acceleration norm the implied attitude is undefined.
pub const MIN_ATTITUDE_NORM: f64 = 1e-9;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Vehicle state η = [x, ẋ].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVec {
    pub pos: Vec3,
    pub vel: Vec3,
}

impl StateVec {
    pub fn new(pos: Vec3, vel: Vec3) -> Self {
        StateVec { pos, vel }
    }

    pub fn to_vector(&self) -> Vec6 {
        Vec6::new(
            self.pos.x, self.pos.y, self.pos.z, self.vel.x, self.vel.y, self.vel.z,
        )
    }

    pub fn from_vector(v: &Vec6) -> Self {
        StateVec {
            pos: Vec3::new(v[0], v[1], v[2]),
            vel: Vec3::new(v[3], v[4], v[5]),
        }
    }
}

/// Commanded acceleration vector u = u·z.
pub type InputVec = Vec3;

/// Hand-selected regression features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureMap {
    /// `[x, z, ẋ, ż, sin θ, F sin θ, F cos θ, 1]` for the planar vehicle, with
    /// θ and F recovered from the commanded acceleration and nominal mass:
    /// `F sin θ = −m u_x`, `F cos θ = m u_z`, `sin θ = −u_x / ‖u‖`.
    Planar { nominal_mass: f64 },
    /// `[ẋ, ẏ, ż, u_x, u_y, u_z, 1]`.
    VelocityInput,
    /// Constant, all nine joint variables, and every degree-2 monomial of them.
    Quadratic,
}

impl FeatureMap {
    pub fn planar(nominal_mass: f64) -> Self {
        FeatureMap::Planar { nominal_mass }
    }

    pub fn velocity_input() -> Self {
        FeatureMap::VelocityInput
    }

    pub fn quadratic() -> Self {
        FeatureMap::Quadratic
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::Planar { .. } => "planar8",
            FeatureMap::VelocityInput => "velocity_input7",
            FeatureMap::Quadratic => "quadratic55",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Planar { .. } => 8,
            FeatureMap::VelocityInput => 7,
            FeatureMap::Quadratic => 1 + JOINT_DIM + JOINT_DIM * (JOINT_DIM + 1) / 2,
        }
    }

    /// Indices of features that vary with the commanded acceleration.
    pub fn input_features(&self) -> Vec<usize> {
        match self {
            FeatureMap::Planar { .. } => vec![4, 5, 6],
            FeatureMap::VelocityInput => vec![3, 4, 5],
            FeatureMap::Quadratic => quadratic_terms()
                .enumerate()
                .filter(|(_, t)| t.iter().any(|&v| v.is_some_and(|v| v >= U0)))
                .map(|(k, _)| k)
                .collect(),
        }
    }

    /// φ(η, u) without derivatives.
    pub fn eval(&self, eta: &StateVec, u: &InputVec) -> Result<DVector<f64>> {
        match *self {
            FeatureMap::Planar { nominal_mass: m } => {
                let n = u.norm();
                if n < MIN_ATTITUDE_NORM {
                    return Err(degenerate(n));
                }
                Ok(DVector::from_vec(vec![
                    eta.pos.x,
                    eta.pos.z,
                    eta.vel.x,
                    eta.vel.z,
                    -u.x / n,
                    -m * u.x,
                    m * u.z,
                    1.0,
                ]))
            }
            FeatureMap::VelocityInput => Ok(DVector::from_vec(vec![
                eta.vel.x, eta.vel.y, eta.vel.z, u.x, u.y, u.z, 1.0,
            ])),
            FeatureMap::Quadratic => {
                let v = joint(eta, u);
                Ok(DVector::from_iterator(
                    self.dim(),
                    quadratic_terms().map(|t| {
                        t.iter().flatten().map(|&i| v[i]).product::<f64>()
                    }),
                ))
            }
        }
    }

    /// φ with exact first and second partials in the joint variables.
    pub fn jet(&self, eta: &StateVec, u: &InputVec) -> Result<FeatureJet> {
        let dim = self.dim();
        let value = self.eval(eta, u)?;
        let mut grad = vec![Joint::zeros(); dim];
        let mut hess = vec![JointHessian::zeros(); dim];
        match *self {
            FeatureMap::Planar { nominal_mass: m } => {
                grad[0][0] = 1.0;
                grad[1][2] = 1.0;
                grad[2][3] = 1.0;
                grad[3][5] = 1.0;
                let n = u.norm();
                let (n3, n5) = (n.powi(3), n.powi(5));
                // sin θ = −u_x / ‖u‖
                for j in 0..3 {
                    let dj = if j == 0 { 1.0 } else { 0.0 };
                    grad[4][U0 + j] = -(dj / n - u.x * u[j] / n3);
                    for k in 0..3 {
                        let dk = if k == 0 { 1.0 } else { 0.0 };
                        let djk = if j == k { 1.0 } else { 0.0 };
                        let second = -(dj * u[k] + dk * u[j]) / n3 - u.x * djk / n3
                            + 3.0 * u.x * u[j] * u[k] / n5;
                        hess[4][(U0 + j, U0 + k)] = -second;
                    }
                }
                grad[5][U0] = -m;
                grad[6][U0 + 2] = m;
            }
            FeatureMap::VelocityInput => {
                for i in 0..3 {
                    grad[i][3 + i] = 1.0;
                    grad[3 + i][U0 + i] = 1.0;
                }
            }
            FeatureMap::Quadratic => {
                let v = joint(eta, u);
                for (k, t) in quadratic_terms().enumerate() {
                    match t {
                        [None, None] => {}
                        [Some(i), None] => grad[k][i] = 1.0,
                        [Some(i), Some(j)] => {
                            grad[k][i] += v[j];
                            grad[k][j] += v[i];
                            hess[k][(i, j)] += 1.0;
                            hess[k][(j, i)] += 1.0;
                        }
                        [None, Some(_)] => unreachable!(),
                    }
                }
            }
        }
        Ok(FeatureJet { value, grad, hess })
    }
}

fn degenerate(n: f64) -> Error {
    Error::DegenerateAttitude(format!("commanded acceleration norm {n:e} too small"))
}

fn joint(eta: &StateVec, u: &InputVec) -> Joint {
    let mut v = Joint::zeros();
    v.fixed_rows_mut::<6>(0).copy_from(&eta.to_vector());
    v.fixed_rows_mut::<3>(U0).copy_from(u);
    v
}

/// Monomials of the quadratic map: constant, linear, then i ≤ j products.
fn quadratic_terms() -> impl Iterator<Item = [Option<usize>; 2]> {
    std::iter::once([None, None])
        .chain((0..JOINT_DIM).map(|i| [Some(i), None]))
        .chain((0..JOINT_DIM).flat_map(|i| (i..JOINT_DIM).map(move |j| [Some(i), Some(j)])))
}

/// Feature values with gradients and Hessians over `[η, u]`.
#[derive(Debug, Clone)]
pub struct FeatureJet {
    pub value: DVector<f64>,
    pub grad: Vec<Joint>,
    pub hess: Vec<JointHessian>,
}

impl FeatureJet {
    /// ∂φ/∂η, dim × 6.
    pub fn d_eta(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.grad.len(), 6, |k, j| self.grad[k][j])
    }

    /// ∂φ/∂u, dim × 3.
    pub fn d_u(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.grad.len(), 3, |k, j| self.grad[k][U0 + j])
    }

    pub fn dd_eta(&self, k: usize) -> Mat6 {
        self.hess[k].fixed_view::<6, 6>(0, 0).into_owned()
    }

    pub fn dd_u(&self, k: usize) -> Mat3 {
        self.hess[k].fixed_view::<3, 3>(U0, U0).into_owned()
    }

    /// ∂²φ_k/∂u∂η with rows indexed by u and columns by η.
    pub fn dd_u_eta(&self, k: usize) -> Mat3x6 {
        self.hess[k].fixed_view::<3, 6>(U0, 0).into_owned()
    }
}

/// First partials of `f_e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelJacobians {
    /// ∂f_e/∂η, 3 × 6.
    pub d_eta: Mat3x6,
    /// ∂f_e/∂u, 3 × 3.
    pub d_u: Mat3,
}

/// Second partials of `f_e`, one slice per output axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelHessians {
    pub eta_eta: [Mat6; 3],
    pub u_u: [Mat3; 3],
    /// `u_eta[i][(j, k)] = ∂²f_e,i / ∂u_j ∂η_k`.
    pub u_eta: [Mat3x6; 3],
}

impl ModelHessians {
    /// Contraction `H[a, b]` for each output axis over the η–η slices.
    pub fn eta_eta_form(&self, a: &Vec6, b: &Vec6) -> Vec3 {
        Vec3::from_fn(|i, _| a.dot(&(self.eta_eta[i] * b)))
    }

    pub fn u_u_form(&self, a: &Vec3, b: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| a.dot(&(self.u_u[i] * b)))
    }

    pub fn u_eta_form(&self, du: &Vec3, deta: &Vec6) -> Vec3 {
        Vec3::from_fn(|i, _| du.dot(&(self.u_eta[i] * deta)))
    }
}

/// Value, Jacobians and Hessians of `f_e` from a single feature evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDerivatives {
    pub value: Vec3,
    pub jacobians: ModelJacobians,
    pub hessians: ModelHessians,
}

/// `f_e(η, u) = Wᵀ φ(η, u)` with `W` of shape dim × 3.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearErrorModel {
    map: FeatureMap,
    weights: DMatrix<f64>,
}

impl LinearErrorModel {
    pub fn new(map: FeatureMap, weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != map.dim() || weights.ncols() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "feature map {} needs a {}x3 weight matrix, got {}x{}",
                map.name(),
                map.dim(),
                weights.nrows(),
                weights.ncols()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(LinearErrorModel { map, weights })
    }

    pub fn zeros(map: FeatureMap) -> Self {
        LinearErrorModel {
            weights: DMatrix::zeros(map.dim(), 3),
            map,
        }
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    /// True when some weight touches an input-dependent feature.
    pub fn depends_on_input(&self) -> bool {
        self.map
            .input_features()
            .into_iter()
            .any(|k| self.weights.row(k).iter().any(|&w| w != 0.0))
    }

    pub fn evaluate(&self, eta: &StateVec, u: &InputVec) -> Result<Vec3> {
        let phi = self.map.eval(eta, u)?;
        Ok(Vec3::from_fn(|i, _| self.weights.column(i).dot(&phi)))
    }

    pub fn jacobians(&self, eta: &StateVec, u: &InputVec) -> Result<ModelJacobians> {
        Ok(self.derivatives(eta, u)?.jacobians)
    }

    pub fn hessians(&self, eta: &StateVec, u: &InputVec) -> Result<ModelHessians> {
        Ok(self.derivatives(eta, u)?.hessians)
    }

    pub fn derivatives(&self, eta: &StateVec, u: &InputVec) -> Result<ModelDerivatives> {
        let jet = self.map.jet(eta, u)?;
        let mut value = Vec3::zeros();
        let mut grad = [Joint::zeros(); 3];
        let mut hess = [JointHessian::zeros(); 3];
        for k in 0..jet.value.len() {
            for i in 0..3 {
                let w = self.weights[(k, i)];
                if w == 0.0 {
                    continue;
                }
                value[i] += w * jet.value[k];
                grad[i] += w * jet.grad[k];
                hess[i] += w * jet.hess[k];
            }
        }
        let d_eta = Mat3x6::from_fn(|i, j| grad[i][j]);
        let d_u = Mat3::from_fn(|i, j| grad[i][U0 + j]);
        let hessians = ModelHessians {
            eta_eta: std::array::from_fn(|i| hess[i].fixed_view::<6, 6>(0, 0).into_owned()),
            u_u: std::array::from_fn(|i| hess[i].fixed_view::<3, 3>(U0, U0).into_owned()),
            u_eta: std::array::from_fn(|i| hess[i].fixed_view::<3, 6>(U0, 0).into_owned()),
        };
        Ok(ModelDerivatives {
            value,
            jacobians: ModelJacobians { d_eta, d_u },
            hessians,
        })
    }

    /// Model whose weights are the sum of both; the feature maps must match.
    pub fn sum(&self, other: &LinearErrorModel) -> Result<LinearErrorModel> {
        if self.map != other.map {
            return Err(Error::DimensionMismatch(format!(
                "cannot add models over {} and {}",
                self.map.name(),
                other.map.name()
            )));
        }
        LinearErrorModel::new(self.map, &self.weights + &other.weights)
    }

    /// Versioned text form: header, feature map, then `W` row-major.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "learnff-model {MODEL_FORMAT_VERSION}").unwrap();
        writeln!(s, "feature_map {}", self.map.name()).unwrap();
        if let FeatureMap::Planar { nominal_mass } = self.map {
            writeln!(s, "nominal_mass {}", fmt17(nominal_mass)).unwrap();
        }
        writeln!(s, "dim {}", self.map.dim()).unwrap();
        for row in self.weights.row_iter() {
            let cols: Vec<String> = row.iter().map(|&w| fmt17(w)).collect();
            writeln!(s, "{}", cols.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let fail = |line: usize, msg: String| Error::ModelFormat { line, msg };

        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| fail(0, format!("missing `{key}`")))?;
            match l.split_once(' ') {
                Some((k, v)) if k == key => Ok((n, v.trim().to_string())),
                _ => Err(fail(n, format!("expected `{key} <value>`, got `{l}`"))),
            }
        };

        let (n, version) = field("learnff-model")?;
        if version != MODEL_FORMAT_VERSION.to_string() {
            return Err(fail(n, format!("unsupported format version {version}")));
        }
        let (n, name) = field("feature_map")?;
        let map = match name.as_str() {
            "planar8" => {
                let (n, m) = field("nominal_mass")?;
                let m: f64 = m.parse().map_err(|e| fail(n, format!("nominal_mass: {e}")))?;
                FeatureMap::planar(m)
            }
            "velocity_input7" => FeatureMap::VelocityInput,
            "quadratic55" => FeatureMap::Quadratic,
            other => return Err(fail(n, format!("unknown feature map `{other}`"))),
        };
        let (n, dim) = field("dim")?;
        let dim: usize = dim.parse().map_err(|e| fail(n, format!("dim: {e}")))?;
        if dim != map.dim() {
            return Err(fail(n, format!("dim {dim} does not match {}", map.name())));
        }
        let mut weights = DMatrix::zeros(dim, 3);
        for r in 0..dim {
            let (n, l) = lines
                .next()
                .ok_or_else(|| fail(0, format!("expected {dim} weight rows, got {r}")))?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fail(n, format!("weight: {e}")))?;
            if vals.len() != 3 {
                return Err(fail(n, format!("expected 3 weights, got {}", vals.len())));
            }
            for (c, v) in vals.into_iter().enumerate() {
                weights[(r, c)] = v;
            }
        }
        if let Some((n, l)) = lines.next() {
            return Err(fail(n, format!("trailing content `{l}`")));
        }
        LinearErrorModel::new(map, weights)
    }
}

/// Regression target: observed minus predicted acceleration at (η, u).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub eta: StateVec,
    pub u_vec: InputVec,
    pub residual: Vec3,
}

/// One timestep of a flown (or simulated) trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub eta: StateVec,
    pub u_vec: InputVec,
}

pub const MAX_TIME_JITTER: f64 = 1e-9;

/// Residuals `(v[k+1] − v[k−1]) / 2h − (u + g)` for every interior sample.
pub fn residuals_from_trace(
    trace: &[TracePoint],
    gravity: f64,
    spacing: f64,
) -> Result<Vec<TrainingSample>> {
    if trace.len() < 3 {
        return Err(Error::InvalidLog(format!(
            "need at least 3 samples, got {}",
            trace.len()
        )));
    }
    if spacing.is_nan() || spacing <= 0.0 {
        return Err(Error::InvalidLog(format!("spacing must be positive, got {spacing}")));
    }
    for (k, w) in trace.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        if (dt - spacing).abs() > MAX_TIME_JITTER {
            return Err(Error::InvalidLog(format!(
                "non-uniform timestamps at sample {k}: step {dt} vs {spacing}"
            )));
        }
    }
    let g_world = Vec3::new(0.0, 0.0, -gravity);
    Ok(trace
        .windows(3)
        .map(|w| {
            let observed = (w[2].eta.vel - w[0].eta.vel) / (2.0 * spacing);
            TrainingSample {
                eta: w[1].eta,
                u_vec: w[1].u_vec,
                residual: observed - (w[1].u_vec + g_world),
            }
        })
        .collect())
}

/// Training samples from a planar run log; `fd_step` is the log spacing.
/// The input of each sample is the thrust vector applied along the actual
/// pitch, not the commanded one.
pub fn residuals_from_log(
    log: &RunLog,
    params: &PhysicalParams,
    fd_step: f64,
) -> Result<Vec<TrainingSample>> {
    residuals_from_trace(&log.trace(params.mass), params.gravity, fd_step)
}

pub const DEFAULT_RIDGE: f64 = 1e-8;
const RANK_TOL: f64 = 1e-12;

/// Minimises `Σ‖Wᵀφᵢ − rᵢ‖² + ridge·‖W‖²_F` through an SVD of the
/// ridge-augmented design matrix.
pub fn fit(samples: &[TrainingSample], map: FeatureMap, ridge: f64) -> Result<LinearErrorModel> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let dim = map.dim();
    let n = samples.len();
    let rows = if ridge > 0.0 { n + dim } else { n };
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DMatrix::zeros(rows, 3);
    for (r, s) in samples.iter().enumerate() {
        if s.residual.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite residual in sample {r}")));
        }
        let phi = map.eval(&s.eta, &s.u_vec)?;
        a.row_mut(r).copy_from(&phi.transpose());
        b.row_mut(r).copy_from(&s.residual.transpose());
    }
    if ridge > 0.0 {
        let sq = ridge.sqrt();
        for k in 0..dim {
            a[(n + k, k)] = sq;
        }
    }

    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if rows < dim || smax == 0.0 || smin <= RANK_TOL * smax {
        return Err(Error::SingularSystem(format!(
            "feature matrix rank deficient (singular values {smin:e}..{smax:e})"
        )));
    }
    let w = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    LinearErrorModel::new(map, w)
}

/// Regularised least-squares objective for `weights` on `samples`.
pub fn objective(
    samples: &[TrainingSample],
    map: &FeatureMap,
    weights: &DMatrix<f64>,
    ridge: f64,
) -> Result<f64> {
    let mut total = ridge * weights.norm_squared();
    for s in samples {
        let phi = map.eval(&s.eta, &s.u_vec)?;
        let pred = weights.transpose() * phi;
        total += (0..3).map(|i| (pred[i] - s.residual[i]).powi(2)).sum::<f64>();
    }
    Ok(total)
}

/// CSV with columns `x,y,z,vx,vy,vz,ux,uy,uz,rx,ry,rz`.
pub fn write_samples_csv<W: Write>(samples: &[TrainingSample], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "x", "y", "z", "vx", "vy", "vz", "ux", "uy", "uz", "rx", "ry", "rz",
    ])?;
    for s in samples {
        let row = s
            .eta
            .to_vector()
            .iter()
            .chain(s.u_vec.iter())
            .chain(s.residual.iter())
            .map(|&v| fmt17(v))
            .collect::<Vec<_>>();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<samples csv>", e))?;
    Ok(())
}
