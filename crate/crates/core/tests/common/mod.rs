#![allow(dead_code)]

use learnff::errmodel::{FeatureMap, LinearErrorModel, StateVec};
use learnff::{TrajectoryPoint, Vec3};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::Rng;

pub fn rand_vec3(rng: &mut StdRng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi))
}

/// Smooth quadratic model with small weights. Input-dependent rows are
/// zeroed when `input_dependent` is false.
pub fn random_smooth_model(rng: &mut StdRng, input_dependent: bool) -> LinearErrorModel {
    let map = FeatureMap::quadratic();
    // Features carrying u (|u| ~ 10) get proportionally smaller weights.
    let probe_u = map
        .eval(&StateVec::default(), &Vec3::new(10.0, 10.0, 10.0))
        .unwrap();
    let probe_0 = map.eval(&StateVec::default(), &Vec3::zeros()).unwrap();
    let inputs = map.input_features();
    let mut w = DMatrix::zeros(map.dim(), 3);
    for r in 0..map.dim() {
        if inputs.contains(&r) && !input_dependent {
            continue;
        }
        let scale = if (probe_u[r] - probe_0[r]).abs() > 50.0 {
            0.0005
        } else if inputs.contains(&r) {
            0.005
        } else {
            0.02
        };
        for c in 0..3 {
            w[(r, c)] = scale * rng.gen_range(-1.0..1.0);
        }
    }
    LinearErrorModel::new(map, w).unwrap()
}

/// Random planar model; the y output column is left at zero.
pub fn random_planar_model(rng: &mut StdRng, mass: f64) -> LinearErrorModel {
    let map = FeatureMap::planar(mass);
    let mut w = DMatrix::zeros(8, 3);
    for r in 0..8 {
        let scale = if r == 5 || r == 6 { 0.05 } else { 1.0 };
        w[(r, 0)] = scale * rng.gen_range(-1.0..1.0);
        w[(r, 2)] = scale * rng.gen_range(-1.0..1.0);
    }
    LinearErrorModel::new(map, w).unwrap()
}

pub fn random_reference(rng: &mut StdRng) -> TrajectoryPoint {
    TrajectoryPoint {
        t: 0.0,
        pos: rand_vec3(rng, -3.0, 3.0),
        vel: rand_vec3(rng, -3.0, 3.0),
        acc: rand_vec3(rng, -4.0, 4.0),
        jerk: rand_vec3(rng, -30.0, 30.0),
        snap: rand_vec3(rng, -100.0, 100.0),
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
