mod common;

use common::*;
use learnff::flatness::{body_ang_accel, body_rates, ff_generate, newton_solve, NewtonOptions};
use learnff::{LinearErrorModel, PhysicalParams, StateVec, Strategy, Vec3};
use nalgebra::{Rotation3, Unit};
use proptest::prelude::{any, prop_assume, prop_assert, prop_assert_eq, proptest, ProptestConfig, Strategy as PropStrategy};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn params() -> PhysicalParams {
    PhysicalParams::default()
}

#[test]
fn acceleration_model_is_reconstructed() {
    let mut rng = StdRng::seed_from_u64(11);
    let g = params().gravity_vector();
    for _ in 0..300 {
        let model = random_smooth_model(&mut rng, true);
        let r = random_reference(&mut rng);
        let eta = StateVec::new(r.pos, r.vel);
        for s in [Strategy::FF2, Strategy::FF3, Strategy::FF4, Strategy::FF5] {
            let c = ff_generate(s, &r, Some(&model), &params(), None).unwrap();
            // Closed-form strategies query the model at the model-free command.
            let at = if s.solves_numerically() { c.u * c.z } else { r.acc - g };
            let res = c.u * c.z + g + model.evaluate(&eta, &at).unwrap() - r.acc;
            assert!(res.amax() <= 1e-9, "{s}: {res}");
        }
    }
}

#[test]
fn warm_start_reaches_the_same_root() {
    let mut rng = StdRng::seed_from_u64(12);
    let opts = NewtonOptions::default();
    for _ in 0..100 {
        let model = random_smooth_model(&mut rng, true);
        let r = random_reference(&mut rng);
        let eta = StateVec::new(r.pos, r.vel);
        let cold = newton_solve(&r.acc, &model, &eta, None, 10.18, &opts).unwrap();
        let guess = cold.u_vec + rand_vec3(&mut rng, -0.5, 0.5);
        let warm = newton_solve(&r.acc, &model, &eta, Some(guess), 10.18, &opts).unwrap();
        assert!((cold.u_vec - warm.u_vec).amax() < 1e-9);
    }
}

#[test]
fn model_file_round_trip_preserves_inversion() {
    let mut rng = StdRng::seed_from_u64(13);
    let model = random_smooth_model(&mut rng, true);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    std::fs::write(&path, model.to_text()).unwrap();
    let back = LinearErrorModel::from_text(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let r = random_reference(&mut rng);
    let a = ff_generate(Strategy::FF5, &r, Some(&model), &params(), None).unwrap();
    let b = ff_generate(Strategy::FF5, &r, Some(&back), &params(), None).unwrap();
    assert_eq!(a, b);
}

fn arb_unit() -> impl PropStrategy<Value = Vec3> {
    // Keep away from the construction's singular directions.
    (-1.2f64..1.2, -1.2f64..1.2).prop_map(|(a, b)| {
        Rotation3::from_euler_angles(a, b, 0.0) * Vec3::z()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn body_rates_rotate_z(z in arb_unit(), d in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)) {
        let d = Vec3::new(d.0, d.1, d.2);
        let z_dot = d - z * z.dot(&d);
        let w = body_rates(&z, &z_dot).unwrap();
        prop_assert_eq!(w.z, 0.0);
        // Body rates map to ż through the body frame: ż = (R ω) × z.
        let y_b = z.cross(&Vec3::x()).normalize();
        let x_b = y_b.cross(&z);
        let w_world = x_b * w.x + y_b * w.y;
        prop_assert!((w_world.cross(&z) - z_dot).amax() < 1e-12);
        // Integrating the rate for a short step moves z along ż.
        let h = 1e-6;
        let axis = Unit::try_new(w_world, 1e-15);
        let z_next = match axis {
            Some(axis) => Rotation3::from_axis_angle(&axis, w_world.norm() * h) * z,
            None => z,
        };
        prop_assert!(((z_next - z) / h - z_dot).amax() < 1e-5);
    }

    #[test]
    fn body_ang_accel_matches_rate_differences(z0 in arb_unit(), seed in any::<u64>()) {
        // z(s) = R(k, θ(s)) z0 with θ = a s + b s²/2: ż and z̈ are exact.
        let mut rng = StdRng::seed_from_u64(seed);
        let k = Unit::new_normalize(rand_vec3(&mut rng, -1.0, 1.0));
        let (a, b) = (rand::Rng::gen_range(&mut rng, -2.0..2.0), rand::Rng::gen_range(&mut rng, -5.0..5.0));
        let at = |s: f64| {
            let th = a * s + b * s * s / 2.0;
            let (th_d, th_dd) = (a + b * s, b);
            let z = Rotation3::from_axis_angle(&k, th) * z0;
            let kz = k.cross(&z);
            (z, th_d * kz, th_dd * kz + th_d * th_d * k.cross(&kz))
        };
        let (z, z_dot, z_ddot) = at(0.0);
        prop_assume!(z.z > 0.2 && z.cross(&Vec3::x()).norm() > 0.2);
        let w = body_rates(&z, &z_dot).unwrap();
        let wd = body_ang_accel(&z, &z_dot, &z_ddot, &w).unwrap();
        let h = 1e-5;
        // The heading construction fixes the yaw rate at zero, so compare the
        // world-frame rate vector projected onto the body x/y axes.
        let world_rate = |s: f64| {
            let (z, zd, _) = at(s);
            let w = body_rates(&z, &zd).unwrap();
            let y_b = z.cross(&Vec3::x()).normalize();
            y_b.cross(&z) * w.x + y_b * w.y
        };
        let fd = (world_rate(h) - world_rate(-h)) / (2.0 * h);
        let y_b = z.cross(&Vec3::x()).normalize();
        let x_b = y_b.cross(&z);
        let tol = 1e-6 * wd.amax().max(1.0);
        prop_assert!((fd.dot(&x_b) - wd.x).abs() <= tol, "{} vs {}", fd.dot(&x_b), wd.x);
        prop_assert!((fd.dot(&y_b) - wd.y).abs() <= tol, "{} vs {}", fd.dot(&y_b), wd.y);
    }

    #[test]
    fn planar_pitch_acceleration_is_exact(th0 in -1.2f64..1.2, a in -3.0f64..3.0, b in -8.0f64..8.0) {
        let at = |s: f64| {
            let th = th0 + a * s + b * s * s / 2.0;
            let (th_d, th_dd) = (a + b * s, b);
            let z = Vec3::new(-th.sin(), 0.0, th.cos());
            let t = Vec3::new(-th.cos(), 0.0, -th.sin());
            (z, th_d * t, th_dd * t - th_d * th_d * z)
        };
        let (z, z_dot, z_ddot) = at(0.0);
        let w = body_rates(&z, &z_dot).unwrap();
        let wd = body_ang_accel(&z, &z_dot, &z_ddot, &w).unwrap();
        prop_assert!((-w.y - a).abs() < 1e-12);
        prop_assert!((-wd.y - b).abs() < 1e-10 * b.abs().max(1.0));
        prop_assert_eq!(wd.x, 0.0);
    }
}
