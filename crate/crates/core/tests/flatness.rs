mod support;

use bevdrive::flat_vehicle::{flat_to_state, integrate, VehicleParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::signals::Wiggle;

#[test]
fn integrating_recovered_controls_reproduces_the_flat_output() {
    let params = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dt = 0.01;
    for case in 0..20 {
        let w = Wiggle::random(&mut rng);
        let (mut state, _) = flat_to_state(&w.signal(0.0), &params).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..400 {
            let t0 = k as f64 * dt;
            state = integrate(&state, &params, dt, dt, |tau, _| {
                flat_to_state(&w.signal(t0 + tau), &params).unwrap().1
            })
            .unwrap();
            let err = (state.position() - w.signal(t0 + dt).sigma).norm();
            worst = worst.max(err);
        }
        assert!(worst <= 1e-3, "case {case}: drift {worst} m");
    }
}

#[test]
fn recovered_state_matches_velocity_direction() {
    let params = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let w = Wiggle::random(&mut rng);
        for i in 0..40 {
            let sig = w.signal(i as f64 * 0.1);
            let (state, _) = flat_to_state(&sig, &params).unwrap();
            assert!((state.velocity() - sig.d_sigma).norm() <= 1e-9 * sig.d_sigma.norm());
        }
    }
}
