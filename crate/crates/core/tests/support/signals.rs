#![allow(dead_code)]

use bevdrive::flat_vehicle::FlatSignal;
use bevdrive::geometry::Vec2;
use rand::Rng;

/// sigma(t) = (v t + a sin(w1 t + p1), b sin(w2 t + p2)), speed kept above v/4.
pub struct Wiggle {
    v: f64,
    a: f64,
    w1: f64,
    p1: f64,
    b: f64,
    w2: f64,
    p2: f64,
}

impl Wiggle {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let v = rng.random_range(3.0..12.0);
        let w1 = rng.random_range(0.3..1.5);
        let w2 = rng.random_range(0.3..1.5);
        Wiggle {
            v,
            a: rng.random_range(0.0..0.35) * v / w1,
            w1,
            p1: rng.random_range(0.0..std::f64::consts::TAU),
            b: rng.random_range(0.0..0.35) * v / w2,
            w2,
            p2: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    pub fn signal(&self, t: f64) -> FlatSignal {
        let (s1, c1) = (self.w1 * t + self.p1).sin_cos();
        let (s2, c2) = (self.w2 * t + self.p2).sin_cos();
        FlatSignal {
            sigma: Vec2::new(self.v * t + self.a * s1, self.b * s2),
            d_sigma: Vec2::new(self.v + self.a * self.w1 * c1, self.b * self.w2 * c2),
            dd_sigma: Vec2::new(-self.a * self.w1 * self.w1 * s1, -self.b * self.w2 * self.w2 * s2),
        }
    }
}
