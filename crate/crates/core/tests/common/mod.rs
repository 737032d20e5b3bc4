//! Shared synthetic scenarios for integration tests.
#![allow(dead_code)]

use pointsim::harness::{ForceEvent, ForceScript, MaterialRegion, ObjectSpec, Region, SequenceSpec, Shape};

pub const SOFT_MU: f64 = 1e4;
pub const STIFF_MU: f64 = 1e5;
pub const NOISE_SIGMA: f64 = 1e-4;

/// 0.2 m bar: stiff clamped half and a ten times softer free half.
pub fn two_region_bar(seed: u64) -> ObjectSpec {
    ObjectSpec {
        shape: Shape::Bar,
        dims: [20, 5, 5],
        spacing: 0.01,
        regions: vec![
            MaterialRegion {
                region: Region::All,
                mu: STIFF_MU,
                lambda: STIFF_MU,
            },
            MaterialRegion {
                region: Region::HalfSpace {
                    axis: 0,
                    threshold: 0.095,
                    above: true,
                },
                mu: SOFT_MU,
                lambda: SOFT_MU,
            },
        ],
        total_mass: 0.1,
        seed,
        jitter: 0.05,
    }
}

pub fn is_stiff(p: &pointsim::Vec3) -> bool {
    p.x < 0.095
}

/// Clamped root, gravity, two sweeping jets and a tip load.
pub fn bar_script() -> ForceScript {
    ForceScript {
        gravity: [0.0, 0.0, -9.81],
        pins: vec![Region::HalfSpace {
            axis: 0,
            threshold: 0.005,
            above: false,
        }],
        events: vec![
            ForceEvent::Jet {
                frames: [0, 50],
                nozzle: [0.03, 0.02, 0.14],
                nozzle_end: Some([0.19, 0.02, 0.14]),
                direction: [0.0, 0.0, -1.0],
                direction_end: None,
                strength: 5e-5,
                strength_end: None,
                half_angle: 0.3,
            },
            ForceEvent::Jet {
                frames: [10, 50],
                nozzle: [0.19, -0.1, 0.02],
                nozzle_end: Some([0.05, -0.1, 0.02]),
                direction: [0.0, 1.0, 0.0],
                direction_end: None,
                strength: 5e-5,
                strength_end: None,
                half_angle: 0.3,
            },
            ForceEvent::Load {
                frames: [0, 50],
                region: Region::HalfSpace {
                    axis: 0,
                    threshold: 0.185,
                    above: true,
                },
                force: [0.0, 0.0, 0.15],
                force_end: Some([0.05, -0.1, -0.08]),
            },
        ],
        sdfs: Vec::new(),
    }
}

pub fn bar_sequence(seed: u64, n_frames: usize) -> SequenceSpec {
    SequenceSpec {
        n_frames,
        noise_sigma: NOISE_SIGMA,
        seed,
        frame_rate: 40.0,
        name: "two-region bar".into(),
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}
