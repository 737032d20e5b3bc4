use std::ffi::CStr;
use std::ptr;

use pointsim_ffi::*;

fn lattice(nx: usize, ny: usize, nz: usize, h: f64) -> Vec<f64> {
    let mut v = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                v.extend([i as f64 * h, j as f64 * h, k as f64 * h]);
            }
        }
    }
    v
}

fn last_error() -> String {
    let p = ps_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    reference: *mut PsReference,
    material: *mut PsMaterial,
    rest: Vec<f64>,
    n: usize,
}

impl Fixture {
    fn new() -> Self {
        let rest = lattice(8, 3, 3, 0.01);
        let n = rest.len() / 3;
        let mut reference = ptr::null_mut();
        let mut material = ptr::null_mut();
        unsafe {
            assert_eq!(ps_reference_new(rest.as_ptr(), n, 0.5, ptr::null(), &mut reference), PsStatus::Ok);
            let mu = vec![3e4; n];
            let lambda = vec![1e5; n];
            assert_eq!(ps_material_new(mu.as_ptr(), lambda.as_ptr(), n, &mut material), PsStatus::Ok);
        }
        Self {
            reference,
            material,
            rest,
            n,
        }
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            ps_material_free(self.material);
            ps_reference_free(self.reference);
        }
    }
}

#[test]
fn rest_energy_and_masses() {
    let f = Fixture::new();
    unsafe {
        assert_eq!(ps_reference_len(f.reference), f.n);
        let mut masses = vec![0.0; f.n];
        assert_eq!(ps_reference_masses(f.reference, masses.as_mut_ptr(), f.n), PsStatus::Ok);
        assert!((masses.iter().sum::<f64>() - 0.5).abs() < 1e-12);
        let mut e = f64::NAN;
        assert_eq!(
            ps_elastic_energy(f.reference, f.material, f.rest.as_ptr(), f.n, &mut e),
            PsStatus::Ok
        );
        assert!(e.abs() < 1e-9);
    }
}

#[test]
fn pinned_bar_sags_under_gravity() {
    let f = Fixture::new();
    let mut forces = vec![0.0; 3 * f.n];
    let mut masses = vec![0.0; f.n];
    unsafe { ps_reference_masses(f.reference, masses.as_mut_ptr(), f.n) };
    for (i, m) in masses.iter().enumerate() {
        forces[3 * i + 2] = -9.81 * m;
    }
    let ids: Vec<usize> = (0..f.n).filter(|i| f.rest[3 * i] == 0.0).collect();
    let pins: Vec<f64> = ids.iter().flat_map(|&i| f.rest[3 * i..3 * i + 3].to_vec()).collect();
    let mut y = vec![0.0; 3 * f.n];
    let mut info = PsSolveInfo::default();
    let status = unsafe {
        ps_solve_equilibrium(
            f.reference,
            f.material,
            f.n,
            forces.as_ptr(),
            ids.as_ptr(),
            pins.as_ptr(),
            ids.len(),
            ptr::null(),
            y.as_mut_ptr(),
            &mut info,
        )
    };
    assert_eq!(status, PsStatus::Ok);
    assert!(info.converged);
    let tip = (0..f.n).map(|i| y[3 * i + 2] - f.rest[3 * i + 2]).fold(0.0, f64::min);
    assert!(tip < 0.0);
    for &i in &ids {
        assert_eq!(&y[3 * i..3 * i + 3], &f.rest[3 * i..3 * i + 3]);
    }
}

#[test]
fn errors_are_reported() {
    let f = Fixture::new();
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(ps_reference_new(ptr::null(), 10, 1.0, ptr::null(), &mut out), PsStatus::NullPointer);
        assert!(last_error().contains("points"));
        let few = lattice(2, 1, 1, 0.1);
        assert_eq!(ps_reference_new(few.as_ptr(), 2, 1.0, ptr::null(), &mut out), PsStatus::DegenerateInput);
        assert!(out.is_null());

        let mut e = 0.0;
        assert_eq!(
            ps_elastic_energy(f.reference, f.material, f.rest.as_ptr(), f.n - 1, &mut e),
            PsStatus::SizeMismatch
        );
        assert!(last_error().contains("expected"));

        let mut m = ptr::null_mut();
        let bad = vec![-1.0; f.n];
        assert_eq!(ps_material_new(bad.as_ptr(), bad.as_ptr(), f.n, &mut m), PsStatus::InvalidArgument);
        ps_reference_free(ptr::null_mut());
        ps_material_free(ptr::null_mut());
        ps_warp_free(ptr::null_mut());
    }
}

#[test]
fn warp_reproduces_translation() {
    let rest = lattice(4, 4, 4, 0.1);
    let n = rest.len() / 3;
    let shift = [0.02, -0.01, 0.03];
    let deformed: Vec<f64> = rest.iter().enumerate().map(|(i, v)| v + shift[i % 3]).collect();
    let mut w = ptr::null_mut();
    unsafe {
        assert_eq!(ps_warp_new(rest.as_ptr(), deformed.as_ptr(), n, 5, 0.0, &mut w), PsStatus::Ok);
        let q = [0.15 + shift[0], 0.17 + shift[1], 0.05 + shift[2], 5.0, 5.0, 5.0];
        let mut out = [0.0; 6];
        let mut masked = [9u8; 2];
        assert_eq!(ps_warp_backward(w, q.as_ptr(), 2, out.as_mut_ptr(), masked.as_mut_ptr()), PsStatus::Ok);
        assert!((out[0] - 0.15).abs() < 1e-12 && (out[1] - 0.17).abs() < 1e-12 && (out[2] - 0.05).abs() < 1e-12);
        assert_eq!(masked, [0, 1]);
        assert_eq!(ps_warp_backward(w, q.as_ptr(), 2, out.as_mut_ptr(), ptr::null_mut()), PsStatus::Ok);
        ps_warp_free(w);
    }
}

#[test]
fn distance_report_matches_hand_values() {
    let a = lattice(2, 2, 1, 1.0);
    let mut b = a.clone();
    b[0] += 0.002;
    let mut r = PsDistanceReport::default();
    unsafe {
        assert_eq!(ps_distance_report(a.as_ptr(), b.as_ptr(), 1, 4, ptr::null(), &mut r), PsStatus::Ok);
    }
    assert!((r.average_mm - 0.5).abs() < 1e-9);
    assert!((r.max_mm - 2.0).abs() < 1e-9);
}

#[test]
fn header_declares_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pointsim.h")).unwrap();
    for name in [
        "ps_last_error",
        "ps_reference_new",
        "ps_material_new",
        "ps_elastic_energy",
        "ps_solve_equilibrium",
        "ps_warp_backward",
        "ps_distance_report",
        "PS_STATUS_SOLVER_FAILURE = 6",
        "typedef struct PsReference PsReference;",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}
