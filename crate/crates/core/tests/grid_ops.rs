use multifluid::grid::{CenterField, FaceField, Grid2D, GridError, Stagger};
use proptest::prelude::*;

/// Straightforward 1-D van Leer step on a closed line of cells.
fn reference_vanleer_1d(q: &[f64], vel: &[f64], dt_over_h: f64) -> Vec<f64> {
    let n = q.len();
    let slope = |j: usize| {
        if j == 0 || j + 1 >= n {
            return 0.0;
        }
        let (a, b) = (q[j] - q[j - 1], q[j + 1] - q[j]);
        if a * b > 0.0 {
            2.0 * a * b / (a + b)
        } else {
            0.0
        }
    };
    let mut flux = vec![0.0; n + 1];
    for f in 1..n {
        let v = vel[f];
        let c = (v.abs() * dt_over_h).min(1.0);
        let qf = if v > 0.0 {
            q[f - 1] + 0.5 * (1.0 - c) * slope(f - 1)
        } else {
            q[f] - 0.5 * (1.0 - c) * slope(f)
        };
        flux[f] = v * qf;
    }
    (0..n)
        .map(|j| q[j] - dt_over_h * (flux[j + 1] - flux[j]))
        .collect()
}

fn top_hat(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            if (n / 4..n / 2).contains(&j) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

#[test]
fn top_hat_matches_reference_and_stays_positive() {
    let n = 40;
    let g = Grid2D::new(n, 1, 100.0, 100.0);
    let speed = 10.0;
    let dt = 4.0; // Courant 0.4
    let vel = g.faces_from_fn(|_, _| speed, |_, _| 0.0);
    let mut q = CenterField { values: top_hat(n) };
    let mut r = top_hat(n);
    let (m0, max0) = (q.sum(), q.max());
    for _ in 0..30 {
        q = g.advect_vanleer(&q, &vel, dt).unwrap();
        r = reference_vanleer_1d(&r, &vel.x, dt / g.dx);
        for (a, b) in q.values.iter().zip(&r) {
            assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
        }
        assert!(q.min() >= 0.0);
        assert!(q.max() <= max0 * (1.0 + 1e-15));
        assert!((q.sum() - m0).abs() <= 1e-13 * m0);
    }
}

#[test]
fn vertical_top_hat_stays_positive() {
    let n = 30;
    let g = Grid2D::new(3, n, 50.0, 50.0);
    let vel = g.faces_from_fn(|_, _| 0.0, |_, _| -5.0);
    let mut q = g.center_from_fn(|_, z| {
        if (500.0..900.0).contains(&z) {
            2.0
        } else {
            0.0
        }
    });
    // stop before the pulse reaches the wall, where it piles up
    for _ in 0..15 {
        q = g.advect_vanleer(&q, &vel, 4.0).unwrap();
        assert!(q.min() >= 0.0);
        assert!(q.max() <= 2.0 * (1.0 + 1e-15));
    }
}

#[test]
fn courant_above_one_is_rejected() {
    let g = Grid2D::new(10, 2, 10.0, 10.0);
    let vel = g.faces_from_fn(|_, _| 20.0, |_, _| 0.0);
    let q = g.constant_center(1.0);
    assert!(matches!(
        g.advect_vanleer(&q, &vel, 1.0),
        Err(GridError::Courant { .. })
    ));
}

fn grid_and_velocity() -> impl Strategy<Value = (Grid2D, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..8, 2usize..8).prop_flat_map(|(nx, nz)| {
        let g = Grid2D::new(nx, nz, 100.0, 80.0);
        (
            Just(g),
            prop::collection::vec(0.0..5.0f64, g.n_cells()),
            prop::collection::vec(-1.0..1.0f64, g.n_xfaces()),
            prop::collection::vec(-1.0..1.0f64, g.n_zfaces()),
        )
    })
}

fn scaled_faces(g: &Grid2D, x: Vec<f64>, z: Vec<f64>, dt: f64) -> FaceField {
    let mut vel = FaceField { x, z };
    g.pin_walls(&mut vel);
    // rescale so the largest total outflow Courant number is 1/2
    let (c, _, _) = g.max_outflow_courant(&vel, dt);
    if c > 0.0 {
        vel = vel.map(|v| v * 0.5 / c);
    }
    vel
}

proptest! {
    #[test]
    fn flux_form_keeps_non_negative_fields_non_negative((g, q, x, z) in grid_and_velocity()) {
        let dt = 1.0;
        let vel = scaled_faces(&g, x, z, dt);
        let q = CenterField { values: q };
        let out = g.advect_vanleer(&q, &vel, dt).unwrap();
        prop_assert!(out.min() >= 0.0, "min {}", out.min());
        prop_assert!((out.sum() - q.sum()).abs() <= 1e-13 * q.sum().max(1.0));
    }

    #[test]
    fn advective_form_preserves_constants((g, _q, x, z) in grid_and_velocity(), c in 200.0..400.0f64) {
        let dt = 1.0;
        let vel = scaled_faces(&g, x, z, dt);
        let out = g.advect_advective(&g.constant_center(c), &vel, dt);
        for v in out.values {
            prop_assert!((v - c).abs() <= 1e-13 * c);
        }
    }

    #[test]
    fn divergence_of_gradient_is_the_laplacian((g, q, _x, _z) in grid_and_velocity()) {
        let q = CenterField { values: q };
        let a = g.divergence(&g.gradient(&q));
        let b = g.laplacian(&q);
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn cgrid_kinetic_energy_weights_faces((g, m, x, z) in grid_and_velocity()) {
        let mass = g.to_faces(&CenterField { values: m });
        let vel = FaceField { x, z };
        let total = g.kinetic_energy_cgrid(std::slice::from_ref(&mass), std::slice::from_ref(&vel)).sum();
        // interior faces are shared by two cells, each taking half
        let mut expect = 0.0;
        for k in 0..g.nz {
            for i in 0..=g.nx {
                let w = if i == 0 || i == g.nx { 0.5 } else { 1.0 };
                let f = g.xf(i, k);
                expect += w * 0.5 * mass.x[f] * vel.x[f] * vel.x[f];
            }
        }
        for k in 0..=g.nz {
            for i in 0..g.nx {
                let w = if k == 0 || k == g.nz { 0.5 } else { 1.0 };
                let f = g.zf(i, k);
                expect += w * 0.5 * mass.z[f] * vel.z[f] * vel.z[f];
            }
        }
        prop_assert!((total - expect).abs() <= 1e-12 * expect.max(1e-300));
    }
}

#[test]
fn dump_text_layout() {
    let g = Grid2D::new(2, 1, 10.0, 20.0);
    let text = g.dump_text("eta_0", 8.0, Stagger::XFace, &[1.0, 2.0, 3.0]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# quantity=eta_0 time=8");
    assert_eq!(lines[1], "i,k,x,z,value");
    assert_eq!(lines[2], "0,0,0,10,1e0");
    assert_eq!(lines[4], "2,0,20,10,3e0");
    assert_eq!(lines.len(), 5);
}
