use multifluid::cases::{build_case, single_fluid_state, Case, Preset, RunConfig};
use multifluid::solver::{
    self, dynamics_substep, fluid_masses, hydrostatic_init, max_abs_w, split_fluids,
    transfer_substep, FluidFields, ModelState, RateFields, SolverConfig, TransferClosure,
};
use multifluid::{Constants, SchemeConfig};

const EPS: f64 = f64::EPSILON;

fn small(case: Case) -> RunConfig {
    let mut cfg = RunConfig::new(case, Preset::Desk);
    cfg.nx = 20;
    cfg.nz = 12;
    cfg
}

/// Neumaier-compensated sum, so the check measures the solver and not the summation.
fn exact_sum(v: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in v {
        let t = s + x;
        c += if s.abs() >= x.abs() {
            (s - t) + x
        } else {
            (x - t) + s
        };
        s = t;
    }
    s + c
}

fn mass(state: &ModelState, fluid: usize) -> f64 {
    exact_sum(state.fluids[fluid].eta.values.iter().copied())
}

#[test]
fn hydrostatic_rest_is_preserved() {
    let cfg = SolverConfig::default();
    let grid = multifluid::grid::Grid2D::new(20, 25, 400.0, 400.0);
    for theta in [|_z: f64| 300.0, |z: f64| 300.0 + 3e-3 * z] {
        let mut s = hydrostatic_init(grid, theta, 1.0e5, &Constants::DRY_AIR);
        for _ in 0..10 {
            s = dynamics_substep(&s, 8.0, &cfg).unwrap();
            assert!(max_abs_w(&s) <= 1e-10, "max|w| = {:e}", max_abs_w(&s));
        }
    }
}

#[test]
fn dynamics_conserves_each_fluid_mass() {
    let setup = build_case(&small(Case::HalfBubble)).unwrap();
    let cfg = SolverConfig::default();
    let mut s = setup.state;
    for _ in 0..10 {
        let next = dynamics_substep(&s, 8.0, &cfg).unwrap();
        for i in 0..2 {
            let (m0, m1) = (mass(&s, i), mass(&next, i));
            assert!(
                (m1 - m0).abs() <= 8.0 * EPS * m0,
                "fluid {i}: {:e}",
                (m1 - m0) / m0
            );
        }
        s = next;
    }
}

#[test]
fn transfers_conserve_total_mass() {
    let cfg = small(Case::FullBubble);
    let setup = build_case(&cfg).unwrap();
    for n in 1..=6 {
        let scheme = SchemeConfig::named(n).unwrap();
        let mut s = setup.state.clone();
        for _ in 0..3 {
            let (next, _) = solver::step(&s, &setup.closure, &scheme, cfg.dt, &cfg.solver).unwrap();
            let before = mass(&s, 0) + mass(&s, 1);
            let after = mass(&next, 0) + mass(&next, 1);
            assert!((after - before).abs() <= 8.0 * EPS * before, "scheme {n}");
            s = next;
        }
    }
}

#[test]
fn empty_second_fluid_reproduces_single_fluid() {
    let cfg = small(Case::SingleFluid);
    let single = single_fluid_state(&cfg);
    let empty = FluidFields {
        eta: single.grid.constant_center(0.0),
        ..single.fluids[0].clone()
    };
    let pair = ModelState {
        fluids: vec![empty, single.fluids[0].clone()],
        ..single.clone()
    };
    let (mut a, mut b) = (single, pair);
    for _ in 0..5 {
        a = dynamics_substep(&a, cfg.dt, &cfg.solver).unwrap();
        b = dynamics_substep(&b, cfg.dt, &cfg.solver).unwrap();
    }
    assert_eq!(a.pi, b.pi);
    assert_eq!(a.fluids[0], b.fluids[1]);
    assert_eq!(b.fluids[0].vel, b.fluids[1].vel);
}

#[test]
fn equal_halves_reproduce_single_fluid() {
    let cfg = small(Case::SingleFluid);
    let single = single_fluid_state(&cfg);
    let halves = split_fluids(&single, &single.grid.constant_center(0.5));
    let (mut a, mut b) = (single, halves);
    for _ in 0..5 {
        a = dynamics_substep(&a, cfg.dt, &cfg.solver).unwrap();
        b = dynamics_substep(&b, cfg.dt, &cfg.solver).unwrap();
    }
    assert_eq!(a.pi, b.pi);
    assert_eq!(b.fluids[0], b.fluids[1]);
    assert_eq!(a.fluids[0].vel, b.fluids[0].vel);
    assert_eq!(a.fluids[0].theta, b.fluids[0].theta);
    let doubled = b.fluids[0].eta.map(|e| 2.0 * e);
    assert_eq!(a.fluids[0].eta, doubled);
}

#[test]
fn cells_without_transfer_are_untouched() {
    let cfg = small(Case::HalfBubble);
    let setup = build_case(&cfg).unwrap();
    let s = setup.state;
    let g = s.grid;
    let mut rates = RateFields::zero(&g);
    let active = g.c(10, 5);
    rates.s01.values[active] = 0.05;
    rates.s10.values[active] = 0.02;
    for scheme in [
        SchemeConfig::named(4).unwrap(),
        SchemeConfig::named(6).unwrap(),
    ] {
        let out = transfer_substep(&s, &rates, &scheme, cfg.dt).unwrap();
        for c in (0..g.n_cells()).filter(|&c| c != active) {
            for i in 0..2 {
                assert_eq!(out.fluids[i].eta.values[c], s.fluids[i].eta.values[c]);
                assert_eq!(out.fluids[i].theta.values[c], s.fluids[i].theta.values[c]);
            }
        }
        assert_ne!(
            out.fluids[0].eta.values[active],
            s.fluids[0].eta.values[active]
        );
    }
}

#[test]
fn zero_rates_leave_the_state_unchanged() {
    let cfg = small(Case::HalfBubble);
    let s = build_case(&cfg).unwrap().state;
    for scheme in SchemeConfig::all20() {
        let out = transfer_substep(&s, &RateFields::zero(&s.grid), &scheme, cfg.dt).unwrap();
        assert_eq!(out, s);
    }
}

#[test]
fn relabel_closure_fills_empty_fluid_to_sigma_min() {
    let cfg = small(Case::FullBubble);
    let setup = build_case(&cfg).unwrap();
    let total: f64 = fluid_masses(&setup.state).iter().sum();
    for (n, expect) in [
        (1, 0.1),
        (2, 0.1),
        (5, 0.1),
        (3, 0.1 / 1.1),
        (4, 0.1 / 1.1),
        (6, 0.1 / 1.1),
    ] {
        let scheme = SchemeConfig::named(n).unwrap();
        let (next, _) =
            solver::step(&setup.state, &setup.closure, &scheme, cfg.dt, &cfg.solver).unwrap();
        let frac = fluid_masses(&next)[0] / total;
        assert!((frac - expect).abs() <= 1e-12, "scheme {n}: {frac}");
    }
    assert!(matches!(setup.closure, TransferClosure::Relabel { .. }));
}

#[test]
fn half_bubble_fields_stay_finite_and_non_negative() {
    let cfg = small(Case::HalfBubble);
    let setup = build_case(&cfg).unwrap();
    for n in [2, 6] {
        let scheme = SchemeConfig::named(n).unwrap();
        let mut s = setup.state.clone();
        for _ in 0..20 {
            s = solver::step(&s, &setup.closure, &scheme, cfg.dt, &cfg.solver)
                .unwrap()
                .0;
        }
        for f in &s.fluids {
            assert!(f.eta.is_finite() && f.theta.is_finite() && f.vel.is_finite());
            assert!(f.eta.min() >= 0.0);
        }
    }
}
