use std::sync::OnceLock;

use fsi_core::ambient::{make_builtin, AmbientKind};
use fsi_core::assembly::FluidParams;
use fsi_core::geometry::{classify_boundary, FacetTag, PlateGrid};
use fsi_core::plate::PlateSpace;
use fsi_core::sparse::dot;
use fsi_core::vonkarman::{bracket_load, random_smooth_plate, F0Kind, VonKarman};
use fsi_core::{assemble_all, build_geometry, Generator, OperatorSet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vortex() -> &'static OperatorSet {
    static OPS: OnceLock<OperatorSet> = OnceLock::new();
    OPS.get_or_init(|| {
        let g = build_geometry(4, 4, 4).unwrap();
        assemble_all(&g, &make_builtin(AmbientKind::Vortex, &g).unwrap(), &FluidParams::default()).unwrap()
    })
}

fn plate() -> &'static PlateSpace {
    static PS: OnceLock<PlateSpace> = OnceLock::new();
    PS.get_or_init(|| PlateSpace::new(PlateGrid::new(8, 8).unwrap()).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn facet_counts(nx in 2usize..7, ny in 2usize..7, nz in 2usize..7) {
        let g = build_geometry(nx, ny, nz).unwrap();
        let facets = classify_boundary(&g);
        prop_assert_eq!(facets.len(), 2 * (nx * ny + ny * nz + nx * nz));
        let top = facets.iter().filter(|f| f.tag == FacetTag::Omega).count();
        prop_assert_eq!(top, nx * ny);
        for f in facets.iter().filter(|f| f.tag == FacetTag::Omega) {
            prop_assert_eq!(f.normal(), [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn trace_pairs_cover_top_face(nx in 2usize..7, ny in 2usize..7, nz in 2usize..5) {
        let g = build_geometry(nx, ny, nz).unwrap();
        let t = g.trace_map();
        prop_assert_eq!(t.pairs.len(), g.plate().num_nodes());
        let fluid: Vec<f64> = (0..g.num_nodes()).map(|n| g.node_coord(n)[0] + 2.0 * g.node_coord(n)[1]).collect();
        let tr = t.trace_scalar(&fluid);
        for (pn, v) in tr.iter().enumerate() {
            let x = g.plate().node_coord(pn);
            prop_assert!((v - (x[0] + 2.0 * x[1])).abs() < 1e-14);
        }
    }

    #[test]
    fn restrict_expand_round_trip(seed in any::<u64>()) {
        let s = &vortex().space;
        let y = s.random_state(&mut ChaCha8Rng::seed_from_u64(seed));
        let back = s.layout.expand(&s.layout.restrict(&y));
        prop_assert!(s.norm(&back.add_scaled(-1.0, &y)) <= 1e-14 * s.norm(&y));
        prop_assert!(s.layout.constraint_violation(&y) <= 1e-14);
    }

    #[test]
    fn inner_product_symmetric_and_positive(seed in any::<u64>()) {
        let s = &vortex().space;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = s.random_state(&mut rng);
        let b = s.random_state(&mut rng);
        prop_assert!(rel(s.inner_product(&a, &b).unwrap(), s.inner_product(&b, &a).unwrap()) < 1e-13);
        prop_assert!(s.inner_product(&a, &a).unwrap() > 0.0);
    }

    #[test]
    fn generator_is_dissipative_and_linear(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let o = vortex();
        let s = &o.space;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = s.random_state(&mut rng);
        let b = s.random_state(&mut rng);
        let ay = o.apply_generator(&a, Generator::AHat);
        prop_assert!(s.inner_product(&ay, &a).unwrap() <= 1e-12 * s.energy(&a));
        let lhs = o.apply_generator(&a.add_scaled(alpha, &b), Generator::AHat);
        let rhs = ay.add_scaled(alpha, &o.apply_generator(&b, Generator::AHat));
        prop_assert!(s.norm(&lhs.add_scaled(-1.0, &rhs)) <= 1e-10 * (1.0 + s.norm(&rhs)));
    }

    #[test]
    fn bracket_trilinear_form_symmetric(seed in any::<u64>()) {
        let ps = plate();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_smooth_plate(ps, &mut rng);
        let w = random_smooth_plate(ps, &mut rng);
        let z = random_smooth_plate(ps, &mut rng);
        let uwz = dot(&bracket_load(ps, &u, &w), &z);
        let wuz = dot(&bracket_load(ps, &w, &u), &z);
        let uzw = dot(&bracket_load(ps, &u, &z), &w);
        prop_assert!(rel(uwz, wuz) < 1e-10);
        prop_assert!(rel(uwz, uzw) < 1e-10);
    }

    #[test]
    fn airy_potential_even_and_nonnegative(seed in any::<u64>(), alpha in 0.1f64..3.0) {
        let ps = plate();
        let vk = VonKarman::new(ps, F0Kind::Zero).unwrap();
        let w = random_smooth_plate(ps, &mut ChaCha8Rng::seed_from_u64(seed));
        let wa: Vec<f64> = w.iter().map(|v| alpha * v).collect();
        let wm: Vec<f64> = wa.iter().map(|v| -v).collect();
        let p = vk.potential(&wa).total;
        prop_assert!(p >= 0.0);
        prop_assert!(rel(p, vk.potential(&wm).total) < 1e-12);
        prop_assert!(rel(p, alpha.powi(4) * vk.potential(&w).total) < 1e-10);
    }
}
