use mvsde::ibp::{
    boundary_face_expansion, cumulative_primitive, direct_quadrature, iterated_ibp_check, iterated_ibp_refinement,
    l_volume, random_smooth_factor, random_smooth_function, GridFunction,
};
use mvsde::measure::Space;
use mvsde::quadrature::GaussLegendre;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn volume_matches_gauss_quadrature_on_random_boxes() {
    let space = Space::unit(2);
    let gl = GaussLegendre::new(24);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let f = random_smooth_function(&mut rng, 2);
        let g = GridFunction::from_test_function(&f, space, 513).unwrap();
        let primitive = cumulative_primitive(&g);
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for j in 0..2 {
            let a = rng.random_range(0..500usize);
            let b = rng.random_range(a + 1..=512usize);
            lo[j] = a as f64 / 512.0;
            hi[j] = b as f64 / 512.0;
        }
        let v = l_volume(&primitive, &lo, &hi).unwrap();
        let q = gl.integrate_box(&lo, &hi, |x| f.eval(x, space));
        worst = worst.max((v - q).abs());
    }
    println!("l_volume vs quadrature: worst {worst:.3e}");
    assert!(worst <= 1e-6, "worst {worst}");
}

#[test]
fn volume_is_additive_and_full_box_is_top_corner() {
    let g = GridFunction::sample(2, 1.0, 65, |x| (3.0 * x[0]).cos() + x[1] * x[1]).unwrap();
    let primitive = cumulative_primitive(&g);
    let whole = l_volume(&primitive, &[0.25, 0.0], &[1.0, 0.5]).unwrap();
    let left = l_volume(&primitive, &[0.25, 0.0], &[0.5, 0.5]).unwrap();
    let right = l_volume(&primitive, &[0.5, 0.0], &[1.0, 0.5]).unwrap();
    assert!((whole - left - right).abs() <= 1e-15 * whole.abs().max(1.0));
    assert_eq!(l_volume(&primitive, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), primitive.at(&[64, 64]));
}

#[test]
fn primitive_of_coordinate_is_half_square() {
    let g = GridFunction::sample(1, 1.0, 201, |x| x[0]).unwrap();
    let f = cumulative_primitive(&g);
    for i in 0..201 {
        let x = i as f64 / 200.0;
        assert!((f.at(&[i]) - 0.5 * x * x).abs() < 1e-12);
    }
}

#[test]
fn face_expansion_matches_quadrature_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let dim = 1 + case % 2;
        let space = Space::unit(dim);
        let f = random_smooth_function(&mut rng, dim);
        let u = random_smooth_factor(&mut rng, dim);
        let g = GridFunction::from_test_function(&f, space, 513).unwrap();
        let rhs = boundary_face_expansion(&g, &u).unwrap();
        let direct = direct_quadrature(&g, &u);
        worst = worst.max((rhs - direct).abs());
    }
    println!("face expansion vs quadrature: worst {worst:.3e}");
    assert!(worst <= 1e-5, "worst {worst}");
}

#[test]
fn face_expansion_in_three_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let space = Space::unit(3);
        let f = random_smooth_function(&mut rng, 3);
        let u = random_smooth_factor(&mut rng, 3);
        let g = GridFunction::from_test_function(&f, space, 97).unwrap();
        let rhs = boundary_face_expansion(&g, &u).unwrap();
        let direct = direct_quadrature(&g, &u);
        assert!((rhs - direct).abs() <= 1e-3, "{rhs} vs {direct}");
    }
}

#[test]
fn iterated_identity_examples() {
    let u = GridFunction::sample(1, 1.0, 10_000, |x| x[0]).unwrap();
    let v = GridFunction::sample(1, 1.0, 10_000, |x| x[0] * x[0]).unwrap();
    assert!(iterated_ibp_check(&u, &v).unwrap() <= 1e-6);

    let u = GridFunction::sample(2, 1.0, 512, |x| (x[0] + x[1]).sin()).unwrap();
    let v = GridFunction::sample(2, 1.0, 512, |x| x[0] * x[1]).unwrap();
    assert!(iterated_ibp_check(&u, &v).unwrap() <= 1e-4);
}

#[test]
fn iterated_residual_is_second_order() {
    let r = iterated_ibp_refinement(
        |x| (x[0] + 2.0 * x[1]).sin(),
        |x| (x[0] * x[1]).exp(),
        Space::unit(2),
        65,
    )
    .unwrap();
    println!("refinement {r:?}");
    assert!((3.5..=4.5).contains(&r.ratio), "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn volume_additivity(cut in 1usize..32, lo in 0usize..16, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_smooth_function(&mut rng, 2);
        let g = GridFunction::from_test_function(&f, Space::unit(2), 33).unwrap();
        let p = cumulative_primitive(&g);
        let (a, c, b) = (lo.min(cut - 1) as f64 / 32.0, cut as f64 / 32.0, 1.0);
        let whole = l_volume(&p, &[0.0, a], &[1.0, b]).unwrap();
        let parts = l_volume(&p, &[0.0, a], &[1.0, c]).unwrap() + if cut < 32 {
            l_volume(&p, &[0.0, c], &[1.0, b]).unwrap()
        } else { 0.0 };
        prop_assert!((whole - parts).abs() <= 1e-13);
    }
}
