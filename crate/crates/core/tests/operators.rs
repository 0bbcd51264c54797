mod common;

use common::*;
use dctmc_core::linalg::{self, c64, CMatrix, CVector};
use dctmc_core::operators::{add_noise, forward_solve, Geometry, GeometryConfig, Layout, Potential};
use proptest::prelude::*;

fn weak_instance(scale: f64, seed: u64) -> (dctmc_core::OperatorSet, Potential) {
    let ops = geometry(3, 2.0).sample_operators();
    let mut rng = rng(seed);
    (ops, dense_potential(27, scale, &mut rng))
}

#[test]
fn born_series_converges_to_dense_solve() {
    let (ops, v) = weak_instance(0.5, 1);
    let vg = linalg::scale_rows(v.values(), &ops.gamma);
    let q = norm_2(&vg);
    assert!(q < 1.0, "series needs ‖V̂Γ‖ < 1, got {q}");
    let phi = forward_solve(&v, &ops).unwrap();
    let vb = linalg::scale_rows(v.values(), &ops.b);
    let mut term = CMatrix::identity(27, 27);
    let mut sum = term.clone();
    for n in 1..=40 {
        term = &term * &vg;
        sum += &term;
        let truncated = &ops.a * &sum * &vb;
        // geometric tail Σ_{m>n} qᵐ bounds the remainder
        let tail = q.powi(n + 1) / (1.0 - q);
        let bound = norm_2(&ops.a) * tail * norm_2(&vb);
        assert!(norm_2(&(&truncated - &phi)) <= bound * (1.0 + 1e-8) + 1e-14, "n = {n}");
    }
}

#[test]
fn first_born_error_scales_with_coupling() {
    let mut ratios = Vec::new();
    for scale in [1e-2, 1e-3, 1e-4] {
        let (ops, v) = weak_instance(scale, 2);
        let phi = forward_solve(&v, &ops).unwrap();
        let born = &ops.a * v.to_matrix() * &ops.b;
        let q = norm_2(&linalg::scale_rows(v.values(), &ops.gamma));
        ratios.push(linalg::relative_error(&born, &phi) / q);
    }
    // the constant c is measured on the instance; it must stay put as q → 0
    let c = ratios[0];
    assert!(ratios.iter().all(|&r| r <= 1.5 * c), "{ratios:?}");
}

#[test]
fn forward_model_is_linear_at_small_contrast() {
    let (ops, v) = weak_instance(1.0, 3);
    let mut previous = f64::INFINITY;
    for t in [1e-1, 1e-2, 1e-3, 1e-4] {
        let scaled = Potential::from_values(v.values() * c64(t, 0.0));
        let phi = forward_solve(&scaled, &ops).unwrap();
        let born = &ops.a * scaled.to_matrix() * &ops.b;
        let err = linalg::relative_error(&phi, &born);
        assert!(err < previous, "t = {t}: {err} ≥ {previous}");
        previous = err;
    }
    assert!(previous < 1e-3);
}

#[test]
fn noise_level_concentrates() {
    let g = geometry(4, 2.0);
    let ops = g.sample_operators();
    let mut rng = rng(4);
    let v = dense_potential(64, 0.2, &mut rng);
    let phi = forward_solve(&v, &ops).unwrap();
    assert!(phi.len() >= 256);
    for seed in 0..20 {
        let noisy = add_noise(&phi, 0.01, seed).unwrap();
        let rel = linalg::relative_error(&noisy, &phi);
        assert!((0.005..=0.02).contains(&rel), "seed {seed}: {rel}");
    }
    assert_ne!(add_noise(&phi, 0.01, 1).unwrap(), add_noise(&phi, 0.01, 2).unwrap());
}

#[test]
fn sample_counts_follow_grid_size() {
    for l in 2..=5 {
        let ops = geometry(l, 1.0).sample_operators();
        assert_eq!(ops.a.shape(), (l * l, l * l * l));
        assert_eq!(ops.b.shape(), (l * l * l, l * l));
        assert_eq!(ops.c.shape(), (l * l, l * l));
    }
}

fn arb_geometry() -> impl Strategy<Value = Geometry> {
    (
        2usize..=4,
        0.3f64..2.0,
        0.0f64..6.0,
        0.0f64..0.2,
        1.0f64..3.0,
        any::<bool>(),
    )
        .prop_map(|(l, pitch, kh, absorption, standoff, reflect)| {
            Geometry::new(GeometryConfig {
                grid_size: l,
                pitch,
                wavenumber: c64(kh / pitch, absorption),
                source_standoff: standoff,
                detector_standoff: standoff,
                layout: if reflect {
                    Layout::Reflection
                } else {
                    Layout::Transmission
                },
                ..GeometryConfig::default()
            })
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gamma_is_symmetric_with_declared_diagonal(g in arb_geometry()) {
        let ops = g.sample_operators();
        prop_assert_eq!(&ops.gamma, &ops.gamma.transpose());
        prop_assert!(ops.gamma.diagonal().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn mirrored_planes_are_reciprocal(g in arb_geometry()) {
        let ops = g.sample_operators();
        match g.config().layout {
            Layout::Reflection => prop_assert_eq!(linalg::max_abs_difference(&ops.b, &ops.a.transpose()), 0.0),
            Layout::Transmission => {
                for j in 0..g.n_voxels() {
                    for n in 0..g.n_sources() {
                        prop_assert_eq!(ops.b[(j, n)], ops.a[(n, g.z_mirror(j))]);
                    }
                }
            }
        }
    }

    #[test]
    fn noise_is_seed_deterministic(seed in any::<u64>(), level in 0.0f64..0.1) {
        let mut r = rng(seed);
        let phi = gaussian(6, 5, &mut r);
        prop_assert_eq!(add_noise(&phi, level, seed).unwrap(), add_noise(&phi, level, seed).unwrap());
    }

    #[test]
    fn potential_support_is_respected(values in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, any::<bool>()), 1..20)) {
        let v = CVector::from_iterator(values.len(), values.iter().map(|&(re, im, _)| c64(re, im)));
        let support: Vec<bool> = values.iter().map(|&(_, _, s)| s).collect();
        let p = Potential::with_support(v, support.clone()).unwrap();
        for (i, &s) in support.iter().enumerate() {
            if !s {
                prop_assert_eq!(p.values()[i], c64(0.0, 0.0));
            }
        }
    }
}
