//! Property tests against closed-form oracles.

mod common;

use diffmpm_core::ad::{record, AdError, Var};
use diffmpm_core::constitutive::Material;
use diffmpm_core::constitutive::{hencky_stress, neo_hookean_stress, ElasticParams};
use diffmpm_core::linalg::{linear_solve, norm2, SparseMatrix};
use diffmpm_core::mpm::{fill_box, DirichletRule, Grid, MpmModel, Side, SolverSettings};
use diffmpm_core::porous::{terzaghi_degree, terzaghi_pressure};
use diffmpm_core::scenario::bench;
use diffmpm_core::shape::ShapeFunctionKind;
use diffmpm_core::tensor::{self, Mat3};
use proptest::prelude::*;

fn rotation(a: f64, b: f64, c: f64) -> Mat3<f64> {
    let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
    let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
    tensor::mul(&rz, &tensor::mul(&ry, &rx))
}

fn deformation() -> impl Strategy<Value = Mat3<f64>> {
    prop::array::uniform9(-0.15f64..0.15).prop_map(|v| {
        let mut f = tensor::identity::<f64>();
        for i in 0..3 {
            for j in 0..3 {
                f[i][j] += v[3 * i + j];
            }
        }
        f
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tape_gradient_matches_hand_derivative(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        // f = e^x y + y² ln(1 + x²)
        let (tape, out) = record::<AdError, _>(&[x, y], |v: &[Var]| {
            Ok(vec![v[0].exp() * v[1] + v[1] * v[1] * (v[0] * v[0] + 1.0).ln()])
        }).unwrap();
        let g = tape.backward(&[1.0]).unwrap();
        let l = (1.0 + x * x).ln();
        prop_assert!((out[0] - (x.exp() * y + y * y * l)).abs() < 1e-12);
        prop_assert!((g[0] - (x.exp() * y + 2.0 * x * y * y / (1.0 + x * x))).abs() < 1e-11);
        prop_assert!((g[1] - (x.exp() + 2.0 * y * l)).abs() < 1e-11);
    }

    #[test]
    fn backward_is_linear_in_the_seed(x in prop::array::uniform3(0.5f64..2.0), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (tape, _) = record::<AdError, _>(&x, |v: &[Var]| {
            Ok(vec![v[0] * v[1] / v[2], v[0].sqrt() + v[2].powf(1.5)])
        }).unwrap();
        let g1 = tape.backward(&[1.0, 0.0]).unwrap();
        let g2 = tape.backward(&[0.0, 1.0]).unwrap();
        let g = tape.backward(&[a, b]).unwrap();
        for k in 0..3 {
            prop_assert!((g[k] - (a * g1[k] + b * g2[k])).abs() < 1e-12 * (1.0 + g[k].abs()));
        }
    }

    #[test]
    fn shape_functions_partition_unity(
        gimp in any::<bool>(),
        dim in 1usize..=3,
        h in prop::array::uniform3(0.1f64..3.0),
        u in prop::array::uniform3(-20.0f64..20.0),
        r in prop::array::uniform3(0.01f64..0.5),
    ) {
        let kind = if gimp { ShapeFunctionKind::Gimp } else { ShapeFunctionKind::Linear };
        let xp = [0, 1, 2].map(|a| u[a] * h[a]);
        let lp = [0, 1, 2].map(|a| r[a] * h[a]);
        prop_assert!(common::partition_of_unity_defect(kind, dim, xp, lp, h) < 1e-12);
    }

    #[test]
    fn elastic_stresses_are_objective(f in deformation(), a in -3.2f64..3.2, b in -1.5f64..1.5, c in -3.2f64..3.2) {
        let p = ElasticParams::new(2e5, 0.3);
        let q = rotation(a, b, c);
        let qf = tensor::mul(&q, &f);
        for stress in [hencky_stress::<f64>, neo_hookean_stress::<f64>] {
            let s = stress(&f, &p).unwrap();
            let rotated = tensor::mul(&q, &tensor::mul(&s, &tensor::transpose(&q)));
            let s_q = stress(&qf, &p).unwrap();
            prop_assert!(tensor::max_abs_diff(&rotated, &s_q) < 1e-8 * (1.0 + tensor::frob_norm(&s)));
        }
    }

    #[test]
    fn stretch_stress_is_coaxial(l in prop::array::uniform3(0.8f64..1.25)) {
        // Principal stretches along the axes: Hencky stress is
        // (λ tr ε I + 2 μ ε) / J with ε = ln l.
        let p = ElasticParams::new(1e4, 0.25);
        let f = [[l[0], 0.0, 0.0], [0.0, l[1], 0.0], [0.0, 0.0, l[2]]];
        let s = hencky_stress::<f64>(&f, &p).unwrap();
        let eps = l.map(f64::ln);
        let tr: f64 = eps.iter().sum();
        let j = l[0] * l[1] * l[2];
        for i in 0..3 {
            let expected = (p.lambda() * tr + 2.0 * p.mu() * eps[i]) / j;
            prop_assert!((s[i][i] - expected).abs() < 1e-9 * p.mu());
        }
    }

    #[test]
    fn sparse_lu_solves_diagonally_dominant_systems(
        n in 2usize..12,
        seed in prop::collection::vec(-1.0f64..1.0, 144),
        rhs in prop::collection::vec(-10.0f64..10.0, 12),
    ) {
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if (i as i64 - j as i64).abs() <= 2 {
                    a[i][j] = seed[i * 12 + j];
                }
            }
            a[i][i] = 6.0 + seed[i * 12 + i].abs();
        }
        let m = SparseMatrix::from_dense(&a);
        let x = linear_solve(&m, &rhs[..n]).unwrap();
        let r: Vec<f64> = m.mul_vec(&x).iter().zip(&rhs[..n]).map(|(ax, b)| ax - b).collect();
        prop_assert!(norm2(&r) < 1e-11 * (1.0 + norm2(&rhs[..n])));
    }

    #[test]
    fn terzaghi_degree_increases_with_time(t1 in 0.001f64..2.0, dt in 0.001f64..1.0) {
        let (u1, u2) = (terzaghi_degree(t1, 200), terzaghi_degree(t1 + dt, 200));
        prop_assert!((0.0..=1.0).contains(&u1) && u2 > u1);
    }

    #[test]
    fn terzaghi_pressure_is_bounded_and_vanishes_at_the_drain(z in 0.0f64..10.0, tv in 0.01f64..3.0) {
        let p = terzaghi_pressure(z, 10.0, tv, 200);
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&p));
        prop_assert!(terzaghi_pressure(0.0, 10.0, tv, 200).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Random 2D bodies on random grids: the block-seeded Jacobian equals
    /// the dense one and needs the predicted number of passes.
    #[test]
    fn sparse_jacobian_equals_dense_on_random_bodies(
        cells in (4usize..9, 3usize..7),
        hx in 0.5f64..2.0,
        aspect in 0.5f64..2.0,
        ppc in 2usize..4,
        fixed in any::<bool>(),
        gimp in any::<bool>(),
    ) {
        let h = [hx, hx * aspect, 1.0];
        let grid = Grid::new(2, [-h[0], -h[1], 0.0], h, [cells.0 + 2, cells.1 + 2, 0]).unwrap();
        let size = [cells.0 as f64 * h[0], cells.1 as f64 * h[1], 0.0];
        let mut particles = fill_box(2, [0.0; 3], size, h, ppc, 500.0, 0);
        for p in &mut particles {
            p.gravity = [1.0, -9.81, 0.0];
        }
        let rules = if fixed { vec![DirichletRule::new(1, Side::Le, 0.0, &[0, 1])] } else { vec![DirichletRule::new(0, Side::Le, 0.0, &[0])] };
        let kind = if gimp { ShapeFunctionKind::Gimp } else { ShapeFunctionKind::Linear };
        let model = MpmModel::new(grid, kind, vec![Material::NeoHookean(ElasticParams::new(1e5, 0.3))], particles, rules, SolverSettings::default()).unwrap();
        let ctx = model.p2g().unwrap();
        let du: Vec<f64> = (0..ctx.layout.len()).map(|i| 1e-3 * ((i * 7 % 11) as f64 - 5.0)).collect();
        let eq = bench::equivalence(&model, &ctx, &du, 0.5).unwrap();
        prop_assert!(eq.max_relative_difference <= 1e-12, "{}", eq.max_relative_difference);
        prop_assert_eq!(eq.sparse_passes, eq.expected_passes);
        prop_assert_eq!(eq.dense_passes, eq.dofs);
    }
}
