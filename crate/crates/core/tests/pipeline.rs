//! End-to-end properties across modules: quadruplet, chain, branches, oracle cell,
//! export.

use menhir::chain::{ideal_kernel_density, ChainState, FiniteKernelSampler};
use menhir::distributions::RngStream;
use menhir::export::{cell_csv, parse_cell_csv};
use menhir::geometry::{build_menhir, build_menhir_with, finite_branch};
use menhir::oracle::{certify_and_extend, count_vertices, duality_defects};
use menhir::palm::{initial_state, sample_limit_quadruplet, FiniteQuadrupletSampler};
use menhir::tolerances::DUALITY_REL;
use menhir::Side;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn menhir_branches_are_convex_and_descending(seed in any::<u64>()) {
        let m = build_menhir(&mut RngStream::new(seed, 0), 100, 1e-12).unwrap();
        for side in Side::BOTH {
            let b = m.branch(side);
            prop_assert!(b.len() >= 2);
            prop_assert!(b.is_y_decreasing());
            prop_assert!(b.is_convex());
        }
    }

    #[test]
    fn swapping_branch_streams_mirrors_the_menhir(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let q = sample_limit_quadruplet(&mut rng);
        let (l, r) = (rng.fork(), rng.fork());
        let a = build_menhir_with(&q, &mut l.clone(), &mut r.clone(), 30, 1e-12);
        let b = build_menhir_with(&q.mirrored(), &mut r.clone(), &mut l.clone(), 30, 1e-12);
        prop_assert_eq!(&b.left, &a.right.mirrored());
        prop_assert_eq!(&b.right, &a.left.mirrored());
    }

    #[test]
    fn finite_chain_widths_decrease(seed in any::<u64>()) {
        let lambda = 1e5;
        let mut rng = RngStream::new(seed, 0);
        let q = FiniteQuadrupletSampler::new(lambda).unwrap().sample(&mut rng).unwrap();
        let mut sampler = FiniteKernelSampler::new(lambda).unwrap();
        let mut s = initial_state(lambda, &q, Side::Right);
        for _ in 0..3 {
            let next = sampler.step(&s, &mut rng).unwrap();
            prop_assert!(next.b < s.b && next.h > 0.0);
            s = next;
        }
    }
}

#[test]
fn oracle_cell_is_a_certified_voronoi_cell_and_round_trips() {
    let lambda = 1e3;
    let mut rng = RngStream::new(11, 0);
    let mut quads = FiniteQuadrupletSampler::new(lambda).unwrap();
    for _ in 0..5 {
        let q = quads.sample(&mut rng).unwrap();
        let oc = certify_and_extend(lambda, &q, &mut rng, None).unwrap();
        let n = count_vertices(&oc.cell);
        assert!(n >= 3);
        let text = cell_csv("", &oc.cell).unwrap();
        let rows = parse_cell_csv(&text).unwrap();
        assert_eq!(rows.len(), oc.cell.vertices.len());
        for (row, v) in rows.iter().zip(&oc.cell.vertices) {
            assert_eq!([row.x, row.y], *v);
        }
        let pts = oc.config.points();
        // The central nucleus is second in `points()`.
        assert_eq!(duality_defects(&pts, 1, &oc.cell, DUALITY_REL), 0);
    }
}

#[test]
fn finite_branch_starts_at_the_typical_vertex() {
    let lambda = 1e4;
    let mut rng = RngStream::new(5, 0);
    let q = FiniteQuadrupletSampler::new(lambda)
        .unwrap()
        .sample(&mut rng)
        .unwrap();
    let mut sampler = FiniteKernelSampler::new(lambda).unwrap();
    let mut trace = vec![initial_state(lambda, &q, Side::Left)];
    for _ in 0..2 {
        let next = sampler.step(trace.last().unwrap(), &mut rng).unwrap();
        trace.push(next);
    }
    let b = finite_branch(lambda, &q, Side::Left, &trace).unwrap();
    assert_eq!(b.vertices[0], [0.0, lambda]);
    assert!(b.is_y_decreasing());
}

#[test]
fn ideal_kernel_vanishes_outside_the_triangle() {
    let s = ChainState::new(1.0, 1.0);
    assert_eq!(ideal_kernel_density(&s, (1.2, 0.5)), 0.0);
    assert_eq!(ideal_kernel_density(&s, (0.5, 1.2)), 0.0);
    assert!(ideal_kernel_density(&s, (0.5, 0.5)) > 0.0);
}
