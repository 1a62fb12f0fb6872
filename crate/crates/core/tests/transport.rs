mod oracles;

use oscmode::latent::{gkde, GridDistribution, KdeConfig};
use oscmode::linalg::Matrix;
use oscmode::wasserstein::{classify, distance, emd_exact, sinkhorn, wd_matrix, Backend, Benchmark, SinkhornConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn exact_matches_brute_force_on_small_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let rows = rng.random_range(1..=3);
        let cols = rng.random_range(1..=3);
        let p = oracles::random_unit_grid(rows, cols, 8, &mut rng);
        let q = oracles::random_unit_grid(rows, cols, 8, &mut rng);
        let (got, _) = emd_exact(&p, &q).unwrap();
        let want = oracles::brute_force_emd(&p, &q, 8);
        assert!((got - want).abs() < 1e-9, "{rows}x{cols}: {got} vs {want}");
    }
}

#[test]
fn exact_is_a_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let a = oracles::random_dense_grid(5, 5, &mut rng);
        let b = oracles::random_dense_grid(5, 5, &mut rng);
        let c = oracles::random_dense_grid(5, 5, &mut rng);
        let ab = emd_exact(&a, &b).unwrap().0;
        let ba = emd_exact(&b, &a).unwrap().0;
        let bc = emd_exact(&b, &c).unwrap().0;
        let ac = emd_exact(&a, &c).unwrap().0;
        assert!((ab - ba).abs() < 1e-9);
        assert!(ac <= ab + bc + 1e-9, "{ac} > {ab} + {bc}");
        assert!(emd_exact(&a, &a).unwrap().0.abs() < 1e-12);
    }
}

#[test]
fn exact_plan_has_the_input_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let p = oracles::random_dense_grid(6, 4, &mut rng);
        let q = oracles::random_dense_grid(6, 4, &mut rng);
        let (value, plan) = emd_exact(&p, &q).unwrap();
        let (rm, cm) = plan.marginals(24);
        for k in 0..24 {
            assert!((rm[k] - p.masses.as_slice()[k]).abs() < 1e-9);
            assert!((cm[k] - q.masses.as_slice()[k]).abs() < 1e-9);
        }
        assert!((plan.cost - value).abs() < 1e-12);
    }
}

#[test]
fn shifting_both_grids_keeps_the_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let a = Matrix::from_fn(3, 3, |_, _| rng.random_range(0.0..1.0f64));
        let b = Matrix::from_fn(3, 3, |_, _| rng.random_range(0.0..1.0f64));
        let place = |m: &Matrix<f64>, di: usize, dj: usize| {
            let mut big = Matrix::zeros(6, 6);
            for i in 0..3 {
                for j in 0..3 {
                    big[(i + di, j + dj)] = m[(i, j)];
                }
            }
            GridDistribution::normalized(big, [[0.0, 1.0], [0.0, 1.0]]).unwrap()
        };
        let d0 = emd_exact(&place(&a, 0, 0), &place(&b, 0, 0)).unwrap().0;
        let d1 = emd_exact(&place(&a, 2, 3), &place(&b, 2, 3)).unwrap().0;
        assert!((d0 - d1).abs() < 1e-9, "{d0} vs {d1}");
    }
}

#[test]
fn translated_copy_costs_the_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let block = Matrix::from_fn(2, 2, |_, _| rng.random_range(0.1..1.0f64));
    let mut p = Matrix::zeros(4, 4);
    let mut q = Matrix::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            p[(i, j)] = block[(i, j)];
            q[(i + 2, j + 1)] = block[(i, j)];
        }
    }
    let p = GridDistribution::normalized(p, [[0.0, 1.0], [0.0, 1.0]]).unwrap();
    let q = GridDistribution::normalized(q, [[0.0, 1.0], [0.0, 1.0]]).unwrap();
    // a rigid translation is optimal for the Euclidean ground cost
    let want = (0.25f64.powi(2) + 0.5f64.powi(2)).sqrt();
    assert!((emd_exact(&p, &q).unwrap().0 - want).abs() < 1e-9);
}

#[test]
fn sinkhorn_tracks_exact_on_dense_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let cfg = SinkhornConfig::default();
    for _ in 0..50 {
        let p = oracles::random_dense_grid(8, 8, &mut rng);
        let q = oracles::random_dense_grid(8, 8, &mut rng);
        let exact = emd_exact(&p, &q).unwrap().0;
        let s = sinkhorn(&p, &q, &cfg).unwrap();
        assert!(s.violation < cfg.tolerance);
        assert!((s.value - exact).abs() / exact < 0.02, "{} vs {exact}", s.value);
        assert!(s.value >= exact - 1e-6, "{} below the optimum {exact}", s.value);
    }
}

#[test]
fn sinkhorn_self_distance_vanishes_on_full_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pts: Vec<[f64; 2]> = (0..300)
        .map(|_| [rng.random_range(0.2..0.6), rng.random_range(0.3..0.8)])
        .collect();
    let g = gkde(&pts, &KdeConfig::default()).unwrap();
    assert_eq!(g.shape(), (100, 100));
    let s = sinkhorn(&g, &g, &SinkhornConfig::default()).unwrap();
    assert!(s.value < 1e-3, "{s:?}");
}

#[test]
fn distance_is_symmetric_for_both_backends() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let p = oracles::random_dense_grid(7, 7, &mut rng);
    let q = oracles::random_dense_grid(7, 7, &mut rng);
    for backend in [Backend::Exact, Backend::Sinkhorn] {
        let a = distance(&p, &q, backend).unwrap();
        let b = distance(&q, &p, backend).unwrap();
        assert!((a - b).abs() < 1e-9, "{backend:?}: {a} vs {b}");
    }
}

fn blob(cx: f64, cy: f64, n: usize) -> GridDistribution {
    let m = Matrix::from_fn(n, n, |i, j| {
        let x = (j as f64 + 0.5) / n as f64 - cx;
        let y = (i as f64 + 0.5) / n as f64 - cy;
        (-(x * x + y * y) / 0.01).exp()
    });
    GridDistribution::normalized(m, [[0.0, 1.0], [0.0, 1.0]]).unwrap()
}

#[test]
fn classify_picks_the_nearest_benchmark() {
    let centres = [(0.25, 0.25), (0.75, 0.25), (0.5, 0.75)];
    let benchmarks: Vec<Benchmark> = centres
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Benchmark {
            label: format!("mode{i}"),
            grid: blob(x, y, 12),
        })
        .collect();
    for (i, &(x, y)) in centres.iter().enumerate() {
        let test = blob(x + 0.05, y - 0.04, 12);
        for backend in [Backend::Exact, Backend::Sinkhorn] {
            let c = classify(&test, &benchmarks, backend).unwrap();
            assert_eq!(c.index, i);
            assert_eq!(c.label, format!("mode{i}"));
        }
    }
}

#[test]
fn wd_matrix_of_benchmarks_against_themselves() {
    let benchmarks: Vec<Benchmark> = [(0.3, 0.3), (0.7, 0.4), (0.4, 0.7), (0.7, 0.8)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Benchmark {
            label: format!("b{i}"),
            grid: blob(x, y, 10),
        })
        .collect();
    let wd = wd_matrix(&benchmarks, &benchmarks, Backend::Exact).unwrap();
    assert_eq!(wd.predictions(), vec![0, 1, 2, 3]);
    for i in 0..4 {
        assert!(wd.values[(i, i)].abs() < 1e-12);
        for j in 0..4 {
            assert!((wd.values[(i, j)] - wd.values[(j, i)]).abs() < 1e-9);
        }
    }
}
