//! Property tests of the structural invariants.

use oscmode::baselines::pca_fit;
use oscmode::latent::{gkde, normalize_joint, GridDistribution, KdeConfig, MASS_TOL};
use oscmode::linalg::Matrix;
use oscmode::synth::{make_windows, normalize_features, simulate_ring, RingConfig, TimeSeriesDataset};
use oscmode::vae::{kl_divergence, LatentGaussian};
use oscmode::wasserstein::{emd_exact, Backend, Benchmark};
use proptest::prelude::*;

fn dataset(rows: usize, cols: usize, values: &[f64]) -> TimeSeriesDataset {
    let mut m = Matrix::from_fn(rows, cols, |r, c| values[(r * cols + c) % values.len()] * (1.0 + c as f64));
    for r in 0..rows {
        m[(r, cols - 1)] = r as f64 * 0.01;
    }
    let meta = RingConfig::desk_default("p", &[], 0);
    TimeSeriesDataset {
        features: m,
        label: "p".into(),
        meta,
    }
}

fn grid(rows: usize, cols: usize, w: &[f64]) -> GridDistribution {
    let m = Matrix::from_fn(rows, cols, |i, j| w[(i * cols + j) % w.len()]);
    GridDistribution::normalized(m, [[0.0, 1.0], [0.0, 1.0]]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_count_and_starts(n in 1usize..60, k in 1usize..20, stride in 1usize..10) {
        let ds = dataset(n, 3, &[0.5, -1.0, 2.0]);
        match make_windows(&ds, k, stride) {
            Ok(w) => {
                prop_assert!(k <= n);
                prop_assert_eq!(w.len(), (n - k) / stride + 1);
                for (i, win) in w.iter().enumerate() {
                    prop_assert_eq!(win.start_index, i * stride);
                    prop_assert_eq!(win.data.row(0), ds.features.row(i * stride));
                }
            }
            Err(_) => prop_assert!(k > n),
        }
    }

    #[test]
    fn stride_k_windows_tile_the_prefix(n in 2usize..80, k in 1usize..12) {
        prop_assume!(k <= n);
        let ds = dataset(n, 4, &[0.1, 0.7, -0.3, 1.9, 0.4]);
        let tiles: Vec<f64> = make_windows(&ds, k, k).unwrap().iter().flat_map(|w| w.data.as_slice().to_vec()).collect();
        prop_assert_eq!(&tiles[..], &ds.features.as_slice()[..(n / k) * k * 4]);
    }

    #[test]
    fn normalization_roundtrips(values in proptest::collection::vec(-50.0f64..50.0, 7..40), rows in 2usize..30) {
        let ds = dataset(rows, 5, &values);
        let (z, stats) = normalize_features(&ds).unwrap();
        let back = stats.invert(&z).unwrap();
        for (a, b) in back.features.as_slice().iter().zip(ds.features.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        for c in 0..4 {
            if stats.std[c] >= oscmode::synth::STD_EPS {
                let col = z.features.column(c);
                let mean = col.iter().sum::<f64>() / rows as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kl_is_nonnegative(m0 in -5.0f64..5.0, m1 in -5.0f64..5.0, l0 in -8.0f64..8.0, l1 in -8.0f64..8.0) {
        let g = LatentGaussian { mu: [m0, m1], logvar: [l0, l1] };
        prop_assert!(kl_divergence(&g) >= 0.0);
    }

    #[test]
    fn kde_grid_has_unit_mass(pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..40), g in 2usize..30) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a, b]).collect();
        let spread = pts.iter().any(|p| (p[0] - pts[0][0]).abs() > 1e-6)
            && pts.iter().any(|p| (p[1] - pts[0][1]).abs() > 1e-6);
        prop_assume!(spread);
        if let Ok(grid) = gkde(&pts, &KdeConfig { grid: g, ..Default::default() }) {
            let total: f64 = grid.masses.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < MASS_TOL);
            prop_assert!(grid.masses.as_slice().iter().all(|&m| m >= 0.0));
        }
    }

    #[test]
    fn joint_frame_maps_into_unit_square(a in proptest::collection::vec((-9.0f64..9.0, -9.0f64..9.0), 1..20),
                                         b in proptest::collection::vec((-9.0f64..9.0, -9.0f64..9.0), 1..20)) {
        let sets = vec![
            a.into_iter().map(|(x, y)| [x, y]).collect::<Vec<_>>(),
            b.into_iter().map(|(x, y)| [x, y]).collect::<Vec<_>>(),
        ];
        let (out, _) = normalize_joint(&sets).unwrap();
        for p in out.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
        }
    }

    #[test]
    fn exact_emd_symmetric_and_zero_on_self(w in proptest::collection::vec(0.0f64..1.0, 16), v in proptest::collection::vec(0.0f64..1.0, 16),
                                            rows in 1usize..5, cols in 1usize..5) {
        prop_assume!(w.iter().take(rows * cols).sum::<f64>() > 1e-3);
        prop_assume!(v.iter().take(rows * cols).sum::<f64>() > 1e-3);
        let p = grid(rows, cols, &w[..rows * cols]);
        let q = grid(rows, cols, &v[..rows * cols]);
        let (pq, plan) = emd_exact(&p, &q).unwrap();
        let (qp, _) = emd_exact(&q, &p).unwrap();
        prop_assert_eq!(pq.to_bits(), qp.to_bits());
        prop_assert!(pq >= 0.0);
        prop_assert!(emd_exact(&p, &p).unwrap().0.abs() < 1e-12);
        let (rm, cm) = plan.marginals(rows * cols);
        for k in 0..rows * cols {
            prop_assert!((rm[k] - p.masses.as_slice()[k]).abs() < 1e-9);
            prop_assert!((cm[k] - q.masses.as_slice()[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn pca_rows_orthonormal_and_variances_sorted(values in proptest::collection::vec(-3.0f64..3.0, 30..90), f in 2usize..6) {
        let n = values.len() / f;
        prop_assume!(n >= 3);
        let x = Matrix::from_fn(n, f, |r, c| values[r * f + c]);
        let m = pca_fit(&x).unwrap();
        prop_assert!(m.explained_variance[0] >= m.explained_variance[1]);
        let g = m.components.matmul(&m.components.transpose()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g[(i, j)] - want).abs() < 1e-10);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_a_pure_function(seed in any::<u64>(), k in 0.0f64..2.0) {
        let mut cfg = RingConfig::desk_default("m", &[2], seed);
        cfg.n_nodes = 4;
        cfg.natural_freq = vec![1.5; 4];
        cfg.coupling_strength = k;
        cfg.duration = 2.0;
        cfg.sample_rate = 50.0;
        let a = simulate_ring(&cfg).unwrap();
        let b = simulate_ring(&cfg).unwrap();
        let bits = |d: &TimeSeriesDataset| d.features.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
        prop_assert!(a.features.is_finite());
    }

    #[test]
    fn benchmarks_classify_as_themselves(centres in proptest::collection::vec((0.15f64..0.85, 0.15f64..0.85), 2..4)) {
        let blob = |cx: f64, cy: f64| {
            let m = Matrix::from_fn(8, 8, |i, j| {
                let x = (j as f64 + 0.5) / 8.0 - cx;
                let y = (i as f64 + 0.5) / 8.0 - cy;
                (-(x * x + y * y) / 0.02).exp()
            });
            GridDistribution::normalized(m, [[0.0, 1.0], [0.0, 1.0]]).unwrap()
        };
        let benchmarks: Vec<Benchmark> = centres
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Benchmark { label: i.to_string(), grid: blob(x, y) })
            .collect();
        let distinct = benchmarks.iter().enumerate().all(|(i, a)| {
            benchmarks[i + 1..].iter().all(|b| a.grid.masses.as_slice().iter().zip(b.grid.masses.as_slice()).any(|(p, q)| (p - q).abs() > 1e-6))
        });
        prop_assume!(distinct);
        let wd = oscmode::wasserstein::wd_matrix(&benchmarks, &benchmarks, Backend::Exact).unwrap();
        prop_assert_eq!(wd.predictions(), (0..benchmarks.len()).collect::<Vec<_>>());
    }
}
