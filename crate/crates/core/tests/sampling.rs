use gridflow::sampling::{adaptive_lhs_batch, lhs_batch, sobol_batch, uniform_batch, SamplingConfig, Sobol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIRST_16_DIM3: [[f64; 3]; 16] = [
    [0.0, 0.0, 0.0],
    [0.5, 0.5, 0.5],
    [0.75, 0.25, 0.25],
    [0.25, 0.75, 0.75],
    [0.375, 0.375, 0.625],
    [0.875, 0.875, 0.125],
    [0.625, 0.125, 0.875],
    [0.125, 0.625, 0.375],
    [0.1875, 0.3125, 0.9375],
    [0.6875, 0.8125, 0.4375],
    [0.9375, 0.0625, 0.6875],
    [0.4375, 0.5625, 0.1875],
    [0.3125, 0.1875, 0.3125],
    [0.8125, 0.6875, 0.8125],
    [0.5625, 0.4375, 0.0625],
    [0.0625, 0.9375, 0.5625],
];

#[test]
fn sobol_first_points() {
    let s = Sobol::new(3).unwrap();
    for (i, row) in FIRST_16_DIM3.iter().enumerate() {
        assert_eq!(s.point(i as u64), row.to_vec(), "point {i}");
    }
}

#[test]
fn sobol_high_dimensions() {
    let s = Sobol::new(1000).unwrap();
    let expected = [
        [0.0, 0.0, 0.0, 0.0],
        [0.5, 0.5, 0.5, 0.5],
        [0.75, 0.25, 0.25, 0.75],
        [0.25, 0.75, 0.75, 0.25],
        [0.875, 0.625, 0.375, 0.125],
        [0.375, 0.125, 0.875, 0.625],
        [0.125, 0.875, 0.125, 0.875],
        [0.625, 0.375, 0.625, 0.375],
    ];
    for (i, row) in expected.iter().enumerate() {
        let p = s.point(i as u64);
        assert_eq!([p[10], p[100], p[500], p[999]], *row, "point {i}");
    }

    let s = Sobol::new(1024).unwrap();
    let scaled: [[u64; 4]; 4] = [
        [974127104, 378535936, 445644800, 766509056],
        [437256192, 915406848, 982515712, 229638144],
        [168820736, 110100480, 177209344, 498073600],
        [705691648, 646971392, 714080256, 1034944512],
    ];
    for (k, row) in scaled.iter().enumerate() {
        let p = s.point(1000 + k as u64);
        let got = [5, 50, 700, 1023].map(|d| p[d] * (1u64 << 30) as f64);
        assert_eq!(got, row.map(|v| v as f64), "point {}", 1000 + k);
    }
}

/// Largest gap between the empirical CDF of `xs` and the uniform CDF on [0, 1).
fn star_discrepancy(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn sobol_projections_beat_random() {
    let dim = 22;
    let n = 256;
    let sobol = sobol_batch(dim, n, 0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for d in 0..dim {
        let ds = star_discrepancy(sobol.iter().map(|u| u.0[d] + 0.5).collect());
        let mut random: Vec<f64> = (0..20)
            .map(|_| star_discrepancy(uniform_batch(1, n, &mut rng, 0.5).iter().map(|u| u.0[0] + 0.5).collect()))
            .collect();
        random.sort_by(f64::total_cmp);
        assert!(ds < random[10], "dim {d}: {ds} vs {}", random[10]);
    }
}

#[test]
fn lhs_stratification_at_training_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (dim, n) in [(22, 64), (67, 128)] {
        let delta = 0.1;
        let pts = lhs_batch(dim, n, &mut rng, delta);
        for d in 0..dim {
            let mut hist = vec![0u32; n];
            for p in &pts {
                let s = ((p.0[d] + delta) / (2.0 * delta) * n as f64).floor() as usize;
                hist[s.min(n - 1)] += 1;
            }
            assert!(hist.iter().all(|&c| c == 1), "({dim}, {n}) dim {d}");
        }
    }
}

#[test]
fn adaptive_centers_match_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = SamplingConfig::default();
    for trial in 0..100 {
        let n: usize = rng.random_range(2..80);
        let dim: usize = rng.random_range(1..12);
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n.div_ceil(2)).map(|_| rng.random_range(0..6) as f64).collect();
        let given = scores.clone();
        let out = adaptive_lhs_batch(move |_| given, dim, n, &mut rng, &cfg).unwrap();
        let k = ((0.25 * scores.len() as f64).ceil() as usize).max(1);
        let mut oracle: Vec<(f64, usize)> = scores.iter().enumerate().map(|(i, &s)| (-s, i)).collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<usize> = oracle[..k].iter().map(|&(_, i)| i).collect();
        assert_eq!(out.centers, expected, "trial {trial}");
        assert_eq!(out.points.len(), n);
    }
}

#[test]
fn local_points_are_near_their_centers() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = SamplingConfig::default();
    let out = adaptive_lhs_batch(|p| p.iter().map(|u| u.0[0]).collect(), 8, 64, &mut rng, &cfg).unwrap();
    let n_init = out.n_initial();
    for (k, p) in out.points[n_init..].iter().enumerate() {
        let c = &out.points[out.centers[k % out.centers.len()]];
        for (a, b) in p.0.iter().zip(&c.0) {
            assert!((a - b).abs() <= 6.0 * cfg.local_noise_sd());
        }
    }
}
