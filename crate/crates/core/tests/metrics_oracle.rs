use promptlens_core::metrics::{consistency, fidelity, pearson};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Reported model accuracies and the three per-model attribution columns.
const ACCURACIES: [f64; 3] = [0.70, 0.688, 0.785];
const ATT_ACC: [f64; 3] = [0.70, 0.76, 0.82];
const ATT_F1: [f64; 3] = [0.59, 0.40, 0.67];
const ATT_AUROC: [f64; 3] = [0.84, 0.84, 0.88];

#[test]
fn faithfulness_correlations_match_published_values() {
    for (column, want) in [(ATT_AUROC, 0.994), (ATT_ACC, 0.804), (ATT_F1, 0.802)] {
        let r = pearson(&ACCURACIES, &column).unwrap();
        assert!((r - want).abs() <= 0.002, "{r} vs {want}");
    }
}

#[test]
fn small_fidelity_example_matches_hand_computation() {
    let f = [1.0, 2.0, 3.0, 4.0];
    let g = [1.0, 2.0, 3.0, 5.0];
    let w = [1.0; 4];
    let r = fidelity(&f, &g, &w, 1).unwrap();

    // straight-line computation
    let n = 4.0;
    let diffs = [0.0, 0.0, 0.0, -1.0f64];
    let l1 = (diffs[0].abs() + diffs[1].abs() + diffs[2].abs() + diffs[3].abs()) / n;
    let l2 =
        (diffs[0] * diffs[0] + diffs[1] * diffs[1] + diffs[2] * diffs[2] + diffs[3] * diffs[3]) / n;
    let mean = (1.0 + 2.0 + 3.0 + 4.0) / n;
    let tss = (1.0 - mean) * (1.0 - mean)
        + (2.0 - mean) * (2.0 - mean)
        + (3.0 - mean) * (3.0 - mean)
        + (4.0 - mean) * (4.0 - mean);
    let r2 = 1.0 - 1.0 / tss;
    let adj = 1.0 - (1.0 - r2) * (n - 1.0) / (n - 1.0 - 1.0);

    assert_eq!(l1, 0.25);
    assert_eq!(l2, 0.25);
    assert!((r.mean_l1 - l1).abs() < 1e-15);
    assert!((r.mean_l2 - l2).abs() < 1e-15);
    assert!((r.wmse - l2).abs() < 1e-15);
    assert!((r.wmae - l1).abs() < 1e-15);
    assert!((r.r2.unwrap() - r2).abs() < 1e-15);
    assert!((r.r2_w.unwrap() - r2).abs() < 1e-15);
    assert!((r.r2_w_adj.unwrap() - adj).abs() < 1e-15);
    assert!((r2 - 0.8).abs() < 1e-12);
    assert!((adj - 0.7).abs() < 1e-12);
}

#[test]
fn weighted_fidelity_matches_direct_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let n = rng.gen_range(3..20);
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g: Vec<f64> = f.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let r = fidelity(&f, &g, &w, 1).unwrap();

        let mut sw = 0.0;
        let mut swf = 0.0;
        let mut swe2 = 0.0;
        let mut swe1 = 0.0;
        let mut rss = 0.0;
        for i in 0..n {
            let e = f[i] - g[i];
            sw += w[i];
            swf += w[i] * f[i];
            swe2 += w[i] * e * e;
            swe1 += w[i] * e.abs();
            rss += e * e;
        }
        let fw = swf / sw;
        let mut tss_w = 0.0;
        for v in &f {
            tss_w += (v - fw) * (v - fw);
        }
        assert!((r.wmse - swe2 / sw).abs() < 1e-12);
        assert!((r.wmae - swe1 / sw).abs() < 1e-12);
        assert!((r.r2_w.unwrap() - (1.0 - rss / tss_w)).abs() < 1e-12);
    }
}

#[test]
fn consistency_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let runs: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let stats = consistency(&runs).unwrap();
    for t in 0..6 {
        let mut sum = 0.0;
        for r in &runs {
            sum += r[t];
        }
        let mean = sum / 10.0;
        let mut ss = 0.0;
        for r in &runs {
            ss += (r[t] - mean) * (r[t] - mean);
        }
        let var = ss / 9.0;
        assert!((stats.variance[t] - var).abs() < 1e-12);
        assert!((stats.std[t] - var.sqrt()).abs() < 1e-12);
    }
}
