use gvstab::markov_channel::{back_to_back_failure, consecutive_failure_prob, PbbForm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

const SHARDS: u64 = 100;

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn gain(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Draw pairs of exponential SNRs whose complex gains have correlation
/// rho and count how often the second fails given the first did.
#[test]
fn back_to_back_failure_against_correlated_draws() {
    let (p, rho): (f64, f64) = (0.1, 0.99);
    let pairs_per_shard = 1_000_000u64;
    // |g|² with unit-variance components is 2·Exp(1).
    let threshold = -2.0 * (-p).ln_1p();
    let innovation = (1.0 - rho * rho).sqrt();

    let counts: Vec<(u64, u64)> = (0..SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + shard);
            let (mut first, mut both) = (0u64, 0u64);
            for _ in 0..pairs_per_shard {
                let a = gain(&mut rng);
                if a.0 * a.0 + a.1 * a.1 >= threshold {
                    continue;
                }
                first += 1;
                let w = gain(&mut rng);
                let b = (rho * a.0 + innovation * w.0, rho * a.1 + innovation * w.1);
                if b.0 * b.0 + b.1 * b.1 < threshold {
                    both += 1;
                }
            }
            (first, both)
        })
        .collect();

    let first: u64 = counts.iter().map(|c| c.0).sum();
    let both: u64 = counts.iter().map(|c| c.1).sum();
    let empirical = both as f64 / first as f64;
    let sigma = (empirical * (1.0 - empirical) / first as f64).sqrt();
    let q = back_to_back_failure(p, rho, PbbForm::Corrected).unwrap();
    assert!(
        (q - empirical).abs() < 3.0 * sigma,
        "analytic {q}, simulated {empirical} ± {sigma}"
    );
    let marginal = first as f64 / (SHARDS * pairs_per_shard) as f64;
    assert!(
        (marginal - p).abs() < 3.0 * (p * (1.0 - p) / (SHARDS * pairs_per_shard) as f64).sqrt()
    );
}

/// Fraction of positions that open a window of n failures in a two-state
/// chain with stationary failure probability p and failure persistence q.
fn window_frequencies(
    p: f64,
    q: f64,
    steps_per_shard: u64,
    max_n: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let recover_to_fail = p * (1.0 - q) / (1.0 - p);
    (0..SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + shard);
            let mut failed = rng.random::<f64>() < p;
            let mut run = 0usize;
            let mut hits = vec![0u64; max_n];
            for _ in 0..steps_per_shard {
                if failed {
                    run += 1;
                    for h in hits.iter_mut().take(run.min(max_n)) {
                        *h += 1;
                    }
                } else {
                    run = 0;
                }
                let u: f64 = rng.random();
                failed = if failed { u < q } else { u < recover_to_fail };
            }
            hits.iter()
                .map(|&h| h as f64 / steps_per_shard as f64)
                .collect()
        })
        .collect()
}

fn check_bursts(p: f64, rho: f64, total_steps: u64, max_n: usize, seed: u64) {
    let q = back_to_back_failure(p, rho, PbbForm::Corrected).unwrap();
    let shards = window_frequencies(p, q, total_steps / SHARDS, max_n, seed);
    for n in 1..=max_n {
        let per_shard: Vec<f64> = shards.iter().map(|s| s[n - 1]).collect();
        let (mean, stderr) = mean_and_stderr(&per_shard);
        let analytic = consecutive_failure_prob(n as u32, p, q)
            .unwrap()
            .probability;
        assert!(
            (mean - analytic).abs() < 3.0 * stderr,
            "p={p} rho={rho} n={n}: analytic {analytic}, simulated {mean} ± {stderr}"
        );
    }
}

#[test]
fn burst_frequencies_match_run_probabilities() {
    check_bursts(0.05, 0.95, 10_000_000, 4, 0xb0_0000);
    check_bursts(0.2, 0.6, 10_000_000, 4, 0xb1_0000);
}

#[test]
fn five_failure_bursts_at_high_correlation() {
    check_bursts(0.3, 0.9, 100_000_000, 5, 0xb2_0000);
}
