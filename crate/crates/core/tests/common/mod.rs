#![allow(dead_code)]

use hka::mc::{stream_rng, SimRng};
use hka::processes::{ProcessSpec, State};

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Critical value of the two-sample KS test at the 1% level.
pub fn ks_critical_1pct(na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    1.628 * ((na + nb) / (na * nb)).sqrt()
}

pub fn draws(spec: &ProcessSpec, x: f64, steps: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut rng: SimRng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let mut s = State::scalar(x);
            for &dt in steps {
                s = spec.sample_transition(&s, dt, &mut rng).unwrap();
            }
            s[0]
        })
        .collect()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
