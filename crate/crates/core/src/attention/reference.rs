//! Loop-level oracles for the attention kernels and the `kernels-check`
//! self test. These deliberately avoid `Matrix::matmul` and the shared
//! softmax so they exercise a separate code path.

#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    aan_context, softmax_rows, standard_attention, talking_heads_attention, FfnParams, Matrix,
};

fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Prefix means by direct summation, with the FFN bypassed.
pub fn prefix_mean(y: &Matrix) -> Matrix {
    Matrix::from_fn(y.rows(), y.cols(), |i, j| {
        let mut sum = 0.0;
        for r in 0..=i {
            sum += y.get(r, j);
        }
        sum / (i + 1) as f64
    })
}

pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    let scale = (q.cols() as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let logits: Vec<f64> = (0..k.rows())
            .map(|j| {
                (0..q.cols())
                    .map(|c| q.get(i, c) * k.get(j, c))
                    .sum::<f64>()
                    / scale
            })
            .collect();
        let p = naive_softmax(&logits);
        for d in 0..v.cols() {
            out.set(i, d, (0..k.rows()).map(|j| p[j] * v.get(j, d)).sum());
        }
    }
    out
}

/// Talking-heads attention written as explicit sums over
/// (head, query, key).
pub fn talking_heads(
    q: &[Matrix],
    k: &[Matrix],
    v: &[Matrix],
    w_l: &Matrix,
    w_a: &Matrix,
) -> Vec<Matrix> {
    let heads = q.len();
    let (m, dk) = q[0].shape();
    let n = k[0].rows();
    let scale = (dk as f64).sqrt();

    // logits[h][i][j]
    let mut logits = vec![vec![vec![0.0; n]; m]; heads];
    for h in 0..heads {
        for i in 0..m {
            for j in 0..n {
                let mut dot = 0.0;
                for c in 0..dk {
                    dot += q[h].get(i, c) * k[h].get(j, c);
                }
                logits[h][i][j] = dot / scale;
            }
        }
    }
    let mut probs = vec![vec![vec![0.0; n]; m]; heads];
    for g in 0..heads {
        for i in 0..m {
            let mixed: Vec<f64> = (0..n)
                .map(|j| (0..heads).map(|h| logits[h][i][j] * w_l.get(h, g)).sum())
                .collect();
            probs[g][i] = naive_softmax(&mixed);
        }
    }
    (0..heads)
        .map(|g| {
            let dv = v[g].cols();
            let mut out = Matrix::zeros(m, dv);
            for i in 0..m {
                for d in 0..dv {
                    let mut acc = 0.0;
                    for j in 0..n {
                        let score: f64 = (0..heads).map(|h| probs[h][i][j] * w_a.get(h, g)).sum();
                        acc += score * v[g].get(j, d);
                    }
                    out.set(i, d, acc);
                }
            }
            out
        })
        .collect()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelsCheck {
    pub seed: u64,
    pub instances: usize,
    pub checks: Vec<CheckLine>,
}

impl KernelsCheck {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    worst: f64,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            worst: 0.0,
        }
    }

    fn see(&mut self, deviation: f64) {
        // NaN counts as a failure.
        self.worst = if deviation.is_nan() {
            f64::INFINITY
        } else {
            self.worst.max(deviation)
        };
    }

    fn finish(self) -> CheckLine {
        CheckLine {
            name: self.name,
            max_deviation: self.worst,
            tolerance: self.tolerance,
            passed: self.worst <= self.tolerance,
        }
    }
}

/// Runs every kernel against its oracle on `instances` random draws.
pub fn kernels_check(seed: u64, instances: usize) -> KernelsCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aan = Tracker::new("aan_vs_prefix_mean", 1e-12);
    let mut causal = Tracker::new("aan_causality", 0.0);
    let mut std_attn = Tracker::new("standard_vs_loop_oracle", 1e-12);
    let mut row_sums = Tracker::new("softmax_row_sums", 1e-12);
    let mut identity = Tracker::new("talking_heads_identity_vs_standard", 1e-9);
    let mut mixed = Tracker::new("talking_heads_vs_loop_oracle", 1e-9);

    for _ in 0..instances {
        let t = rng.gen_range(1..=16);
        let d = rng.gen_range(1..=16);
        let y = random_matrix(&mut rng, t, d);
        let ffn = FfnParams::identity(d);
        let out = aan_context(&y, &ffn).expect("shapes agree");
        aan.see(out.max_abs_diff(&prefix_mean(&y)));

        let j = rng.gen_range(0..t);
        let mut perturbed = y.clone();
        perturbed.set(j, rng.gen_range(0..d), rng.gen_range(-5.0..5.0));
        let out2 = aan_context(&perturbed, &ffn).expect("shapes agree");
        let earlier = (0..j)
            .flat_map(|r| (0..d).map(move |c| (r, c)))
            .map(|(r, c)| (out.get(r, c) - out2.get(r, c)).abs())
            .fold(0.0, f64::max);
        causal.see(earlier);

        let heads = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=16);
        let n = rng.gen_range(1..=16);
        let dk = rng.gen_range(1..=16);
        let dv = rng.gen_range(1..=16);
        let q: Vec<_> = (0..heads).map(|_| random_matrix(&mut rng, m, dk)).collect();
        let k: Vec<_> = (0..heads).map(|_| random_matrix(&mut rng, n, dk)).collect();
        let v: Vec<_> = (0..heads).map(|_| random_matrix(&mut rng, n, dv)).collect();

        let single = standard_attention(&q[0], &k[0], &v[0]).expect("shapes agree");
        std_attn.see(single.max_abs_diff(&attention(&q[0], &k[0], &v[0])));

        let logits = q[0].matmul(&k[0].transpose()).expect("shapes agree");
        let p = softmax_rows(&logits.scale(1.0 / (dk as f64).sqrt()));
        for i in 0..p.rows() {
            row_sums.see((p.row(i).iter().sum::<f64>() - 1.0).abs());
        }

        let eye = Matrix::identity(heads);
        let th = talking_heads_attention(&q, &k, &v, &eye, &eye).expect("shapes agree");
        for h in 0..heads {
            let reference = standard_attention(&q[h], &k[h], &v[h]).expect("shapes agree");
            identity.see(th[h].max_abs_diff(&reference));
        }

        let w_l = random_matrix(&mut rng, heads, heads);
        let w_a = random_matrix(&mut rng, heads, heads);
        let th = talking_heads_attention(&q, &k, &v, &w_l, &w_a).expect("shapes agree");
        let oracle = talking_heads(&q, &k, &v, &w_l, &w_a);
        for (a, b) in th.iter().zip(&oracle) {
            mixed.see(a.max_abs_diff(b));
        }
    }

    KernelsCheck {
        seed,
        instances,
        checks: [aan, causal, std_attn, row_sums, identity, mixed]
            .into_iter()
            .map(Tracker::finish)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_check_passes() {
        let report = kernels_check(11, 25);
        for line in &report.checks {
            assert!(
                line.passed,
                "{} deviated by {}",
                line.name, line.max_deviation
            );
        }
    }
}
