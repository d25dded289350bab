//! Wall-clock comparison of factored kernel attention and softmax
//! attention over growing token counts.

use std::fmt::Write as _;
use std::time::Instant;

use hrmedseg_core::cost::{dgla_attention_flops, softmax_attention_flops};
use hrmedseg_core::encoder::dgla_factored;
use hrmedseg_tensor::{softmax_attention, Tensor};

use crate::error::Result;
use crate::gradcheck::uniform;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub n: usize,
    pub dgla_seconds: f64,
    pub softmax_seconds: f64,
    pub dgla_flops: u64,
    pub softmax_flops: u64,
}

fn best_of(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Minimum time over `reps` runs for each token count, with attention
/// width `d` and value width `c`.
pub fn bench_attn(n_list: &[usize], d: usize, c: usize, reps: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in n_list {
        let q = uniform(&[n, d], -1.0, 1.0, 1);
        let k = uniform(&[n, d], -1.0, 1.0, 2);
        let v = uniform(&[n, c], -1.0, 1.0, 3);
        let scale = 1.0 / (d as f64).sqrt();
        let dgla_seconds = best_of(reps, || {
            std::hint::black_box(dgla_factored(&q, &k, &v)?);
            Ok(())
        })?;
        let softmax_seconds = best_of(reps, || {
            std::hint::black_box::<Tensor>(softmax_attention(&q, &k, &v, scale)?);
            Ok(())
        })?;
        let (n64, d64, c64) = (n as u64, d as u64, c as u64);
        rows.push(BenchRow {
            n,
            dgla_seconds,
            softmax_seconds,
            dgla_flops: dgla_attention_flops(n64, d64, c64),
            softmax_flops: softmax_attention_flops(n64, n64, d64, c64),
        });
    }
    Ok(rows)
}

pub fn bench_text(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:>7} {:>12} {:>8} {:>12} {:>12} {:>8} {:>12}\n",
        "n", "dgla_s", "ratio", "dgla_flops", "softmax_s", "ratio", "softmax_flops"
    );
    let mut prev: Option<&BenchRow> = None;
    for r in rows {
        let ratio = |a: f64, b: Option<f64>| b.map_or("-".to_string(), |b| format!("{:.2}", a / b));
        let _ = writeln!(
            s,
            "{:>7} {:>12.6} {:>8} {:>12} {:>12.6} {:>8} {:>12}",
            r.n,
            r.dgla_seconds,
            ratio(r.dgla_seconds, prev.map(|p| p.dgla_seconds)),
            r.dgla_flops,
            r.softmax_seconds,
            ratio(r.softmax_seconds, prev.map(|p| p.softmax_seconds)),
            r.softmax_flops
        );
        prev = Some(r);
    }
    s
}
