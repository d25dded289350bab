//! ECM decoder: neck projection, learned mask queries, bidirectional
//! multiscale cross-attention against the single encoder embedding, and the
//! upsampling mask head. No skip connections: the final encoder embedding is
//! the only encoder input.

use hrmedseg_tensor::{softmax_attention, Tensor};

use crate::config::ModelConfig;
use crate::encoder::{to_spatial, to_tokens};
use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};

pub fn init_neck(cfg: &ModelConfig, store: &mut ParamStore, init: &mut Init) -> Result<()> {
    let (c1, dd) = (cfg.c1, cfg.decoder_dim);
    store.insert("neck.conv1.weight", init.lecun(&[dd, c1, 1, 1], c1))?;
    store.insert("neck.conv1.bias", Tensor::zeros(&[dd]))?;
    store.insert("neck.conv2.weight", init.lecun(&[dd, dd, 3, 3], dd * 9))?;
    store.insert("neck.conv2.bias", Tensor::zeros(&[dd]))?;
    Ok(())
}

pub fn init_decoder(cfg: &ModelConfig, store: &mut ParamStore, init: &mut Init) -> Result<()> {
    let dd = cfg.decoder_dim;
    let (u1, u2) = cfg.head_widths();
    store.insert("decoder.queries", init.normal(&[cfg.c2, dd], 0.02))?;
    for n in ["w_q", "w_k", "w_v"] {
        store.insert(format!("decoder.self_attn.{n}"), init.lecun(&[dd, dd], dd))?;
    }
    store.insert("decoder.head.up1.weight", init.he(&[dd, u1, 2, 2], dd))?;
    store.insert("decoder.head.up1.bias", Tensor::zeros(&[u1]))?;
    store.insert("decoder.head.up2.weight", init.he(&[u1, u2, 2, 2], u1))?;
    store.insert("decoder.head.up2.bias", Tensor::zeros(&[u2]))?;
    for (i, (fan_in, out)) in [(dd, dd), (dd, dd), (dd, u2)].into_iter().enumerate() {
        // the last layer starts small so initial mask logits stay O(1)
        let w = if i == 2 {
            init.normal(&[fan_in, out], 1.0 / fan_in as f64)
        } else {
            init.he(&[fan_in, out], fan_in)
        };
        store.insert(format!("decoder.head.mlp.fc{}.weight", i + 1), w)?;
        store.insert(format!("decoder.head.mlp.fc{}.bias", i + 1), Tensor::zeros(&[out]))?;
    }
    Ok(())
}

/// 1×1 then 3×3 convolution, C₁ → decoder width.
pub fn neck(h: &Tensor, store: &ParamStore) -> Result<Tensor> {
    let x = h.conv2d(store.get("neck.conv1.weight")?, Some(store.get("neck.conv1.bias")?), 1, 0, 1)?;
    Ok(x.conv2d(store.get("neck.conv2.weight")?, Some(store.get("neck.conv2.bias")?), 1, 1, 1)?)
}

/// 2-D sinusoidal encoding, `[(h·w), dim]`. The first `dim/2` channels
/// encode the row, the rest the column, each as interleaved sin/cos pairs
/// over the frequency ladder `10000^(−2i/(dim/2))`.
pub fn positional_encoding(h: usize, w: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::Config(format!("positional encoding dim {dim} must be a positive multiple of 4")));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half / 2).map(|i| 10000f64.powf(-((2 * i) as f64) / half as f64)).collect();
    let mut data = Vec::with_capacity(h * w * dim);
    for y in 0..h {
        for x in 0..w {
            for pos in [y as f64, x as f64] {
                for f in &freqs {
                    data.push((pos * f).sin());
                    data.push((pos * f).cos());
                }
            }
        }
    }
    Ok(Tensor::new(&[h * w, dim], data)?)
}

/// Parameter-free multiscale module: mean of the identity branch and one
/// stride-1 average pool per kernel size.
pub fn multiscale_fuse(e: &Tensor, kernels: &[usize]) -> Result<Tensor> {
    if let Some(k) = kernels.iter().find(|&&k| k % 2 == 0) {
        return Err(Error::Config(format!("pool kernel {k} must be odd")));
    }
    if kernels.is_empty() {
        return Ok(e.clone());
    }
    let mut acc = e.clone();
    for &k in kernels {
        acc = acc.add(&e.avg_pool2d(k, 1, k / 2)?)?;
    }
    Ok(acc.mul_scalar(1.0 / (1 + kernels.len()) as f64)?)
}

/// Self-attention over the mask queries with a residual connection.
pub fn query_self_attention(q: &Tensor, store: &ParamStore) -> Result<Tensor> {
    let dd = *q.shape().last().unwrap_or(&1);
    let qq = q.matmul(store.get("decoder.self_attn.w_q")?)?;
    let kk = q.matmul(store.get("decoder.self_attn.w_k")?)?;
    let vv = q.matmul(store.get("decoder.self_attn.w_v")?)?;
    Ok(softmax_attention(&qq, &kk, &vv, 1.0 / (dd as f64).sqrt())?.add(q)?)
}

/// One bidirectional round. `queries: [B,C₂,D]`, `tokens: [B,N,D]`,
/// `pos: [N,D]`, with `N = grid.0 · grid.1`.
///
/// Queries attend to `tokens + pos` and read the multiscale tokens; the
/// multiscale tokens plus `pos` then attend to the updated queries.
pub fn cross_attention_round(
    queries: &Tensor,
    tokens: &Tensor,
    pos: &Tensor,
    grid: (usize, usize),
    kernels: &[usize],
) -> Result<(Tensor, Tensor)> {
    let (qs, ts) = (queries.shape(), tokens.shape());
    if ts.len() != 3 || qs.len() != 3 || qs[0] != ts[0] || qs[2] != ts[2] {
        return Err(Error::Shape {
            what: "cross-attention queries".into(),
            expected: ts.to_vec(),
            found: qs.to_vec(),
        });
    }
    if pos.shape() != &ts[1..] {
        return Err(Error::Shape {
            what: "positional encoding".into(),
            expected: ts[1..].to_vec(),
            found: pos.shape().to_vec(),
        });
    }
    let scale = 1.0 / (ts[2] as f64).sqrt();
    let fused = to_tokens(&multiscale_fuse(&to_spatial(tokens, grid.0, grid.1)?, kernels)?)?;
    let keys = tokens.add(pos)?;
    let queries = softmax_attention(queries, &keys, &fused, scale)?.add(queries)?;
    let image_q = fused.add(pos)?;
    let tokens = softmax_attention(&image_q, &queries, &queries, scale)?.add(&fused)?;
    Ok((queries, tokens))
}

/// Three-layer MLP mapping each query to a mask-feature hyperplane.
pub fn query_mlp(queries: &Tensor, store: &ParamStore) -> Result<Tensor> {
    let mut x = queries.clone();
    for i in 1..=3 {
        let w = store.get(&format!("decoder.head.mlp.fc{i}.weight"))?;
        let b = store.get(&format!("decoder.head.mlp.fc{i}.bias"))?;
        x = x.matmul(w)?.add(b)?;
        if i < 3 {
            x = x.gelu()?;
        }
    }
    Ok(x)
}

/// Per-class mask logits at `4h × 4w`, before resizing.
pub fn mask_logits(e: &Tensor, queries: &Tensor, store: &ParamStore) -> Result<Tensor> {
    let [b, _, h, w] = *e.shape() else {
        return Err(Error::Config(format!("mask head expects NCHW, got {:?}", e.shape())));
    };
    let up = e
        .conv_transpose2d(store.get("decoder.head.up1.weight")?, Some(store.get("decoder.head.up1.bias")?), 2, 0)?
        .gelu()?;
    let up = up
        .conv_transpose2d(store.get("decoder.head.up2.weight")?, Some(store.get("decoder.head.up2.bias")?), 2, 0)?
        .gelu()?;
    let feat = up.shape()[1];
    let (oh, ow) = (up.shape()[2], up.shape()[3]);
    let hyper = query_mlp(queries, store)?;
    let c2 = hyper.shape()[1];
    let logits = hyper.matmul(&up.reshape(&[b, feat, oh * ow])?)?;
    debug_assert_eq!((oh, ow), (4 * h, 4 * w));
    Ok(logits.reshape(&[b, c2, oh, ow])?)
}

/// Mask probabilities `[B,C₂,out_h,out_w]`.
pub fn mask_head(e: &Tensor, queries: &Tensor, out_h: usize, out_w: usize, store: &ParamStore) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!("mask size {out_h}x{out_w} must be positive")));
    }
    Ok(mask_logits(e, queries, store)?.bilinear_resize(out_h, out_w)?.sigmoid()?)
}

/// Full decoder from the encoder embedding `[B,C₁,h,w]`.
pub fn decode(h_enc: &Tensor, cfg: &ModelConfig, store: &ParamStore, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (queries, tokens, grid) = refine(h_enc, cfg, store)?;
    mask_head(&to_spatial(&tokens, grid.0, grid.1)?, &queries, out_h, out_w, store)
}

/// Neck, query self-attention and every cross-attention round. Returns the
/// refined queries `[B,C₂,D]`, tokens `[B,N,D]` and the token grid.
pub fn refine(h_enc: &Tensor, cfg: &ModelConfig, store: &ParamStore) -> Result<(Tensor, Tensor, (usize, usize))> {
    let embed = neck(h_enc, store)?;
    let [b, dd, h, w] = *embed.shape() else {
        unreachable!("conv2d output is NCHW")
    };
    let mut tokens = to_tokens(&embed)?;
    let q = query_self_attention(store.get("decoder.queries")?, store)?;
    let mut queries = q.broadcast_to(&[b, cfg.c2, dd])?;
    let pos = positional_encoding(h, w, dd)?;
    for _ in 0..cfg.decoder_layers {
        (queries, tokens) = cross_attention_round(&queries, &tokens, &pos, (h, w), &cfg.pool_kernels)?;
    }
    Ok((queries, tokens, (h, w)))
}

/// Hard labels from mask probabilities `[B,C₂,H,W]`: threshold 0.5 when
/// C₂ = 1, otherwise the per-pixel argmax channel.
pub fn hard_labels(probs: &Tensor) -> Result<Vec<Vec<u32>>> {
    let [b, c2, h, w] = *probs.shape() else {
        return Err(Error::Config(format!("expected [B,C,H,W] probabilities, got {:?}", probs.shape())));
    };
    let plane = h * w;
    Ok((0..b)
        .map(|n| {
            let s = &probs.data()[n * c2 * plane..(n + 1) * c2 * plane];
            (0..plane)
                .map(|p| {
                    if c2 == 1 {
                        u32::from(s[p] > 0.5)
                    } else {
                        (0..c2)
                            .fold((0usize, f64::NEG_INFINITY), |best, c| {
                                if s[c * plane + p] > best.1 {
                                    (c, s[c * plane + p])
                                } else {
                                    best
                                }
                            })
                            .0 as u32
                    }
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_is_bounded_and_deterministic() {
        let a = positional_encoding(5, 7, 16).unwrap();
        let b = positional_encoding(5, 7, 16).unwrap();
        assert_eq!(a.shape(), &[35, 16]);
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        assert!(positional_encoding(2, 2, 6).is_err());
    }

    #[test]
    fn fuse_identity_and_constants() {
        let e = Tensor::new(&[1, 2, 3, 3], (0..18).map(|v| v as f64).collect()).unwrap();
        assert_eq!(multiscale_fuse(&e, &[]).unwrap().data(), e.data());
        let c = Tensor::full(&[2, 3, 4, 5], 0.75);
        let f = multiscale_fuse(&c, &[5, 9, 13]).unwrap();
        assert!(f.data().iter().all(|v| (v - 0.75).abs() < 1e-7));
        assert!(multiscale_fuse(&c, &[4]).is_err());
    }

    #[test]
    fn hard_label_rules() {
        let p = Tensor::new(&[1, 1, 1, 3], vec![0.2, 0.5, 0.9]).unwrap();
        assert_eq!(hard_labels(&p).unwrap(), vec![vec![0, 0, 1]]);
        let p = Tensor::new(&[1, 3, 1, 2], vec![0.1, 0.8, 0.7, 0.1, 0.2, 0.3]).unwrap();
        assert_eq!(hard_labels(&p).unwrap(), vec![vec![1, 0]]);
    }
}
