//! LGViT image encoder: patch embedding, MBConv channel-interactive blocks,
//! then dual-gated linear attention (DGLA) token-interactive blocks, all at
//! one token resolution `H/S × W/S`.

use hrmedseg_tensor::{Activation, Tensor, LAYER_NORM_EPS};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};

pub fn block_prefix(i: usize) -> String {
    format!("encoder.block{i}")
}

/// Registers every encoder parameter in `store`.
pub fn init_encoder(cfg: &ModelConfig, store: &mut ParamStore, init: &mut Init) -> Result<()> {
    let (c1, s, r) = (cfg.c1, cfg.patch_size, cfg.expansion_ratio);
    let hidden = c1 * r;
    store.insert("encoder.patch_embed.weight", init.lecun(&[c1, 3, s, s], 3 * s * s))?;
    store.insert("encoder.patch_embed.bias", Tensor::zeros(&[c1]))?;
    for i in 0..cfg.n_mbconv {
        let p = block_prefix(i);
        store.insert(format!("{p}.expand.weight"), init.he(&[hidden, c1, 1, 1], c1))?;
        store.insert(format!("{p}.expand.bias"), Tensor::zeros(&[hidden]))?;
        store.insert(format!("{p}.dw.weight"), init.he(&[hidden, 1, 3, 3], 9))?;
        store.insert(format!("{p}.dw.bias"), Tensor::zeros(&[hidden]))?;
        store.insert(format!("{p}.project.weight"), init.lecun(&[c1, hidden, 1, 1], hidden))?;
        store.insert(format!("{p}.project.bias"), Tensor::zeros(&[c1]))?;
    }
    for i in cfg.n_mbconv..cfg.depth {
        let p = block_prefix(i);
        let d = cfg.d;
        store.insert(format!("{p}.w_q"), init.lecun(&[c1, d], c1))?;
        store.insert(format!("{p}.w_k"), init.lecun(&[c1, d], c1))?;
        store.insert(format!("{p}.w_v"), init.he(&[c1, d], c1))?;
        store.insert(format!("{p}.w_gate"), init.lecun(&[d, c1], d))?;
        store.insert(format!("{p}.w_x"), init.he(&[c1, c1], c1))?;
        store.insert(format!("{p}.norm.gamma"), Tensor::ones(&[c1]))?;
        store.insert(format!("{p}.norm.beta"), Tensor::zeros(&[c1]))?;
        store.insert(format!("{p}.mlp.fc1.weight"), init.he(&[c1, hidden], c1))?;
        store.insert(format!("{p}.mlp.fc1.bias"), Tensor::zeros(&[hidden]))?;
        store.insert(format!("{p}.mlp.fc2.weight"), init.lecun(&[hidden, c1], hidden))?;
        store.insert(format!("{p}.mlp.fc2.bias"), Tensor::zeros(&[c1]))?;
    }
    Ok(())
}

/// Non-overlapping `S × S` patches projected to C₁ channels.
pub fn patch_embed(image: &Tensor, cfg: &ModelConfig, store: &ParamStore) -> Result<Tensor> {
    let [_, c, h, w] = *image.shape() else {
        return Err(Error::Config(format!("expected a [B,3,H,W] image, got {:?}", image.shape())));
    };
    if c != 3 {
        return Err(Error::Config(format!("expected 3 image channels, got {c}")));
    }
    cfg.check_input(h, w)?;
    let s = cfg.patch_size;
    Ok(image.conv2d(
        store.get("encoder.patch_embed.weight")?,
        Some(store.get("encoder.patch_embed.bias")?),
        s,
        0,
        1,
    )?)
}

/// `gelu(project(gelu(dw3x3(gelu(expand(x))))) + x)` on a `[B,C₁,h,w]` map.
pub fn mbconv_block(x: &Tensor, store: &ParamStore, prefix: &str) -> Result<Tensor> {
    let p = |n: &str| store.get(&format!("{prefix}.{n}"));
    let e = x.conv2d(p("expand.weight")?, Some(p("expand.bias")?), 1, 0, 1)?.gelu()?;
    let dw = e.depthwise_conv2d(p("dw.weight")?, Some(p("dw.bias")?), 1, 1)?.gelu()?;
    let proj = dw.conv2d(p("project.weight")?, Some(p("project.bias")?), 1, 0, 1)?;
    Ok(proj.add(x)?.gelu()?)
}

/// Value gate: `silu(v) · W_gate`.
pub fn inter_gate(v: &Tensor, w_gate: &Tensor) -> Result<Tensor> {
    Ok(v.silu()?.matmul(w_gate)?)
}

/// Result of the quadratic reference evaluation.
#[derive(Debug, Clone)]
pub struct NaiveAttention {
    pub output: Tensor,
    /// Row-major `N × N` attention weights; row `i` holds the normalized
    /// kernel similarities of query `i` to every key.
    pub weights: Vec<f64>,
}

fn as_2d(name: &str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, c] => Ok((n, c)),
        _ => Err(Error::Config(format!("{name} must be 2-D, got {:?}", t.shape()))),
    }
}

/// Kernelized attention by explicit double loop over token pairs; O(N²).
/// Serves as the reference for [`dgla_factored`].
pub fn dgla_naive(q: &Tensor, k: &Tensor, v_gated: &Tensor) -> Result<NaiveAttention> {
    let (n, d) = as_2d("q", q)?;
    let (nk, dk) = as_2d("k", k)?;
    let (nv, c) = as_2d("v_gated", v_gated)?;
    if nk != n || nv != n || dk != d {
        return Err(Error::Shape {
            what: "dgla_naive operands".into(),
            expected: vec![n, d],
            found: vec![nk, dk, nv],
        });
    }
    let phi = |x: f64| Activation::EluPlusOne.apply(x);
    let fq: Vec<f64> = q.data().iter().map(|&x| phi(x)).collect();
    let fk: Vec<f64> = k.data().iter().map(|&x| phi(x)).collect();
    let mut weights = vec![0.0; n * n];
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let row = &mut weights[i * n..(i + 1) * n];
        for (j, w) in row.iter_mut().enumerate() {
            *w = (0..d).map(|t| fq[i * d + t] * fk[j * d + t]).sum();
        }
        let denom: f64 = row.iter().sum();
        for w in row.iter_mut() {
            *w /= denom;
        }
        for (j, &w) in row.iter().enumerate() {
            for ch in 0..c {
                out[i * c + ch] += w * v_gated.data()[j * c + ch];
            }
        }
    }
    Ok(NaiveAttention {
        output: Tensor::new(&[n, c], out)?,
        weights,
    })
}

/// Factored kernel attention plus the element count of its attention state.
///
/// Computes `S = φ(K)ᵀ·V` (`d × C`) and `z = φ(K)ᵀ·1` (`d`) once, then
/// `out_i = φ(Q_i)·S / φ(Q_i)·z`. Time O(N·d·C); the state does not grow
/// with N. Accepts `[N,·]` or batched `[B,N,·]` operands.
pub fn dgla_factored_with_state(q: &Tensor, k: &Tensor, v_gated: &Tensor) -> Result<(Tensor, usize)> {
    let batched = q.ndim() == 3;
    let lift = |t: &Tensor| -> Result<Tensor> {
        match t.ndim() {
            2 => Ok(t.reshape(&[1, t.shape()[0], t.shape()[1]])?),
            3 => Ok(t.clone()),
            _ => Err(Error::Config(format!("attention operand of rank {}", t.ndim()))),
        }
    };
    let (q3, k3, v3) = (lift(q)?, lift(k)?, lift(v_gated)?);
    let fq = q3.elu_plus_one()?;
    let fk = k3.elu_plus_one()?;
    let fk_t = fk.permute(&[0, 2, 1])?;
    let state = fk_t.matmul(&v3)?;
    let z = fk.sum_axis(1, true)?.permute(&[0, 2, 1])?;
    let state_elems = (state.numel() + z.numel()) / q3.shape()[0];
    let num = fq.matmul(&state)?;
    let den = fq.matmul(&z)?;
    let out = num.div(&den)?;
    let out = if batched {
        out
    } else {
        let s = out.shape().to_vec();
        out.reshape(&s[1..])?
    };
    Ok((out, state_elems))
}

pub fn dgla_factored(q: &Tensor, k: &Tensor, v_gated: &Tensor) -> Result<Tensor> {
    Ok(dgla_factored_with_state(q, k, v_gated)?.0)
}

/// One token-interactive block on `[B,N,C₁]` (or `[N,C₁]`) tokens:
/// `MLP(LN(silu(x·W_x) ⊙ V')) + x` where `V'` is the DGLA output over the
/// gated values.
pub fn dgla_block(x: &Tensor, store: &ParamStore, prefix: &str) -> Result<Tensor> {
    let p = |n: &str| store.get(&format!("{prefix}.{n}"));
    let q = x.matmul(p("w_q")?)?;
    let k = x.matmul(p("w_k")?)?;
    let v = x.matmul(p("w_v")?)?;
    let v_gated = inter_gate(&v, p("w_gate")?)?;
    let attended = dgla_factored(&q, &k, &v_gated)?;
    let gate = x.matmul(p("w_x")?)?.silu()?;
    let normed = gate.mul(&attended)?.layer_norm(p("norm.gamma")?, p("norm.beta")?, LAYER_NORM_EPS)?;
    let hidden = normed.matmul(p("mlp.fc1.weight")?)?.add(p("mlp.fc1.bias")?)?.gelu()?;
    let mlp = hidden.matmul(p("mlp.fc2.weight")?)?.add(p("mlp.fc2.bias")?)?;
    Ok(mlp.add(x)?)
}

/// `[B,C,h,w]` map to `[B,h·w,C]` tokens.
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = *x.shape() else {
        return Err(Error::Config(format!("expected NCHW, got {:?}", x.shape())));
    };
    Ok(x.reshape(&[b, c, h * w])?.permute(&[0, 2, 1])?)
}

/// `[B,h·w,C]` tokens back to a `[B,C,h,w]` map.
pub fn to_spatial(tokens: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [b, n, c] = *tokens.shape() else {
        return Err(Error::Config(format!("expected [B,N,C], got {:?}", tokens.shape())));
    };
    if n != h * w {
        return Err(Error::Shape {
            what: "token grid".into(),
            expected: vec![h * w],
            found: vec![n],
        });
    }
    Ok(tokens.permute(&[0, 2, 1])?.reshape(&[b, c, h, w])?)
}

/// Full encoder: image `[B,3,H,W]` to embedding `[B,C₁,H/S,W/S]`.
pub fn encode(image: &Tensor, cfg: &ModelConfig, store: &ParamStore) -> Result<Tensor> {
    let mut x = patch_embed(image, cfg, store)?;
    for i in 0..cfg.n_mbconv {
        x = mbconv_block(&x, store, &block_prefix(i))?;
    }
    if cfg.n_dgla() == 0 {
        return Ok(x);
    }
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let mut tokens = to_tokens(&x)?;
    for i in cfg.n_mbconv..cfg.depth {
        tokens = dgla_block(&tokens, store, &block_prefix(i))?;
    }
    to_spatial(&tokens, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_for(cfg: &ModelConfig) -> ParamStore {
        let mut s = ParamStore::new();
        init_encoder(cfg, &mut s, &mut Init::new(cfg.seed)).unwrap();
        s
    }

    #[test]
    fn single_token_returns_value_row() {
        let q = Tensor::new(&[1, 2], vec![0.3, -1.2]).unwrap();
        let k = Tensor::new(&[1, 2], vec![-0.7, 2.0]).unwrap();
        let v = Tensor::new(&[1, 3], vec![1.5, -2.0, 0.25]).unwrap();
        assert_eq!(dgla_naive(&q, &k, &v).unwrap().output.data(), v.data());
        let f = dgla_factored(&q, &k, &v).unwrap();
        for (a, b) in f.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let q = Tensor::new(&[3, 2], vec![0.3, -1.2, 2.0, 0.1, -0.5, 0.5]).unwrap();
        let k = Tensor::new(&[3, 2], [0.4, -0.1].repeat(3)).unwrap();
        let v = Tensor::new(&[3, 2], vec![1., 2., 3., 4., 5., 9.]).unwrap();
        let out = dgla_naive(&q, &k, &v).unwrap().output;
        for row in out.data().chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-6 && (row[1] - 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn inter_gate_identity_projection() {
        let v = Tensor::new(&[2, 2], vec![0.0, 1.0, -1.0, 2.0]).unwrap();
        let g = inter_gate(&v, &Tensor::eye(2)).unwrap();
        assert_eq!(g.data(), v.silu().unwrap().data());
        let z = inter_gate(&Tensor::zeros(&[2, 2]), &Tensor::eye(2)).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encode_shape_default_config() {
        let cfg = ModelConfig::paper();
        let store = store_for(&cfg);
        let img = Tensor::full(&[1, 3, 64, 64], 0.5);
        let out = encode(&img, &cfg, &store).unwrap();
        assert_eq!(out.shape(), &[1, 96, 4, 4]);
        assert!(patch_embed(&Tensor::zeros(&[1, 3, 40, 64]), &cfg, &store).is_err());
    }

    #[test]
    fn zero_image_zero_bias_embeds_to_zero() {
        let cfg = ModelConfig::toy();
        let store = store_for(&cfg);
        let e = patch_embed(&Tensor::zeros(&[2, 3, 32, 32]), &cfg, &store).unwrap();
        assert_eq!(e.shape(), &[2, 32, 2, 2]);
        assert!(e.data().iter().all(|&v| v == 0.0));
    }
}
