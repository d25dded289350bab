//! Finite-difference checks for every block family at small shapes, in
//! 32-bit and 64-bit modes.

use hrmedseg_core::decoder::{
    cross_attention_round, init_decoder, init_neck, mask_head, neck, positional_encoding, query_self_attention,
};
use hrmedseg_core::encoder::{dgla_block, init_encoder, mbconv_block, patch_embed};
use hrmedseg_core::losses::{dice_loss, distill_mse, focal_loss};
use hrmedseg_core::{Init, ModelConfig, ParamStore};
use hrmedseg_tensor::{check_gradients, with_precision, Precision, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub const TOL_F32: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct FamilyCheck {
    pub name: String,
    pub max_error_f32: f64,
    pub max_error_f64: f64,
}

impl FamilyCheck {
    pub fn passed(&self) -> bool {
        self.max_error_f32 < TOL_F32 && self.max_error_f64 < TOL_F64
    }
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Weights every output element with a fixed random factor and sums.
pub fn probe(out: &Tensor, seed: u64) -> hrmedseg_tensor::Result<Tensor> {
    out.mul(&uniform(out.shape(), -1.0, 1.0, seed))?.sum()
}

/// Runs one check in both precisions. `f` receives the leaves in input
/// order and returns a scalar.
pub fn check_family(
    name: &str,
    inputs: &[Tensor],
    f: impl Fn(&[Tensor]) -> hrmedseg_tensor::Result<Tensor>,
) -> Result<FamilyCheck> {
    check_family_with_step(name, inputs, None, f)
}

/// [`check_family`] with an explicit 32-bit difference step, for functions
/// whose third derivative makes the default step too coarse.
pub fn check_family_with_step(
    name: &str,
    inputs: &[Tensor],
    h32: Option<f64>,
    f: impl Fn(&[Tensor]) -> hrmedseg_tensor::Result<Tensor>,
) -> Result<FamilyCheck> {
    let e32 = with_precision(Precision::F32, || check_gradients(&f, inputs, h32))?;
    let e64 = with_precision(Precision::F64, || check_gradients(&f, inputs, None))?;
    Ok(FamilyCheck {
        name: name.to_string(),
        max_error_f32: e32.max_error(),
        max_error_f64: e64.max_error(),
    })
}

/// Tiny configuration used by the block checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        c1: 4,
        depth: 2,
        n_mbconv: 1,
        d: 3,
        patch_size: 2,
        expansion_ratio: 2,
        c2: 2,
        decoder_dim: 8,
        decoder_layers: 1,
        pool_kernels: vec![3, 5],
        heads: 1,
        seed: 3,
    }
}

/// Parameters with the given prefix as `(names, tensors)`.
fn subset(store: &ParamStore, prefix: &str) -> (Vec<String>, Vec<Tensor>) {
    store
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, t)| (n.to_string(), t.detach()))
        .unzip()
}

fn rebuild(names: &[String], tensors: &[Tensor]) -> hrmedseg_tensor::Result<ParamStore> {
    let mut s = ParamStore::new();
    for (n, t) in names.iter().zip(tensors) {
        s.insert(n.clone(), t.clone()).map_err(|e| hrmedseg_tensor::TensorError::InvalidArgument {
            op: "gradcheck",
            reason: e.to_string(),
        })?;
    }
    Ok(s)
}

fn core<T>(r: hrmedseg_core::Result<T>) -> hrmedseg_tensor::Result<T> {
    r.map_err(|e| match e {
        hrmedseg_core::Error::Tensor(t) => t,
        other => hrmedseg_tensor::TensorError::InvalidArgument {
            op: "gradcheck",
            reason: other.to_string(),
        },
    })
}

/// Every family: patch embedding, MBConv, DGLA, neck, query
/// self-attention, cross-attention, mask head, Dice, focal and MSE.
pub fn gradcheck_all() -> Result<Vec<FamilyCheck>> {
    let cfg = tiny_config();
    let mut store = ParamStore::new();
    let mut init = Init::new(cfg.seed);
    init_encoder(&cfg, &mut store, &mut init)?;
    init_neck(&cfg, &mut store, &mut init)?;
    init_decoder(&cfg, &mut store, &mut init)?;
    let mut out = Vec::new();

    let (names, params) = subset(&store, "encoder.patch_embed");
    let mut inputs = vec![uniform(&[1, 3, 4, 4], 0.0, 1.0, 1)];
    inputs.extend(params);
    out.push(check_family("patch_embed", &inputs, |t| {
        let s = rebuild(&names, &t[1..])?;
        probe(&core(patch_embed(&t[0], &tiny_config(), &s))?, 2)
    })?);

    let (names, params) = subset(&store, "encoder.block0.");
    let mut inputs = vec![uniform(&[1, 4, 3, 3], -1.0, 1.0, 3)];
    inputs.extend(params);
    out.push(check_family("mbconv", &inputs, |t| {
        let s = rebuild(&names, &t[1..])?;
        probe(&core(mbconv_block(&t[0], &s, "encoder.block0"))?, 4)
    })?);

    let (names, params) = subset(&store, "encoder.block1.");
    let mut inputs = vec![uniform(&[2, 5, 4], -1.0, 1.0, 5)];
    inputs.extend(params);
    out.push(check_family("dgla", &inputs, |t| {
        let s = rebuild(&names, &t[1..])?;
        probe(&core(dgla_block(&t[0], &s, "encoder.block1"))?, 6)
    })?);

    let (names, params) = subset(&store, "neck.");
    let mut inputs = vec![uniform(&[1, 4, 2, 2], -1.0, 1.0, 7)];
    inputs.extend(params);
    out.push(check_family("neck", &inputs, |t| {
        let s = rebuild(&names, &t[1..])?;
        probe(&core(neck(&t[0], &s))?, 8)
    })?);

    let (names, params) = subset(&store, "decoder.self_attn.");
    let mut inputs = vec![uniform(&[2, 8], -1.0, 1.0, 9)];
    inputs.extend(params);
    out.push(check_family("query_self_attention", &inputs, |t| {
        let s = rebuild(&names, &t[1..])?;
        probe(&core(query_self_attention(&t[0], &s))?, 10)
    })?);

    out.push(check_family(
        "cross_attention",
        &[uniform(&[1, 2, 8], -1.0, 1.0, 11), uniform(&[1, 6, 8], -1.0, 1.0, 12)],
        |t| {
            let pos = positional_encoding(2, 3, 8).expect("pos");
            let (q, e) = core(cross_attention_round(&t[0], &t[1], &pos, (2, 3), &[3, 5]))?;
            probe(&q, 13)?.add(&probe(&e, 14)?)
        },
    )?);

    // the head starts with a deliberately small last layer; check it at a
    // generic point with O(1) logits so every gradient stays well above
    // 32-bit rounding noise
    let (names, params) = subset(&store, "decoder.head.");
    let mut inputs = vec![uniform(&[1, 8, 2, 2], -2.0, 2.0, 15), uniform(&[1, 2, 8], -2.0, 2.0, 16)];
    inputs.extend(params.iter().enumerate().map(|(i, p)| uniform(p.shape(), -1.0, 1.0, 100 + i as u64)));
    out.push(check_family("mask_head", &inputs, |t| {
        let s = rebuild(&names, &t[2..])?;
        probe(&core(mask_head(&t[0], &t[1], 6, 5, &s))?, 17)
    })?);

    let pred = uniform(&[2, 1, 3, 3], 0.05, 0.95, 18);
    let target = Tensor::new(&[2, 1, 3, 3], (0..18).map(|i| f64::from(u8::from(i % 3 == 0))).collect())?;
    let t2 = target.clone();
    out.push(check_family("dice_loss", std::slice::from_ref(&pred), move |t| core(dice_loss(&t[0], &t2, 1.0)))?);
    let t3 = target.clone();
    out.push(check_family_with_step("focal_loss", std::slice::from_ref(&pred), Some(1e-3), move |t| {
        core(focal_loss(&t[0], &t3, 0.25, 2.0))
    })?);
    out.push(check_family(
        "distill_mse",
        &[uniform(&[1, 8, 2, 2], -1.0, 1.0, 19), uniform(&[1, 8, 2, 2], -1.0, 1.0, 20)],
        |t| core(distill_mse(&t[0], &t[1])),
    )?);
    Ok(out)
}

pub fn report_text(checks: &[FamilyCheck]) -> String {
    let mut s = format!("{:<22} {:>12} {:>12}  status\n", "family", "rel_err_f32", "rel_err_f64");
    for c in checks {
        s.push_str(&format!(
            "{:<22} {:>12.3e} {:>12.3e}  {}\n",
            c.name,
            c.max_error_f32,
            c.max_error_f64,
            if c.passed() { "ok" } else { "FAIL" }
        ));
    }
    s
}
