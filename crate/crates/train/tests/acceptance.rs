//! One PASS/FAIL line per acceptance criterion. Runs the full toy training
//! twice, so expect several minutes.

use std::process::ExitCode;
use std::time::Instant;

use hrmedseg_core::cost::{
    anchor_ratio, anchor_text, cost_report, count_params, dgla_attention_flops, model_schedule, softmax_attention_flops,
    unet_schedule, Mode, REFERENCE_FLOPS, REFERENCE_MEMORY_BYTES, REFERENCE_PARAMS,
};
use hrmedseg_core::data::checkpoint::{decode_tensors, encode_tensors};
use hrmedseg_core::data::pnm::{decode_mask_pgm, encode_mask_pgm};
use hrmedseg_core::encoder::{block_prefix, dgla_block, dgla_factored, dgla_naive, init_encoder, mbconv_block};
use hrmedseg_core::{Init, Model, ModelConfig, ParamStore};
use hrmedseg_tensor::{softmax_attention, Tensor};
use hrmedseg_train::bench::bench_attn;
use hrmedseg_train::gradcheck::{gradcheck_all, uniform};
use hrmedseg_train::train::{load_data, teacher_for, teacher_targets, train_distill, train_segmentation};
use hrmedseg_train::TrainConfig;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut seed = 0;
    for n in [1, 4, 16, 64, 256] {
        for d in [2, 8, 32] {
            for c in [3, 16, 64] {
                seed += 3;
                let (q, k, v) = (uniform(&[n, d], -1.0, 1.0, seed), uniform(&[n, d], -1.0, 1.0, seed + 1), uniform(&[n, c], -1.0, 1.0, seed + 2));
                let naive = dgla_naive(&q, &k, &v).unwrap().output;
                let fact = dgla_factored(&q, &k, &v).unwrap();
                worst = naive.data().iter().zip(fact.data()).fold(worst, |m, (a, b)| m.max((a - b).abs()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (worst < 1e-5 && secs < 10.0, format!("45 shapes, max |diff| {worst:.2e}, {secs:.2}s"))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let checks = gradcheck_all().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    let e32 = checks.iter().map(|c| c.max_error_f32).fold(0.0, f64::max);
    let e64 = checks.iter().map(|c| c.max_error_f64).fold(0.0, f64::max);
    (
        failed.is_empty() && secs < 60.0,
        format!("{} families, worst rel. error {e32:.2e} (32-bit) {e64:.2e} (64-bit), {secs:.2}s, failed {failed:?}", checks.len()),
    )
}

fn complexity_signature() -> Outcome {
    let (d, c) = (64u64, 96u64);
    let dgla = dgla_attention_flops(2048, d, c) as f64 / dgla_attention_flops(1024, d, c) as f64;
    let softmax: Vec<f64> = [1024u64, 2048, 4096]
        .iter()
        .map(|&n| softmax_attention_flops(2 * n, 2 * n, d, c) as f64 / softmax_attention_flops(n, n, d, c) as f64)
        .collect();
    let modeled = dgla == 2.0 && softmax.iter().all(|r| (3.96..=4.0).contains(r));
    let rows = bench_attn(&[1024, 2048], 64, 96, 7).unwrap();
    let t_dgla = rows[1].dgla_seconds / rows[0].dgla_seconds;
    let t_soft = rows[1].softmax_seconds / rows[0].softmax_seconds;
    (
        modeled && t_dgla < 2.5 && t_soft > 3.2,
        format!("flops ratio dgla {dgla:.3}, softmax {:.4}; measured 1024->2048 dgla {t_dgla:.2}, softmax {t_soft:.2}", softmax[0]),
    )
}

fn parameter_exactness() -> Outcome {
    let configs = [
        ModelConfig::paper(),
        ModelConfig::toy(),
        ModelConfig { c1: 48, depth: 4, n_mbconv: 1, d: 16, c2: 3, ..ModelConfig::paper() },
        ModelConfig { depth: 2, n_mbconv: 2, patch_size: 8, decoder_dim: 64, ..ModelConfig::toy() },
        ModelConfig { c1: 24, depth: 5, n_mbconv: 0, expansion_ratio: 4, decoder_layers: 3, pool_kernels: vec![3], ..ModelConfig::toy() },
    ];
    let exact = configs
        .iter()
        .all(|cfg| count_params(cfg).unwrap().0 == Model::new(cfg.clone()).unwrap().num_params() as u64);
    let no_fuse = ModelConfig { pool_kernels: vec![], ..ModelConfig::paper() };
    let fuse_params = count_params(&ModelConfig::paper()).unwrap().0 as i64 - count_params(&no_fuse).unwrap().0 as i64;
    let decoder = |side: usize| {
        model_schedule(&ModelConfig::paper(), 1024, 1024, side, side)
            .unwrap()
            .report(1024, 1024, 1, 4, Mode::Inference)
            .per_layer
            .iter()
            .filter(|l| l.name.starts_with("decoder.") || l.name.starts_with("neck."))
            .map(|l| l.params)
            .sum::<u64>()
    };
    let (d64, d1024) = (decoder(64), decoder(1024));
    (
        exact && fuse_params == 0 && d64 == d1024,
        format!("{} configs exact: {exact}; multiscale module adds {fuse_params}; decoder params {d64} at 64², {d1024} at 1024²", configs.len()),
    )
}

fn cost_anchors() -> Outcome {
    let cfg = ModelConfig::paper();
    let r = cost_report(&cfg, 1024, 1024, 16, 4, Mode::Training).unwrap();
    let per_image = r.flops / 16;
    let ratios = [
        anchor_ratio(r.params as f64, REFERENCE_PARAMS),
        anchor_ratio(per_image as f64, REFERENCE_FLOPS),
        anchor_ratio(r.peak_activation_bytes as f64, REFERENCE_MEMORY_BYTES),
    ];
    let caveat = anchor_text(&r, per_image).contains("not published");
    let unet = unet_schedule(cfg.c1, cfg.c2, 1024, 1024).unwrap().report(1024, 1024, 16, 4, Mode::Training);
    let ok = ratios.iter().all(|r| r.1) && caveat && unet.peak_activation_bytes > r.peak_activation_bytes;
    (
        ok,
        format!(
            "params {:.3}M ({:.2}x), flops/img {:.2}G ({:.2}x), memory {:.2}GB ({:.2}x), caveat {caveat}; U-shape peak {:.1}GB > {:.2}GB",
            r.params as f64 / 1e6,
            ratios[0].0,
            per_image as f64 / 1e9,
            ratios[1].0,
            r.peak_activation_bytes as f64 / 1e9,
            ratios[2].0,
            unet.peak_activation_bytes as f64 / 1e9,
            r.peak_activation_bytes as f64 / 1e9,
        ),
    )
}

fn toy_training() -> Outcome {
    let cfg = TrainConfig::toy();
    let (train, val) = load_data(&cfg).unwrap();
    let start = Instant::now();
    let a = train_segmentation(&cfg, &train, &val, |_| ()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let b = train_segmentation(&cfg, &train, &val, |_| ()).unwrap();
    let last = a.history.records.last().unwrap().dice.unwrap();
    let same_log = a.history.without_timing() == b.history.without_timing();
    let same_params = a.model.params.iter().all(|(n, t)| b.model.params.get(n).unwrap().data() == t.data());
    (
        last >= 0.85 && same_log && same_params && a.history.records.len() <= 50,
        format!(
            "{} train / {} val, {} epochs, final val dice {last:.4} (best {:.4}), {secs:.0}s per run, reproducible log {same_log}, params {same_params}",
            train.len(),
            val.len(),
            a.history.records.len(),
            a.best_dice
        ),
    )
}

fn toy_distillation() -> Outcome {
    let cfg = TrainConfig::toy();
    let (train, _) = load_data(&cfg).unwrap();
    let targets = teacher_targets(&teacher_for(&cfg).unwrap(), &train, cfg.batch_size).unwrap();
    let mut model = Model::new(cfg.model.clone()).unwrap();
    let before = model.params.clone();
    let history = train_distill(&cfg, &mut model, &train, &targets, cfg.distill_epochs, |_| ()).unwrap();
    let initial = history.initial_loss.unwrap();
    let last = history.records.last().unwrap().loss;
    let reduction = 1.0 - last / initial;
    let decoder_same = model
        .params
        .iter()
        .filter(|(n, _)| n.starts_with("decoder."))
        .all(|(n, t)| before.get(n).unwrap().data() == t.data());
    (
        reduction >= 0.5 && decoder_same && history.records.len() <= 20,
        format!(
            "{} epochs, mse {initial:.5} -> {last:.5} ({:.1}% lower), decoder unchanged {decoder_same}",
            history.records.len(),
            100.0 * reduction
        ),
    )
}

fn structural_invariants() -> Outcome {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    let cfg = ModelConfig { c1: 8, depth: 3, n_mbconv: 1, d: 4, patch_size: 4, decoder_dim: 16, ..ModelConfig::toy() };
    let mut store = ParamStore::new();
    init_encoder(&cfg, &mut store, &mut Init::new(1)).unwrap();
    for n in ["encoder.block0.project.weight", "encoder.block0.project.bias", "encoder.block1.mlp.fc2.weight", "encoder.block1.mlp.fc2.bias"] {
        let shape = store.get(n).unwrap().shape().to_vec();
        store.replace(n, Tensor::zeros(&shape)).unwrap();
    }
    let x = uniform(&[1, 8, 3, 3], -2.0, 2.0, 1);
    check("mbconv residual", mbconv_block(&x, &store, &block_prefix(0)).unwrap().data() == x.gelu().unwrap().data());
    let t = uniform(&[1, 9, 8], -2.0, 2.0, 2);
    check("dgla residual", dgla_block(&t, &store, &block_prefix(1)).unwrap().data() == t.data());

    let ones = softmax_attention(&uniform(&[7, 4], -3.0, 3.0, 3), &uniform(&[11, 4], -3.0, 3.0, 4), &Tensor::ones(&[11, 1]), 0.5).unwrap();
    check("softmax rows", ones.data().iter().all(|v| (v - 1.0).abs() < 1e-6));

    let model = Model::new(ModelConfig::toy()).unwrap();
    let probs = model.forward(&uniform(&[2, 3, 64, 64], 0.0, 1.0, 5)).unwrap();
    check("mask range", probs.data().iter().all(|&v| v > 0.0 && v < 1.0));

    let bytes = encode_tensors(model.params.iter()).unwrap();
    let again = encode_tensors(decode_tensors(&bytes).unwrap().iter().map(|(n, t)| (n.as_str(), t))).unwrap();
    check("checkpoint round trip", bytes == again);
    let labels: Vec<u32> = (0..20 * 13).map(|i| (i * 7 % 3) as u32).collect();
    let pgm = encode_mask_pgm(&labels, 20, 13, 3).unwrap();
    check("pgm round trip", decode_mask_pgm(&pgm, 3).unwrap() == (labels, 20, 13));

    let naive = dgla_naive(&uniform(&[50, 8], -1.0, 1.0, 6), &uniform(&[50, 8], -1.0, 1.0, 7), &uniform(&[50, 3], -1.0, 1.0, 8)).unwrap();
    check("weight rows", naive.weights.chunks(50).all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-6));

    let n = 24;
    let tokens = uniform(&[n, 8], -1.0, 1.0, 9);
    let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    let permute = |x: &Tensor| {
        let c = x.shape()[1];
        Tensor::new(x.shape(), perm.iter().flat_map(|&i| x.data()[i * c..(i + 1) * c].to_vec()).collect()).unwrap()
    };
    let mut fresh = ParamStore::new();
    init_encoder(&cfg, &mut fresh, &mut Init::new(2)).unwrap();
    let p = block_prefix(1);
    let y = dgla_block(&tokens, &fresh, &p).unwrap();
    check("permutation equivariance", dgla_block(&permute(&tokens), &fresh, &p).unwrap().data() == permute(&y).data());

    (failed.is_empty(), if failed.is_empty() { "8 invariant groups hold".into() } else { format!("failed: {failed:?}") })
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("gradient suite", gradient_suite),
        ("complexity signature", complexity_signature),
        ("parameter exactness", parameter_exactness),
        ("cost anchors", cost_anchors),
        ("toy training", toy_training),
        ("toy distillation", toy_distillation),
        ("structural invariants", structural_invariants),
    ];
    let mut all = true;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = f();
        all &= ok;
        println!("{} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
