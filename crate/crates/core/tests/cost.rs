use hrmedseg_core::cost::{
    anchor_ratio, anchor_text, cost_report, count_params, dgla_attention_flops, encoder_attention_flops, estimate_flops,
    estimate_peak_memory, scaling_report, softmax_attention_flops, unet_schedule, Mode, REFERENCE_FLOPS, REFERENCE_MEMORY_BYTES,
    REFERENCE_PARAMS,
};
use hrmedseg_core::{Model, ModelConfig};
use proptest::prelude::*;

fn configs() -> Vec<ModelConfig> {
    vec![
        ModelConfig::paper(),
        ModelConfig::toy(),
        ModelConfig { c1: 48, depth: 4, n_mbconv: 1, d: 16, c2: 3, ..ModelConfig::paper() },
        ModelConfig { depth: 2, n_mbconv: 2, patch_size: 8, decoder_dim: 64, ..ModelConfig::toy() },
        ModelConfig { c1: 24, depth: 5, n_mbconv: 0, expansion_ratio: 4, decoder_layers: 3, pool_kernels: vec![3], ..ModelConfig::toy() },
        ModelConfig { c1: 16, depth: 3, n_mbconv: 1, d: 8, decoder_dim: 32, c2: 5, pool_kernels: vec![], ..ModelConfig::toy() },
    ]
}

#[test]
fn param_count_equals_built_store() {
    for cfg in configs() {
        let (count, per) = count_params(&cfg).unwrap();
        let model = Model::new(cfg.clone()).unwrap();
        assert_eq!(count, model.num_params() as u64, "{cfg:?}");
        assert_eq!(per.iter().map(|(_, p)| p).sum::<u64>(), count);
    }
}

#[test]
fn default_config_param_count() {
    assert_eq!(count_params(&ModelConfig::paper()).unwrap().0, 1_746_464);
}

#[test]
fn multiscale_fuse_adds_zero_parameters() {
    for kernels in [vec![], vec![3], vec![5, 9, 13]] {
        let cfg = ModelConfig { pool_kernels: kernels, ..ModelConfig::paper() };
        let (_, per) = count_params(&cfg).unwrap();
        assert!(per.iter().all(|(name, _)| !name.contains(".pool") && !name.contains(".mean")));
        assert_eq!(count_params(&cfg).unwrap().0, count_params(&ModelConfig::paper()).unwrap().0);
    }
}

#[test]
fn dgla_flops_double_exactly() {
    for (n, d, c) in [(256, 32, 96), (1024, 32, 96), (4096, 8, 3), (1, 2, 2)] {
        assert_eq!(dgla_attention_flops(2 * n, d, c), 2 * dgla_attention_flops(n, d, c));
    }
    let cfg = ModelConfig::paper();
    let ratio = encoder_attention_flops(&cfg, 2048, 1024, false) as f64 / encoder_attention_flops(&cfg, 1024, 1024, false) as f64;
    assert_eq!(ratio, 2.0);
}

#[test]
fn softmax_flops_nearly_quadruple() {
    for n in [1024u64, 2048, 4096] {
        for (d, c) in [(32, 96), (8, 32), (64, 64)] {
            let r = softmax_attention_flops(2 * n, 2 * n, d, c) as f64 / softmax_attention_flops(n, n, d, c) as f64;
            assert!((3.96..=4.0).contains(&r), "N={n}: {r}");
        }
    }
}

#[test]
fn resolution_doubling_ratios() {
    let cfg = ModelConfig::paper();
    let r = |softmax| encoder_attention_flops(&cfg, 1024, 1024, softmax) as f64 / encoder_attention_flops(&cfg, 512, 512, softmax) as f64;
    assert_eq!(r(false), 4.0);
    assert!((r(true) - 16.0).abs() < 1e-9);

    let encoder_flops = |side| {
        estimate_flops(&cfg, side, side, 1)
            .unwrap()
            .1
            .iter()
            .filter(|l| l.name.starts_with("encoder."))
            .map(|l| l.flops)
            .sum::<u64>()
    };
    assert_eq!(encoder_flops(1024), 4 * encoder_flops(512));

    let report = scaling_report(&cfg, &[512, 1024], 1, Mode::Inference).unwrap();
    let (a, b) = (&report.rows[0], &report.rows[1]);
    assert_eq!(b.tokens, 4 * a.tokens);
    assert_eq!(b.dgla_attention_flops, 4 * a.dgla_attention_flops);
    assert!(report.to_text().lines().count() == 3);
}

#[test]
fn totals_match_breakdown() {
    let r = cost_report(&ModelConfig::paper(), 256, 256, 2, 4, Mode::Training).unwrap();
    assert_eq!(r.per_layer.iter().map(|l| l.params).sum::<u64>(), r.params);
    assert_eq!(r.per_layer.iter().map(|l| l.flops).sum::<u64>(), r.flops);
    assert_eq!(r.peak_activation_bytes, r.peak_live_activation_bytes + r.param_bytes + r.grad_bytes);
    assert_eq!(r.to_csv().lines().count(), r.per_layer.len() + 1);
}

#[test]
fn training_needs_more_memory_than_inference() {
    let cfg = ModelConfig::paper();
    let inf = estimate_peak_memory(&cfg, 512, 512, 4, 4, Mode::Inference).unwrap();
    let train = estimate_peak_memory(&cfg, 512, 512, 4, 4, Mode::Training).unwrap();
    assert!(train > inf);
}

#[test]
fn unet_peak_exceeds_model_peak() {
    let cfg = ModelConfig::paper();
    for mode in [Mode::Training, Mode::Inference] {
        let model = cost_report(&cfg, 1024, 1024, 16, 4, mode).unwrap();
        let unet = unet_schedule(cfg.c1, cfg.c2, 1024, 1024).unwrap().report(1024, 1024, 16, 4, mode);
        assert!(unet.peak_activation_bytes > model.peak_activation_bytes);
    }
}

#[test]
fn default_config_anchors_share_order_of_magnitude() {
    let r = cost_report(&ModelConfig::paper(), 1024, 1024, 16, 4, Mode::Training).unwrap();
    let per_image = r.flops / 16;
    assert!(anchor_ratio(r.params as f64, REFERENCE_PARAMS).1);
    assert!(anchor_ratio(per_image as f64, REFERENCE_FLOPS).1);
    assert!(anchor_ratio(r.peak_activation_bytes as f64, REFERENCE_MEMORY_BYTES).1);
    let text = anchor_text(&r, per_image);
    assert!(text.contains("not published"));
    assert_eq!(text.matches("yes").count(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn memory_is_monotone_in_resolution_and_batch(k in 1usize..6, batch in 1usize..5) {
        let cfg = ModelConfig::toy();
        let side = 16 * k;
        let base = estimate_peak_memory(&cfg, side, side, batch, 4, Mode::Training).unwrap();
        prop_assert!(estimate_peak_memory(&cfg, side + 16, side + 16, batch, 4, Mode::Training).unwrap() > base);
        prop_assert!(estimate_peak_memory(&cfg, side, side, batch + 1, 4, Mode::Training).unwrap() > base);
    }

    #[test]
    fn flops_are_affine_in_batch(k in 1usize..5, batch in 1usize..6) {
        // query self-attention runs once per batch, everything else per sample
        let cfg = ModelConfig::toy();
        let side = 16 * k;
        let f = |b| estimate_flops(&cfg, side, side, b).unwrap().0;
        let per_sample = f(2) - f(1);
        prop_assert_eq!(f(batch), f(1) + (batch as u64 - 1) * per_sample);
    }
}
