use biasforge_autograd::{check_gradients, GradCheckReport, Var};
use biasforge_core::dataset::{generate_synthetic_face, synthetic_dataset, SyntheticDatasetSpec, SyntheticFaceSpec};
use biasforge_core::enhance::{
    dilate3, edge_smooth, enhance_losses, slic_superpixels, sobel_edges, EnhanceArch, EnhanceConfig,
    EnhanceDiscriminators, EnhanceGenerator, EnhanceTrainer,
};
use biasforge_core::image::{to_grayscale, Image, RangeTag};
use biasforge_core::nets::normal_tensor;
use biasforge_core::pipeline::{derive_seed, PipelineConfig, STAGES};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_enhance() -> EnhanceConfig {
    EnhanceConfig {
        work_size: 16,
        superpixels: 4,
        arch: EnhanceArch {
            support: [1, 1, 2],
            main: [2, 2, 1, 1],
            discriminator: [1, 1, 1],
        },
        ..EnhanceConfig::default()
    }
}

#[test]
fn enhancement_losses_match_finite_differences() {
    let cfg = tiny_enhance();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut gen = EnhanceGenerator::new(&cfg.arch, &mut rng);
    // Move LADE off its identity initialisation so its gradients carry signal.
    let moved: Vec<_> = gen
        .params
        .names()
        .iter()
        .zip(gen.params.tensors())
        .map(|(n, t)| {
            if n.contains("lade") {
                t.zip_map(&normal_tensor(t.shape(), &mut rng), |a, b| a + 0.5 * b)
            } else {
                t.clone()
            }
        })
        .collect();
    gen.params.assign(moved).unwrap();
    let discs = EnhanceDiscriminators::new(&cfg.arch, &mut rng);
    assert!(gen.params.numel() <= 500, "{}", gen.params.numel());
    let input = normal_tensor(&[1, 3, 16, 16], &mut rng).map(f64::tanh);
    let real = normal_tensor(&[1, 3, 16, 16], &mut rng).map(f64::tanh);
    let (d1, d2) = (discs.d1.params.constants(), discs.d2.params.constants());
    let r = check_gradients(gen.params.tensors(), 1e-6, |v: &[Var]| {
        enhance_losses(&gen, v, &discs, &d1, &d2, &cfg, &input, &real).unwrap().g_total
    });
    assert_close(&r, gen.params.names());

    let g = gen.params.constants();
    let r = check_gradients(discs.d2.params.tensors(), 1e-6, |v: &[Var]| {
        enhance_losses(&gen, &g, &discs, &d1, v, &cfg, &input, &real).unwrap().d_total
    });
    assert_close(&r, discs.d2.params.names());
}

/// Per-tensor relative error, except that a tensor whose gradients are both
/// at finite-difference noise level counts as matching. Conv biases feeding
/// an instance norm have an exactly zero gradient.
fn assert_close(r: &GradCheckReport, names: &[String]) {
    for (i, (a, n)) in r.analytic.iter().zip(&r.numeric).enumerate() {
        let (na, nn) = (a.sq_norm().sqrt(), n.sq_norm().sqrt());
        if na.max(nn) < 1e-7 {
            continue;
        }
        let rel = a.zip_map(n, |x, y| x - y).sq_norm().sqrt() / na.max(nn);
        assert!(rel <= 1e-3, "{}: relative error {rel:e} (|a| {na:e}, |n| {nn:e})", names[i]);
    }
}

#[test]
fn enhancement_training_stays_finite() {
    let frames: Vec<Image> = (0..6)
        .map(|i| {
            let spec = SyntheticFaceSpec {
                noise_sigma: 0.05,
                seed: i,
                has_glasses: i % 2 == 0,
                ..SyntheticFaceSpec::default()
            };
            generate_synthetic_face(&spec, 32, 32).unwrap()
        })
        .collect();
    let cfg = EnhanceConfig {
        work_size: 32,
        superpixels: 16,
        batch_size: 2,
        seed: 1,
        ..EnhanceConfig::default()
    };
    let mut trainer = EnhanceTrainer::new(cfg, &frames).unwrap();
    for _ in 0..200 {
        let d = trainer.train_step().unwrap();
        for v in [d.loss_d, d.loss_g, d.adv_d1, d.adv_d2, d.content] {
            assert!(v.is_finite(), "step {}: {d:?}", d.iteration);
        }
    }
    assert_eq!(trainer.iteration, 200);
}

#[test]
fn skin_and_eyeglasses_datasets_differ_by_seed() {
    let spec = |seed| SyntheticDatasetSpec {
        count: 8,
        height: 16,
        width: 16,
        glasses_rate: 0.5,
        dark_rate: 0.5,
        noise_sigma: 0.02,
        seed,
    };
    assert_eq!(synthetic_dataset(&spec(1)).unwrap(), synthetic_dataset(&spec(1)).unwrap());
    assert_ne!(synthetic_dataset(&spec(1)).unwrap().1, synthetic_dataset(&spec(2)).unwrap().1);
}

fn config_lines() -> Vec<String> {
    [
        "seed = 9",
        "data.manifest = m.txt",
        "skin.lambda_gp = 5",
        "ergan.w_rec = 3",
        "enhance.superpixels = 64",
        "bias.threshold = 0.25",
        "skin.encoder = 8,16",
        "assemble.target_rate = 0.4",
    ]
    .map(String::from)
    .to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn stage_seeds_are_distinct(master in any::<u64>()) {
        let seeds: std::collections::HashSet<u64> = STAGES.iter().map(|s| derive_seed(master, s)).collect();
        prop_assert_eq!(seeds.len(), STAGES.len());
    }

    #[test]
    fn config_hash_ignores_line_order(order in Just(config_lines()).prop_shuffle(), out in "[a-z]{1,8}") {
        let base = PipelineConfig::parse(&config_lines().join("\n")).unwrap();
        let mut text = order.join("\n");
        text.push_str(&format!("\noutput.dir = {out}\n"));
        let shuffled = PipelineConfig::parse(&text).unwrap();
        prop_assert_eq!(base.hash(), shuffled.hash());
        let changed = PipelineConfig::parse(&text.replace("skin.lambda_gp = 5", "skin.lambda_gp = 6")).unwrap();
        prop_assert_ne!(base.hash(), changed.hash());
    }

    #[test]
    fn slic_labels_every_pixel(seed in any::<u64>(), k in 1usize..40, h in 16usize..28, w in 16usize..28) {
        let img = generate_synthetic_face(&SyntheticFaceSpec { seed, noise_sigma: 0.05, ..SyntheticFaceSpec::default() }, h, w).unwrap();
        let sp = slic_superpixels(&img, k, 5).unwrap();
        prop_assert_eq!(sp.labels.len(), h * w);
        prop_assert!(sp.labels.iter().all(|&l| l < k));
        prop_assert_eq!(sp.recolored.dims(), img.dims());
        prop_assert_eq!(&slic_superpixels(&img, k, 5).unwrap(), &sp);
    }

    #[test]
    fn edge_smoothing_leaves_flat_regions_alone(
        px in prop::collection::vec(0.0f64..=1.0, 12 * 12 * 3),
        t in 0.05f64..0.95,
    ) {
        let img = Image::new(12, 12, 3, px, RangeTag::Unit).unwrap();
        let out = edge_smooth(&img, t, 1.0).unwrap();
        let strong: Vec<bool> = sobel_edges(&to_grayscale(&img).unwrap()).unwrap().into_iter().map(|e| e > t).collect();
        let mask = dilate3(&strong, 12, 12);
        for (p, &m) in mask.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (img.get(p / 12, p % 12, k), out.get(p / 12, p % 12, k));
                if m {
                    prop_assert!((0.0..=1.0).contains(&b));
                } else {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
