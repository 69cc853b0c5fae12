use rand::SeedableRng;
use std::fs;
use uroadnet::backbone::BackboneConfig;
use uroadnet::data::{generate_synthetic, load_dataset, save_sample, SyntheticConfig};
use uroadnet::dual_sa::{DualSaConfig, Variant};
use uroadnet::nn::{Module, ParamStore};
use uroadnet::train::{Example, TrainConfig, Trainer};
use uroadnet::{Error, ModelConfig, Tensor, UroadNet};

fn small(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        backbone: BackboneConfig { in_channels: 3, base_channels: 4, groups: 2 },
        dualsa: DualSaConfig { stages: 1, heads: 2, mlp_ratio: 2, ..Default::default() },
    }
}

fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    Tensor::uniform([3, h, w], 0.0, 1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn variants_share_input_and_output_shapes() {
    for v in Variant::ALL {
        let net = UroadNet::new(&small(v)).unwrap();
        let params = net.init_params::<f64>(1);
        for (h, w) in [(16, 16), (21, 13)] {
            let s = net.predict(&params, &image(h, w, 2)).unwrap();
            assert_eq!((s.height, s.width), (h, w), "{v}");
            assert!(s.values.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}

#[test]
fn silenced_dual_sa_reduces_to_the_baseline() {
    let dual = UroadNet::new(&small(Variant::DualSa)).unwrap();
    let base = UroadNet::new(&small(Variant::Baseline)).unwrap();
    let mut params = dual.init_params::<f64>(7);
    // Perturb everything, then switch off every residual branch output.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    for (name, t) in params.iter_mut() {
        if !name.starts_with("dualsa.fuse.") {
            t.add_assign(&Tensor::randn(t.shape().to_vec(), 0.2, &mut rng));
        }
    }
    params.zero_where(|n| n.contains(".o.") || n.contains(".fc2.") || n.contains(".unpatch."));
    let mut shared = ParamStore::new();
    for (name, t) in params.iter() {
        if !name.starts_with("dualsa.") {
            shared.insert(name.clone(), t.clone());
        }
    }
    shared.validate(&base.specs()).unwrap();
    let img = image(32, 24, 9);
    let a = dual.predict(&params, &img).unwrap();
    let b = base.predict(&shared, &img).unwrap();
    assert_eq!(a.values, b.values);
}

#[test]
fn training_is_deterministic() {
    let samples: Vec<_> = (0..3)
        .map(|i| Example::<f32>::from_sample(&generate_synthetic(&SyntheticConfig { size: 32, seed: i, ..Default::default() }).unwrap()))
        .collect();
    let net = UroadNet::new(&small(Variant::DualSa)).unwrap();
    let config = TrainConfig { lr: 1e-3, epochs: 3, seed: 4, ..Default::default() };
    let run = || {
        let trainer = Trainer::new(&net, config.clone()).unwrap();
        let mut state = trainer.init_state::<f32>();
        trainer.train(&samples, &samples[..1], &mut state, &mut |_, _| Ok(())).unwrap();
        state
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log.len(), 3);
    for (x, y) in a.log.iter().zip(&b.log) {
        assert!((x.train_loss - y.train_loss).abs() <= 1e-6);
        assert!((x.val_loss - y.val_loss).abs() <= 1e-6);
    }
    assert_eq!(a.params, b.params);
}

#[test]
fn dataset_loading_cases() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("masks")).unwrap();
    assert!(load_dataset(root).unwrap().is_empty());

    let mut s = generate_synthetic(&SyntheticConfig { size: 32, seed: 3, ..Default::default() }).unwrap();
    s.name = "tile_a".into();
    save_sample(root, &s).unwrap();
    let loaded = load_dataset(root).unwrap();
    assert_eq!(loaded.len(), 1);
    assert_eq!(loaded[0].name, "tile_a");
    assert_eq!(loaded[0].mask, s.mask);
    assert_eq!(loaded[0].centerlines.len(), s.centerlines.len());

    fs::copy(root.join("images/tile_a.png"), root.join("images/tile_b.png")).unwrap();
    match load_dataset(root) {
        Err(Error::Load { stem, .. }) => assert_eq!(stem, "tile_b"),
        other => panic!("expected a load error, got {:?}", other.map(|v| v.len())),
    }
}
