//! Desk-scale ablation on a fixed synthetic benchmark: 40 training and 10
//! test tiles of 256x256, every variant trained for the same number of steps.
//!
//! cargo run --release --example ablation -- [steps] [lr] [base_channels] [variants]
//!
//! `variants` is a comma-separated list such as `baseline,dual-sa`.

use std::time::Instant;
use uroadnet::backbone::BackboneConfig;
use uroadnet::data::{generate_synthetic, SyntheticConfig};
use uroadnet::dual_sa::{DualSaConfig, Variant};
use uroadnet::model::{ModelConfig, UroadNet};
use uroadnet::train::{evaluate_set, Example, TrainConfig, Trainer};

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let steps: usize = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let lr: f64 = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let base: usize = a.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let gen = |i: u64| Example::<f32>::from_sample(&generate_synthetic(&SyntheticConfig { size: 256, seed: 1000 + i, ..Default::default() }).unwrap());
    let train: Vec<_> = (0..40).map(gen).collect();
    let test: Vec<_> = (40..50).map(gen).collect();
    let variants: Vec<Variant> = a.get(4).map(|s| s.split(',').map(|v| v.parse().unwrap()).collect()).unwrap_or(Variant::ALL.to_vec());
    for v in variants {
        let cfg = ModelConfig {
            variant: v,
            backbone: BackboneConfig { in_channels: 3, base_channels: base, groups: 4 },
            dualsa: DualSaConfig { stages: 1, ..Default::default() },
        };
        let net = UroadNet::new(&cfg).unwrap();
        let tc = TrainConfig { lr, max_steps: Some(steps), epochs: 1000, seed: 5, ..Default::default() };
        let tr = Trainer::new(&net, tc).unwrap();
        let mut st = tr.init_state::<f32>();
        let t = Instant::now();
        tr.train(&train, &train[..4], &mut st, &mut |s, _| { let l = s.log.last().unwrap(); eprintln!("  {v} ep {} loss {:.4} val {:.4} iou {:.4}", l.epoch, l.train_loss, l.val_loss, l.val_iou); Ok(()) }).unwrap();
        let (l, c) = evaluate_set(&net, &st.params, &test, Default::default()).unwrap();
        println!("{v}: test loss {l:.4} iou {:.4} f1 {:.4} ({:.0}s)", c.report().iou, c.report().f1, t.elapsed().as_secs_f64());
    }
}
