// scratch calibration probe: sweep dataset hardness, measure accuracy + transfer
use pas::attack::{attack_success_rate, ifgsm, AttackConfig};
use pas::data::{split_dataset, synthetic_dataset, SyntheticConfig};
use pas::model::{build_model, evaluate_accuracy, train, ArchitectureSpec, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.30);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let ilo: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let ihi: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.8);
    let t0 = Instant::now();
    let data = synthetic_dataset(&SyntheticConfig { noise_sigma: noise, intensity: (ilo, ihi), ..Default::default() }).unwrap();
    let splits = split_dataset(&data, 0.8, 0.1, 42).unwrap();

    let train_cfg = TrainConfig { epochs, batch_size: 64, learning_rate: lr, momentum: 0.9, weight_decay: 1e-4, seed: 1 };

    let mut surrogate = build_model(&ArchitectureSpec::plain_cnn((1, 28, 28), 10, &[16, 32, 64]), 101).unwrap();
    surrogate.name = "surrogate".into();
    train(&mut surrogate, &splits.train, &splits.validation, &train_cfg).unwrap();
    let s_acc = evaluate_accuracy(&surrogate, &splits.test).unwrap();

    let mut validation = build_model(&ArchitectureSpec::mini_resnet((1, 28, 28), 10, &[16, 32], 1), 202).unwrap();
    validation.name = "validation".into();
    train(&mut validation, &splits.train, &splits.validation, &TrainConfig { seed: 2, ..train_cfg.clone() }).unwrap();
    let m_acc = evaluate_accuracy(&validation, &splits.test).unwrap();

    let mut victim = build_model(&ArchitectureSpec::mini_resnet((1, 28, 28), 10, &[24, 40], 1), 303).unwrap();
    victim.name = "victim".into();
    train(&mut victim, &splits.train, &splits.validation, &TrainConfig { seed: 3, ..train_cfg.clone() }).unwrap();
    let v_acc = evaluate_accuracy(&victim, &splits.test).unwrap();

    let test1k = splits.test.take(1000).unwrap();
    let atk = AttackConfig { epsilon: 0.1, steps: 10, ..Default::default() };
    let identity = surrogate.identity_path();
    let batch = ifgsm(&surrogate, &identity, &test1k.images, &test1k.labels, &atk).unwrap();
    let wb = batch.success.iter().filter(|&&s| s).count() as f64 / 1000.0;
    let id_victim = attack_success_rate(&victim, &batch).unwrap();
    let id_val = attack_success_rate(&validation, &batch).unwrap();

    // quick probe of a hand-guessed skip-heavy path (all conv γ=0.3, relu γ=0.7, residual n/a)
    let mut probe = pas::reparam::PathConfig::new();
    for site in surrogate.sites() {
        let g = match site.kind {
            pas::reparam::SiteKind::Conv => 0.3,
            pas::reparam::SiteKind::Activation => 0.7,
            pas::reparam::SiteKind::Residual => 0.3,
        };
        probe.set(site.site_id, g).unwrap();
    }
    let pbatch = ifgsm(&surrogate, &probe, &test1k.images, &test1k.labels, &atk).unwrap();
    let probe_victim = attack_success_rate(&victim, &pbatch).unwrap();

    println!("noise {noise} epochs {epochs} lr {lr} int ({ilo},{ihi}) | acc s/m/v {s_acc:.4}/{m_acc:.4}/{v_acc:.4} | wb {wb:.4} | victimASR id {id_victim:.4} probe {probe_victim:.4} | valASR id {id_val:.4} | {:?}", t0.elapsed());
}
