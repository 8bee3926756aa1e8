use meal::data::ImageSource;
use meal::data::{augment_train, synthetic_dataset, Split, SyntheticConfig};
use meal::ensemble::{Ensemble, Preprocessing};
use meal::nets::{build_model, CapacityTier, ModelSpec};
use meal::trainer::{distill, evaluate, pretrain_hard, DistillConfig, InitMode, MetricsRecord, PretrainConfig, StudentInit};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_teachers(train: &meal::data::Dataset, val: &meal::data::Dataset, k: u64) -> Ensemble {
    let spec = ModelSpec::new(CapacityTier::StudentTiny, train.spec().num_classes, train.spec().resolution);
    let cfg = PretrainConfig {
        batch_size: 16,
        ..PretrainConfig::with_epochs(2)
    };
    let teachers = (0..k)
        .map(|i| {
            let (b, _) = pretrain_hard(
                build_model(&spec, 40 + i).unwrap(),
                train,
                val,
                &PretrainConfig { seed: i, ..cfg.clone() },
                |_, _| Ok(()),
            )
            .unwrap();
            b.to_model().unwrap()
        })
        .collect();
    Ensemble::new(teachers, Preprocessing::of(train.spec())).unwrap()
}

#[test]
fn tiny_model_fits_the_fixture_in_five_epochs() {
    let train = synthetic_dataset(4, 100, 1).unwrap();
    let spec = ModelSpec::new(CapacityTier::StudentTiny, 4, train.spec().resolution);
    let cfg = PretrainConfig {
        batch_size: 16,
        ..PretrainConfig::with_epochs(5)
    };
    let (bundle, records) = pretrain_hard(build_model(&spec, 0).unwrap(), &train, &train, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(records.len(), 5);
    let acc = evaluate(&bundle.to_model().unwrap(), &train).unwrap();
    assert!(acc.top1 > 90.0, "train top-1 {}", acc.top1);
}

#[test]
fn fixture_counts_and_determinism() {
    let a = synthetic_dataset(2, 10, 3).unwrap();
    assert_eq!(a.len(), 20);
    assert_eq!(a.class_counts().unwrap(), vec![10, 10]);
    let b = synthetic_dataset(2, 10, 3).unwrap();
    assert!((0..20).all(|i| a.image(i).pixels == b.image(i).pixels));
}

#[test]
fn crop_statistics_cover_the_range() {
    let image = Array3::from_elem((32, 32, 3), 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut lo, mut hi, mut flips) = (f64::MAX, f64::MIN, 0usize);
    for _ in 0..10_000 {
        let (_, p) = augment_train(&image, 16, &mut rng);
        lo = lo.min(p.area_fraction);
        hi = hi.max(p.area_fraction);
        flips += usize::from(p.flip);
    }
    assert!(lo <= 0.1 && hi >= 0.99, "area fraction spans [{lo}, {hi}]");
    let rate = flips as f64 / 10_000.0;
    assert!((rate - 0.5).abs() <= 0.02, "flip rate {rate}");
}

fn distill_run(
    train: &meal::data::Dataset,
    val: &meal::data::Dataset,
    ens: &Ensemble,
    init: &StudentInit,
    cfg: &DistillConfig,
) -> (Vec<meal::nn::TensorRecord>, Vec<MetricsRecord>) {
    let (bundle, records) = distill(init, ens, train, val, cfg, |_, _| Ok(())).unwrap();
    (bundle.weights, records.iter().map(MetricsRecord::without_timing).collect())
}

#[test]
fn distillation_never_reads_training_labels() {
    let cfg = SyntheticConfig::new(4, 12, 2);
    let train = cfg.generate(Split::Train).unwrap();
    let val = SyntheticConfig {
        samples_per_class: 5,
        ..cfg.clone()
    }
    .generate(Split::Val)
    .unwrap();
    let ens = tiny_teachers(&train, &val, 2);
    let spec = ModelSpec::new(CapacityTier::StudentTiny, 4, train.spec().resolution);
    let init = StudentInit::Random { spec, seed: 5 };
    let dc = DistillConfig {
        batch_size: 16,
        init_mode: InitMode::Random,
        ..DistillConfig::with_epochs(2)
    };
    let shuffled = train.with_shuffled_labels(99);
    assert_ne!(shuffled.class_labels().unwrap(), train.class_labels().unwrap());
    let (wa, ra) = distill_run(&train, &val, &ens, &init, &dc);
    let (wb, rb) = distill_run(&shuffled, &val, &ens, &init, &dc);
    assert_eq!(ra, rb);
    assert_eq!(wa, wb);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let cfg = SyntheticConfig::new(3, 10, 4);
    let train = cfg.generate(Split::Train).unwrap();
    let val = SyntheticConfig {
        samples_per_class: 4,
        ..cfg.clone()
    }
    .generate(Split::Val)
    .unwrap();
    let ens = tiny_teachers(&train, &val, 1);
    let spec = ModelSpec::new(CapacityTier::StudentTiny, 3, train.spec().resolution);
    let init = StudentInit::Random { spec, seed: 1 };
    let dc = DistillConfig {
        batch_size: 8,
        init_mode: InitMode::Random,
        ..DistillConfig::with_epochs(2)
    };
    let a = distill_run(&train, &val, &ens, &init, &dc);
    let b = distill_run(&train, &val, &ens, &init, &dc);
    assert_eq!(a, b);
    let c = distill_run(&train, &val, &ens, &init, &DistillConfig { seed: 1, ..dc });
    assert_ne!(a.0, c.0);
}
