use nbfuse_core::curriculum::{train, train_with_observer, CurriculumSchedule, TrainConfig};
use nbfuse_core::diffcore::Group;
use nbfuse_core::encoders::{ConvEncoderConfig, TextEncoderConfig};
use nbfuse_core::model::{Dataset, FusionModel, ModelConfig};
use nbfuse_core::prmf::PrmfConfig;
use nbfuse_core::synthdata::{generate, generate_raw, RawConfig, SynthConfig};

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        samples_per_class: 30,
        d_i: 16,
        d_t: 24,
        latent_dim: 6,
        seed,
        ..SynthConfig::default()
    }
}

fn embedded_model(c: &SynthConfig, seed: u64) -> FusionModel<f32> {
    FusionModel::new(ModelConfig {
        prmf: PrmfConfig {
            d_i: c.d_i,
            d_t: c.d_t,
            ..PrmfConfig::default()
        },
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

#[test]
fn identical_seeds_give_identical_loss_sequences() {
    let synth = small_synth(5);
    let ds = generate(&synth).unwrap();
    let (tr, va) = (Dataset::Embedded(ds.train()), Dataset::Embedded(ds.val()));
    let cfg = TrainConfig {
        epochs: 9,
        batch_size: 8,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let sched = CurriculumSchedule::new(9).unwrap();
    let run = || {
        let mut m = embedded_model(&synth, 3);
        let log = train(&cfg, Some(&sched), &mut m, &tr, Some(&va)).unwrap();
        (log.losses().iter().map(|l| l.to_bits()).collect::<Vec<_>>(), log.to_string())
    };
    assert_eq!(run(), run());
}

#[test]
fn text_encoder_untouched_during_phase_one() {
    let raw = generate_raw(&RawConfig {
        samples_per_class: 4,
        ..RawConfig::default()
    })
    .unwrap();
    let visual = ConvEncoderConfig {
        channels: vec![2, 4],
        out_dim: 10,
        ..ConvEncoderConfig::default()
    };
    let text = TextEncoderConfig {
        d_model: 8,
        out_dim: 12,
        ..TextEncoderConfig::default()
    };
    let mut model = FusionModel::<f32>::new(ModelConfig::raw(visual, text, 3, 1)).unwrap();
    let start = model.store.snapshot(Group::TextEncoder);
    let data = Dataset::Raw(raw);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 4,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let sched = CurriculumSchedule::new(6).unwrap();
    let mut phase_one_steps = 0;
    let mut moved_in_phase_two = false;
    train_with_observer(&cfg, Some(&sched), &mut model, &data, None, |info, store| {
        let now = store.snapshot(Group::TextEncoder);
        if info.phase == 1 {
            phase_one_steps += 1;
            assert_eq!(now, start, "text encoder moved at epoch {}", info.epoch);
        } else if now != start {
            moved_in_phase_two = true;
        }
    })
    .unwrap();
    assert_eq!(phase_one_steps, 2 * 3);
    assert!(moved_in_phase_two);
}

#[test]
fn default_data_loss_decreases() {
    let ds = generate(&SynthConfig::default()).unwrap();
    let tr = Dataset::Embedded(ds.train());
    let mut m = embedded_model(&SynthConfig::default(), 42);
    let cfg = TrainConfig {
        epochs: 12,
        ..TrainConfig::default()
    };
    let log = train(&cfg, Some(&CurriculumSchedule::new(12).unwrap()), &mut m, &tr, None).unwrap();
    let losses = log.losses();
    assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
}

#[test]
fn schedule_length_must_match_epochs() {
    let synth = small_synth(1);
    let ds = generate(&synth).unwrap();
    let mut m = embedded_model(&synth, 1);
    let cfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let sched = CurriculumSchedule::new(5).unwrap();
    assert!(train(&cfg, Some(&sched), &mut m, &Dataset::Embedded(ds.train()), None).is_err());
}
