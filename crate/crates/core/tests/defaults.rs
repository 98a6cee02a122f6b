//! Hyper-parameters carried by the default configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use timebalance::config::Config;
use timebalance::encoder::{EncoderWeights, Role};
use timebalance::eval::SCALES;
use timebalance::optim::{ADAM_EPS, BETA1, BETA2};

#[test]
fn contrastive_defaults() {
    let cfg = Config::default();
    assert_eq!(cfg.train.tau, 0.1);
    assert_eq!(cfg.n, 4);
}

#[test]
fn optimizer_defaults() {
    let cfg = Config::default();
    assert_eq!(cfg.train.base_lr, 1e-3);
    assert_eq!(cfg.train.warmup_epochs, 10);
    assert_eq!((BETA1, BETA2), (0.9, 0.999));
    assert_eq!(ADAM_EPS, 1e-8);
}

#[test]
fn clip_lengths_per_stage() {
    let cfg = Config::default();
    assert_eq!(cfg.pretrain.clip_len, 16);
    assert_eq!(cfg.finetune.clip_len, 8);
    assert_eq!(cfg.student.clip_len, 8);
}

#[test]
fn inference_protocol_defaults() {
    let cfg = Config::default();
    assert_eq!(cfg.eval.num_clips, 10);
    assert_eq!(cfg.eval.num_scales, 3);
    assert_eq!(SCALES.len(), 3);
}

#[test]
fn projector_hidden_width_is_a_quarter_of_the_feature_width() {
    let cfg = Config::default();
    let encoder = cfg.encoder_config(10);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = EncoderWeights::<f32>::new(encoder, Role::InvariantTeacher, &mut rng).unwrap();
    let feature = cfg.model.widths[3];
    assert_eq!(w.projector.proj_in.input, feature);
    assert_eq!(w.projector.proj_in.output * 4, feature);
    assert_eq!(w.projector.proj_out.output, cfg.model.proj_dim);
}
