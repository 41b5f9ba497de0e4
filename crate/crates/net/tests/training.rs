use iuzawa_core::grf::{gen_dataset, ExperimentKind};
use iuzawa_net::checkpoint::{read_checkpoint, write_checkpoint};
use iuzawa_net::train::{evaluate, train, TrainConfig};
use iuzawa_net::{NetConfig, NetParams, Tying};

fn smoke_config() -> NetConfig {
    let mut c = NetConfig::new(ExperimentKind::EllipticIso, 16);
    c.layers = 2;
    c.tying = Tying::Shared;
    c.qa_width = 16;
    c.k_max = 4;
    c
}

#[test]
fn smoke_training_reduces_loss() {
    let ds = gen_dataset(ExperimentKind::EllipticIso, 64, 16, 21).unwrap();
    let mut net = NetParams::init(&smoke_config()).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        ..Default::default()
    };
    let rep = train(&cfg, &mut net, &ds, None).unwrap();
    assert!(rep.all_finite());
    let last = *rep.epoch_loss.last().unwrap();
    assert!(last < rep.initial_loss, "{} -> {last}", rep.initial_loss);
}

#[test]
fn training_is_reproducible_and_checkpoints_round_trip() {
    let ds = gen_dataset(ExperimentKind::EllipticIso, 12, 12, 22).unwrap();
    let mut c = smoke_config();
    c.train_m = 12;
    c.pad_to = 14;
    c.k_max = 3;
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 5,
        checkpoint_every: 1,
        checkpoint_path: Some(dir.path().join("ckpt.bin")),
        ..Default::default()
    };
    let mut a = NetParams::init(&c).unwrap();
    let mut b = NetParams::init(&c).unwrap();
    let ra = train(&cfg, &mut a, &ds, None).unwrap();
    let rb = train(&cfg, &mut b, &ds, None).unwrap();
    assert_eq!(ra, rb);
    assert!(a.store.same_values(&b.store));
    let saved = read_checkpoint(cfg.checkpoint_path.as_ref().unwrap()).unwrap();
    assert!(saved.store.same_values(&a.store));
    let path = dir.path().join("again.bin");
    write_checkpoint(&saved, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(cfg.checkpoint_path.as_ref().unwrap()).unwrap());
    let rep = evaluate(&saved, &ds, Some(16)).unwrap();
    assert_eq!((rep.m, rep.eps_rel.len()), (16, 12));
    assert!(rep.eps_rel.iter().all(|e| e.is_finite()));
}
