use mmr_core::io::{read_segments, write_segments, Checkpoint};
use mmr_core::model::{encode_batch, ArchConfig, Mode, PosTables};
use mmr_core::pipeline::{prepare, MapConfig, TokenConfig};
use mmr_core::preprocess::{preprocess_segment, PreprocessConfig, Preprocessed};
use mmr_core::synth::{generate_cohort, CohortSpec, Segment};
use mmr_core::train::{pretrain, AugSpec, PretrainSpec, TrainConfig};

fn cohort(seed: u64) -> Vec<Segment> {
    let raw = generate_cohort(6, 3, &CohortSpec::default(), seed).unwrap();
    raw.iter()
        .map(|s| match preprocess_segment(s, &PreprocessConfig::default()).unwrap() {
            Preprocessed::Accepted(s) => s,
            Preprocessed::Rejected(r) => panic!("clean synthetic segment rejected: {r:?}"),
        })
        .collect()
}

fn micro_spec(mode: Mode, seed: u64) -> PretrainSpec {
    let mut arch = ArchConfig::micro(25);
    arch.mode = mode;
    PretrainSpec {
        arch,
        map: MapConfig::default(),
        tok: TokenConfig::default(),
        train: TrainConfig {
            batch_size: 4,
            total_steps: 12,
            base_lr: 1e-3,
            log_every: 1,
            augment: AugSpec::default(),
            ..TrainConfig::default()
        },
        seed,
    }
}

#[test]
fn segments_survive_a_file_round_trip() {
    let segs = cohort(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("segments.jsonl");
    write_segments(&path, &segs).unwrap();
    let back = read_segments(&path).unwrap();
    assert_eq!(back, segs);
    for (a, b) in segs.iter().zip(&back) {
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn every_segment_tiles_the_default_grid() {
    for s in cohort(3) {
        let p = prepare(&s.samples, s.fs_hz, Mode::Mmr, &MapConfig::default(), &TokenConfig::default()).unwrap();
        assert_eq!((p.patches.n, p.patches.dim), (80, 25));
        let m = p.mask(&TokenConfig::default(), 11).unwrap();
        assert_eq!(m.masked.len(), 60);
        assert_eq!(m.visible.len(), 20);
    }
}

#[test]
fn pretraining_is_reproducible_and_checkpoints_restore_it() {
    let segs = cohort(4);
    let spec = micro_spec(Mode::Mmr, 9);
    let a = pretrain(&segs, &spec, |_| {}).unwrap();
    let b = pretrain(&segs, &spec, |_| {}).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.state, b.state);
    assert_eq!(a.curve.len(), 12);
    assert!(a.curve.iter().all(|p| p.loss.is_finite() && p.loss > 0.0));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mmrc");
    Checkpoint::new(&a.state, Some(&a.opt)).unwrap().save(&path).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.model().unwrap(), a.state);
    assert_eq!(ck.optimizer().unwrap().unwrap(), a.opt);
    assert_eq!(std::fs::read(&path).unwrap(), ck.to_bytes().unwrap());

    let c = pretrain(&segs, &micro_spec(Mode::Mmr, 10), |_| {}).unwrap();
    assert_ne!(a.curve, c.curve);
}

#[test]
fn frozen_encoder_embeds_in_both_modes() {
    let segs = cohort(5);
    for mode in [Mode::Mmr, Mode::Mtr] {
        let spec = micro_spec(mode, 1);
        let out = pretrain(&segs, &spec, |_| {}).unwrap();
        let prepared: Vec<_> = segs
            .iter()
            .map(|s| prepare(&s.samples, s.fs_hz, mode, &spec.map, &spec.tok).unwrap())
            .collect();
        let pos = PosTables::new(&prepared[0].grid, &out.state.cfg).unwrap();
        let batch: Vec<_> = prepared.iter().map(|p| &p.patches).collect();
        let all = encode_batch(&out.state, &batch, &pos.enc).unwrap();
        assert_eq!(all.len(), segs.len());
        assert!(all.iter().all(|e| e.len() == 8 && e.iter().all(|v| v.is_finite())));
        // Batching must not change any single embedding.
        let one = encode_batch(&out.state, &batch[2..3], &pos.enc).unwrap();
        for (x, y) in one[0].iter().zip(&all[2]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
