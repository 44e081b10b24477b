mod common;

use spikedistill::data::{synth_dataset, Sample, SynthConfig};
use spikedistill::eval::{eval_windows, evaluate};
use spikedistill::events::ExSy;
use spikedistill::nets::{
    load_checkpoint, save_checkpoint, CheckpointMeta, Network, Student, StudentConfig, Teacher,
    TeacherConfig,
};
use spikedistill::tensorgrad::Tensor;
use spikedistill::Error;

fn small_student(t: usize) -> StudentConfig {
    StudentConfig {
        height: 16,
        width: 16,
        widths: vec![4, 6, 6, 8, 8],
        timesteps: t,
        ..StudentConfig::default()
    }
}

fn small_teacher(t: usize) -> TeacherConfig {
    TeacherConfig {
        height: 16,
        width: 16,
        event_widths: vec![4, 6, 6, 8, 8],
        intensity_widths: vec![4, 4, 6, 6, 8],
        timesteps: t,
        ..TeacherConfig::default()
    }
}

fn frames(n: usize, c: usize, seed: u64) -> Vec<Tensor> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|_| common::uniform(&[c, 16, 16], 0.0, 1.0, &mut r))
        .collect()
}

fn live_student(t: usize) -> Student {
    let mut s = Student::init(small_student(t), &mut common::rng(1)).unwrap();
    let windows: Vec<Vec<Tensor>> = (0..4).map(|i| frames(t, 1, 100 + i)).collect();
    s.calibrate(&windows, 0.2).unwrap();
    s
}

fn live_teacher(t: usize) -> Teacher {
    let mut n = Teacher::init(small_teacher(t), &mut common::rng(2)).unwrap();
    let it: Vec<Vec<Tensor>> = (0..4).map(|i| frames(t, 1, 200 + i)).collect();
    let ev: Vec<Vec<Tensor>> = (0..4).map(|i| frames(t, 2, 300 + i)).collect();
    n.calibrate(&it, &ev, 0.2).unwrap();
    n
}

fn closed_form_params(c_in: usize, widths: &[usize], k: usize) -> usize {
    let mut c = c_in;
    let mut total = 0;
    for &w in widths {
        total += c * w * k * k + w;
        c = w;
    }
    total
}

#[test]
fn zero_student_outputs_zero() {
    let s = Student::zeros(small_student(3)).unwrap();
    let (o, _) = s.infer(&frames(3, 1, 0)).unwrap();
    assert_eq!(o.tensor().shape(), &[3, 7]);
    assert!(o.tensor().data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_teacher_on_zero_input_outputs_zero() {
    let t = Teacher::zeros(small_teacher(2)).unwrap();
    let zi = vec![Tensor::zeros(vec![1, 16, 16]); 2];
    let ze = vec![Tensor::zeros(vec![2, 16, 16]); 2];
    let (o, _) = t.infer(&zi, &ze).unwrap();
    assert_eq!(o.tensor().shape(), &[2, 7]);
    assert!(o.tensor().data().iter().all(|&v| v == 0.0));
}

#[test]
fn first_step_has_no_carryover() {
    let s3 = live_student(3);
    let s1 = Student::from_params(small_student(1), s3.params().clone()).unwrap();
    let f = frames(3, 1, 7);
    let (long, _) = s3.infer(&f).unwrap();
    let (single, _) = s1.infer(&f[..1]).unwrap();
    assert_eq!(long.row(0), single.row(0));
}

#[test]
fn frame_order_matters() {
    let s = live_student(2);
    let f = frames(2, 1, 9);
    let (a, _) = s.infer(&f).unwrap();
    let (b, _) = s.infer(&[f[1].clone(), f[0].clone()]).unwrap();
    // the second step sees membrane state left by the first
    assert_ne!(a.row(1), b.row(0));
    assert_ne!(a.tensor(), b.tensor());
}

#[test]
fn wrong_frame_count_or_shape_is_input_error() {
    let s = Student::zeros(small_student(3)).unwrap();
    assert!(matches!(s.infer(&frames(2, 1, 0)), Err(Error::Input(_))));
    assert!(s.infer(&frames(3, 2, 0)).is_err());
    let t = Teacher::zeros(small_teacher(2)).unwrap();
    assert!(matches!(
        t.infer(&frames(2, 1, 0), &frames(3, 2, 0)),
        Err(Error::Input(_))
    ));
}

#[test]
fn parameter_counts_follow_the_closed_form() {
    let cfg = StudentConfig::default();
    let s = Student::zeros(cfg.clone()).unwrap();
    // 32x32 pooled three times -> 4x4
    let fc = 64 * 4 * 4 * 7 + 7;
    assert_eq!(
        s.params().num_scalars(),
        closed_form_params(1, &cfg.widths, 3) + fc
    );
    assert_eq!(
        s.layers().iter().map(|l| l.params()).sum::<usize>(),
        s.params().num_scalars()
    );

    let tc = TeacherConfig::default();
    let t = Teacher::zeros(tc.clone()).unwrap();
    let fc = 2 * 64 * 4 * 4 * 7 + 7;
    assert_eq!(
        t.params().num_scalars(),
        closed_form_params(2, &tc.event_widths, 3)
            + closed_form_params(1, &tc.intensity_widths, 3)
            + fc
    );
}

#[test]
fn teacher_uses_both_branches() {
    let t = live_teacher(2);
    let (it, ev) = (frames(2, 1, 11), frames(2, 2, 12));
    let (full, _) = t.infer(&it, &ev).unwrap();

    let mut params = t.params().clone();
    for (name, v) in params.iter_mut() {
        if name.starts_with("intensity.") {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let ablated = Teacher::from_params(small_teacher(2), params).unwrap();
    let (no_int, _) = ablated.infer(&it, &ev).unwrap();
    assert_ne!(full.tensor(), no_int.tensor());

    let zero_ev = vec![Tensor::zeros(vec![2, 16, 16]); 2];
    let (no_ev, _) = t.infer(&it, &zero_ev).unwrap();
    assert_ne!(full.tensor(), no_ev.tensor());
}

#[test]
fn student_ignores_event_frames() {
    let cfg = SynthConfig {
        subjects: 2,
        sequences_per_subject: 2,
        frames_per_sequence: 16,
        size: 32,
        ..SynthConfig::default()
    };
    let ds = synth_dataset(&cfg, 5).unwrap();
    let original: Vec<&Sample> = ds.samples.iter().collect();
    let mut scrambled: Vec<Sample> = ds.samples.clone();
    for s in &mut scrambled {
        for (i, f) in s.events.iter_mut().enumerate() {
            f.data_mut()
                .iter_mut()
                .for_each(|v| *v = (i as f64 + *v).sin());
        }
    }
    let scrambled_refs: Vec<&Sample> = scrambled.iter().collect();
    let mut s = Student::init(StudentConfig::default(), &mut common::rng(4)).unwrap();
    let windows: Vec<Vec<Tensor>> = ds
        .samples
        .iter()
        .map(|x| x.intensity[..4].to_vec())
        .collect();
    s.calibrate(&windows, 0.15).unwrap();
    let net = Network::Student(s);
    let w = eval_windows(&original, ExSy { x: 4, y: 3 }, 0).unwrap();
    let a = evaluate(&net, &original, &w, true).unwrap();
    let b = evaluate(&net, &scrambled_refs, &w, true).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(a.sample_ops, b.sample_ops);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let net = Network::Teacher(live_teacher(2));
    let meta = CheckpointMeta {
        epoch: Some(3),
        war: Some(0.25),
        uar: None,
        seed: Some(9),
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_checkpoint(a.path(), &net, &meta).unwrap();
    let loaded = load_checkpoint(a.path()).unwrap();
    assert_eq!(loaded.network, net);
    assert_eq!(loaded.meta, meta);
    save_checkpoint(b.path(), &loaded.network, &loaded.meta).unwrap();
    for entry in std::fs::read_dir(a.path().join("params")).unwrap() {
        let p = entry.unwrap().path();
        let q = b.path().join("params").join(p.file_name().unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }
    assert_eq!(
        std::fs::read(a.path().join("manifest.json")).unwrap(),
        std::fs::read(b.path().join("manifest.json")).unwrap()
    );
}

#[test]
fn truncated_parameter_blob_is_rejected() {
    let net = Network::Student(live_student(1));
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &net, &CheckpointMeta::default()).unwrap();
    let blob = dir.path().join("params/block0.weight.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn student_macs_come_only_from_the_encoder() {
    let s = live_student(3);
    let (_, ops) = s.infer(&frames(3, 1, 21)).unwrap();
    assert_eq!(ops.ann_macs, 3.0 * s.layers()[0].dense_macs() as f64);
    assert!(ops.syn_ops > 0.0);

    let t = live_teacher(2);
    let (_, ops) = t.infer(&frames(2, 1, 22), &frames(2, 2, 23)).unwrap();
    assert!(ops.ann_macs > 0.0 && ops.syn_ops > 0.0);
}
