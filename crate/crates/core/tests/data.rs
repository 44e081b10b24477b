use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikedistill::data::{
    load_dataset, make_batch, save_dataset, synth_dataset, Dataset, Modality, Sample, SynthConfig,
};
use spikedistill::events::ExSy;
use spikedistill::Error;

fn small(seed: u64) -> Dataset {
    let cfg = SynthConfig {
        subjects: 4,
        sequences_per_subject: 7,
        frames_per_sequence: 20,
        ..SynthConfig::default()
    };
    synth_dataset(&cfg, seed).unwrap()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn save_load_save_is_byte_identical() {
    let ds = small(3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_dataset(&ds, a.path()).unwrap();
    let loaded = load_dataset(a.path()).unwrap();
    assert_eq!(loaded, ds);
    save_dataset(&loaded, b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.contains_key("manifest.json"));
    assert!(ta.contains_key("s000_q000/frames/0019.pgm"));
    assert!(ta.contains_key("s000_q000/events.evfr"));
    assert!(ta.contains_key("s000_q000/events.csv"));
    assert_eq!(ta, tb);
}

#[test]
fn missing_event_file_names_sample() {
    let ds = small(4);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    fs::remove_file(dir.path().join("s001_q002/events.evfr")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("s001_q002"), "{err}");
}

#[test]
fn malformed_manifest_is_rejected() {
    let ds = small(4);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    fs::write(dir.path().join("manifest.json"), "{\"format\": 1}").unwrap();
    assert!(matches!(
        load_dataset(dir.path()),
        Err(Error::Format { .. })
    ));
}

#[test]
fn subject_overlap_fails_validation() {
    let mut ds = small(5);
    let leaked = ds.split.train[0].clone();
    ds.split.test.push(leaked);
    assert!(matches!(ds.validate(), Err(Error::Input(_))));
    let dir = tempfile::tempdir().unwrap();
    assert!(save_dataset(&ds, dir.path()).is_err());
}

#[test]
fn batches_have_window_shapes() {
    let ds = small(6);
    let samples: Vec<&Sample> = ds.samples.iter().take(3).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let b = make_batch(
        &samples,
        ExSy { x: 4, y: 3 },
        Modality::Both,
        true,
        &mut rng,
    )
    .unwrap();
    assert_eq!(b.frames_tensor().unwrap().shape(), [3, 4, 1, 32, 32]);
    assert_eq!(b.events_tensor().unwrap().shape(), [3, 4, 2, 32, 32]);
    for item in &b.items {
        let s = ds.get(&item.sample_id).unwrap();
        for (k, &i) in item.indices.iter().enumerate() {
            assert_eq!(item.frames[k], s.intensity[i]);
        }
    }

    let b = make_batch(
        &samples,
        ExSy { x: 4, y: 3 },
        Modality::IntensityOnly,
        true,
        &mut rng,
    )
    .unwrap();
    assert!(b.items.iter().all(|i| i.events.is_none()));
    assert!(b.events_tensor().is_none());

    let err = make_batch(
        &samples,
        ExSy { x: 4, y: 6 },
        Modality::Both,
        true,
        &mut rng,
    )
    .unwrap_err();
    assert!(err.to_string().contains(&samples[0].id), "{err}");
}

#[test]
fn every_generated_split_is_subject_disjoint() {
    for subjects in 2..7 {
        let cfg = SynthConfig {
            subjects,
            sequences_per_subject: 1,
            frames_per_sequence: 16,
            size: 8,
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&cfg, subjects as u64).unwrap();
        ds.split.validate(&ds.samples).unwrap();
        assert!(!ds.test().is_empty() && !ds.train().is_empty());
    }
}

fn time_average(s: &Sample) -> Vec<f64> {
    let n = s.intensity.len() as f64;
    let mut acc = vec![0.0; s.intensity[0].numel()];
    for f in &s.intensity {
        for (a, v) in acc.iter_mut().zip(f.data()) {
            *a += v / n;
        }
    }
    acc
}

#[test]
fn nearest_centroid_beats_chance() {
    let ds = synth_dataset(&SynthConfig::default(), 11).unwrap();
    let k = ds.num_classes;
    let mut centroids = vec![vec![0.0; 32 * 32]; k];
    let mut counts = vec![0usize; k];
    for s in ds.train() {
        for (c, v) in centroids[s.label].iter_mut().zip(time_average(s)) {
            *c += v;
        }
        counts[s.label] += 1;
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let test = ds.test();
    let correct = test
        .iter()
        .filter(|s| {
            let f = time_average(s);
            let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..k)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            best == s.label
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    eprintln!("nearest-centroid accuracy {acc:.3}");
    assert!(acc > 1.0 / 7.0 + 0.10, "{acc}");
}
