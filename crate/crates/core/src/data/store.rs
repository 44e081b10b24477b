//! On-disk dataset tree:
//!
//! ```text
//! root/manifest.json
//! root/<id>/frames/NNNN.pgm   8-bit binary PGM per frame
//! root/<id>/events.evfr       event count frames
//! root/<id>/events.csv        raw stream, optional
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Lighting, Sample, SplitManifest};
use crate::error::{Error, Result};
use crate::events::{read_events_csv, read_evfr, write_events_csv, write_evfr, EventStream};
use crate::tensorgrad::Tensor;

const FORMAT: &str = "spikedistill-dataset";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    width: usize,
    height: usize,
    num_classes: usize,
    samples: Vec<Entry>,
    split: SplitManifest,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    id: String,
    subject: u32,
    label: usize,
    lighting: Lighting,
    frame_count: usize,
    frames: String,
    events: String,
    raw_events: Option<String>,
}

/// Writes a `[1, H, W]` frame in `[0, 1]` as an 8-bit binary PGM.
pub fn write_pgm(path: &Path, frame: &Tensor) -> Result<()> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    buf.extend(
        frame
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format("PGM frame", path, d.to_string());
    // Header: magic, width, height, maxval, each followed by whitespace.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary graymap (P5)"));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad("non-numeric header field"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit graymaps are supported"));
    }
    let pixels = bytes.get(pos..).unwrap_or_default();
    if pixels.len() != w * h {
        return Err(bad(&format!(
            "expected {} pixels, found {}",
            w * h,
            pixels.len()
        )));
    }
    Tensor::new(
        vec![1, h, w],
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Writes the dataset under `root`, creating directories as needed.
pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        let frames_dir = root.join(&s.id).join("frames");
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        for (k, f) in s.intensity.iter().enumerate() {
            write_pgm(&frames_dir.join(format!("{k:04}.pgm")), f)?;
        }
        let events = format!("{}/events.evfr", s.id);
        write_evfr(&root.join(&events), &s.events)?;
        let raw_events = match &s.raw_events {
            Some(ev) => {
                let rel = format!("{}/events.csv", s.id);
                write_events_csv(&root.join(&rel), ev)?;
                Some(rel)
            }
            None => None,
        };
        entries.push(Entry {
            id: s.id.clone(),
            subject: s.subject,
            label: s.label,
            lighting: s.lighting,
            frame_count: s.frame_count(),
            frames: format!("{}/frames", s.id),
            events,
            raw_events,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        width: ds.width,
        height: ds.height,
        num_classes: ds.num_classes,
        samples: entries,
        split: ds.split.clone(),
    };
    let path = root.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn load_sample(root: &Path, e: &Entry, m: &Manifest) -> Result<Sample> {
    let ctx = |err: Error| Error::Input(format!("sample {}: {err}", e.id));
    let frames_dir = root.join(&e.frames);
    let intensity: Vec<Tensor> = (0..e.frame_count)
        .map(|k| read_pgm(&frames_dir.join(format!("{k:04}.pgm"))))
        .collect::<Result<_>>()
        .map_err(ctx)?;
    let events = read_evfr(&root.join(&e.events)).map_err(ctx)?;
    let raw_events = match &e.raw_events {
        Some(rel) => {
            let stream = EventStream {
                width: m.width,
                height: m.height,
                events: read_events_csv(&root.join(rel)).map_err(ctx)?,
            };
            stream.validate().map_err(ctx)?;
            Some(stream.events)
        }
        None => None,
    };
    let sample = Sample {
        id: e.id.clone(),
        subject: e.subject,
        label: e.label,
        lighting: e.lighting,
        intensity,
        events,
        raw_events,
    };
    sample.validate(m.num_classes, m.height, m.width)?;
    Ok(sample)
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format("dataset manifest", &path, e))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::format(
            "dataset manifest",
            &path,
            format!("unsupported format {} v{}", m.format, m.version),
        ));
    }
    let samples = m
        .samples
        .iter()
        .map(|e| load_sample(root, e, &m))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        width: m.width,
        height: m.height,
        num_classes: m.num_classes,
        samples,
        split: m.split,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pgm");
        let data: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let t = Tensor::new(vec![1, 3, 4], data).unwrap();
        write_pgm(&p, &t).unwrap();
        assert!(fs::read(&p).unwrap().starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(read_pgm(&p).unwrap(), t);
    }

    #[test]
    fn pgm_header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pgm");
        fs::write(&p, b"P2\n1 1\n255\n0").unwrap();
        assert!(read_pgm(&p).is_err());
        fs::write(&p, b"P5\n2 2\n255\n\x00").unwrap();
        assert!(read_pgm(&p).is_err());
        fs::write(&p, b"P5\n# comment\n1 1\n255\n\x07").unwrap();
        assert_eq!(read_pgm(&p).unwrap().data(), &[7.0 / 255.0]);
    }
}
