//! Event stream CSV (`t_us,x,y,p`) and EVFR event-frame files.
//!
//! EVFR layout: magic `EVFR`, then `T, 2, H, W` as little-endian `u32`,
//! then `T·2·H·W` little-endian `f32` values.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Event;
use crate::error::{Error, Result};
use crate::tensorgrad::Tensor;

const MAGIC: &[u8; 4] = b"EVFR";

#[derive(Serialize, Deserialize)]
struct Row {
    t_us: u64,
    x: u32,
    y: u32,
    p: i8,
}

pub fn write_events_csv(path: &Path, events: &[Event]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    let ioerr = |e: csv::Error| Error::format("event csv", path, e);
    w.write_record(["t_us", "x", "y", "p"]).map_err(ioerr)?;
    for e in events {
        w.serialize(Row {
            t_us: e.t_us,
            x: e.x,
            y: e.y,
            p: e.polarity,
        })
        .map_err(ioerr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_events_csv(path: &Path) -> Result<Vec<Event>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format("event csv", path, e))?;
    let headers = r
        .headers()
        .map_err(|e| Error::format("event csv", path, e))?;
    if headers != vec!["t_us", "x", "y", "p"] {
        return Err(Error::format(
            "event csv",
            path,
            format!("unexpected header {headers:?}"),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::format("event csv", path, e))?;
        if row.p != 1 && row.p != -1 {
            return Err(Error::format(
                "event csv",
                path,
                format!("row {}: polarity must be 1 or -1, got {}", i + 1, row.p),
            ));
        }
        out.push(Event {
            t_us: row.t_us,
            x: row.x,
            y: row.y,
            polarity: row.p,
        });
    }
    Ok(out)
}

pub fn write_evfr(path: &Path, frames: &[Tensor]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Input("no event frames to write".into()))?;
    let (h, w) = match first.shape() {
        &[2, h, w] => (h, w),
        s => {
            return Err(Error::Input(format!(
                "event frames must be [2, H, W], got {s:?}"
            )))
        }
    };
    let mut buf = Vec::with_capacity(20 + frames.len() * 2 * h * w * 4);
    buf.extend_from_slice(MAGIC);
    for d in [frames.len(), 2, h, w] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for f in frames {
        if f.shape() != [2, h, w] {
            return Err(Error::Input(format!(
                "event frame shape {:?} differs from [2, {h}, {w}]",
                f.shape()
            )));
        }
        for &v in f.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_evfr(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(Error::format("EVFR file", path, "missing EVFR magic"));
    }
    let dim = |i: usize| {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
    };
    let (t, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
    if c != 2 || t == 0 || h == 0 || w == 0 {
        return Err(Error::format(
            "EVFR file",
            path,
            format!("bad dimensions ({t}, {c}, {h}, {w})"),
        ));
    }
    let n = t * c * h * w;
    if bytes.len() != 20 + 4 * n {
        return Err(Error::format(
            "EVFR file",
            path,
            format!(
                "expected {} payload bytes, found {}",
                4 * n,
                bytes.len() - 20
            ),
        ));
    }
    let values: Vec<f64> = bytes[20..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    values
        .chunks_exact(c * h * w)
        .map(|chunk| Tensor::new(vec![c, h, w], chunk.to_vec()))
        .collect()
}
