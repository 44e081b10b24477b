//! Video-to-event simulation, event framing and ExSy window sampling.
//!
//! The simulator is an ideal contrast-threshold model: each pixel tracks a
//! reference log intensity and emits one event per threshold crossing, with
//! no noise, refractory period or bandwidth limit.

mod exsy;
mod io;

pub use exsy::{exsy_sample, ExSy, ExSyWindow};
pub use io::{read_events_csv, read_evfr, write_events_csv, write_evfr};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorgrad::Tensor;

/// Frame rate of every sequence; one event frame spans 1/30 s.
pub const FPS: u64 = 30;
pub const US_PER_SECOND: u64 = 1_000_000;

/// First microsecond of frame window `k`, i.e. `ceil(k / 30 s)`.
pub fn frame_start_us(k: usize) -> u64 {
    (k as u64 * US_PER_SECOND).div_ceil(FPS)
}

/// Window index of timestamp `t_us`: `floor(t · 30 / 10⁶)`.
pub fn window_of(t_us: u64) -> usize {
    (t_us * FPS / US_PER_SECOND) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t_us: u64,
    pub x: u32,
    pub y: u32,
    /// +1 or −1.
    pub polarity: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            if e.x as usize >= self.width || e.y as usize >= self.height {
                return Err(Error::Input(format!(
                    "event {i} at ({}, {}) outside {}x{}",
                    e.x, e.y, self.width, self.height
                )));
            }
            if e.polarity != 1 && e.polarity != -1 {
                return Err(Error::Input(format!(
                    "event {i} has polarity {}",
                    e.polarity
                )));
            }
            if i > 0 && self.events[i - 1].t_us > e.t_us {
                return Err(Error::Input(format!(
                    "stream not sorted: event {i} at {} µs precedes {} µs",
                    e.t_us,
                    self.events[i - 1].t_us
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventConfig {
    /// Contrast threshold in log-intensity units.
    pub threshold: f64,
    /// Luminance floor added before taking logarithms.
    pub eps: f64,
    /// Divide each event frame by its maximum count when batching.
    pub normalize: bool,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            eps: 1e-3,
            normalize: true,
        }
    }
}

impl EventConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::Config(format!(
                "contrast threshold must be > 0, got {}",
                self.threshold
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

fn frame_dims(frame: &Tensor) -> Result<(usize, usize)> {
    match frame.shape() {
        &[h, w] | &[1, h, w] => Ok((h, w)),
        s => Err(Error::Input(format!(
            "expected a grayscale [1, H, W] frame, got {s:?}"
        ))),
    }
}

/// Incremental per-pixel contrast-threshold simulator.
#[derive(Clone, Debug)]
pub struct EventSimulator {
    width: usize,
    height: usize,
    threshold: f64,
    eps: f64,
    reference: Vec<f64>,
    /// Log intensity of the first frame; the reference is always
    /// `initial + threshold * net`.
    initial: Vec<f64>,
    net: Vec<i64>,
    last: Vec<f64>,
    frames_seen: usize,
}

impl EventSimulator {
    pub fn new(first: &Tensor, threshold: f64, eps: f64) -> Result<Self> {
        let (height, width) = frame_dims(first)?;
        if !(threshold > 0.0) {
            return Err(Error::Input(format!(
                "contrast threshold must be > 0, got {threshold}"
            )));
        }
        let log: Vec<f64> = first.data().iter().map(|&v| (v + eps).ln()).collect();
        Ok(Self {
            width,
            height,
            threshold,
            eps,
            reference: log.clone(),
            initial: log.clone(),
            net: vec![0; height * width],
            last: log,
            frames_seen: 1,
        })
    }

    /// Current per-pixel reference log intensities.
    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Log intensities of the most recent frame.
    pub fn last_log(&self) -> &[f64] {
        &self.last
    }

    /// Consumes the next frame and returns the events of the interval that
    /// ends at it, sorted by time.
    pub fn push(&mut self, frame: &Tensor) -> Result<Vec<Event>> {
        let dims = frame_dims(frame)?;
        if dims != (self.height, self.width) {
            return Err(Error::Input(format!(
                "frame {} is {}x{}, expected {}x{}",
                self.frames_seen, dims.0, dims.1, self.height, self.width
            )));
        }
        let k = self.frames_seen - 1;
        let t0 = frame_start_us(k);
        let t1 = frame_start_us(k + 1);
        let span = (t1 - t0) as f64;
        let c = self.threshold;
        let mut out = Vec::new();
        for (p, &v) in frame.data().iter().enumerate() {
            let l_new = (v + self.eps).ln();
            let l_prev = self.last[p];
            let diff = l_new - self.reference[p];
            let sign = diff.signum();
            let mut n = (diff.abs() / c).floor() as usize;
            let level =
                |n: usize| self.initial[p] + c * (self.net[p] + sign as i64 * n as i64) as f64;
            // the quotient can round down at an exact multiple of the threshold
            while (l_new - level(n)).abs() >= c {
                n += 1;
            }
            if n > 0 {
                let base = self.reference[p];
                for i in 1..=n {
                    let level = base + sign * i as f64 * c;
                    let frac = if l_new != l_prev {
                        ((level - l_prev) / (l_new - l_prev)).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    let t = (t0 + (frac * span).floor() as u64).min(t1 - 1);
                    out.push(Event {
                        t_us: t,
                        x: (p % self.width) as u32,
                        y: (p / self.width) as u32,
                        polarity: sign as i8,
                    });
                }
                self.net[p] += sign as i64 * n as i64;
                self.reference[p] = self.initial[p] + c * self.net[p] as f64;
            }
            self.last[p] = l_new;
        }
        out.sort_by_key(|e| e.t_us);
        self.frames_seen += 1;
        Ok(out)
    }
}

/// Converts a 30 fps grayscale sequence (values in `[0, 1]`) into events.
/// Events caused by the change from frame `k` to `k + 1` fall in window `k`.
pub fn video_to_events(frames: &[Tensor], threshold: f64, eps: f64) -> Result<EventStream> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Input("cannot simulate events from an empty sequence".into()))?;
    let mut sim = EventSimulator::new(first, threshold, eps)?;
    let mut events = Vec::new();
    for f in &frames[1..] {
        events.extend(sim.push(f)?);
    }
    Ok(EventStream {
        width: sim.width,
        height: sim.height,
        events,
    })
}

/// Accumulates a sorted stream into `num_frames` two-channel count frames
/// `[2, H, W]`: channel 0 counts positive events, channel 1 negative ones.
pub fn events_to_frames(stream: &EventStream, num_frames: usize) -> Result<Vec<Tensor>> {
    stream.validate()?;
    let (h, w) = (stream.height, stream.width);
    let mut frames = vec![vec![0.0; 2 * h * w]; num_frames];
    for e in &stream.events {
        let k = window_of(e.t_us);
        if k >= num_frames {
            return Err(Error::Input(format!(
                "event at {} µs falls in window {k}, beyond {num_frames} frames",
                e.t_us
            )));
        }
        let ch = if e.polarity > 0 { 0 } else { 1 };
        frames[k][(ch * h + e.y as usize) * w + e.x as usize] += 1.0;
    }
    frames
        .into_iter()
        .map(|d| Tensor::new(vec![2, h, w], d))
        .collect()
}

/// Scales a count frame by its maximum; an all-zero frame stays zero.
pub fn normalize_frame(frame: &Tensor) -> Tensor {
    let max = frame.data().iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        frame.map(|v| v / max)
    } else {
        frame.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(v: f64) -> Tensor {
        Tensor::new(vec![1, 1, 1], vec![v]).unwrap()
    }

    #[test]
    fn constant_video_is_silent() {
        let frames = vec![Tensor::full(vec![1, 4, 4], 0.4); 5];
        let s = video_to_events(&frames, 0.2, 1e-3).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn two_and_a_half_thresholds_give_two_events() {
        let (c, eps) = (0.2, 1e-3);
        let i0 = 0.3;
        let i1 = (i0 + eps) * (2.5f64 * c).exp() - eps;
        let s = video_to_events(&[px(i0), px(i1)], c, eps).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.events.iter().all(|e| e.polarity == 1));
        // crossings at 1/2.5 and 2/2.5 of the interval
        let span = frame_start_us(1) as f64;
        assert_eq!(s.events[0].t_us, (0.4 * span).floor() as u64);
        assert_eq!(s.events[1].t_us, (0.8 * span).floor() as u64);
    }

    #[test]
    fn inverted_two_level_video_flips_polarity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (h, w, n) = (4, 5, 12);
        let levels: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.02..0.3)).collect();
        let mut video = Vec::new();
        for _ in 0..n {
            let data = levels
                .iter()
                .map(|&a| if rng.gen_bool(0.5) { a } else { 1.0 - a })
                .collect();
            video.push(Tensor::new(vec![1, h, w], data).unwrap());
        }
        let inverted: Vec<Tensor> = video.iter().map(|f| f.map(|v| 1.0 - v)).collect();
        let count = |frames: &[Tensor]| {
            let s = video_to_events(frames, 0.2, 1e-6).unwrap();
            let mut c = vec![(0i64, 0i64); h * w];
            for e in &s.events {
                let p = e.y as usize * w + e.x as usize;
                if e.polarity > 0 {
                    c[p].0 += 1;
                } else {
                    c[p].1 += 1;
                }
            }
            c
        };
        let (a, b) = (count(&video), count(&inverted));
        assert!(a.iter().any(|&(p, n)| p + n > 0));
        for (x, y) in a.iter().zip(&b) {
            assert!(
                (x.0 - y.1).abs() <= 1 && (x.1 - y.0).abs() <= 1,
                "{x:?} vs {y:?}"
            );
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(matches!(
            video_to_events(&[], 0.2, 1e-3),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn framing_basics() {
        let empty = EventStream {
            width: 3,
            height: 2,
            events: vec![],
        };
        let f = events_to_frames(&empty, 4).unwrap();
        assert_eq!(f.len(), 4);
        assert!(f.iter().all(|t| t.sum() == 0.0 && t.shape() == [2, 2, 3]));

        let one = EventStream {
            width: 3,
            height: 2,
            events: vec![Event {
                t_us: 0,
                x: 0,
                y: 0,
                polarity: 1,
            }],
        };
        let f = events_to_frames(&one, 2).unwrap();
        assert_eq!(f[0].data()[0], 1.0);
        assert_eq!(f[0].sum(), 1.0);
        assert_eq!(f[1].sum(), 0.0);
    }

    #[test]
    fn unsorted_stream_rejected() {
        let s = EventStream {
            width: 2,
            height: 2,
            events: vec![
                Event {
                    t_us: 50,
                    x: 0,
                    y: 0,
                    polarity: 1,
                },
                Event {
                    t_us: 10,
                    x: 1,
                    y: 0,
                    polarity: -1,
                },
            ],
        };
        assert!(matches!(events_to_frames(&s, 1), Err(Error::Input(_))));
    }

    #[test]
    fn window_boundaries() {
        assert_eq!(frame_start_us(1), 33_334);
        assert_eq!(window_of(33_333), 0);
        assert_eq!(window_of(33_334), 1);
        assert_eq!(frame_start_us(3), 100_000);
        assert_eq!(window_of(100_000), 3);
    }

    #[test]
    fn normalization_is_zero_safe() {
        let z = Tensor::zeros(vec![2, 2, 2]);
        assert_eq!(normalize_frame(&z), z);
        let f = Tensor::new(vec![2, 1, 2], vec![0.0, 2.0, 4.0, 1.0]).unwrap();
        assert_eq!(normalize_frame(&f).data(), &[0.0, 0.5, 1.0, 0.25]);
    }
}
