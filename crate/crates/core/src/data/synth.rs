//! Synthetic 32×32 sequences: an orbiting, deforming Gaussian blob per
//! class, rendered under four lighting conditions.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Dataset, Lighting, Sample, SplitManifest};
use crate::error::{Error, Result};
use crate::events::{events_to_frames, video_to_events, EventConfig, FPS};
use crate::tensorgrad::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub subjects: usize,
    pub sequences_per_subject: usize,
    pub frames_per_sequence: usize,
    pub size: usize,
    /// Share of subjects (rounded, at least one) held out for testing.
    pub test_fraction: f64,
    pub pixel_noise: f64,
    pub events: EventConfig,
    pub keep_raw_events: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 7,
            subjects: 8,
            sequences_per_subject: 14,
            frames_per_sequence: 30,
            size: 32,
            test_fraction: 0.25,
            pixel_noise: 0.02,
            events: EventConfig::default(),
            keep_raw_events: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_sequence < 16 {
            return Err(Error::Config(format!(
                "frames_per_sequence must be at least 16, got {}",
                self.frames_per_sequence
            )));
        }
        if self.num_classes == 0 || self.subjects < 2 || self.sequences_per_subject == 0 {
            return Err(Error::Config(
                "need at least one class, two subjects and one sequence per subject".into(),
            ));
        }
        if self.size < 8 {
            return Err(Error::Config(format!(
                "frame size must be at least 8, got {}",
                self.size
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must be in [0, 1), got {}",
                self.test_fraction
            )));
        }
        self.events.validate()
    }

    pub fn test_subjects(&self) -> usize {
        ((self.subjects as f64 * self.test_fraction).round() as usize).clamp(1, self.subjects - 1)
    }
}

struct Motif {
    orbit_hz: f64,
    /// Horizontal and vertical orbit scale.
    ellipse: (f64, f64),
    direction: f64,
    deform_phase: f64,
    blink_period: Option<usize>,
}

fn motif(class: usize) -> Motif {
    // Seven hand-picked motifs; extra classes cycle through them with a
    // shifted deformation phase.
    let table = [
        (0.5, (1.0, 0.4), 1.0, 0.0, None),
        (0.5, (1.0, 0.4), -1.0, 0.5 * PI, None),
        (1.5, (0.4, 1.0), 1.0, PI, None),
        (1.5, (0.4, 1.0), -1.0, 1.5 * PI, None),
        (1.0, (0.8, 0.8), 1.0, 0.0, Some(10)),
        (1.0, (0.8, 0.8), -1.0, PI, Some(10)),
        (0.0, (0.0, 0.0), 1.0, 0.5 * PI, Some(15)),
    ];
    let (orbit_hz, ellipse, direction, phase, blink_period) = table[class % table.len()];
    Motif {
        orbit_hz,
        ellipse,
        direction,
        deform_phase: phase + (class / table.len()) as f64 * 0.7,
        blink_period,
    }
}

struct Subject {
    cx: f64,
    cy: f64,
    sigma: f64,
    radius: f64,
    brightness: f64,
    background: f64,
    gradient: (f64, f64),
}

impl Subject {
    fn draw(rng: &mut impl Rng, size: usize) -> Self {
        let s = size as f64 / 32.0;
        let angle = rng.gen_range(0.0..TAU);
        Self {
            cx: size as f64 / 2.0 + rng.gen_range(-2.0..2.0) * s,
            cy: size as f64 / 2.0 + rng.gen_range(-2.0..2.0) * s,
            sigma: rng.gen_range(2.5..3.5) * s,
            radius: rng.gen_range(6.0..8.0) * s,
            brightness: rng.gen_range(0.55..0.8),
            background: rng.gen_range(0.15..0.3),
            gradient: (0.05 * angle.cos(), 0.05 * angle.sin()),
        }
    }
}

/// Lid coverage (fraction of the frame height) over one blink.
const BLINK: [f64; 4] = [0.3, 0.7, 0.7, 0.3];

fn render(
    subject: &Subject,
    m: &Motif,
    size: usize,
    frames: usize,
    cfg_noise: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let phase0 = rng.gen_range(-0.4..0.4);
    let speed = rng.gen_range(0.9..1.1);
    let blink_offset = m.blink_period.map(|p| rng.gen_range(0..p)).unwrap_or(0);
    let noise = Normal::new(0.0, cfg_noise.max(0.0)).expect("finite std");
    let n = size as f64;
    (0..frames)
        .map(|k| {
            let tau = k as f64 / FPS as f64;
            let theta = phase0 + m.direction * TAU * m.orbit_hz * speed * tau;
            let (bx, by) = (
                subject.cx + m.ellipse.0 * subject.radius * theta.cos(),
                subject.cy + m.ellipse.1 * subject.radius * theta.sin(),
            );
            let d = 0.45 * (PI * tau + m.deform_phase).sin();
            let (sx, sy) = (subject.sigma * (1.0 + d), subject.sigma * (1.0 - d));
            let lid = m
                .blink_period
                .and_then(|p| BLINK.get((k + blink_offset) % p).map(|c| c * n));
            let mut img = Vec::with_capacity(size * size);
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = (x as f64 / n - 0.5, y as f64 / n - 0.5);
                    let bg = subject.background + subject.gradient.0 * u + subject.gradient.1 * v;
                    let (dx, dy) = ((x as f64 - bx) / sx, (y as f64 - by) / sy);
                    let mut val = bg + subject.brightness * (-(dx * dx + dy * dy) / 2.0).exp();
                    if lid.is_some_and(|l| (y as f64) < l) {
                        val *= 0.2;
                    }
                    img.push((val + noise.sample(rng)).clamp(0.0, 1.0));
                }
            }
            img
        })
        .collect()
}

fn apply_lighting(frames: &mut [Vec<f64>], lighting: Lighting, size: usize, rng: &mut impl Rng) {
    const PHOTONS: f64 = 400.0;
    for img in frames.iter_mut() {
        match lighting {
            Lighting::Normal => {}
            Lighting::Overexposure => img.iter_mut().for_each(|v| *v = (1.6 * *v).min(1.0)),
            Lighting::LowLight => img.iter_mut().for_each(|v| {
                let lambda = 0.25 * *v * PHOTONS;
                *v = if lambda > 0.0 {
                    let count: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
                    (count / PHOTONS).min(1.0)
                } else {
                    0.0
                };
            }),
            Lighting::Hdr => {
                for (p, v) in img.iter_mut().enumerate() {
                    let gain = if p % size < size / 2 { 0.5 } else { 1.8 };
                    *v = (gain * *v).min(1.0);
                }
            }
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v * 255.0).round().clamp(0.0, 255.0) / 255.0
}

fn sample_rng(seed: u64, subject: usize, seq: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((subject as u64) << 32) | (seq as u64 + 1));
    rng
}

/// Generates a subject-disjoint synthetic dataset; everything derives from
/// `seed`.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let size = cfg.size;
    let mut subject_rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects: Vec<Subject> = (0..cfg.subjects)
        .map(|_| Subject::draw(&mut subject_rng, size))
        .collect();

    let mut samples = Vec::with_capacity(cfg.subjects * cfg.sequences_per_subject);
    for (si, subject) in subjects.iter().enumerate() {
        for q in 0..cfg.sequences_per_subject {
            let label = q % cfg.num_classes;
            let lighting = Lighting::ALL[(q + si) % Lighting::ALL.len()];
            let mut rng = sample_rng(seed, si, q);
            let mut raw = render(
                subject,
                &motif(label),
                size,
                cfg.frames_per_sequence,
                cfg.pixel_noise,
                &mut rng,
            );
            apply_lighting(&mut raw, lighting, size, &mut rng);
            let intensity: Vec<Tensor> = raw
                .into_iter()
                .map(|img| {
                    Tensor::new(vec![1, size, size], img.into_iter().map(quantize).collect())
                })
                .collect::<Result<_>>()?;
            let stream = video_to_events(&intensity, cfg.events.threshold, cfg.events.eps)?;
            let events = events_to_frames(&stream, intensity.len())?;
            samples.push(Sample {
                id: format!("s{si:03}_q{q:03}"),
                subject: si as u32,
                label,
                lighting,
                intensity,
                events,
                raw_events: cfg.keep_raw_events.then_some(stream.events),
            });
        }
    }

    let first_test = (cfg.subjects - cfg.test_subjects()) as u32;
    let split = SplitManifest {
        train: samples
            .iter()
            .filter(|s| s.subject < first_test)
            .map(|s| s.id.clone())
            .collect(),
        test: samples
            .iter()
            .filter(|s| s.subject >= first_test)
            .map(|s| s.id.clone())
            .collect(),
    };
    let ds = Dataset {
        width: size,
        height: size,
        num_classes: cfg.num_classes,
        samples,
        split,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            subjects: 3,
            sequences_per_subject: 7,
            frames_per_sequence: 16,
            size: 16,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_dataset(&small(), 5).unwrap();
        let b = synth_dataset(&small(), 5).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(&small(), 6).unwrap();
        assert_ne!(a.samples[0].intensity, c.samples[0].intensity);
    }

    #[test]
    fn short_sequences_rejected() {
        let cfg = SynthConfig {
            frames_per_sequence: 15,
            ..small()
        };
        assert!(matches!(synth_dataset(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn normal_samples_are_plain_renders() {
        let cfg = SynthConfig {
            pixel_noise: 0.0,
            ..small()
        };
        let ds = synth_dataset(&cfg, 9).unwrap();
        let s = ds
            .samples
            .iter()
            .find(|s| s.lighting == Lighting::Normal)
            .unwrap();
        let si = s.subject as usize;
        let q: usize = s.id[6..].parse().unwrap();
        let mut subject_rng = ChaCha8Rng::seed_from_u64(9);
        let subjects: Vec<Subject> = (0..cfg.subjects)
            .map(|_| Subject::draw(&mut subject_rng, cfg.size))
            .collect();
        let mut rng = sample_rng(9, si, q);
        let raw = render(
            &subjects[si],
            &motif(s.label),
            cfg.size,
            cfg.frames_per_sequence,
            0.0,
            &mut rng,
        );
        for (f, r) in s.intensity.iter().zip(&raw) {
            let expect: Vec<f64> = r.iter().map(|&v| quantize(v)).collect();
            assert_eq!(f.data(), expect.as_slice());
        }
    }

    #[test]
    fn lighting_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = vec![vec![0.1, 0.5, 0.7, 0.9]];
        let mut over = base.clone();
        apply_lighting(&mut over, Lighting::Overexposure, 2, &mut rng);
        assert_eq!(over[0], vec![0.16000000000000003, 0.8, 1.0, 1.0]);
        let mut hdr = base.clone();
        apply_lighting(&mut hdr, Lighting::Hdr, 2, &mut rng);
        assert_eq!(hdr[0], vec![0.05, 0.9, 0.35, 1.0]);
        let mut low = vec![vec![0.5; 4000]];
        apply_lighting(&mut low, Lighting::LowLight, 2, &mut rng);
        let mean = low[0].iter().sum::<f64>() / 4000.0;
        assert!((mean - 0.125).abs() < 0.005, "{mean}");
    }

    #[test]
    fn split_is_subject_disjoint_and_events_align() {
        let ds = synth_dataset(&small(), 2).unwrap();
        assert_eq!(ds.test().len(), 7);
        assert_eq!(ds.train().len(), 14);
        for s in &ds.samples {
            assert_eq!(s.events.len(), s.intensity.len());
            assert_eq!(s.events.last().unwrap().sum(), 0.0);
        }
    }
}
