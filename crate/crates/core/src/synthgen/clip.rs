use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, GeneratorConfig};
use crate::annotations::VideoRecord;
use crate::autodiff::Array;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GLCH";
const VERSION: u32 = 1;

/// Latent sources shared by the two modalities of one clip.
const LATENTS: usize = 4;
/// Sinusoids summed per latent source.
const HARMONICS: usize = 3;
/// Perturbation frequency in cycles per sample.
const PERTURB_FREQ: f64 = 0.43;

/// Feature-level stand-in for one video: a `C_v x T` visual array and a
/// `(τ_a·F_m) x T` pseudo mel-spectrogram, zero beyond the clip's frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureClip {
    pub visual: Array,
    pub audio: Array,
    pub record: VideoRecord,
}

impl FeatureClip {
    pub fn valid_len(&self) -> usize {
        self.record.n_frames
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Frames used as the loudness reference of segment `[a, b)`: up to
/// `max(b - a, 2)` frames on each side, inside the clip and outside every
/// fake segment.
pub fn neighbor_frames(a: usize, b: usize, n_frames: usize, segments: &[(usize, usize)]) -> Vec<usize> {
    let width = (b - a).max(2);
    let before = a.saturating_sub(width)..a;
    let after = b..(b + width).min(n_frames);
    before
        .chain(after)
        .filter(|&t| !segments.iter().any(|&(s, e)| (s..e).contains(&t)))
        .collect()
}

struct Latent {
    amp: [[f64; HARMONICS]; LATENTS],
    freq: [[f64; HARMONICS]; LATENTS],
    phase: [[f64; HARMONICS]; LATENTS],
}

impl Latent {
    fn sample(rng: &mut ChaCha8Rng, n_frames: usize) -> Self {
        let mut l = Latent {
            amp: [[0.0; HARMONICS]; LATENTS],
            freq: [[0.0; HARMONICS]; LATENTS],
            phase: [[0.0; HARMONICS]; LATENTS],
        };
        for k in 0..LATENTS {
            for h in 0..HARMONICS {
                l.amp[k][h] = rng.gen_range(0.3..1.0) / (h + 1) as f64;
                // 0.5 to 4 cycles over the clip
                l.freq[k][h] = rng.gen_range(0.5..4.0) / n_frames as f64;
                l.phase[k][h] = rng.gen_range(0.0..2.0 * PI);
            }
        }
        l
    }

    /// Source values at time `u`, measured in frames.
    fn at(&self, u: f64) -> [f64; LATENTS] {
        let mut z = [0.0; LATENTS];
        for (k, zk) in z.iter_mut().enumerate() {
            for h in 0..HARMONICS {
                *zk += self.amp[k][h] * (2.0 * PI * self.freq[k][h] * u + self.phase[k][h]).sin();
            }
        }
        z
    }
}

fn mixing(rng: &mut ChaCha8Rng, rows: usize) -> Vec<[f64; LATENTS]> {
    (0..rows)
        .map(|_| {
            let mut w = [0.0; LATENTS];
            for v in &mut w {
                *v = rng.gen_range(-1.0..1.0);
            }
            w
        })
        .collect()
}

/// The unperturbed signals of a clip: visual `C_v x n` and audio
/// `F_m x (τ_a n)`, both before padding.
fn base_signals(record: &VideoRecord, identity: u64, cfg: &GeneratorConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = record.n_frames;
    let mut id_rng = ChaCha8Rng::seed_from_u64(identity);
    let wv = mixing(&mut id_rng, cfg.c_v);
    let wa = mixing(&mut id_rng, cfg.f_m);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("base/{}", record.id)));
    let latent = Latent::sample(&mut rng, n);
    let noise = cfg.noise;
    let mut visual = vec![vec![0.0; n]; cfg.c_v];
    for t in 0..n {
        let z = latent.at(t as f64);
        for (c, row) in visual.iter_mut().enumerate() {
            let mix: f64 = wv[c].iter().zip(&z).map(|(w, z)| w * z).sum();
            row[t] = mix + noise * rng.gen_range(-1.0..1.0);
        }
    }
    let tau = cfg.tau_a;
    let mut audio = vec![vec![0.0; n * tau]; cfg.f_m];
    for u in 0..n * tau {
        let z = latent.at(u as f64 / tau as f64);
        for (f, row) in audio.iter_mut().enumerate() {
            let mix: f64 = wa[f].iter().zip(&z).map(|(w, z)| w * z).sum();
            row[u] = mix + noise * rng.gen_range(-1.0..1.0);
        }
    }
    (visual, audio)
}

/// Adds a high-frequency pattern to `rows[.., lo..hi]` (only rows in `band`)
/// and rescales the span so its RMS equals `target`.
fn perturb(
    rows: &mut [Vec<f64>],
    band: std::ops::Range<usize>,
    lo: usize,
    hi: usize,
    target: f64,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) {
    let mut pattern = vec![vec![0.0; hi - lo]; rows.len()];
    for r in band {
        let gain = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let phase = rng.gen_range(0.0..2.0 * PI);
        for (k, p) in pattern[r].iter_mut().enumerate() {
            *p = gain * (2.0 * PI * PERTURB_FREQ * k as f64 + phase).sin();
        }
    }
    let p_rms = rms(pattern.iter().flatten().copied());
    if p_rms > 0.0 {
        let scale = amplitude * target / p_rms;
        for (row, pat) in rows.iter_mut().zip(&pattern) {
            for (x, p) in row[lo..hi].iter_mut().zip(pat) {
                *x += scale * p;
            }
        }
    }
    let seg_rms = rms(rows.iter().flat_map(|r| r[lo..hi].iter().copied()));
    if seg_rms > 0.0 {
        let scale = target / seg_rms;
        for row in rows.iter_mut() {
            for x in &mut row[lo..hi] {
                *x *= scale;
            }
        }
    }
}

/// Builds the feature clip for `record`. The base signals depend only on the
/// identity and the record id, so the untouched modality of a fake clip is
/// identical to the real variant.
pub fn synthesize_clip(record: &VideoRecord, identity: u64, cfg: &GeneratorConfig) -> Result<FeatureClip> {
    record.validate()?;
    if record.n_frames > cfg.t {
        return Err(Error::Annotation {
            id: record.id.clone(),
            reason: format!("{} frames exceed the padded length {}", record.n_frames, cfg.t),
        });
    }
    let segments = record.frame_segments();
    if segments.len() != record.fake_segments.len() {
        return Err(Error::Annotation {
            id: record.id.clone(),
            reason: "fake segment outside the clip".into(),
        });
    }
    let n = record.n_frames;
    let tau = cfg.tau_a;
    let (mut visual, mut audio) = base_signals(record, identity, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("perturb/{}", record.id)));
    for &(a, b) in &segments {
        let neighbors = neighbor_frames(a, b, n, &segments);
        if record.modify_visual {
            let target = if neighbors.is_empty() {
                rms(visual.iter().flat_map(|r| r[a..b].iter().copied()))
            } else {
                rms(visual.iter().flat_map(|r| neighbors.iter().map(move |&t| r[t])))
            };
            let band = 0..cfg.c_v;
            perturb(&mut visual, band, a, b, target, cfg.perturbation, &mut rng);
        }
        if record.modify_audio {
            let target = if neighbors.is_empty() {
                rms(audio.iter().flat_map(|r| r[a * tau..b * tau].iter().copied()))
            } else {
                rms(audio
                    .iter()
                    .flat_map(|r| neighbors.iter().flat_map(move |&t| r[t * tau..(t + 1) * tau].iter().copied())))
            };
            let width = rng.gen_range(cfg.f_m / 4..=cfg.f_m / 2).max(1);
            let low = rng.gen_range(0..=cfg.f_m - width);
            perturb(&mut audio, low..low + width, a * tau, b * tau, target, cfg.perturbation, &mut rng);
        }
    }
    let visual = Array::from_fn2(cfg.c_v, cfg.t, |c, t| if t < n { visual[c][t] } else { 0.0 });
    // row s*F_m + f, column t holds mel bin f at sub-step s of frame t
    let audio = Array::from_fn2(tau * cfg.f_m, cfg.t, |r, t| {
        let (s, f) = (r / cfg.f_m, r % cfg.f_m);
        if t < n {
            audio[f][t * tau + s]
        } else {
            0.0
        }
    });
    Ok(FeatureClip {
        visual,
        audio,
        record: record.clone(),
    })
}

/// Serialises the clip arrays: magic, version, `C_v, F_m, τ_a, T` as
/// little-endian u32, then visual and audio as little-endian f64.
pub fn encode_clip(clip: &FeatureClip, f_m: usize, tau_a: usize) -> Result<Vec<u8>> {
    let c_v = clip.visual.rows();
    let t = clip.visual.cols();
    if clip.audio.shape() != [f_m * tau_a, t] {
        return Err(Error::shape("encode_clip", &[clip.visual.shape(), clip.audio.shape()]));
    }
    let mut out = Vec::with_capacity(24 + 8 * (clip.visual.len() + clip.audio.len()));
    out.extend_from_slice(MAGIC);
    for v in [VERSION as usize, c_v, f_m, tau_a, t] {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for x in clip.visual.data().iter().chain(clip.audio.data()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Header dimensions of a clip file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipHeader {
    pub c_v: usize,
    pub f_m: usize,
    pub tau_a: usize,
    pub t: usize,
}

pub fn decode_clip(bytes: &[u8]) -> Result<(ClipHeader, Array, Array)> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("clip file truncated".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a clip file (bad magic)".into()));
    }
    let mut word = || -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| Error::Format("clip header truncated".into()))?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let version = word()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported clip version {version}")));
    }
    let h = ClipHeader {
        c_v: word()?,
        f_m: word()?,
        tau_a: word()?,
        t: word()?,
    };
    let nv = h.c_v * h.t;
    let na = h.f_m * h.tau_a * h.t;
    let body = &bytes[24..];
    if body.len() != 8 * (nv + na) {
        return Err(Error::Format(format!(
            "clip body has {} bytes, header implies {}",
            body.len(),
            8 * (nv + na)
        )));
    }
    let mut floats = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let visual: Vec<f64> = floats.by_ref().take(nv).collect();
    let audio: Vec<f64> = floats.collect();
    Ok((
        h,
        Array::new(vec![h.c_v, h.t], visual)?,
        Array::new(vec![h.f_m * h.tau_a, h.t], audio)?,
    ))
}

pub fn write_clip(path: impl AsRef<Path>, clip: &FeatureClip, f_m: usize, tau_a: usize) -> Result<()> {
    let bytes = encode_clip(clip, f_m, tau_a)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Reads a clip file and attaches `record`.
pub fn read_clip(path: impl AsRef<Path>, record: &VideoRecord) -> Result<(ClipHeader, FeatureClip)> {
    let (h, visual, audio) = decode_clip(&fs::read(path)?)?;
    if record.n_frames > h.t {
        return Err(Error::Format(format!(
            "record {} has {} frames but its clip holds {}",
            record.id, record.n_frames, h.t
        )));
    }
    Ok((
        h,
        FeatureClip {
            visual,
            audio,
            record: record.clone(),
        },
    ))
}
