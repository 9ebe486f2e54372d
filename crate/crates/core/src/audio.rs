//! Speech rhythm features aligned to gesture frames, content embeddings from
//! word timings, and the per-frame rhythm/content fusion.

use crate::container::{Container, ContainerError};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde_json::json;
use std::path::Path;
use thiserror::Error;

pub const STFT_WINDOW: usize = 1024;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid frame rate: {0}")]
    InvalidFps(String),
    #[error("invalid audio: {0}")]
    Invalid(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioTrack {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::Invalid(format!("non-finite sample at {i}")));
        }
        Ok(AudioTrack { samples, sample_rate })
    }

    /// PCM16 or float32 WAV; multichannel input is averaged to mono.
    pub fn read_wav(path: &Path) -> Result<Self, AudioError> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let interleaved: Vec<f64> = match spec.sample_format {
            hound::SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?,
            hound::SampleFormat::Int => {
                let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
                reader.samples::<i32>().map(|s| s.map(|v| v as f64 / scale)).collect::<Result<_, _>>()?
            }
        };
        let ch = spec.channels as usize;
        let samples = interleaved.chunks_exact(ch).map(|c| c.iter().sum::<f64>() / ch as f64).collect();
        AudioTrack::new(samples, spec.sample_rate)
    }

    /// Mono PCM16, scaled by 2¹⁵ and saturated.
    pub fn write_wav(&self, path: &Path) -> Result<(), AudioError> {
        let spec = hound::WavSpec { channels: 1, sample_rate: self.sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(path, spec)?;
        for s in &self.samples {
            w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
        }
        w.finalize()?;
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Samples per gesture frame and the number of whole frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameAlignment {
    pub samples_per_frame: usize,
    pub frames: usize,
}

pub fn frame_align(track: &AudioTrack, gesture_fps: f64) -> Result<FrameAlignment, AudioError> {
    if !(gesture_fps > 0.0) || !gesture_fps.is_finite() {
        return Err(AudioError::InvalidFps(format!("{gesture_fps}")));
    }
    let sk = (track.sample_rate as f64 / gesture_fps).floor();
    if sk < 1.0 {
        return Err(AudioError::InvalidFps(format!("{gesture_fps} fps exceeds the sample rate {}", track.sample_rate)));
    }
    let sk = sk as usize;
    Ok(FrameAlignment { samples_per_frame: sk, frames: track.samples.len() / sk })
}

/// RMS of each gesture-frame window.
pub fn amplitude_envelope(track: &AudioTrack, gesture_fps: f64) -> Result<Vec<f64>, AudioError> {
    let a = frame_align(track, gesture_fps)?;
    Ok(track
        .samples
        .chunks_exact(a.samples_per_frame)
        .take(a.frames)
        .map(|w| (w.iter().map(|s| s * s).sum::<f64>() / w.len() as f64).sqrt())
        .collect())
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Hop of the onset STFT for a given frame width.
pub fn onset_hop(samples_per_frame: usize) -> usize {
    samples_per_frame.min(STFT_WINDOW)
}

/// Sample at the center of STFT frame `m`.
pub fn stft_center(m: usize, hop: usize) -> usize {
    m * hop + hop / 2
}

/// Magnitude spectra (bins `0..=512`) of Hann-windowed frames centered at
/// `stft_center(m, hop)`; samples outside the track count as zero.
pub fn stft_magnitudes(samples: &[f64], hop: usize, frames: usize) -> Vec<Vec<f64>> {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(STFT_WINDOW);
    let win = hann(STFT_WINDOW);
    let half = STFT_WINDOW / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); STFT_WINDOW];
    (0..frames)
        .map(|m| {
            let start = stft_center(m, hop) as i64 - half as i64;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = start + i as i64;
                let s = if idx >= 0 && (idx as usize) < samples.len() { samples[idx as usize] } else { 0.0 };
                *b = Complex::new(s * win[i], 0.0);
            }
            fft.process(&mut buf);
            buf[..=half].iter().map(|c| c.norm()).collect()
        })
        .collect()
}

/// Half-wave rectified spectral flux between consecutive magnitude frames;
/// the first frame is compared against silence.
pub fn spectral_flux(mags: &[Vec<f64>]) -> Vec<f64> {
    mags.iter()
        .enumerate()
        .map(|(m, cur)| match m {
            0 => cur.iter().sum(),
            _ => cur.iter().zip(&mags[m - 1]).map(|(a, b)| (a - b).max(0.0)).sum(),
        })
        .collect()
}

/// Spectral flux max-pooled per gesture frame and scaled by the track maximum.
pub fn onset_strength(track: &AudioTrack, gesture_fps: f64) -> Result<Vec<f64>, AudioError> {
    let a = frame_align(track, gesture_fps)?;
    if a.frames == 0 {
        return Ok(vec![]);
    }
    let hop = onset_hop(a.samples_per_frame);
    let end = a.frames * a.samples_per_frame;
    let stft_frames = (0..).take_while(|&m| stft_center(m, hop) < end).count();
    let flux = spectral_flux(&stft_magnitudes(&track.samples, hop, stft_frames));
    let mut pooled = vec![0.0f64; a.frames];
    for (m, f) in flux.iter().enumerate() {
        let t = stft_center(m, hop) / a.samples_per_frame;
        pooled[t] = pooled[t].max(*f);
    }
    let max = pooled.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        pooled.iter_mut().for_each(|v| *v /= max);
    }
    Ok(pooled)
}

/// Per-frame onset and amplitude, both in gesture frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RhythmFeatures {
    pub onset: Vec<f64>,
    pub amplitude: Vec<f64>,
}

impl RhythmFeatures {
    pub fn extract(track: &AudioTrack, gesture_fps: f64) -> Result<Self, AudioError> {
        Ok(RhythmFeatures { onset: onset_strength(track, gesture_fps)?, amplitude: amplitude_envelope(track, gesture_fps)? })
    }

    pub fn len(&self) -> usize {
        self.onset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onset.is_empty()
    }

    /// `T × 2` rows of (onset, amplitude).
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.onset.iter().zip(&self.amplitude).map(|(o, a)| vec![*o, *a]).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), AudioError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| AudioError::Csv(e.to_string()))?;
        let err = |e: csv::Error| AudioError::Csv(e.to_string());
        w.write_record(["frame", "onset", "amplitude"]).map_err(err)?;
        for (t, (o, a)) in self.onset.iter().zip(&self.amplitude).enumerate() {
            w.write_record([t.to_string(), format!("{o}"), format!("{a}")]).map_err(err)?;
        }
        w.flush().map_err(|e| AudioError::Csv(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordTiming {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
    pub embedding_row: usize,
}

/// `word,start_s,end_s,embedding_row` with a header line.
pub fn read_word_timings(path: &Path) -> Result<Vec<WordTiming>, AudioError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| AudioError::Csv(e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| AudioError::Csv(e.to_string()))?;
        let bad = |what: &str| AudioError::Csv(format!("row {}: bad {what}", i + 1));
        if rec.len() != 4 {
            return Err(AudioError::Csv(format!("row {}: expected 4 fields, found {}", i + 1, rec.len())));
        }
        let t = WordTiming {
            word: rec[0].to_string(),
            start_s: rec[1].trim().parse().map_err(|_| bad("start_s"))?,
            end_s: rec[2].trim().parse().map_err(|_| bad("end_s"))?,
            embedding_row: rec[3].trim().parse().map_err(|_| bad("embedding_row"))?,
        };
        if !(t.end_s >= t.start_s) {
            return Err(bad("interval"));
        }
        out.push(t);
    }
    Ok(out)
}

/// Word vectors, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("embedding_table").with_meta(json!({ "rows": self.rows.len(), "dim": self.dim() }));
        c.push("vectors", &[self.rows.len(), self.dim()], self.rows.concat()).expect("shape");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, AudioError> {
        c.expect_kind("embedding_table")?;
        let (shape, data) = c.array_shaped("vectors", &[None, None])?;
        let rows = (0..shape[0]).map(|r| data[r * shape[1]..(r + 1) * shape[1]].to_vec()).collect();
        Ok(EmbeddingTable { rows })
    }
}

/// Frame-aligned word vectors: frame `t` takes the first word whose interval
/// contains its center `(t + 0.5) / fps`; frames without a word are zero.
pub fn content_features(timings: &[WordTiming], table: &EmbeddingTable, frames: usize, fps: f64) -> Result<Vec<Vec<f64>>, AudioError> {
    let dim = table.dim();
    if let Some(t) = timings.iter().find(|t| t.embedding_row >= table.rows.len()) {
        return Err(AudioError::Dimension(format!("word '{}' references embedding row {} of {}", t.word, t.embedding_row, table.rows.len())));
    }
    Ok((0..frames)
        .map(|t| {
            let center = (t as f64 + 0.5) / fps;
            timings
                .iter()
                .find(|w| w.start_s <= center && center < w.end_s)
                .map_or_else(|| vec![0.0; dim], |w| table.rows[w.embedding_row].clone())
        })
        .collect())
}

/// Two-layer perceptron producing a (rhythm, content) logit pair per frame:
/// `logits = W2 · relu(W1 · [r; c] + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// `H × 2F`.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// `2 × H`.
    pub w2: [Vec<f64>; 2],
    pub b2: [f64; 2],
}

impl FusionWeights {
    pub fn validate(&self, features: usize) -> Result<(), AudioError> {
        let h = self.b1.len();
        if self.w1.len() != h || self.w1.iter().any(|r| r.len() != 2 * features) || self.w2.iter().any(|r| r.len() != h) {
            return Err(AudioError::Dimension(format!("fusion weights do not match {features} features and hidden width {h}")));
        }
        let all = self.w1.iter().flatten().chain(&self.b1).chain(self.w2.iter().flatten()).chain(&self.b2);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(AudioError::Invalid("non-finite fusion weight".into()));
        }
        Ok(())
    }

    pub fn logits(&self, r: &[f64], c: &[f64]) -> [f64; 2] {
        let hidden: Vec<f64> = self
            .w1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| (row.iter().zip(r.iter().chain(c)).map(|(w, x)| w * x).sum::<f64>() + b).max(0.0))
            .collect();
        let out = |k: usize| self.w2[k].iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2[k];
        [out(0), out(1)]
    }

    pub fn to_container(&self) -> Container {
        let h = self.b1.len();
        let in_dim = self.w1.first().map_or(0, Vec::len);
        let mut c = Container::new("fusion_weights").with_meta(json!({ "hidden": h, "input": in_dim }));
        c.push("w1", &[h, in_dim], self.w1.concat()).expect("shape");
        c.push("b1", &[h], self.b1.clone()).expect("shape");
        c.push("w2", &[2, h], self.w2.concat()).expect("shape");
        c.push("b2", &[2], self.b2.to_vec()).expect("shape");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, AudioError> {
        c.expect_kind("fusion_weights")?;
        let (s1, w1) = c.array_shaped("w1", &[None, None])?;
        let (h, input) = (s1[0], s1[1]);
        let (_, b1) = c.array_shaped("b1", &[Some(h)])?;
        let (_, w2) = c.array_shaped("w2", &[Some(2), Some(h)])?;
        let (_, b2) = c.array_shaped("b2", &[Some(2)])?;
        Ok(FusionWeights {
            w1: (0..h).map(|r| w1[r * input..(r + 1) * input].to_vec()).collect(),
            b1: b1.to_vec(),
            w2: [w2[..h].to_vec(), w2[h..].to_vec()],
            b2: [b2[0], b2[1]],
        })
    }
}

/// Rhythm share `α` (softmax of the logit pair) and `f = α r + (1 − α) c`.
pub fn fuse(r: &[Vec<f64>], c: &[Vec<f64>], w: &FusionWeights) -> Result<(Vec<Vec<f64>>, Vec<f64>), AudioError> {
    if r.len() != c.len() {
        return Err(AudioError::Dimension(format!("{} rhythm frames, {} content frames", r.len(), c.len())));
    }
    let f_dim = r.first().map_or(0, Vec::len);
    if r.iter().chain(c).any(|row| row.len() != f_dim) {
        return Err(AudioError::Dimension("rhythm and content rows differ in width".into()));
    }
    w.validate(f_dim)?;
    let mut fused = Vec::with_capacity(r.len());
    let mut alpha = Vec::with_capacity(r.len());
    for (rr, cc) in r.iter().zip(c) {
        let [l0, l1] = w.logits(rr, cc);
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        let a = e0 / (e0 + e1);
        fused.push(rr.iter().zip(cc).map(|(x, y)| a * x + (1.0 - a) * y).collect());
        alpha.push(a);
    }
    Ok((fused, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_hand_cases() {
        let t = AudioTrack::new(vec![0.0; 16000], 16000).unwrap();
        let a = frame_align(&t, 30.0).unwrap();
        assert_eq!((a.samples_per_frame, a.frames), (533, 30));
        assert_eq!(frame_align(&t, 1.0).unwrap().frames, 1);
        assert_eq!(frame_align(&AudioTrack::new(vec![], 16000).unwrap(), 30.0).unwrap().frames, 0);
        assert!(matches!(frame_align(&t, 20000.0), Err(AudioError::InvalidFps(_))));
        assert!(matches!(frame_align(&t, 0.0), Err(AudioError::InvalidFps(_))));
    }

    #[test]
    fn amplitude_hand_cases() {
        let t = AudioTrack::new(vec![0.5; 1600], 16000).unwrap();
        assert!(amplitude_envelope(&t, 30.0).unwrap().iter().all(|v| (v - 0.5).abs() < 1e-15));
        let silent = AudioTrack::new(vec![0.0; 1600], 16000).unwrap();
        assert!(amplitude_envelope(&silent, 30.0).unwrap().iter().all(|v| *v == 0.0));
        assert!(onset_strength(&silent, 30.0).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn softmax_hand_case() {
        let w = FusionWeights { w1: vec![vec![0.0; 2]], b1: vec![1.0], w2: [vec![3f64.ln()], vec![0.0]], b2: [0.0, 0.0] };
        let (f, a) = fuse(&[vec![1.0]], &[vec![0.0]], &w).unwrap();
        assert!((a[0] - 0.75).abs() < 1e-15);
        assert!((f[0][0] - 0.75).abs() < 1e-15);
    }
}
