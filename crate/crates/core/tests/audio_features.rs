use gesturekit::audio::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 16000;
const FPS: f64 = 30.0;

fn click_track(len: usize, at: &[usize]) -> AudioTrack {
    let mut s = vec![0.0; len];
    for &i in at {
        s[i] = 1.0;
    }
    AudioTrack::new(s, SR).unwrap()
}

/// Spectral flux from an O(N²) DFT of each centered Hann window.
fn oracle_onset(track: &AudioTrack, fps: f64) -> Vec<f64> {
    let sk = (track.sample_rate as f64 / fps).floor() as usize;
    let frames = track.samples.len() / sk;
    let hop = sk.min(1024);
    let n = 1024usize;
    let win: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()).collect();
    let mut mags: Vec<Vec<f64>> = Vec::new();
    let mut m = 0;
    while m * hop + hop / 2 < frames * sk {
        let start = (m * hop + hop / 2) as i64 - 512;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let idx = start + i as i64;
                if idx >= 0 && (idx as usize) < track.samples.len() { track.samples[idx as usize] * win[i] } else { 0.0 }
            })
            .collect();
        mags.push(
            (0..=n / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, v) in x.iter().enumerate() {
                        let a = -2.0 * std::f64::consts::PI * (k * i % n) as f64 / n as f64;
                        re += v * a.cos();
                        im += v * a.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect(),
        );
        m += 1;
    }
    let mut pooled = vec![0.0f64; frames];
    for i in 0..mags.len() {
        let flux: f64 = if i == 0 { mags[0].iter().sum() } else { mags[i].iter().zip(&mags[i - 1]).map(|(a, b)| (a - b).max(0.0)).sum() };
        let t = (i * hop + hop / 2) / sk;
        pooled[t] = pooled[t].max(flux);
    }
    let max = pooled.iter().copied().fold(0.0, f64::max);
    pooled.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b })
}

#[test]
fn onset_matches_dft_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<f64> = (0..8000).map(|i| if (2000..2600).contains(&i) { rng.gen_range(-0.5..0.5) } else { 0.01 * (i as f64 * 0.05).sin() }).collect();
    let track = AudioTrack::new(samples, SR).unwrap();
    let fast = onset_strength(&track, FPS).unwrap();
    let slow = oracle_onset(&track, FPS);
    assert_eq!(fast.len(), slow.len());
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn click_peaks_in_its_frame() {
    let sk = 533;
    for frame in [3usize, 10, 17] {
        for offset in [sk / 2 - 64, sk / 2, sk / 2 + 100, sk - 1] {
            let s = frame * sk + offset;
            let track = click_track(sk * 25, &[s]);
            let onset = onset_strength(&track, FPS).unwrap();
            assert_eq!(argmax(&onset), s / sk, "click at {s}");
            let oracle = oracle_onset(&track, FPS);
            assert_eq!(argmax(&oracle), s / sk);
        }
    }
}

#[test]
fn equal_clicks_give_equal_peaks() {
    let sk = 533;
    let track = click_track(sk * 30, &[5 * sk + 300, 20 * sk + 300]);
    let onset = onset_strength(&track, FPS).unwrap();
    assert!((onset[5] - onset[20]).abs() < 1e-6);
    assert!((onset[5] - 1.0).abs() < 1e-6);
    assert!(onset[5] > onset[4] && onset[5] > onset[6]);
    assert!(onset[20] > onset[19] && onset[20] > onset[21]);
}

#[test]
fn sine_rms() {
    let samples: Vec<f64> = (0..SR as usize).map(|i| (2.0 * std::f64::consts::PI * 220.0 * i as f64 / SR as f64).sin()).collect();
    let env = amplitude_envelope(&AudioTrack::new(samples, SR).unwrap(), FPS).unwrap();
    assert_eq!(env.len(), 30);
    for v in env {
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-2);
    }
}

#[test]
fn short_trailing_silence_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<f64> = (0..533 * 12 + 10).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let a = AudioTrack::new(samples.clone(), SR).unwrap();
    let mut padded = samples;
    padded.extend(std::iter::repeat(0.0).take(400));
    let b = AudioTrack::new(padded, SR).unwrap();
    assert_eq!(RhythmFeatures::extract(&a, FPS).unwrap(), RhythmFeatures::extract(&b, FPS).unwrap());
}

#[test]
fn fusion_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = 3;
    let h = 5;
    let w = FusionWeights {
        w1: (0..h).map(|_| (0..2 * f).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
        b1: (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        w2: [(0..h).map(|_| rng.gen_range(-2.0..2.0)).collect(), (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect()],
        b2: [0.1, -0.2],
    };
    let r: Vec<Vec<f64>> = (0..50).map(|_| (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let c: Vec<Vec<f64>> = (0..50).map(|_| (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let (fused, alpha) = fuse(&r, &c, &w).unwrap();
    for t in 0..50 {
        assert!((0.0..=1.0).contains(&alpha[t]));
        for k in 0..f {
            let (lo, hi) = (r[t][k].min(c[t][k]), r[t][k].max(c[t][k]));
            assert!(fused[t][k] >= lo - 1e-15 && fused[t][k] <= hi + 1e-15);
        }
    }
    let (same, _) = fuse(&r, &r, &w).unwrap();
    for (a, b) in same.iter().flatten().zip(r.iter().flatten()) {
        assert!((a - b).abs() < 1e-15);
    }
    let symmetric = FusionWeights { w2: [w.w2[0].clone(), w.w2[0].clone()], b2: [0.3, 0.3], ..w.clone() };
    let (half, alpha) = fuse(&r, &c, &symmetric).unwrap();
    assert!(alpha.iter().all(|a| *a == 0.5));
    assert_eq!(half[0][0], 0.5 * r[0][0] + 0.5 * c[0][0]);
    assert!(fuse(&r, &c[..10], &w).is_err());
}

#[test]
fn wav_round_trip_and_downmix() {
    let dir = tempfile::tempdir().unwrap();
    let track = AudioTrack::new((0..1000).map(|i| ((i as f64) * 0.01).sin() * 0.8).collect(), SR).unwrap();
    let p = dir.path().join("mono.wav");
    track.write_wav(&p).unwrap();
    let back = AudioTrack::read_wav(&p).unwrap();
    assert_eq!(back.sample_rate, SR);
    for (a, b) in back.samples.iter().zip(&track.samples) {
        assert!((a - b).abs() <= 0.5 / 32768.0);
    }
    let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
    let p2 = dir.path().join("stereo.wav");
    let mut w = hound::WavWriter::create(&p2, spec).unwrap();
    for (l, r) in [(0.5f32, 0.25f32), (-1.0, 1.0), (0.125, 0.125)] {
        w.write_sample(l).unwrap();
        w.write_sample(r).unwrap();
    }
    w.finalize().unwrap();
    let st = AudioTrack::read_wav(&p2).unwrap();
    assert_eq!(st.samples, vec![0.375, 0.0, 0.125]);
}

#[test]
fn content_features_from_word_timings() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("words.csv");
    std::fs::write(&p, "word,start_s,end_s,embedding_row\nhello,0.0,0.1,1\nworld,0.2,0.3,0\n").unwrap();
    let timings = read_word_timings(&p).unwrap();
    let table = EmbeddingTable { rows: vec![vec![1.0, 2.0], vec![3.0, 4.0]] };
    let back = EmbeddingTable::from_container(&table.to_container()).unwrap();
    assert_eq!(back, table);
    let c = content_features(&timings, &table, 12, 30.0).unwrap();
    assert_eq!(c[0], vec![3.0, 4.0]);
    assert_eq!(c[2], vec![3.0, 4.0]);
    assert_eq!(c[3], vec![0.0, 0.0]);
    assert_eq!(c[6], vec![1.0, 2.0]);
    assert_eq!(c[11], vec![0.0, 0.0]);
}
