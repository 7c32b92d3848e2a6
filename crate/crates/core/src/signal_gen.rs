//! Labeled synthetic PPG waveforms.
//!
//! Each beat is a two-lobe template (systolic peak plus dicrotic bump) whose
//! length follows an inter-beat interval drawn around `60000 / mean_hr` ms.
//! Interval fluctuations mix a slowly drifting (LF-like) component with a
//! beat-to-beat (HF-like) one, weighted by the state's LF/HF ratio, so the
//! overall spread stays `hr_sdnn`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Class, Error, Result};

/// Lowest sampling rate accepted by [`generate_ppg`].
pub const MIN_FS: f64 = 25.0;
pub const DEFAULT_FS: f64 = 100.0;

const SYSTOLIC_AMP: f64 = 1.0;
const SYSTOLIC_POS: f64 = 0.30;
const SYSTOLIC_WIDTH: f64 = 0.12;
const DICROTIC_AMP: f64 = 0.35;
const DICROTIC_POS: f64 = 0.65;
const DICROTIC_WIDTH: f64 = 0.18;

/// Beat-to-beat correlation of the slow interval component.
const LF_CORRELATION: f64 = 0.9;
/// Truncation of the normalized interval deviation, in standard deviations.
const IBI_TRUNCATION: f64 = 3.0;

/// Autonomic state driving the heart rhythm of one synthetic subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsState {
    pub label: Class,
    /// Beats per minute.
    pub mean_hr: f64,
    /// Standard deviation of inter-beat intervals, ms.
    pub hr_sdnn: f64,
    pub lf_hf_ratio: f64,
}

impl AnsState {
    /// Parasympathetic-leaning preset: slower, more variable rhythm.
    pub fn drowsy() -> Self {
        AnsState {
            label: Class::Drowsy,
            mean_hr: 58.0,
            hr_sdnn: 55.0,
            lf_hf_ratio: 0.8,
        }
    }

    pub fn wakeful() -> Self {
        AnsState {
            label: Class::Wakeful,
            mean_hr: 76.0,
            hr_sdnn: 22.0,
            lf_hf_ratio: 2.5,
        }
    }

    pub fn preset(class: Class) -> Self {
        match class {
            Class::Drowsy => Self::drowsy(),
            Class::Wakeful => Self::wakeful(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean_hr.is_finite() || !(40.0..=180.0).contains(&self.mean_hr) {
            return Err(Error::invalid(format!(
                "mean_hr must lie in [40, 180] bpm, got {}",
                self.mean_hr
            )));
        }
        if !self.hr_sdnn.is_finite() || self.hr_sdnn < 0.0 {
            return Err(Error::invalid(format!(
                "hr_sdnn must be finite and >= 0, got {}",
                self.hr_sdnn
            )));
        }
        if !self.lf_hf_ratio.is_finite() || self.lf_hf_ratio <= 0.0 {
            return Err(Error::invalid(format!(
                "lf_hf_ratio must be finite and > 0, got {}",
                self.lf_hf_ratio
            )));
        }
        Ok(())
    }

    /// Mean inter-beat interval in milliseconds.
    pub fn mean_ibi_ms(&self) -> f64 {
        60_000.0 / self.mean_hr
    }
}

/// A uniformly sampled waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpgSignal {
    pub samples: Vec<f64>,
    pub fs: f64,
    #[serde(default)]
    pub label: Option<Class>,
}

impl PpgSignal {
    pub fn new(samples: Vec<f64>, fs: f64, label: Option<Class>) -> Result<Self> {
        let signal = PpgSignal { samples, fs, label };
        signal.validate()?;
        Ok(signal)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fs.is_finite() || self.fs <= 0.0 {
            return Err(Error::invalid(format!("fs must be > 0, got {}", self.fs)));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// Sensor and environment disturbances added on top of a clean waveform.
///
/// Amplitudes are fractions of the clean signal's peak-to-peak swing.
/// `white_noise_snr_db = +inf` disables the white component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub baseline_wander_amp: f64,
    pub baseline_wander_freq: f64,
    pub motion_burst_rate: f64,
    pub motion_burst_amp: f64,
    #[serde(with = "snr_serde")]
    pub white_noise_snr_db: f64,
}

impl NoiseSpec {
    /// No disturbance at all; [`add_noise`] returns its input unchanged.
    pub fn none() -> Self {
        NoiseSpec {
            baseline_wander_amp: 0.0,
            baseline_wander_freq: 0.0,
            motion_burst_rate: 0.0,
            motion_burst_amp: 0.0,
            white_noise_snr_db: f64::INFINITY,
        }
    }

    /// Moderate in-car disturbance: breathing-rate wander, occasional grip
    /// changes, 20 dB sensor noise.
    pub fn road() -> Self {
        NoiseSpec {
            baseline_wander_amp: 0.2,
            baseline_wander_freq: 0.25,
            motion_burst_rate: 0.02,
            motion_burst_amp: 0.3,
            white_noise_snr_db: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("baseline_wander_amp", self.baseline_wander_amp),
            ("baseline_wander_freq", self.baseline_wander_freq),
            ("motion_burst_rate", self.motion_burst_rate),
            ("motion_burst_amp", self.motion_burst_amp),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.white_noise_snr_db.is_nan() || self.white_noise_snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid("white_noise_snr_db must be finite or +inf"));
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::road()
    }
}

/// JSON has no infinity literal; the disabled sentinel travels as `null`.
mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Two-lobe beat template at normalized phase `phase` (0 = beat onset,
/// 1 = next onset).
pub fn beat_template(phase: f64) -> f64 {
    let lobe = |amp: f64, pos: f64, width: f64| {
        let z = (phase - pos) / width;
        amp * (-0.5 * z * z).exp()
    };
    lobe(SYSTOLIC_AMP, SYSTOLIC_POS, SYSTOLIC_WIDTH) + lobe(DICROTIC_AMP, DICROTIC_POS, DICROTIC_WIDTH)
}

/// Inter-beat interval generator: truncated-normal marginal with LF/HF mixing.
struct IbiProcess {
    mean_s: f64,
    sd_s: f64,
    lf_weight: f64,
    hf_weight: f64,
    lf: f64,
}

impl IbiProcess {
    fn new(state: &AnsState, rng: &mut impl Rng) -> Self {
        let r = state.lf_hf_ratio;
        IbiProcess {
            mean_s: 60.0 / state.mean_hr,
            sd_s: state.hr_sdnn / 1000.0,
            lf_weight: (r / (1.0 + r)).sqrt(),
            hf_weight: (1.0 / (1.0 + r)).sqrt(),
            lf: bounded_normal(rng),
        }
    }

    fn next_interval_s(&mut self, rng: &mut impl Rng) -> f64 {
        if self.sd_s == 0.0 {
            return self.mean_s;
        }
        let innovation: f64 = rng.sample(StandardNormal);
        self.lf = LF_CORRELATION * self.lf + (1.0 - LF_CORRELATION * LF_CORRELATION).sqrt() * innovation;
        self.lf = self.lf.clamp(-IBI_TRUNCATION, IBI_TRUNCATION);
        let mut z = 0.0;
        for _ in 0..32 {
            let hf: f64 = rng.sample(StandardNormal);
            z = self.lf_weight * self.lf + self.hf_weight * hf;
            if z.abs() <= IBI_TRUNCATION {
                break;
            }
        }
        self.mean_s + self.sd_s * z.clamp(-IBI_TRUNCATION, IBI_TRUNCATION)
    }
}

fn bounded_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= IBI_TRUNCATION {
            return z;
        }
    }
}

/// Beat onsets (sample index) and lengths (samples) covering `[0, n)`.
fn beat_schedule(state: &AnsState, n: usize, fs: f64, rng: &mut impl Rng) -> Vec<(i64, usize)> {
    let mut ibi = IbiProcess::new(state, rng);
    let mean_len = (fs * 60.0 / state.mean_hr).round().max(1.0);
    // Very wide sdnn settings could otherwise produce non-physical intervals.
    let min_len = (0.25 * mean_len).round().max(1.0) as usize;
    let to_samples = |s: f64| ((s * fs).round() as usize).max(min_len);

    let first_len = to_samples(ibi.next_interval_s(rng));
    let offset = rng.random_range(0..first_len) as i64;
    let mut beats = vec![(-offset, first_len)];
    let mut onset = -offset + first_len as i64;
    // One extra beat past the end so its leading tail reaches the last samples.
    while onset < n as i64 + mean_len as i64 {
        let len = to_samples(ibi.next_interval_s(rng));
        beats.push((onset, len));
        onset += len as i64;
    }
    beats
}

/// Synthesizes `floor(duration_s * fs)` samples of clean PPG for `state`.
pub fn generate_ppg(state: &AnsState, duration_s: f64, fs: f64, seed: u64) -> Result<PpgSignal> {
    state.validate()?;
    if !duration_s.is_finite() || duration_s < 0.0 {
        return Err(Error::invalid(format!("duration_s must be finite and >= 0, got {duration_s}")));
    }
    if !fs.is_finite() || fs < MIN_FS {
        return Err(Error::invalid(format!("fs must be >= {MIN_FS} Hz, got {fs}")));
    }
    let n = (duration_s * fs + 1e-9).floor() as usize;
    let mut samples = vec![0.0; n];
    if n > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (onset, len) in beat_schedule(state, n, fs, &mut rng) {
            let len_f = len as f64;
            // The template is negligible beyond half a beat before onset and
            // 1.5 beats after it.
            let start = (onset - (len as i64) / 2).max(0);
            let end = (onset + (3 * len as i64) / 2).min(n as i64);
            for t in start..end {
                samples[t as usize] += beat_template((t - onset) as f64 / len_f);
            }
        }
    }
    Ok(PpgSignal {
        samples,
        fs,
        label: Some(state.label),
    })
}

/// Adds baseline wander, Poisson-timed motion bursts and white noise.
pub fn add_noise(signal: &PpgSignal, spec: &NoiseSpec, seed: u64) -> Result<PpgSignal> {
    if signal.is_empty() {
        return Err(Error::invalid("cannot add noise to an empty signal"));
    }
    spec.validate()?;
    signal.validate()?;

    let x = &signal.samples;
    let fs = signal.fs;
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let swing = hi - lo;
    let mut out = x.clone();

    // Separate streams keep each component's draws independent of the others.
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        rng
    };

    if spec.baseline_wander_amp > 0.0 && swing > 0.0 {
        let mut rng = stream(1);
        let amp = spec.baseline_wander_amp * swing;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let w = std::f64::consts::TAU * spec.baseline_wander_freq / fs;
        for (t, v) in out.iter_mut().enumerate() {
            *v += amp * (w * t as f64 + phase).sin();
        }
    }

    if spec.motion_burst_rate > 0.0 && spec.motion_burst_amp > 0.0 && swing > 0.0 {
        let mut rng = stream(2);
        let gaps = Exp::new(spec.motion_burst_rate)
            .map_err(|e| Error::invalid(format!("motion_burst_rate: {e}")))?;
        let duration = signal.duration_s();
        let mut t_event: f64 = gaps.sample(&mut rng);
        while t_event < duration {
            let width_s = rng.random_range(0.5..1.5);
            let freq = rng.random_range(1.0..4.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let amp = sign * spec.motion_burst_amp * swing * rng.random_range(0.5..1.0);
            let sigma = width_s / 4.0;
            let first = ((t_event - 4.0 * sigma) * fs).floor().max(0.0) as usize;
            let last = (((t_event + 4.0 * sigma) * fs).ceil() as usize).min(out.len());
            for (t, v) in out.iter_mut().enumerate().take(last).skip(first) {
                let dt = t as f64 / fs - t_event;
                let envelope = (-0.5 * (dt / sigma).powi(2)).exp();
                *v += amp * envelope * (std::f64::consts::TAU * freq * dt).sin();
            }
            t_event += gaps.sample(&mut rng);
        }
    }

    if spec.white_noise_snr_db.is_finite() {
        let mut rng = stream(3);
        let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let sigma = (power / 10f64.powf(spec.white_noise_snr_db / 10.0)).sqrt();
        if sigma > 0.0 {
            for v in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sigma * z;
            }
        }
    }

    Ok(PpgSignal {
        samples: out,
        fs,
        label: signal.label,
    })
}

/// Generates a clean waveform for `state` and corrupts it with `noise`.
pub fn synthesize(state: &AnsState, noise: &NoiseSpec, duration_s: f64, fs: f64, seed: u64) -> Result<PpgSignal> {
    let clean = generate_ppg(state, duration_s, fs, seed)?;
    if clean.is_empty() {
        return Ok(clean);
    }
    add_noise(&clean, noise, seed ^ 0x9E37_79B9_7F4A_7C15)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Local maxima above the signal midpoint separated by at least 0.3 s.
    fn count_peaks(x: &[f64], fs: f64) -> usize {
        let (lo, hi) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let threshold = lo + 0.5 * (hi - lo);
        let refractory = (0.3 * fs) as usize;
        let mut last: Option<usize> = None;
        let mut count = 0;
        for t in 1..x.len() - 1 {
            if x[t] > threshold && x[t] >= x[t - 1] && x[t] > x[t + 1] {
                if last.is_none_or(|l| t - l >= refractory) {
                    count += 1;
                    last = Some(t);
                }
            }
        }
        count
    }

    fn peak_positions(x: &[f64]) -> Vec<usize> {
        (1..x.len() - 1)
            .filter(|&t| x[t] > 0.5 && x[t] >= x[t - 1] && x[t] > x[t + 1])
            .collect()
    }

    #[test]
    fn zero_duration_is_empty() {
        let s = generate_ppg(&AnsState::wakeful(), 0.0, 100.0, 1).unwrap();
        assert!(s.samples.is_empty());
        assert_eq!(s.label, Some(Class::Wakeful));
    }

    #[test]
    fn sample_count_is_floor_of_duration_times_fs() {
        let s = generate_ppg(&AnsState::drowsy(), 2.555, 100.0, 3).unwrap();
        assert_eq!(s.len(), 255);
        let s = generate_ppg(&AnsState::drowsy(), 60.0, 100.0, 3).unwrap();
        assert_eq!(s.len(), 6000);
    }

    #[test]
    fn wakeful_minute_has_plausible_beat_count() {
        let state = AnsState {
            label: Class::Wakeful,
            mean_hr: 75.0,
            hr_sdnn: 20.0,
            lf_hf_ratio: 2.0,
        };
        for seed in 0..5 {
            let s = generate_ppg(&state, 60.0, 100.0, seed).unwrap();
            let peaks = count_peaks(&s.samples, s.fs);
            assert!((70..=80).contains(&peaks), "seed {seed}: {peaks} peaks");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_ppg(&AnsState::drowsy(), 10.0, 100.0, 42).unwrap();
        let b = generate_ppg(&AnsState::drowsy(), 10.0, 100.0, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_ppg(&AnsState::drowsy(), 10.0, 100.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_sdnn_gives_exact_periodic_beats() {
        for (hr, fs) in [(75.0, 100.0), (58.0, 100.0), (91.0, 250.0), (40.0, 25.0)] {
            let state = AnsState {
                label: Class::Drowsy,
                mean_hr: hr,
                hr_sdnn: 0.0,
                lf_hf_ratio: 1.0,
            };
            let s = generate_ppg(&state, 30.0, fs, 5).unwrap();
            let expected = (fs * 60.0 / hr).round() as usize;
            let peaks = peak_positions(&s.samples);
            assert!(peaks.len() > 5);
            for w in peaks.windows(2) {
                assert_eq!(w[1] - w[0], expected, "hr {hr} fs {fs}");
            }
        }
    }

    #[test]
    fn presets_separate_mean_intervals() {
        // Mean inter-beat interval per 30 s window, estimated from peak spacing.
        let window_means = |state: AnsState| -> Vec<f64> {
            (0..100)
                .map(|seed| {
                    let s = generate_ppg(&state, 30.0, 100.0, 1000 + seed).unwrap();
                    let p = peak_positions(&s.samples);
                    (p[p.len() - 1] - p[0]) as f64 / (p.len() - 1) as f64 * 10.0
                })
                .collect()
        };
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, var / n)
        };
        let (md, sed) = stats(&window_means(AnsState::drowsy()));
        let (mw, sew) = stats(&window_means(AnsState::wakeful()));
        let z = (md - mw) / (sed + sew).sqrt();
        assert!(z >= 3.0, "separation {z} std errors");
        assert!((md - AnsState::drowsy().mean_ibi_ms()).abs() < 30.0);
        assert!((mw - AnsState::wakeful().mean_ibi_ms()).abs() < 30.0);
    }

    #[test]
    fn invalid_states_are_rejected() {
        let mut s = AnsState::wakeful();
        s.mean_hr = 200.0;
        assert!(matches!(generate_ppg(&s, 1.0, 100.0, 0), Err(Error::InvalidArgument(_))));
        s.mean_hr = f64::NAN;
        assert!(generate_ppg(&s, 1.0, 100.0, 0).is_err());
        let mut s = AnsState::wakeful();
        s.hr_sdnn = -1.0;
        assert!(generate_ppg(&s, 1.0, 100.0, 0).is_err());
        let mut s = AnsState::wakeful();
        s.lf_hf_ratio = 0.0;
        assert!(generate_ppg(&s, 1.0, 100.0, 0).is_err());
        assert!(generate_ppg(&AnsState::wakeful(), 1.0, 20.0, 0).is_err());
        assert!(generate_ppg(&AnsState::wakeful(), -1.0, 100.0, 0).is_err());
    }

    #[test]
    fn disabled_noise_is_identity() {
        let s = generate_ppg(&AnsState::wakeful(), 5.0, 100.0, 9).unwrap();
        let out = add_noise(&s, &NoiseSpec::none(), 77).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn white_noise_hits_target_snr() {
        // Unit-power sine.
        let fs = 100.0;
        let samples: Vec<f64> = (0..6000)
            .map(|t| 2f64.sqrt() * (std::f64::consts::TAU * 1.3 * t as f64 / fs).sin())
            .collect();
        let s = PpgSignal::new(samples, fs, None).unwrap();
        let spec = NoiseSpec {
            white_noise_snr_db: 20.0,
            ..NoiseSpec::none()
        };
        for seed in 0..5 {
            let out = add_noise(&s, &spec, seed).unwrap();
            let p_sig = s.samples.iter().map(|v| v * v).sum::<f64>();
            let p_noise = out.samples.iter().zip(&s.samples).map(|(o, i)| (o - i).powi(2)).sum::<f64>();
            let snr = 10.0 * (p_sig / p_noise).log10();
            assert!((snr - 20.0).abs() <= 1.0, "snr {snr}");
        }
    }

    #[test]
    fn noise_is_deterministic_and_preserves_metadata() {
        let s = generate_ppg(&AnsState::drowsy(), 20.0, 100.0, 9).unwrap();
        let spec = NoiseSpec {
            motion_burst_rate: 0.5,
            ..NoiseSpec::road()
        };
        let a = add_noise(&s, &spec, 5).unwrap();
        let b = add_noise(&s, &spec, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), s.len());
        assert_eq!(a.fs, s.fs);
        assert_eq!(a.label, s.label);
        assert_ne!(a.samples, s.samples);
        assert!(a.samples.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn noise_on_empty_signal_fails() {
        let s = PpgSignal::new(vec![], 100.0, None).unwrap();
        assert!(matches!(add_noise(&s, &NoiseSpec::road(), 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn noise_spec_json_encodes_disabled_snr_as_null() {
        let json = serde_json::to_string(&NoiseSpec::none()).unwrap();
        assert!(json.contains("\"white_noise_snr_db\":null"));
        let back: NoiseSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.white_noise_snr_db, f64::INFINITY);
    }
}
