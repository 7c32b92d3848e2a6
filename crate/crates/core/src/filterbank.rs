//! Band-pass design, hyper-filtering and pattern-signal extraction.
//!
//! A [`HyperFilterConfig`] holds one or more layers, each a `(f_lo, f_hi)`
//! band inside 1–10 Hz that is split into `bands_per_layer` equal sub-bands.
//! Every sub-band gets its own linear-phase FIR kernel; filtering one signal
//! through all of them yields a [`FilteredStack`], and the cross-channel
//! vector at each sample index is a [`PatternSignal`].

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::signal_gen::PpgSignal;
use crate::{Class, Error, Result};

pub const PPG_BAND_LO: f64 = 1.0;
pub const PPG_BAND_HI: f64 = 10.0;
pub const DEFAULT_BANDS_PER_LAYER: usize = 11;
pub const DEFAULT_TRANSITION_HZ: f64 = 0.5;

/// Direct convolution is used below this many multiply-adds.
const DIRECT_CONV_LIMIT: usize = 1 << 20;

/// Linear-phase FIR band-pass kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    pub taps: Vec<f64>,
    pub f_lo: f64,
    pub f_hi: f64,
    pub fs: f64,
}

impl FilterKernel {
    /// Group delay in samples.
    pub fn delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Magnitude of the frequency response at `freq` Hz.
    pub fn gain_at(&self, freq: f64) -> f64 {
        let w = std::f64::consts::TAU * freq / self.fs;
        let (re, im) = self.taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, h)| {
            let phase = w * n as f64;
            (re + h * phase.cos(), im - h * phase.sin())
        });
        (re * re + im * im).sqrt()
    }
}

/// Smallest odd tap count not below `3.3 * fs / transition_hz` (Hamming window rule).
pub fn tap_count(fs: f64, transition_hz: f64) -> usize {
    let exact = 3.3 * fs / transition_hz;
    // Absorb representation error so e.g. 3.3 * 100 / 0.5 gives 660, not 661.
    let n = (exact * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

/// Transition width used for a sub-band of the given width.
pub fn transition_for_width(width_hz: f64) -> f64 {
    DEFAULT_TRANSITION_HZ.min(width_hz / 2.0)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Hamming-windowed sinc band-pass, normalized to unit gain at the band center.
pub fn design_bandpass(f_lo: f64, f_hi: f64, fs: f64, transition_hz: f64) -> Result<FilterKernel> {
    if !(f_lo.is_finite() && f_hi.is_finite() && fs.is_finite()) {
        return Err(Error::invalid("band edges and fs must be finite"));
    }
    if !(0.0 < f_lo && f_lo < f_hi && f_hi < fs / 2.0) {
        return Err(Error::invalid(format!(
            "band edges must satisfy 0 < f_lo < f_hi < fs/2, got f_lo={f_lo}, f_hi={f_hi}, fs={fs}"
        )));
    }
    if !transition_hz.is_finite() || transition_hz <= 0.0 {
        return Err(Error::invalid(format!("transition_hz must be > 0, got {transition_hz}")));
    }
    let n = tap_count(fs, transition_hz);
    let center = (n - 1) as f64 / 2.0;
    let lo = 2.0 * f_lo / fs;
    let hi = 2.0 * f_hi / fs;
    let mut taps: Vec<f64> = (0..n)
        // Evaluate the left half and mirror it so the kernel is exactly symmetric.
        .map(|i| i.min(n - 1 - i))
        .map(|i| {
            let m = i as f64 - center;
            let window = if n == 1 {
                1.0
            } else {
                0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos()
            };
            window * (hi * sinc(hi * m) - lo * sinc(lo * m))
        })
        .collect();
    let mut kernel = FilterKernel {
        taps: Vec::new(),
        f_lo,
        f_hi,
        fs,
    };
    // Symmetric kernel: the response at the center frequency is real up to
    // the linear-phase term.
    let wc = std::f64::consts::PI * (f_lo + f_hi) / fs;
    let gain: f64 = taps
        .iter()
        .enumerate()
        .map(|(i, h)| h * (wc * (i as f64 - center)).cos())
        .sum();
    if gain.abs() < f64::EPSILON {
        return Err(Error::invalid("degenerate band-pass design (zero center gain)"));
    }
    taps.iter_mut().for_each(|h| *h /= gain);
    kernel.taps = taps;
    Ok(kernel)
}

/// The fixed 1–10 Hz PPG band-pass.
pub fn ppg_bandpass(fs: f64) -> Result<FilterKernel> {
    design_bandpass(PPG_BAND_LO, PPG_BAND_HI, fs, DEFAULT_TRANSITION_HZ)
}

/// Zero-phase filtering: forward convolution shifted by the group delay,
/// with zeros outside the signal. Output length equals input length.
pub fn apply_filter(kernel: &FilterKernel, signal: &PpgSignal) -> Result<PpgSignal> {
    if signal.is_empty() {
        return Err(Error::invalid("cannot filter an empty signal"));
    }
    Ok(PpgSignal {
        samples: filter_samples(&kernel.taps, &signal.samples),
        fs: signal.fs,
        label: signal.label,
    })
}

/// 1–10 Hz pre-filtering of a raw signal.
pub fn prefilter(signal: &PpgSignal) -> Result<PpgSignal> {
    apply_filter(&ppg_bandpass(signal.fs)?, signal)
}

pub(crate) fn filter_samples(taps: &[f64], x: &[f64]) -> Vec<f64> {
    if taps.len().saturating_mul(x.len()) <= DIRECT_CONV_LIMIT {
        filter_direct(taps, x)
    } else {
        filter_fft(taps, x)
    }
}

/// `y[n] = sum_k h[k] x[n + d - k]`, `d = (taps - 1) / 2`.
pub(crate) fn filter_direct(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let d = (taps.len() - 1) / 2;
    let n = x.len() as isize;
    (0..x.len())
        .map(|i| {
            // k ranges over taps whose input index i + d - k lies in [0, n).
            let base = i as isize + d as isize;
            let k_lo = (base - (n - 1)).max(0) as usize;
            let k_hi = (base as usize).min(taps.len() - 1);
            (k_lo..=k_hi).map(|k| taps[k] * x[base as usize - k]).sum()
        })
        .collect()
}

pub(crate) fn filter_fft(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let d = (taps.len() - 1) / 2;
    let size = (x.len() + taps.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(size, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = taps.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(size, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a[d..d + x.len()].iter().map(|c| c.re * scale).collect()
}

/// One hyper-filtering layer: the band that gets split into sub-bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Layer {
    pub fn new(f_lo: f64, f_hi: f64) -> Self {
        Layer { f_lo, f_hi }
    }

    pub fn width(&self) -> f64 {
        self.f_hi - self.f_lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperFilterConfig {
    pub bands_per_layer: usize,
    pub layers: Vec<Layer>,
}

impl Default for HyperFilterConfig {
    /// Full PPG band plus its lower and upper halves.
    fn default() -> Self {
        HyperFilterConfig {
            bands_per_layer: DEFAULT_BANDS_PER_LAYER,
            layers: vec![Layer::new(1.0, 10.0), Layer::new(1.0, 5.5), Layer::new(5.5, 10.0)],
        }
    }
}

impl HyperFilterConfig {
    pub fn single(f_lo: f64, f_hi: f64, bands_per_layer: usize) -> Self {
        HyperFilterConfig {
            bands_per_layer,
            layers: vec![Layer::new(f_lo, f_hi)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("hyper-filter config needs at least one layer"));
        }
        if self.bands_per_layer == 0 {
            return Err(Error::invalid("bands_per_layer must be >= 1"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(PPG_BAND_LO <= l.f_lo && l.f_lo < l.f_hi && l.f_hi <= PPG_BAND_HI) {
                return Err(Error::invalid(format!(
                    "layer {i} must satisfy 1 <= f_lo < f_hi <= 10, got ({}, {})",
                    l.f_lo, l.f_hi
                )));
            }
        }
        Ok(())
    }

    pub fn channel_count(&self) -> usize {
        self.layers.len() * self.bands_per_layer
    }

    /// Per-channel metadata in stack order (layer, then ascending band).
    pub fn channel_layout(&self, fs: f64) -> Vec<ChannelMeta> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(li, layer)| {
                subband_edges(*layer, self.bands_per_layer)
                    .into_iter()
                    .enumerate()
                    .map(move |(bi, (lo, hi))| ChannelMeta {
                        layer: li,
                        band: bi,
                        f_lo: lo,
                        f_hi: hi,
                        taps: tap_count(fs, transition_for_width(hi - lo)),
                    })
            })
            .collect()
    }

    /// Longest kernel any channel uses at sampling rate `fs`.
    pub fn max_taps(&self, fs: f64) -> usize {
        self.channel_layout(fs).iter().map(|m| m.taps).max().unwrap_or(1)
    }

    /// Edge samples dropped by [`pattern_signals`] by default.
    pub fn default_margin(&self, fs: f64) -> usize {
        (self.max_taps(fs) - 1) / 2
    }
}

/// `n_bands` contiguous equal-width bands tiling `layer`.
///
/// Edges are computed once and shared, so band `i`'s upper edge is bitwise
/// equal to band `i + 1`'s lower edge, and the outer edges are exactly the
/// layer's.
pub fn subband_edges(layer: Layer, n_bands: usize) -> Vec<(f64, f64)> {
    if n_bands == 0 {
        return Vec::new();
    }
    let n = n_bands as f64;
    // A single rounding at the division; exact numerators give each edge as
    // the nearest double to its true value.
    let edges: Vec<f64> = (0..=n_bands)
        .map(|i| match i {
            0 => layer.f_lo,
            i if i == n_bands => layer.f_hi,
            i => (layer.f_lo * (n - i as f64) + layer.f_hi * i as f64) / n,
        })
        .collect();
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub layer: usize,
    pub band: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub taps: usize,
}

/// One band-passed copy of a signal per (layer, sub-band).
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredStack {
    pub channels: Vec<Vec<f64>>,
    pub meta: Vec<ChannelMeta>,
    pub fs: f64,
    pub label: Option<Class>,
}

impl FilteredStack {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn max_taps(&self) -> usize {
        self.meta.iter().map(|m| m.taps).max().unwrap_or(1)
    }

    pub fn default_margin(&self) -> usize {
        (self.max_taps() - 1) / 2
    }
}

/// Filters `signal` through every sub-band of `config`.
pub fn hyper_filter(signal: &PpgSignal, config: &HyperFilterConfig) -> Result<FilteredStack> {
    config.validate()?;
    signal.validate()?;
    let layout = config.channel_layout(signal.fs);
    let required = layout.iter().map(|m| m.taps).max().unwrap_or(1);
    if signal.len() < required {
        return Err(Error::SignalTooShort {
            required,
            actual: signal.len(),
        });
    }
    let channels = layout
        .par_iter()
        .map(|m| {
            let kernel = design_bandpass(m.f_lo, m.f_hi, signal.fs, transition_for_width(m.f_hi - m.f_lo))?;
            Ok(filter_samples(&kernel.taps, &signal.samples))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilteredStack {
        channels,
        meta: layout,
        fs: signal.fs,
        label: signal.label,
    })
}

/// Cross-channel vector of one sample of a [`FilteredStack`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSignal {
    pub values: Vec<f64>,
    pub label: Option<Class>,
    pub source_index: usize,
}

/// One pattern-signal per sample index in `[margin, N - margin)`.
pub fn pattern_signals(stack: &FilteredStack, margin: usize) -> Result<Vec<PatternSignal>> {
    let n = stack.len();
    if stack.channels.is_empty() || n <= 2 * margin {
        return Err(Error::invalid(format!(
            "stack of length {n} cannot drop a margin of {margin} samples on each side"
        )));
    }
    if stack.channels.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeMismatch("stack channels differ in length".into()));
    }
    Ok((margin..n - margin)
        .map(|k| PatternSignal {
            values: stack.channels.iter().map(|c| c[k]).collect(),
            label: stack.label,
            source_index: k,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, fs: f64, n: usize, phase: f64) -> PpgSignal {
        let samples = (0..n)
            .map(|t| (std::f64::consts::TAU * freq * t as f64 / fs + phase).sin())
            .collect();
        PpgSignal::new(samples, fs, None).unwrap()
    }

    /// Peak absolute value away from the zero-padded edges.
    fn steady_amplitude(y: &[f64], skip: usize) -> f64 {
        y[skip..y.len() - skip].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn random_signal(n: usize, seed: u64) -> PpgSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PpgSignal::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), 100.0, None).unwrap()
    }

    #[test]
    fn tap_count_follows_hamming_rule() {
        let k = design_bandpass(1.0, 10.0, 100.0, 0.5).unwrap();
        assert_eq!(k.taps.len(), 661);
        assert_eq!(tap_count(100.0, 1.0), 331);
        assert_eq!(tap_count(100.0, 0.3), 1101);
        assert_eq!(tap_count(25.0, 0.5), 165);
    }

    #[test]
    fn default_kernel_passes_5hz_and_rejects_outside_band() {
        let k = design_bandpass(1.0, 10.0, 100.0, 0.5).unwrap();
        let skip = k.taps.len();
        let pass = apply_filter(&k, &sine(5.0, 100.0, 4000, 0.3)).unwrap();
        let a = steady_amplitude(&pass.samples, skip);
        assert!((0.95..=1.05).contains(&a), "5 Hz amplitude {a}");
        let low = apply_filter(&k, &sine(0.2, 100.0, 6000, 0.3)).unwrap();
        let a = steady_amplitude(&low.samples, skip);
        assert!(a <= 0.1, "0.2 Hz amplitude {a}");
    }

    #[test]
    fn kernel_has_zero_dc_and_unit_center_gain() {
        let k = design_bandpass(2.0, 4.0, 100.0, 0.5).unwrap();
        let dc = k.taps.iter().sum::<f64>().abs();
        assert!(dc < 5e-3, "dc gain {dc}");
        assert!((k.gain_at(3.0) - 1.0).abs() < 1e-9);
        assert_eq!(k.taps.len() % 2, 1);
        for i in 0..k.taps.len() / 2 {
            assert_eq!(k.taps[i], k.taps[k.taps.len() - 1 - i]);
        }
    }

    #[test]
    fn invalid_band_is_rejected() {
        assert!(matches!(design_bandpass(5.0, 2.0, 100.0, 0.5), Err(Error::InvalidArgument(_))));
        assert!(design_bandpass(0.0, 2.0, 100.0, 0.5).is_err());
        assert!(design_bandpass(1.0, 50.0, 100.0, 0.5).is_err());
        assert!(design_bandpass(1.0, 10.0, 100.0, 0.0).is_err());
    }

    #[test]
    fn zero_signal_stays_zero() {
        let k = ppg_bandpass(100.0).unwrap();
        let z = PpgSignal::new(vec![0.0; 500], 100.0, None).unwrap();
        assert!(apply_filter(&k, &z).unwrap().samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filtering_is_linear() {
        let k = ppg_bandpass(100.0).unwrap();
        let x = random_signal(2000, 4);
        let scaled = PpgSignal::new(x.samples.iter().map(|v| 2.5 * v).collect(), 100.0, None).unwrap();
        let y = apply_filter(&k, &x).unwrap();
        let ys = apply_filter(&k, &scaled).unwrap();
        for (a, b) in y.samples.iter().zip(&ys.samples) {
            assert!((2.5 * a - b).abs() <= 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn impulse_response_is_centered_kernel() {
        let k = design_bandpass(1.0, 10.0, 100.0, 2.0).unwrap();
        let n = 400;
        let c = 200;
        let mut x = vec![0.0; n];
        x[c] = 1.0;
        let y = filter_direct(&k.taps, &x);
        let d = k.delay();
        // Independent oracle: full convolution, then look up by offset.
        for (i, &yi) in y.iter().enumerate() {
            let offset = i as isize - c as isize + d as isize;
            let expected = if (0..k.taps.len() as isize).contains(&offset) {
                k.taps[offset as usize]
            } else {
                0.0
            };
            assert_eq!(yi, expected);
        }
        let yf = filter_fft(&k.taps, &x);
        for (a, b) in y.iter().zip(&yf) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_route_matches_direct_route() {
        let k = design_bandpass(1.8, 2.6, 100.0, 0.4).unwrap();
        let x = random_signal(3000, 11);
        let direct = filter_direct(&k.taps, &x.samples);
        let fft = filter_fft(&k.taps, &x.samples);
        let max = direct.iter().zip(&fft).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-12, "max deviation {max}");
    }

    #[test]
    fn zero_phase_preserves_amplitude_under_shift() {
        let k = design_bandpass(2.0, 6.0, 100.0, 0.5).unwrap();
        let skip = k.taps.len();
        let a = steady_amplitude(&apply_filter(&k, &sine(3.0, 100.0, 3000, 0.0)).unwrap().samples, skip);
        let b = steady_amplitude(&apply_filter(&k, &sine(3.0, 100.0, 3000, 1.1)).unwrap().samples, skip);
        assert!((a - b).abs() < 1e-3);
        // No phase lag: output tracks input sample for sample in the middle.
        let x = sine(3.0, 100.0, 3000, 0.0);
        let y = apply_filter(&k, &x).unwrap();
        for t in 1000..1100 {
            assert!((x.samples[t] - y.samples[t]).abs() < 0.02);
        }
    }

    #[test]
    fn subband_examples() {
        assert_eq!(subband_edges(Layer::new(1.0, 10.0), 1), vec![(1.0, 10.0)]);
        let bands = subband_edges(Layer::new(1.0, 10.0), 11);
        assert_eq!(bands.len(), 11);
        assert!((bands[0].1 - 1.8182).abs() < 1e-4);
        assert_eq!(bands[0].0, 1.0);
        for (lo, hi) in &bands {
            assert!((hi - lo - 9.0 / 11.0).abs() < 1e-12);
        }
        for w in bands.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        assert_eq!(bands[10].1, 10.0);
    }

    #[test]
    fn single_band_stack_equals_apply_filter() {
        let cfg = HyperFilterConfig::single(1.0, 10.0, 1);
        let x = random_signal(1500, 2);
        let stack = hyper_filter(&x, &cfg).unwrap();
        assert_eq!(stack.channel_count(), 1);
        let direct = apply_filter(&design_bandpass(1.0, 10.0, 100.0, 0.5).unwrap(), &x).unwrap();
        assert_eq!(stack.channels[0], direct.samples);
    }

    #[test]
    fn default_config_gives_33_channels() {
        let cfg = HyperFilterConfig::default();
        let x = random_signal(2000, 3);
        let stack = hyper_filter(&x, &cfg).unwrap();
        assert_eq!(stack.channel_count(), 33);
        assert!(stack.channels.iter().all(|c| c.len() == 2000));
        let order: Vec<(usize, usize)> = stack.meta.iter().map(|m| (m.layer, m.band)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
    }

    #[test]
    fn tone_lands_in_its_subband() {
        let cfg = HyperFilterConfig::single(1.0, 10.0, 11);
        let x = sine(1.4, 100.0, 4000, 0.0);
        let stack = hyper_filter(&x, &cfg).unwrap();
        let m = stack.default_margin();
        let rms: Vec<f64> = stack
            .channels
            .iter()
            .map(|c| (c[m..c.len() - m].iter().map(|v| v * v).sum::<f64>() / (c.len() - 2 * m) as f64).sqrt())
            .collect();
        let best = rms.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 0);
        assert!((stack.meta[0].f_hi - 1.8182).abs() < 1e-4);
    }

    #[test]
    fn short_signal_reports_required_length() {
        let cfg = HyperFilterConfig::default();
        let x = random_signal(100, 3);
        match hyper_filter(&x, &cfg) {
            Err(Error::SignalTooShort { required, actual }) => {
                assert_eq!(required, cfg.max_taps(100.0));
                assert_eq!(actual, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn synthetic_stack(n: usize, c: usize, identical: bool) -> FilteredStack {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let channels = (0..c)
            .map(|_| if identical { base.clone() } else { (0..n).map(|_| rng.random()).collect() })
            .collect();
        FilteredStack {
            channels,
            meta: (0..c)
                .map(|i| ChannelMeta { layer: 0, band: i, f_lo: 1.0, f_hi: 2.0, taps: 3 })
                .collect(),
            fs: 100.0,
            label: Some(Class::Drowsy),
        }
    }

    #[test]
    fn pattern_signal_shapes_and_indexing() {
        let stack = synthetic_stack(1000, 33, false);
        let patterns = pattern_signals(&stack, 350).unwrap();
        assert_eq!(patterns.len(), 300);
        assert!(patterns.iter().all(|p| p.values.len() == 33 && p.label == Some(Class::Drowsy)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let j = rng.random_range(0..300);
            let c = rng.random_range(0..33);
            assert_eq!(patterns[j].values[c], stack.channels[c][350 + j]);
            assert_eq!(patterns[j].source_index, 350 + j);
        }
    }

    #[test]
    fn identical_channels_give_constant_patterns() {
        let stack = synthetic_stack(50, 5, true);
        for p in pattern_signals(&stack, 0).unwrap() {
            assert!(p.values.iter().all(|&v| v == p.values[0]));
        }
    }

    #[test]
    fn margin_too_large_is_rejected() {
        let stack = synthetic_stack(10, 2, false);
        assert!(pattern_signals(&stack, 5).is_err());
        assert_eq!(pattern_signals(&stack, 4).unwrap().len(), 2);
    }

    #[test]
    fn config_json_shape() {
        let cfg = HyperFilterConfig::single(1.0, 10.0, 11);
        assert_eq!(
            serde_json::to_string(&cfg).unwrap(),
            r#"{"bands_per_layer":11,"layers":[{"f_lo":1.0,"f_hi":10.0}]}"#
        );
    }

    #[test]
    fn config_validation() {
        assert!(HyperFilterConfig::single(0.5, 10.0, 11).validate().is_err());
        assert!(HyperFilterConfig::single(3.0, 3.0, 11).validate().is_err());
        assert!(HyperFilterConfig::single(1.0, 10.0, 0).validate().is_err());
        let empty = HyperFilterConfig { bands_per_layer: 11, layers: vec![] };
        assert!(empty.validate().is_err());
        assert!(HyperFilterConfig::default().validate().is_ok());
    }
}
