//! Waveform preprocessing: unit-std normalization, zero-phase band-pass
//! filtering, full-wave rectified envelope spectra and speed-order
//! normalization.
//!
//! The model input is produced by [`preprocess`]: normalize to unit standard
//! deviation, band-pass 500-4000 Hz, full-wave rectify, take one-sided FFT
//! magnitudes and linearly interpolate onto 1000 points spanning 0-30 shaft
//! orders. Every step is deterministic.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::siggen::{DomainTag, FaultClass, Segment};

/// Number of order-axis points in a model input vector.
pub const ORDER_POINTS: usize = 1000;
/// Upper end of the order axis (the grid spans `[0, MAX_ORDER]` inclusive).
pub const MAX_ORDER: f64 = 30.0;
/// Standard analysis band for bearing envelope diagnostics, Hz.
pub const ANALYSIS_BAND_HZ: (f64, f64) = (500.0, 4000.0);
/// Butterworth prototype order used for all band-pass filters (sections = order/2).
///
/// Applied forward-backward, this comfortably clears 40 dB of stop-band
/// attenuation one octave outside the pass-band.
pub const FILTER_ORDER: usize = 8;

/// A speed-order-normalized envelope spectrum: the model input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSpectrum {
    /// Magnitudes on the uniform order grid, length [`ORDER_POINTS`].
    pub values: Vec<f64>,
    /// Class label carried through from the source segment, if any.
    pub label: Option<FaultClass>,
    pub domain: DomainTag,
}

impl EnvelopeSpectrum {
    /// Order value of grid index `i` (index 999 maps to order 30).
    pub fn order_at(i: usize) -> f64 {
        MAX_ORDER * i as f64 / (ORDER_POINTS - 1) as f64
    }

    /// Nearest grid index for an order value.
    pub fn index_of(order: f64) -> usize {
        let i = (order / MAX_ORDER * (ORDER_POINTS - 1) as f64).round();
        (i.max(0.0) as usize).min(ORDER_POINTS - 1)
    }
}

// ---------------------------------------------------------------------------
// FFT (radix-2, in-place)
// ---------------------------------------------------------------------------

/// In-place radix-2 decimation-in-time FFT; `buf.len()` must be a power of two.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "FFT length must be a power of two");
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j ^= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let angle = sign * 2.0 * std::f64::consts::PI / len as f64;
        let wn = Complex64::from_polar(1.0, angle);
        let mut start = 0;
        while start < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..half {
                let u = buf[start + k];
                let t = w * buf[start + k + half];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
                w *= wn;
            }
            start += len;
        }
        len <<= 1;
    }
    if inverse {
        let inv = 1.0 / n as f64;
        for x in buf.iter_mut() {
            *x *= inv;
        }
    }
}

/// One-sided magnitude spectrum of a real signal, zero-padded to the next
/// power of two and scaled by 1/N. Output length is N/2 + 1.
pub fn magnitude_spectrum(signal: &[f64]) -> Vec<f64> {
    let n = signal.len().next_power_of_two().max(2);
    let mut buf: Vec<Complex64> = signal
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft_in_place(&mut buf, false);
    buf[..n / 2 + 1].iter().map(|c| c.norm() / n as f64).collect()
}

// ---------------------------------------------------------------------------
// Zero-phase Butterworth band-pass
// ---------------------------------------------------------------------------

/// One second-order IIR section, direct form II transposed.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn run(&self, x: &mut [f64]) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for v in x.iter_mut() {
            let xin = *v;
            let y = self.b0 * xin + s1;
            s1 = self.b1 * xin - self.a1 * y + s2;
            s2 = self.b2 * xin - self.a2 * y;
            *v = y;
        }
    }
}

/// Band-pass filter as a cascade of biquads designed from a Butterworth
/// low-pass prototype via the band-pass transform and the bilinear transform.
#[derive(Debug, Clone)]
pub struct BandPassFilter {
    sections: Vec<Biquad>,
    sample_rate_hz: f64,
    lo_hz: f64,
}

impl BandPassFilter {
    /// Design a Butterworth band-pass of the given (even) order.
    pub fn butterworth(lo_hz: f64, hi_hz: f64, fs: f64, order: usize) -> Result<Self> {
        if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs / 2.0) {
            return Err(Error::parameter(format!(
                "band [{lo_hz}, {hi_hz}] Hz invalid for sample rate {fs} Hz"
            )));
        }
        if order == 0 || order % 2 != 0 {
            return Err(Error::parameter("filter order must be even and > 0"));
        }
        let n = order / 2; // low-pass prototype order
        let fs2 = 2.0 * fs;
        let warp = |f: f64| fs2 * (std::f64::consts::PI * f / fs).tan();
        let w_lo = warp(lo_hz);
        let w_hi = warp(hi_hz);
        let bw = w_hi - w_lo;
        let w0_sq = w_lo * w_hi;

        // Prototype poles on the unit circle, left half plane.
        let mut bp_poles: Vec<Complex64> = Vec::with_capacity(2 * n);
        for k in 0..n {
            let theta = std::f64::consts::PI * (2.0 * k as f64 + n as f64 + 1.0) / (2.0 * n as f64);
            let p = Complex64::from_polar(1.0, theta);
            // Low-pass -> band-pass: each pole splits in two.
            let half = p * (bw / 2.0);
            let disc = (half * half - w0_sq).sqrt();
            bp_poles.push(half + disc);
            bp_poles.push(half - disc);
        }

        // Bilinear transform; pair each upper-half-plane pole with its conjugate.
        let mut sections = Vec::with_capacity(n);
        for p in &bp_poles {
            if p.im <= 0.0 {
                continue;
            }
            let z = (Complex64::new(fs2, 0.0) + p) / (Complex64::new(fs2, 0.0) - p);
            // Numerator (z-1)(z+1) = z^2 - 1: one zero from s=0, one from s=inf.
            sections.push(Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1: -2.0 * z.re,
                a2: z.norm_sqr(),
            });
        }
        if sections.len() != n {
            return Err(Error::parameter(
                "band-pass pole pairing failed (degenerate band)",
            ));
        }

        let mut filter = Self { sections, sample_rate_hz: fs, lo_hz };
        // Normalize to unit gain at the (warped) center frequency.
        let fc = (w0_sq.sqrt() / fs2).atan() * fs / std::f64::consts::PI;
        let g = filter.response_at(fc).norm();
        let per_section = g.powf(-1.0 / n as f64);
        for s in &mut filter.sections {
            s.b0 *= per_section;
            s.b2 *= per_section;
        }
        Ok(filter)
    }

    /// Complex frequency response of a single forward pass.
    pub fn response_at(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / self.sample_rate_hz;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let mut h = Complex64::new(1.0, 0.0);
        for s in &self.sections {
            h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
        }
        h
    }

    fn run_cascade(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
    }

    /// Forward-backward (zero-phase) filtering with odd-reflection padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let pad = ((6.0 * self.sample_rate_hz / self.lo_hz).ceil() as usize).min(x.len() - 1);
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        self.run_cascade(&mut ext);
        ext.reverse();
        self.run_cascade(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

// ---------------------------------------------------------------------------
// Pipeline operations
// ---------------------------------------------------------------------------

/// Scale a segment to unit (population) standard deviation. The mean is not
/// removed; the band-pass stage takes care of DC.
pub fn normalize_std(seg: &Segment) -> Result<Segment> {
    if seg.samples.len() < 2 {
        return Err(Error::parameter("normalize_std needs at least 2 samples"));
    }
    let std = population_std(&seg.samples)?;
    let mut out = seg.clone();
    let inv = 1.0 / std;
    for v in &mut out.samples {
        *v *= inv;
    }
    Ok(out)
}

/// Population standard deviation; degenerate-input error when (near-)constant.
pub fn population_std(x: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mean_sq = x.iter().map(|&v| v * v).sum::<f64>() / n;
    if var <= mean_sq * 1e-30 || var == 0.0 {
        return Err(Error::Degenerate("zero-variance signal".into()));
    }
    Ok(var.sqrt())
}

/// Zero-phase band-pass a segment between `lo_hz` and `hi_hz`.
pub fn band_pass(seg: &Segment, lo_hz: f64, hi_hz: f64) -> Result<Segment> {
    if seg.sample_rate_hz <= 2.0 * hi_hz {
        return Err(Error::parameter(format!(
            "sample rate {} Hz too low for a {} Hz band edge",
            seg.sample_rate_hz, hi_hz
        )));
    }
    let filter = BandPassFilter::butterworth(lo_hz, hi_hz, seg.sample_rate_hz, FILTER_ORDER)?;
    let mut out = seg.clone();
    out.samples = filter.filtfilt(&seg.samples);
    Ok(out)
}

/// Full-wave rectified envelope spectrum: band-pass (500-4000 Hz), absolute
/// value, one-sided FFT magnitudes. The input is expected to be unit-std.
pub fn envelope_spectrum(seg: &Segment) -> Result<Vec<f64>> {
    envelope_spectrum_in_band(seg, ANALYSIS_BAND_HZ.0, ANALYSIS_BAND_HZ.1)
}

/// [`envelope_spectrum`] with explicit band edges.
pub fn envelope_spectrum_in_band(seg: &Segment, lo_hz: f64, hi_hz: f64) -> Result<Vec<f64>> {
    let filtered = band_pass(seg, lo_hz, hi_hz)?;
    let rectified: Vec<f64> = filtered.samples.iter().map(|v| v.abs()).collect();
    Ok(magnitude_spectrum(&rectified))
}

/// Interpolate a one-sided magnitude spectrum onto [`ORDER_POINTS`] uniform
/// points spanning orders 0 to [`MAX_ORDER`], where order = frequency divided
/// by the shaft rotation rate.
pub fn order_normalize(
    spectrum: &[f64],
    sample_rate_hz: f64,
    shaft_speed_rpm: f64,
) -> Result<Vec<f64>> {
    if shaft_speed_rpm <= 0.0 {
        return Err(Error::parameter("shaft speed must be positive"));
    }
    if spectrum.len() < 2 {
        return Err(Error::parameter("spectrum too short to interpolate"));
    }
    let shaft_hz = shaft_speed_rpm / 60.0;
    // One-sided length N/2+1 came from an N-point FFT.
    let n_fft = (spectrum.len() - 1) * 2;
    let df = sample_rate_hz / n_fft as f64;
    let f_max = (spectrum.len() - 1) as f64 * df;
    if f_max < MAX_ORDER * shaft_hz {
        return Err(Error::parameter(format!(
            "spectrum reaches only {:.1} orders, need {MAX_ORDER}",
            f_max / shaft_hz
        )));
    }
    let mut out = Vec::with_capacity(ORDER_POINTS);
    for i in 0..ORDER_POINTS {
        let freq = EnvelopeSpectrum::order_at(i) * shaft_hz;
        let pos = freq / df;
        let j = pos.floor() as usize;
        let frac = pos - j as f64;
        let v = if j + 1 < spectrum.len() {
            spectrum[j] * (1.0 - frac) + spectrum[j + 1] * frac
        } else {
            spectrum[spectrum.len() - 1]
        };
        out.push(v);
    }
    Ok(out)
}

/// Full preprocessing pipeline: unit-std -> envelope spectrum -> order axis.
pub fn preprocess(seg: &Segment) -> Result<EnvelopeSpectrum> {
    let normalized = normalize_std(seg)?;
    let spectrum = envelope_spectrum(&normalized)?;
    let values = order_normalize(&spectrum, seg.sample_rate_hz, seg.shaft_speed_rpm)?;
    Ok(EnvelopeSpectrum { values, label: seg.label, domain: seg.domain })
}
