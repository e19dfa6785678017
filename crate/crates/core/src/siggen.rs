//! Synthetic bearing-fault generation.
//!
//! Fault signals are modeled as a train of band-limited impacts riding on a
//! real healthy recording:
//!
//! ```text
//! e(t) = sum_i A_i * s(t - i*T) + beta * n(t)
//! ```
//!
//! `s` is a Hann-windowed impact (duty 5% of the impact period `T`) passed
//! through a wide band-pass filter so its energy is visible in any analysis
//! band. The amplitude series `A_i = gamma * sum_k alpha_k cos(i*T*k*2pi/Q)`
//! carries the side-band structure of a defect that rotates with period `Q`;
//! outer-race defects are unmodulated (`Q` infinite). `beta` draws a random
//! signal-to-noise ratio per sample and `gamma` jitters each impact.
//! `T` and `Q` follow from the bearing kinematics and the shaft speed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::datastore::{Dataset, SampleKind, SampleMeta};
use crate::dsp::population_std;
use crate::error::{Error, Result};
use crate::seed;

/// Default side-band amplitudes: a typical decaying pattern for a radially
/// loaded bearing (1 center line + 4 side-band pairs).
pub const DEFAULT_SIDEBAND_AMPLITUDES: [f64; 5] = [1.0, 0.76, 0.38, 0.11, 0.05];
/// Default impact duty fraction relative to the impact period.
pub const DEFAULT_DUTY_FRACTION: f64 = 0.05;
/// Default range for the uniformly drawn noise scale `beta`.
pub const DEFAULT_NOISE_SCALE_RANGE: (f64, f64) = (0.25, 2.0);
/// Default standard deviation of the unit-mean impact jitter `gamma`.
pub const DEFAULT_JITTER_SIGMA: f64 = 0.1;
/// Default pulse band-pass corners as fractions of the sample rate.
pub const DEFAULT_PULSE_BAND_FRACTIONS: (f64, f64) = (0.02, 0.45);

/// Bearing health states used throughout the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultClass {
    Healthy,
    OuterRace,
    InnerRace,
    RollingElement,
}

impl FaultClass {
    pub const ALL: [FaultClass; 4] = [
        FaultClass::Healthy,
        FaultClass::OuterRace,
        FaultClass::InnerRace,
        FaultClass::RollingElement,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FaultClass::Healthy => "healthy",
            FaultClass::OuterRace => "outer_race",
            FaultClass::InnerRace => "inner_race",
            FaultClass::RollingElement => "rolling_element",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(FaultClass::Healthy),
            "outer_race" => Ok(FaultClass::OuterRace),
            "inner_race" => Ok(FaultClass::InnerRace),
            "rolling_element" => Ok(FaultClass::RollingElement),
            other => Err(Error::parameter(format!("unknown fault class `{other}`"))),
        }
    }
}

impl std::fmt::Display for FaultClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which domain a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainTag {
    SyntheticSource,
    RealTarget,
}

impl DomainTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DomainTag::SyntheticSource => "synthetic_source",
            DomainTag::RealTarget => "real_target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synthetic_source" => Ok(DomainTag::SyntheticSource),
            "real_target" => Ok(DomainTag::RealTarget),
            other => Err(Error::parameter(format!("unknown domain tag `{other}`"))),
        }
    }
}

/// A raw vibration waveform with its acquisition context.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub shaft_speed_rpm: f64,
    pub label: Option<FaultClass>,
    pub domain: DomainTag,
}

impl Segment {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: f64,
        shaft_speed_rpm: f64,
        label: Option<FaultClass>,
        domain: DomainTag,
    ) -> Result<Self> {
        let seg = Self { samples, sample_rate_hz, shaft_speed_rpm, label, domain };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::parameter("segment has no samples"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::parameter("sample rate must be positive"));
        }
        if !(self.shaft_speed_rpm > 0.0) {
            return Err(Error::parameter("shaft speed must be positive"));
        }
        Ok(())
    }

    pub fn shaft_hz(&self) -> f64 {
        self.shaft_speed_rpm / 60.0
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// Rolling-element bearing geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingGeometry {
    /// Number of rolling elements.
    pub n_elements: u32,
    /// Rolling element diameter, mm.
    pub ball_diameter_mm: f64,
    /// Pitch diameter, mm.
    pub pitch_diameter_mm: f64,
    /// Contact angle, radians.
    pub contact_angle_rad: f64,
}

impl BearingGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_elements < 3 {
            return Err(Error::parameter("bearing needs at least 3 rolling elements"));
        }
        if !(self.ball_diameter_mm > 0.0 && self.ball_diameter_mm < self.pitch_diameter_mm) {
            return Err(Error::parameter("need 0 < ball diameter < pitch diameter"));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.contact_angle_rad) {
            return Err(Error::parameter("contact angle must be in [0, pi/2)"));
        }
        Ok(())
    }

    /// The 6205-size deep-groove ball bearing used on many 12 kHz drive-end
    /// test rigs.
    pub fn skf6205() -> Self {
        Self {
            n_elements: 9,
            ball_diameter_mm: 7.94,
            pitch_diameter_mm: 39.04,
            contact_angle_rad: 0.0,
        }
    }
}

/// The four characteristic defect repetition rates, Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectFrequencies {
    /// Ball-pass frequency, outer race.
    pub bpfo: f64,
    /// Ball-pass frequency, inner race.
    pub bpfi: f64,
    /// Ball spin frequency.
    pub bsf: f64,
    /// Fundamental train (cage) frequency.
    pub ftf: f64,
}

impl DefectFrequencies {
    pub fn for_class(&self, class: FaultClass) -> Option<f64> {
        match class {
            FaultClass::Healthy => None,
            FaultClass::OuterRace => Some(self.bpfo),
            FaultClass::InnerRace => Some(self.bpfi),
            FaultClass::RollingElement => Some(self.bsf),
        }
    }
}

/// Standard kinematic defect frequencies for a bearing at a given shaft rate.
pub fn defect_frequencies(geom: &BearingGeometry, shaft_hz: f64) -> Result<DefectFrequencies> {
    geom.validate()?;
    if !(shaft_hz > 0.0) {
        return Err(Error::parameter("shaft frequency must be positive"));
    }
    let n = geom.n_elements as f64;
    let ratio = geom.ball_diameter_mm / geom.pitch_diameter_mm;
    let rc = ratio * geom.contact_angle_rad.cos();
    Ok(DefectFrequencies {
        bpfo: 0.5 * n * shaft_hz * (1.0 - rc),
        bpfi: 0.5 * n * shaft_hz * (1.0 + rc),
        bsf: 0.5 / ratio * shaft_hz * (1.0 - rc * rc),
        ftf: 0.5 * shaft_hz * (1.0 - rc),
    })
}

/// Shared generation knobs applied to every class's [`DefectSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub sideband_amplitudes: Vec<f64>,
    pub duty_fraction: f64,
    pub noise_scale_range: (f64, f64),
    pub jitter_sigma: f64,
    /// Pulse band-pass corners as fractions of the sample rate.
    pub pulse_band_fractions: (f64, f64),
    /// Multiplier on the kinematic defect frequencies (real defects often run
    /// slightly off the analytic values due to slip). 1.0 = nominal.
    pub defect_frequency_scale: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            sideband_amplitudes: DEFAULT_SIDEBAND_AMPLITUDES.to_vec(),
            duty_fraction: DEFAULT_DUTY_FRACTION,
            noise_scale_range: DEFAULT_NOISE_SCALE_RANGE,
            jitter_sigma: DEFAULT_JITTER_SIGMA,
            pulse_band_fractions: DEFAULT_PULSE_BAND_FRACTIONS,
            defect_frequency_scale: 1.0,
        }
    }
}

/// Full parameterization of one synthetic fault.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectSpec {
    pub fault_class: FaultClass,
    /// Impact period `T`, seconds.
    pub impact_period_s: f64,
    /// Modulation period `Q`, seconds; `f64::INFINITY` for unmodulated
    /// (stationary outer-race) defects.
    pub modulation_period_s: f64,
    /// Side-band amplitudes `alpha_0..alpha_K` (center line first).
    pub sideband_amplitudes: Vec<f64>,
    /// Closed interval the noise scale `beta` is drawn from.
    pub noise_scale_range: (f64, f64),
    /// Standard deviation of the unit-mean per-impact jitter `gamma`.
    pub jitter_sigma: f64,
    /// Impact support as a fraction of `T`.
    pub duty_fraction: f64,
    /// Pulse band-pass corners as fractions of the sample rate.
    pub pulse_band_fractions: (f64, f64),
}

impl DefectSpec {
    /// Derive the spec for a class from the bearing kinematics: `T` is the
    /// inverse defect frequency; `Q` is the shaft period for inner-race
    /// defects, the cage period for rolling-element defects, and infinite for
    /// outer-race defects.
    pub fn for_class(class: FaultClass, geom: &BearingGeometry, shaft_hz: f64) -> Result<Self> {
        Self::for_class_with(class, geom, shaft_hz, &SynthParams::default())
    }

    pub fn for_class_with(
        class: FaultClass,
        geom: &BearingGeometry,
        shaft_hz: f64,
        params: &SynthParams,
    ) -> Result<Self> {
        let freqs = defect_frequencies(geom, shaft_hz)?;
        if !(params.defect_frequency_scale > 0.0) {
            return Err(Error::parameter("defect frequency scale must be positive"));
        }
        let s = params.defect_frequency_scale;
        let (impact_period_s, modulation_period_s) = match class {
            FaultClass::Healthy => (1.0 / shaft_hz, f64::INFINITY),
            FaultClass::OuterRace => (1.0 / (s * freqs.bpfo), f64::INFINITY),
            FaultClass::InnerRace => (1.0 / (s * freqs.bpfi), 1.0 / shaft_hz),
            FaultClass::RollingElement => (1.0 / (s * freqs.bsf), 1.0 / freqs.ftf),
        };
        let spec = Self {
            fault_class: class,
            impact_period_s,
            modulation_period_s,
            sideband_amplitudes: params.sideband_amplitudes.clone(),
            noise_scale_range: params.noise_scale_range,
            jitter_sigma: params.jitter_sigma,
            duty_fraction: params.duty_fraction,
            pulse_band_fractions: params.pulse_band_fractions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.impact_period_s > 0.0 && self.impact_period_s.is_finite()) {
            return Err(Error::parameter("impact period must be positive and finite"));
        }
        if !(self.modulation_period_s > 0.0) {
            return Err(Error::parameter("modulation period must be positive (or infinite)"));
        }
        if self.sideband_amplitudes.is_empty() {
            return Err(Error::parameter("need at least one side-band amplitude"));
        }
        if self.sideband_amplitudes.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::parameter("side-band amplitudes must be nonnegative"));
        }
        let (lo, hi) = self.noise_scale_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::parameter("noise scale range must satisfy 0 <= lo <= hi"));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::parameter("jitter sigma must be nonnegative"));
        }
        if !(self.duty_fraction > 0.0 && self.duty_fraction < 1.0) {
            return Err(Error::parameter("duty fraction must be in (0, 1)"));
        }
        let (blo, bhi) = self.pulse_band_fractions;
        if !(blo > 0.0 && blo < bhi && bhi < 0.5) {
            return Err(Error::parameter("pulse band fractions must satisfy 0 < lo < hi < 0.5"));
        }
        Ok(())
    }
}

/// Symmetric Hann window, zero at both endpoints.
pub fn hann_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos()))
        .collect()
}

/// A single band-limited impact template.
#[derive(Debug, Clone)]
pub struct ImpactPulse {
    /// Filtered waveform, including ring-in/ring-out padding.
    pub samples: Vec<f64>,
    /// Index where the raw Hann support begins.
    pub onset: usize,
    /// Pre-filter support length in samples.
    pub support: usize,
}

/// Build the impact waveform `s`: a Hann window spanning `duty * period`
/// seconds, band-pass filtered so energy near DC and Nyquist is removed.
pub fn impact_waveform(
    period_s: f64,
    duty: f64,
    sample_rate_hz: f64,
    band_hz: (f64, f64),
) -> Result<ImpactPulse> {
    if !(duty > 0.0 && duty < 1.0) {
        return Err(Error::parameter("duty must be in (0, 1)"));
    }
    if period_s * sample_rate_hz < 4.0 {
        return Err(Error::parameter(format!(
            "impact period {period_s} s spans fewer than 4 samples at {sample_rate_hz} Hz"
        )));
    }
    let support = (duty * period_s * sample_rate_hz).round() as usize;
    if support < 2 {
        return Err(Error::parameter(
            "duty window too short to represent at this sample rate",
        ));
    }
    let filter =
        crate::dsp::BandPassFilter::butterworth(band_hz.0, band_hz.1, sample_rate_hz, crate::dsp::FILTER_ORDER)?;
    // Padding covers the filter ring-out; 16 cycles of the lower corner
    // leave the truncated tail below 1e-8 of the peak.
    let pad = support.max((16.0 * sample_rate_hz / band_hz.0).ceil() as usize);
    let mut buf = vec![0.0; support + 2 * pad];
    for (i, w) in hann_window(support).into_iter().enumerate() {
        buf[pad + i] = w;
    }
    let samples = filter.filtfilt(&buf);
    Ok(ImpactPulse { samples, onset: pad, support })
}

/// Amplitude of the `i`-th impact: `gamma * sum_k alpha_k cos(i*T*k*2pi/Q)`.
/// An infinite `Q` yields the constant amplitude `gamma * sum_k alpha_k`.
pub fn modulation_amplitude(
    impact_index: i64,
    impact_period_s: f64,
    modulation_period_s: f64,
    alphas: &[f64],
    gamma: f64,
) -> f64 {
    debug_assert!(modulation_period_s > 0.0);
    if modulation_period_s.is_infinite() {
        return gamma * alphas.iter().sum::<f64>();
    }
    let base = impact_index as f64 * impact_period_s * 2.0 * std::f64::consts::PI
        / modulation_period_s;
    let sum: f64 = alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| alpha * (base * k as f64).cos())
        .sum();
    gamma * sum
}

/// Synthesize one fault segment by injecting a modulated pulse train into a
/// healthy carrier. The carrier is normalized to unit standard deviation
/// first, so the drawn `beta` directly sets the noise-to-impact ratio.
/// Deterministic given the seed.
pub fn synthesize_fault(healthy: &Segment, spec: &DefectSpec, rng_seed: u64) -> Result<Segment> {
    healthy.validate()?;
    spec.validate()?;
    if healthy.label != Some(FaultClass::Healthy) {
        return Err(Error::parameter("carrier segment must be labeled healthy"));
    }
    let fs = healthy.sample_rate_hz;
    let n = healthy.samples.len();
    let mut rng = seed::rng(rng_seed, &[]);

    let (beta_lo, beta_hi) = spec.noise_scale_range;
    let beta = if beta_lo == beta_hi { beta_lo } else { rng.gen_range(beta_lo..=beta_hi) };

    let inv_std = 1.0 / population_std(&healthy.samples)?;
    let mut out: Vec<f64> = healthy.samples.iter().map(|&v| beta * (v * inv_std)).collect();

    if spec.fault_class != FaultClass::Healthy {
        let pulse = impact_waveform(
            spec.impact_period_s,
            spec.duty_fraction,
            fs,
            (spec.pulse_band_fractions.0 * fs, spec.pulse_band_fractions.1 * fs),
        )?;
        let phase = rng.gen_range(0.0..spec.impact_period_s);
        let jitter = if spec.jitter_sigma > 0.0 {
            Some(Normal::new(1.0, spec.jitter_sigma).map_err(|e| {
                Error::parameter(format!("invalid jitter distribution: {e}"))
            })?)
        } else {
            None
        };
        let tpl = &pulse.samples;
        let tpl_len = tpl.len() as i64;
        let period = spec.impact_period_s;
        // First impact whose template can still overlap the segment.
        let i_min =
            (((-(tpl_len as f64) / fs) - phase) / period).floor() as i64 - 1;
        let mut i = i_min;
        loop {
            let onset_sample = ((phase + i as f64 * period) * fs).round() as i64;
            let start = onset_sample - pulse.onset as i64;
            if start >= n as i64 {
                break;
            }
            // Draw jitter for every index in range so the stream is
            // independent of which templates happen to overlap.
            let gamma = match &jitter {
                Some(dist) => dist.sample(&mut rng).max(0.0),
                None => 1.0,
            };
            if start + tpl_len > 0 {
                let amp = modulation_amplitude(
                    i,
                    period,
                    spec.modulation_period_s,
                    &spec.sideband_amplitudes,
                    gamma,
                );
                let j0 = (-start).max(0) as usize;
                let j1 = (tpl_len.min(n as i64 - start)) as usize;
                let base = start + j0 as i64;
                for j in j0..j1 {
                    out[(base + (j - j0) as i64) as usize] += amp * tpl[j];
                }
            }
            i += 1;
        }
    }

    Ok(Segment {
        samples: out,
        sample_rate_hz: fs,
        shaft_speed_rpm: healthy.shaft_speed_rpm,
        label: Some(spec.fault_class),
        domain: DomainTag::SyntheticSource,
    })
}

/// Generate a balanced labeled dataset: `per_class` synthetic samples for
/// every requested class, drawing healthy carriers from the pool (with
/// replacement when the pool is smaller than `per_class`). Each sample
/// records its derived sub-seed and carrier id in the manifest.
pub fn generate_source_dataset(
    healthy_pool: &[Segment],
    geom: &BearingGeometry,
    classes: &[FaultClass],
    per_class: usize,
    rng_seed: u64,
    params: &SynthParams,
) -> Result<Dataset> {
    generate_dataset(
        healthy_pool,
        geom,
        classes,
        per_class,
        rng_seed,
        params,
        DomainTag::SyntheticSource,
    )
}

/// [`generate_source_dataset`] with an explicit domain tag; used to build
/// synthetic stand-in target datasets for end-to-end checks.
pub fn generate_dataset(
    healthy_pool: &[Segment],
    geom: &BearingGeometry,
    classes: &[FaultClass],
    per_class: usize,
    rng_seed: u64,
    params: &SynthParams,
    domain: DomainTag,
) -> Result<Dataset> {
    if healthy_pool.is_empty() {
        return Err(Error::parameter("healthy carrier pool is empty"));
    }
    if per_class == 0 {
        return Err(Error::parameter("per_class must be at least 1"));
    }
    if classes.is_empty() {
        return Err(Error::parameter("no classes requested"));
    }
    geom.validate()?;

    let mut ds = Dataset::empty(domain, classes.to_vec(), SampleKind::Segments);
    for (ci, &class) in classes.iter().enumerate() {
        let mut carrier_rng = seed::rng(rng_seed, &[0xCA, ci as u64]);
        let carriers: Vec<usize> = if healthy_pool.len() >= per_class {
            let mut idx: Vec<usize> = (0..healthy_pool.len()).collect();
            idx.shuffle(&mut carrier_rng);
            idx.truncate(per_class);
            idx
        } else {
            (0..per_class).map(|_| carrier_rng.gen_range(0..healthy_pool.len())).collect()
        };
        for (j, &carrier_idx) in carriers.iter().enumerate() {
            let carrier = &healthy_pool[carrier_idx];
            let sample_seed = seed::mix(rng_seed, &[0x5A, ci as u64, j as u64]);
            let spec = DefectSpec::for_class_with(class, geom, carrier.shaft_hz(), params)?;
            let mut seg = synthesize_fault(carrier, &spec, sample_seed)?;
            seg.domain = domain;
            let meta = SampleMeta {
                id: ds.len() as u64,
                label: Some(class),
                shaft_speed_rpm: seg.shaft_speed_rpm,
                sample_rate_hz: seg.sample_rate_hz,
                seed: sample_seed,
                carrier_id: Some(carrier_idx as u64),
            };
            ds.push(meta, seg.samples)?;
        }
    }
    Ok(ds)
}

/// Synthesize a plausible healthy recording (broadband noise plus shaft
/// harmonics and a high-frequency machinery tone). Used for demos, smoke
/// tests and the synthetic-to-synthetic end-to-end checks.
pub fn simulate_healthy_recording(
    sample_rate_hz: f64,
    shaft_speed_rpm: f64,
    duration_s: f64,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    if !(sample_rate_hz > 0.0 && shaft_speed_rpm > 0.0 && duration_s > 0.0) {
        return Err(Error::parameter("sample rate, shaft speed and duration must be positive"));
    }
    let n = (sample_rate_hz * duration_s).round() as usize;
    if n == 0 {
        return Err(Error::parameter("duration too short for one sample"));
    }
    let mut rng = seed::rng(rng_seed, &[0x4E]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let fr = shaft_speed_rpm / 60.0;
    // Healthy machinery is dominated by low-frequency content (shaft
    // harmonics, run-out) with only a modest broadband floor, so the bulk of
    // the energy sits below the usual 500 Hz analysis-band edge.
    let tones: [(f64, f64); 4] = [
        (fr, 0.9),
        (2.0 * fr, 0.4),
        (3.17 * fr, 0.25),
        (0.23 * sample_rate_hz, 0.06),
    ];
    let phases: Vec<f64> =
        (0..tones.len()).map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI)).collect();
    // Two cascaded one-pole low-passes around 150 Hz shape the dominant
    // rumble, leaving little broadband energy in the analysis band.
    let a = (-2.0 * std::f64::consts::PI * 150.0 / sample_rate_hz).exp();
    let (mut r1, mut r2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sample_rate_hz;
        r1 = a * r1 + (1.0 - a) * normal.sample(&mut rng);
        r2 = a * r2 + (1.0 - a) * r1;
        let mut v = 30.0 * r2 + 0.08 * normal.sample(&mut rng);
        for ((freq, amp), phase) in tones.iter().zip(&phases) {
            v += amp * (2.0 * std::f64::consts::PI * freq * t + phase).sin();
        }
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;

    const FS: f64 = 12_000.0;
    const SHAFT_HZ: f64 = 29.95;

    fn geometry() -> BearingGeometry {
        BearingGeometry::skf6205()
    }

    fn healthy_segment(seed: u64, n: usize) -> Segment {
        let raw = simulate_healthy_recording(FS, SHAFT_HZ * 60.0, n as f64 / FS, seed).unwrap();
        Segment::new(raw, FS, SHAFT_HZ * 60.0, Some(FaultClass::Healthy), DomainTag::RealTarget)
            .unwrap()
    }

    #[test]
    fn defect_frequencies_limit_case() {
        // d/D -> 0 collapses BPFO and BPFI to (n/2) * f_r.
        let geom = BearingGeometry {
            n_elements: 8,
            ball_diameter_mm: 1e-9,
            pitch_diameter_mm: 40.0,
            contact_angle_rad: 0.0,
        };
        let f = defect_frequencies(&geom, 10.0).unwrap();
        assert!((f.bpfo - 40.0).abs() < 1e-6);
        assert!((f.bpfi - 40.0).abs() < 1e-6);
    }

    #[test]
    fn defect_frequencies_hand_value() {
        let f = defect_frequencies(&geometry(), SHAFT_HZ).unwrap();
        assert!((f.bpfi - 162.2).abs() < 0.1, "bpfi = {}", f.bpfi);
        assert!(f.bpfi > f.bpfo);
        assert!(f.bpfo > 0.0 && f.bsf > 0.0 && f.ftf > 0.0);
        // BPFO + BPFI = n * f_r.
        assert!((f.bpfo + f.bpfi - 9.0 * SHAFT_HZ).abs() < 1e-9);
    }

    #[test]
    fn defect_frequencies_rejects_bad_input() {
        assert!(defect_frequencies(&geometry(), 0.0).is_err());
        let bad = BearingGeometry { ball_diameter_mm: 50.0, ..geometry() };
        assert!(defect_frequencies(&bad, 10.0).is_err());
    }

    #[test]
    fn hann_window_shape() {
        let w = hann_window(6);
        assert_eq!(w.len(), 6);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[5], 0.0);
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        assert!((w[2] - max).abs() < 1e-12 && (w[3] - max).abs() < 1e-12, "max at center");
    }

    #[test]
    fn impact_waveform_support_and_dc() {
        let pulse = impact_waveform(0.01, 0.05, FS, (0.02 * FS, 0.45 * FS)).unwrap();
        assert_eq!(pulse.support, 6);
        let peak = pulse.samples.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
        let mean = pulse.samples.iter().sum::<f64>() / pulse.samples.len() as f64;
        assert!(mean.abs() < 1e-6 * peak, "band-pass must remove DC");
    }

    #[test]
    fn impact_waveform_spectrum_edges() {
        let pulse = impact_waveform(0.01, 0.05, FS, (0.02 * FS, 0.45 * FS)).unwrap();
        let spec = dsp::magnitude_spectrum(&pulse.samples);
        let peak = spec.iter().cloned().fold(0.0_f64, f64::max);
        assert!(spec[spec.len() - 1] < 0.01 * peak, "Nyquist content above 1%");
        assert!(spec[0] < 0.01 * peak, "DC content above 1%");
    }

    #[test]
    fn impact_waveform_rejects_short_period() {
        assert!(impact_waveform(1e-4, 0.05, FS, (0.02 * FS, 0.45 * FS)).is_err());
    }

    #[test]
    fn modulation_amplitude_values() {
        let alphas = DEFAULT_SIDEBAND_AMPLITUDES;
        let a0 = modulation_amplitude(0, 0.01, 0.05, &alphas, 1.0);
        assert!((a0 - 2.30).abs() < 1e-12, "sum of alphas at i=0: {a0}");
        assert_eq!(modulation_amplitude(7, 0.01, 0.05, &[1.0], 1.0), 1.0);
        let a3 = modulation_amplitude(3, 0.005, 0.03, &[1.0, 0.5], 1.0);
        assert!((a3 - 0.5).abs() < 1e-12, "1 + 0.5*cos(pi) = 0.5, got {a3}");
        // Infinite Q: constant amplitude, linear in gamma.
        let inf = modulation_amplitude(11, 0.01, f64::INFINITY, &alphas, 2.0);
        assert!((inf - 4.60).abs() < 1e-12);
    }

    #[test]
    fn synthesize_healthy_is_scaled_carrier() {
        let healthy = healthy_segment(1, 4096);
        let mut spec = DefectSpec::for_class(FaultClass::Healthy, &geometry(), SHAFT_HZ).unwrap();
        spec.noise_scale_range = (0.5, 0.5);
        let out = synthesize_fault(&healthy, &spec, 99).unwrap();
        assert_eq!(out.label, Some(FaultClass::Healthy));
        assert_eq!(out.domain, DomainTag::SyntheticSource);
        let normalized = dsp::normalize_std(&healthy).unwrap();
        for (a, b) in out.samples.iter().zip(&normalized.samples) {
            assert_eq!(*a, 0.5 * *b);
        }
    }

    #[test]
    fn synthesize_is_deterministic() {
        let healthy = healthy_segment(2, 4096);
        let spec = DefectSpec::for_class(FaultClass::InnerRace, &geometry(), SHAFT_HZ).unwrap();
        let a = synthesize_fault(&healthy, &spec, 7).unwrap();
        let b = synthesize_fault(&healthy, &spec, 7).unwrap();
        assert_eq!(a.samples, b.samples, "same seed must be bit-identical");
        let c = synthesize_fault(&healthy, &spec, 8).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn synthesize_rejects_unlabeled_carrier() {
        let mut healthy = healthy_segment(3, 4096);
        healthy.label = None;
        let spec = DefectSpec::for_class(FaultClass::OuterRace, &geometry(), SHAFT_HZ).unwrap();
        assert!(synthesize_fault(&healthy, &spec, 1).is_err());
    }

    #[test]
    fn pulse_train_is_linear_in_amplitude_scale() {
        let healthy = healthy_segment(4, 4096);
        let mut spec = DefectSpec::for_class(FaultClass::OuterRace, &geometry(), SHAFT_HZ).unwrap();
        spec.noise_scale_range = (0.0, 0.0);
        let base = synthesize_fault(&healthy, &spec, 5).unwrap();
        let mut doubled_spec = spec.clone();
        for a in &mut doubled_spec.sideband_amplitudes {
            *a *= 2.0;
        }
        let doubled = synthesize_fault(&healthy, &doubled_spec, 5).unwrap();
        for (a, b) in base.samples.iter().zip(&doubled.samples) {
            assert_eq!(*b, 2.0 * *a, "doubling alphas must double the pulse train exactly");
        }
    }

    #[test]
    fn pulse_train_period_shows_in_autocorrelation() {
        let healthy = healthy_segment(5, 8192);
        let mut spec = DefectSpec::for_class(FaultClass::OuterRace, &geometry(), SHAFT_HZ).unwrap();
        spec.noise_scale_range = (0.0, 0.0);
        spec.jitter_sigma = 0.0;
        let seg = synthesize_fault(&healthy, &spec, 6).unwrap();
        let expected_lag = (spec.impact_period_s * FS).round() as usize;
        let corr = |lag: usize| -> f64 {
            seg.samples[..seg.samples.len() - lag]
                .iter()
                .zip(&seg.samples[lag..])
                .map(|(a, b)| a * b)
                .sum()
        };
        let lo = expected_lag / 2;
        let hi = expected_lag * 3 / 2;
        let best = (lo..=hi).max_by(|&a, &b| corr(a).partial_cmp(&corr(b)).unwrap()).unwrap();
        assert!(
            (best as i64 - expected_lag as i64).abs() <= 1,
            "autocorrelation peak at lag {best}, expected {expected_lag}"
        );
    }

    #[test]
    fn modulation_sequence_has_clean_sidebands() {
        // Q = 8T so the modulation sits exactly on FFT bins of a 512-long
        // window: energy at k*64 for k = 0..=4, at least 60 dB down elsewhere.
        let t = 0.005;
        let q = 8.0 * t;
        let n = 512usize;
        let seq: Vec<f64> = (0..n as i64)
            .map(|i| modulation_amplitude(i, t, q, &DEFAULT_SIDEBAND_AMPLITUDES, 1.0))
            .collect();
        let spec = dsp::magnitude_spectrum(&seq);
        let peak = spec.iter().cloned().fold(0.0_f64, f64::max);
        let allowed: Vec<usize> = (0..=4).map(|k| k * 64).collect();
        for (bin, &mag) in spec.iter().enumerate() {
            if allowed.contains(&bin) {
                continue;
            }
            assert!(
                mag < peak * 1e-3,
                "bin {bin} has magnitude {mag:.3e} (peak {peak:.3e})"
            );
        }
        for &bin in &allowed[1..] {
            assert!(spec[bin] > peak * 1e-3, "expected side-band line at bin {bin}");
        }
    }

    #[test]
    fn source_dataset_is_balanced_and_deterministic() {
        let pool: Vec<Segment> = (0..10).map(|i| healthy_segment(100 + i, 4096)).collect();
        let classes = FaultClass::ALL;
        let ds = generate_source_dataset(&pool, &geometry(), &classes, 5, 42, &SynthParams::default())
            .unwrap();
        assert_eq!(ds.len(), 20);
        for class in classes {
            assert_eq!(ds.class_count(class), 5, "class {class} not balanced");
        }
        let ds2 =
            generate_source_dataset(&pool, &geometry(), &classes, 5, 42, &SynthParams::default())
                .unwrap();
        assert_eq!(ds.data, ds2.data, "same seed must reproduce the dataset bit-identically");
    }

    #[test]
    fn source_dataset_reuses_carriers_when_pool_is_small() {
        let pool: Vec<Segment> = (0..6).map(|i| healthy_segment(200 + i, 4096)).collect();
        let ds = generate_source_dataset(
            &pool,
            &geometry(),
            &[FaultClass::OuterRace],
            12,
            7,
            &SynthParams::default(),
        )
        .unwrap();
        let carriers: Vec<u64> = ds.meta.iter().map(|m| m.carrier_id.unwrap()).collect();
        assert_eq!(carriers.len(), 12);
        assert!(carriers.iter().all(|&c| c < 6));
        // 12 draws over 6 carriers: mean reuse is exactly 2.
        let unique: std::collections::HashSet<u64> = carriers.iter().cloned().collect();
        assert!(unique.len() > 1, "carrier draws should vary");
    }

    #[test]
    fn source_dataset_rejects_empty_pool() {
        let ds = generate_source_dataset(
            &[],
            &geometry(),
            &[FaultClass::Healthy],
            1,
            1,
            &SynthParams::default(),
        );
        assert!(ds.is_err());
    }
}
