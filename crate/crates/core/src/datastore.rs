//! Dataset containers and sampling protocols.
//!
//! A dataset is a list of equal-role rows (raw segments or preprocessed
//! spectra) plus per-sample metadata. On disk it is a pair of files:
//! `<name>.manifest` (JSON) and `<name>.f32` (magic `SEGD`, u32 version,
//! little-endian f32 samples). Round-trips are bit-exact.
//!
//! Sampling protocols: random segmentation of long recordings, leakage-free
//! healthy-pool splitting, and per-class imbalance subsampling that produces
//! a label-stripped training copy plus a sealed labeled evaluation copy.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{EnvelopeSpectrum, ORDER_POINTS};
use crate::error::{Error, Result};
use crate::seed;
use crate::siggen::{DomainTag, FaultClass, Segment};

pub const BLOB_MAGIC: &[u8; 4] = b"SEGD";
pub const FORMAT_VERSION: u32 = 1;

/// What one data row holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    /// Raw time-domain waveforms.
    Segments,
    /// Preprocessed order-normalized envelope spectra (length 1000).
    Spectra,
}

impl SampleKind {
    fn as_str(&self) -> &'static str {
        match self {
            SampleKind::Segments => "segments",
            SampleKind::Spectra => "spectra",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "segments" => Ok(SampleKind::Segments),
            "spectra" => Ok(SampleKind::Spectra),
            other => Err(Error::format(format!("unknown sample kind `{other}`"))),
        }
    }
}

/// Per-sample metadata carried in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub id: u64,
    pub label: Option<FaultClass>,
    pub shaft_speed_rpm: f64,
    pub sample_rate_hz: f64,
    /// Seed of the random sub-stream that produced this sample.
    pub seed: u64,
    /// Index of the healthy carrier used for synthesis, if any.
    pub carrier_id: Option<u64>,
}

/// An in-memory dataset: metadata plus one `Vec<f64>` row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub domain: DomainTag,
    pub classes: Vec<FaultClass>,
    pub kind: SampleKind,
    pub meta: Vec<SampleMeta>,
    pub data: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn empty(domain: DomainTag, classes: Vec<FaultClass>, kind: SampleKind) -> Self {
        Self { domain, classes, kind, meta: Vec::new(), data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, meta: SampleMeta, row: Vec<f64>) -> Result<()> {
        if row.is_empty() {
            return Err(Error::parameter("empty sample row"));
        }
        if let Some(label) = meta.label {
            if !self.classes.contains(&label) {
                return Err(Error::parameter(format!(
                    "label {label} not in dataset class list"
                )));
            }
        }
        self.meta.push(meta);
        self.data.push(row);
        Ok(())
    }

    pub fn class_count(&self, class: FaultClass) -> usize {
        self.meta.iter().filter(|m| m.label == Some(class)).count()
    }

    pub fn class_histogram(&self) -> Vec<(FaultClass, usize)> {
        self.classes.iter().map(|&c| (c, self.class_count(c))).collect()
    }

    /// View row `i` as a [`Segment`]; only valid for segment datasets.
    pub fn segment(&self, i: usize) -> Result<Segment> {
        if self.kind != SampleKind::Segments {
            return Err(Error::State("dataset does not hold raw segments".into()));
        }
        let m = &self.meta[i];
        Segment::new(self.data[i].clone(), m.sample_rate_hz, m.shaft_speed_rpm, m.label, self.domain)
    }

    /// Preprocess every segment row into an envelope spectrum dataset.
    pub fn preprocess(&self) -> Result<Dataset> {
        if self.kind != SampleKind::Segments {
            return Err(Error::State("dataset is already preprocessed".into()));
        }
        let mut out = Dataset::empty(self.domain, self.classes.clone(), SampleKind::Spectra);
        for i in 0..self.len() {
            let spectrum = crate::dsp::preprocess(&self.segment(i)?)?;
            out.push(self.meta[i].clone(), spectrum.values)?;
        }
        Ok(out)
    }

    /// View spectra rows as [`EnvelopeSpectrum`] values.
    pub fn spectra(&self) -> Result<Vec<EnvelopeSpectrum>> {
        if self.kind != SampleKind::Spectra {
            return Err(Error::State("dataset holds raw segments, preprocess first".into()));
        }
        self.data
            .iter()
            .zip(&self.meta)
            .map(|(row, m)| {
                if row.len() != ORDER_POINTS {
                    return Err(Error::format(format!(
                        "spectrum row has {} points, expected {ORDER_POINTS}",
                        row.len()
                    )));
                }
                Ok(EnvelopeSpectrum { values: row.clone(), label: m.label, domain: self.domain })
            })
            .collect()
    }

    /// Strip labels (training copy); metadata ids are preserved.
    pub fn without_labels(&self) -> Dataset {
        let mut out = self.clone();
        for m in &mut out.meta {
            m.label = None;
        }
        out
    }

    // -- container I/O -----------------------------------------------------

    pub fn manifest_path(base: &Path) -> PathBuf {
        base.with_extension("manifest")
    }

    pub fn blob_path(base: &Path) -> PathBuf {
        base.with_extension("f32")
    }

    /// Write `<base>.manifest` and `<base>.f32`.
    pub fn save(&self, base: &Path) -> Result<()> {
        if let Some(dir) = base.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut blob: Vec<u8> = Vec::new();
        blob.extend_from_slice(BLOB_MAGIC);
        blob.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let mut manifest_samples = Vec::with_capacity(self.len());
        let mut offset = 0u64;
        for (m, row) in self.meta.iter().zip(&self.data) {
            for &v in row {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
            manifest_samples.push(ManifestSample {
                id: m.id,
                label: m.label.map(|c| c.as_str().to_string()),
                shaft_speed_rpm: m.shaft_speed_rpm,
                sample_rate_hz: m.sample_rate_hz,
                offset,
                len: row.len() as u64,
                seed: m.seed,
                carrier_id: m.carrier_id,
            });
            offset += row.len() as u64;
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.as_str().to_string(),
            domain: self.domain.as_str().to_string(),
            classes: self.classes.iter().map(|c| c.as_str().to_string()).collect(),
            samples: manifest_samples,
        };
        let mut mf = std::fs::File::create(Dataset::manifest_path(base))?;
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::format(format!("manifest serialization: {e}")))?;
        mf.write_all(json.as_bytes())?;
        std::fs::File::create(Dataset::blob_path(base))?.write_all(&blob)?;
        Ok(())
    }

    /// Load a container pair written by [`Dataset::save`].
    pub fn load(base: &Path) -> Result<Dataset> {
        let manifest_text = std::fs::read_to_string(Dataset::manifest_path(base))?;
        let manifest: Manifest = serde_json::from_str(&manifest_text)
            .map_err(|e| Error::format(format!("manifest parse: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        let mut blob = Vec::new();
        std::fs::File::open(Dataset::blob_path(base))?.read_to_end(&mut blob)?;
        if blob.len() < 8 || &blob[0..4] != BLOB_MAGIC {
            return Err(Error::format("bad blob magic"));
        }
        let version = u32::from_le_bytes(blob[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported blob version {version}")));
        }
        let payload = &blob[8..];
        if payload.len() % 4 != 0 {
            return Err(Error::format("blob payload is not a whole number of f32s"));
        }
        let total_floats = (payload.len() / 4) as u64;

        let classes = manifest
            .classes
            .iter()
            .map(|s| FaultClass::parse(s))
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Dataset::empty(
            DomainTag::parse(&manifest.domain)?,
            classes,
            SampleKind::parse(&manifest.kind)?,
        );
        let mut cursor = 0u64;
        for s in &manifest.samples {
            if s.offset != cursor {
                return Err(Error::format(format!(
                    "sample {} offset {} overlaps or leaves a gap (expected {})",
                    s.id, s.offset, cursor
                )));
            }
            let end = s.offset.checked_add(s.len).ok_or_else(|| Error::format("offset overflow"))?;
            if end > total_floats {
                return Err(Error::format(format!(
                    "sample {} extends past blob end ({} > {})",
                    s.id, end, total_floats
                )));
            }
            cursor = end;
            let mut row = Vec::with_capacity(s.len as usize);
            for i in s.offset..end {
                let b = &payload[(i as usize) * 4..(i as usize) * 4 + 4];
                row.push(f32::from_le_bytes(b.try_into().unwrap()) as f64);
            }
            let label = match &s.label {
                Some(name) => Some(FaultClass::parse(name)?),
                None => None,
            };
            ds.push(
                SampleMeta {
                    id: s.id,
                    label,
                    shaft_speed_rpm: s.shaft_speed_rpm,
                    sample_rate_hz: s.sample_rate_hz,
                    seed: s.seed,
                    carrier_id: s.carrier_id,
                },
                row,
            )?;
        }
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    domain: String,
    classes: Vec<String>,
    samples: Vec<ManifestSample>,
}

#[derive(Serialize, Deserialize)]
struct ManifestSample {
    id: u64,
    label: Option<String>,
    shaft_speed_rpm: f64,
    sample_rate_hz: f64,
    offset: u64,
    len: u64,
    seed: u64,
    carrier_id: Option<u64>,
}

/// Read a headerless little-endian f32 recording (the documented offline
/// conversion target for third-party datasets).
pub fn load_raw_f32(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(format!(
            "{} is not a whole number of f32s",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect())
}

/// Write a headerless little-endian f32 recording.
pub fn save_raw_f32(path: &Path, samples: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut out = Vec::with_capacity(samples.len() * 4);
    for &v in samples {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Sampling protocols
// ---------------------------------------------------------------------------

/// Cut `count` segments of `seg_len` samples from a long recording at
/// uniformly random start offsets (overlap allowed, replacement implicit).
pub fn segment_recording(
    raw: &[f64],
    sample_rate_hz: f64,
    shaft_speed_rpm: f64,
    label: Option<FaultClass>,
    domain: DomainTag,
    seg_len: usize,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<Segment>> {
    if raw.len() < seg_len {
        return Err(Error::parameter(format!(
            "recording has {} samples, segment needs {seg_len}",
            raw.len()
        )));
    }
    if seg_len == 0 || count == 0 {
        return Err(Error::parameter("segment length and count must be positive"));
    }
    let mut rng = seed::rng(rng_seed, &[0x5E]);
    let max_start = raw.len() - seg_len;
    (0..count)
        .map(|_| {
            let start = if max_start == 0 { 0 } else { rng.gen_range(0..=max_start) };
            Segment::new(
                raw[start..start + seg_len].to_vec(),
                sample_rate_hz,
                shaft_speed_rpm,
                label,
                domain,
            )
        })
        .collect()
}

/// Disjoint halves of a healthy pool, each up-sampled (with replacement)
/// back to the input count. `source` feeds the synthesizer as carriers;
/// `target` stays in the real domain. The id lists index into the input and
/// never intersect across the two pools.
#[derive(Debug, Clone)]
pub struct HealthySplit {
    pub source: Vec<Segment>,
    pub target: Vec<Segment>,
    pub source_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
}

pub fn split_healthy(healthy: &[Segment], rng_seed: u64) -> Result<HealthySplit> {
    if healthy.len() < 2 {
        return Err(Error::parameter("need at least 2 healthy segments to split"));
    }
    let nominal = healthy.len();
    let mut ids: Vec<usize> = (0..nominal).collect();
    let mut rng = seed::rng(rng_seed, &[0x51]);
    ids.shuffle(&mut rng);
    let cut = nominal.div_ceil(2);
    let (src_base, tgt_base) = ids.split_at(cut);

    let upsample = |base: &[usize], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
        let mut out = base.to_vec();
        while out.len() < nominal {
            out.push(base[rng.gen_range(0..base.len())]);
        }
        out
    };
    let source_ids = upsample(src_base, &mut rng);
    let target_ids = upsample(tgt_base, &mut rng);
    let gather = |ids: &[usize]| ids.iter().map(|&i| healthy[i].clone()).collect();
    Ok(HealthySplit {
        source: gather(&source_ids),
        target: gather(&target_ids),
        source_ids,
        target_ids,
    })
}

/// Per-class keep fractions in (0, 1]; classes not listed keep everything.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceSpec {
    fractions: Vec<(FaultClass, f64)>,
}

impl ImbalanceSpec {
    pub fn new(fractions: Vec<(FaultClass, f64)>) -> Result<Self> {
        for &(class, f) in &fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::parameter(format!(
                    "keep fraction for {class} must be in (0, 1], got {f}"
                )));
            }
        }
        Ok(Self { fractions })
    }

    pub fn balanced() -> Self {
        Self { fractions: Vec::new() }
    }

    pub fn fraction_for(&self, class: FaultClass) -> f64 {
        self.fractions
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, f)| *f)
            .unwrap_or(1.0)
    }

    pub fn is_balanced(&self) -> bool {
        FaultClass::ALL.iter().all(|&c| self.fraction_for(c) == 1.0)
    }
}

/// The two views of an imbalanced dataset: an unlabeled training copy and a
/// sealed evaluation copy with labels. Both reference identical waveforms.
#[derive(Debug, Clone)]
pub struct ImbalancedViews {
    pub train: Dataset,
    pub eval: Dataset,
}

/// Keep `round(fraction * N_class)` samples per class (uniformly at random),
/// then split label visibility into training/evaluation copies.
pub fn subsample_imbalanced(
    ds: &Dataset,
    spec: &ImbalanceSpec,
    rng_seed: u64,
) -> Result<ImbalancedViews> {
    let mut keep: Vec<usize> = Vec::new();
    for (ci, &class) in ds.classes.iter().enumerate() {
        let ids: Vec<usize> = (0..ds.len()).filter(|&i| ds.meta[i].label == Some(class)).collect();
        if ids.is_empty() {
            return Err(Error::parameter(format!("dataset has no samples of class {class}")));
        }
        let fraction = spec.fraction_for(class);
        let n_keep = (fraction * ids.len() as f64).round() as usize;
        if n_keep == 0 {
            return Err(Error::parameter(format!(
                "fraction {fraction} of {} {class} samples keeps none",
                ids.len()
            )));
        }
        let mut shuffled = ids;
        shuffled.shuffle(&mut seed::rng(rng_seed, &[0x1B, ci as u64]));
        shuffled.truncate(n_keep);
        keep.extend(shuffled);
    }
    keep.sort_unstable();

    let mut eval = Dataset::empty(ds.domain, ds.classes.clone(), ds.kind);
    for &i in &keep {
        eval.push(ds.meta[i].clone(), ds.data[i].clone())?;
    }
    let train = eval.without_labels();
    Ok(ImbalancedViews { train, eval })
}
