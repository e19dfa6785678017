//! End-to-end smoke test: simulate healthy recordings, segment, split,
//! synthesize both domains, preprocess, train briefly and evaluate.

use synfault::adapt::{self, Method, TrainConfig};
use synfault::datastore::{segment_recording, split_healthy, Dataset};
use synfault::dsp;
use synfault::model::{Model, ModelConfig};
use synfault::siggen::{
    generate_dataset, generate_source_dataset, simulate_healthy_recording, BearingGeometry,
    DomainTag, FaultClass, SynthParams,
};

const FS: f64 = 12_000.0;
const RPM: f64 = 1797.0;

fn healthy_segments(count: usize, seed: u64) -> Vec<synfault::Segment> {
    let raw = simulate_healthy_recording(FS, RPM, 8.0, seed).unwrap();
    segment_recording(
        &raw,
        FS,
        RPM,
        Some(FaultClass::Healthy),
        DomainTag::RealTarget,
        4096,
        count,
        seed,
    )
    .unwrap()
}

/// Target-domain generator: fewer side-bands, a different pulse band and
/// heavier jitter than the source defaults.
fn perturbed_params() -> SynthParams {
    SynthParams {
        sideband_amplitudes: vec![1.0, 0.55, 0.2],
        duty_fraction: 0.04,
        jitter_sigma: 0.15,
        pulse_band_fractions: (0.05, 0.35),
        ..SynthParams::default()
    }
}

#[test]
fn synthetic_to_synthetic_pipeline_runs() {
    let start = std::time::Instant::now();
    let geom = BearingGeometry::skf6205();
    let classes = FaultClass::ALL;
    let healthy = healthy_segments(24, 7);
    let split = split_healthy(&healthy, 7).unwrap();

    let per_class = 12;
    let source =
        generate_source_dataset(&split.source, &geom, &classes, per_class, 1, &SynthParams::default())
            .unwrap();
    let target = generate_dataset(
        &split.target,
        &geom,
        &classes,
        per_class,
        2,
        &perturbed_params(),
        DomainTag::RealTarget,
    )
    .unwrap();
    assert_eq!(source.len(), 4 * per_class);
    assert_eq!(target.len(), 4 * per_class);
    println!("generate: {:?}", start.elapsed());

    let t = std::time::Instant::now();
    let source_spectra = source.preprocess().unwrap();
    let target_spectra = target.preprocess().unwrap();
    println!("preprocess {} segments: {:?}", source.len() + target.len(), t.elapsed());

    // Containers round-trip through a temp dir.
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("source");
    source_spectra.save(&base).unwrap();
    let reloaded = Dataset::load(&base).unwrap();
    assert_eq!(reloaded.len(), source_spectra.len());

    let src = source_spectra.spectra().unwrap();
    let tgt = target_spectra.spectra().unwrap();
    let tgt_labels: Vec<FaultClass> = target_spectra.meta.iter().map(|m| m.label.unwrap()).collect();

    let cfg = TrainConfig {
        method: Method::AugmentedConditional,
        epochs: 2,
        batch_size: 16,
        seed: 3,
        eval_every: 2,
        ..TrainConfig::default()
    };
    let mut model: Model<f32> =
        Model::new(ModelConfig::new(4, cfg.method.disc_mode()), 3).unwrap();
    let t = std::time::Instant::now();
    let outcome = adapt::train(
        &mut model,
        &src,
        &tgt,
        &classes,
        Some((&tgt, &tgt_labels)),
        &cfg,
        None,
    )
    .unwrap();
    println!("train 2 epochs ({} src samples): {:?}", src.len(), t.elapsed());
    assert_eq!(outcome.records.len(), 2);
    assert!(outcome.final_eval.is_some());

    let (cm, metrics) = adapt::evaluate(&model, &tgt, &tgt_labels, &classes, 16).unwrap();
    assert_eq!(cm.total() as usize, tgt.len());
    assert!(metrics.balanced_accuracy >= 0.0 && metrics.balanced_accuracy <= 1.0);
    println!("total: {:?}", start.elapsed());
}

#[test]
fn envelope_peaks_sit_on_defect_orders() {
    // One sample per fault class; the spectrum argmax (excluding the region
    // around DC) must sit within 2% of the kinematic defect order.
    let geom = BearingGeometry::skf6205();
    let healthy = healthy_segments(3, 9);
    let shaft_hz = RPM / 60.0;
    let freqs = synfault::siggen::defect_frequencies(&geom, shaft_hz).unwrap();
    for class in [FaultClass::OuterRace, FaultClass::InnerRace, FaultClass::RollingElement] {
        let mut spec =
            synfault::siggen::DefectSpec::for_class(class, &geom, shaft_hz).unwrap();
        // Measure at the high-SNR end of the noise-scale range; heavier noise
        // flattens the harmonic weighting of the rectified pulse comb.
        spec.noise_scale_range = (0.25, 0.25);
        let seg = synfault::siggen::synthesize_fault(&healthy[0], &spec, 11).unwrap();
        let es = dsp::preprocess(&seg).unwrap();
        let expected_order = freqs.for_class(class).unwrap() / shaft_hz;
        // Skip the DC/low-order region when locating the dominant peak.
        let lo = dsp::EnvelopeSpectrum::index_of(0.5);
        let argmax = (lo..es.values.len())
            .max_by(|&a, &b| es.values[a].partial_cmp(&es.values[b]).unwrap())
            .unwrap();
        let peak_order = dsp::EnvelopeSpectrum::order_at(argmax);
        assert!(
            (peak_order - expected_order).abs() <= 0.02 * expected_order,
            "{class}: peak at order {peak_order:.3}, expected {expected_order:.3}"
        );
    }
}
