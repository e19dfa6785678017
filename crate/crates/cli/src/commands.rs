//! Subcommand implementations: generate, preprocess, train, eval, sweep.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

use synfault::adapt::{self, Method, TrainConfig};
use synfault::datastore::{
    load_raw_f32, segment_recording, split_healthy, subsample_imbalanced, Dataset, ImbalanceSpec,
    SampleKind, SampleMeta,
};
use synfault::metrics;
use synfault::model::{Model, ModelConfig};
use synfault::seed;
use synfault::siggen::{
    generate_dataset, generate_source_dataset, simulate_healthy_recording, DomainTag, FaultClass,
    Segment,
};

use crate::config::{RecordingEntry, RunConfig};

fn write_provenance(config: &RunConfig, dir: &Path, command: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("provenance.toml"), config.provenance(command)?)?;
    Ok(())
}

/// Cut `total` segments from a set of recordings, spreading the count evenly.
fn segment_pool(
    recordings: &[(Vec<f64>, f64, f64)],
    label: Option<FaultClass>,
    domain: DomainTag,
    segment_len: usize,
    total: usize,
    base_seed: u64,
) -> Result<Vec<Segment>> {
    let n = recordings.len();
    let mut out = Vec::with_capacity(total);
    for (i, (samples, fs, rpm)) in recordings.iter().enumerate() {
        let count = total / n + usize::from(i < total % n);
        if count == 0 {
            continue;
        }
        out.extend(segment_recording(
            samples,
            *fs,
            *rpm,
            label,
            domain,
            segment_len,
            count,
            seed::mix(base_seed, &[0x9E, i as u64]),
        )?);
    }
    Ok(out)
}

fn load_recordings(entries: &[RecordingEntry]) -> Result<Vec<(Vec<f64>, f64, f64)>> {
    entries
        .iter()
        .map(|e| {
            let samples = load_raw_f32(&e.path)
                .with_context(|| format!("loading {}", e.path.display()))?;
            Ok((samples, e.sample_rate_hz, e.shaft_speed_rpm))
        })
        .collect()
}

fn healthy_pool(config: &RunConfig) -> Result<Vec<Segment>> {
    let per_class = config.segmentation.per_class;
    let seg_len = config.segmentation.segment_len;
    let recordings = if !config.healthy.files.is_empty() {
        load_recordings(&config.healthy.files)?
    } else if let Some(sim) = &config.healthy.simulate {
        (0..sim.count)
            .map(|i| {
                let raw = simulate_healthy_recording(
                    sim.sample_rate_hz,
                    sim.shaft_speed_rpm,
                    sim.duration_s,
                    seed::mix(config.seed, &[0x4E, i as u64]),
                )?;
                Ok((raw, sim.sample_rate_hz, sim.shaft_speed_rpm))
            })
            .collect::<synfault::Result<Vec<_>>>()?
    } else {
        bail!("config needs [healthy] files or [healthy.simulate]");
    };
    segment_pool(
        &recordings,
        Some(FaultClass::Healthy),
        DomainTag::RealTarget,
        seg_len,
        per_class,
        seed::mix(config.seed, &[0x11]),
    )
}

pub fn generate(config: &RunConfig, command: &str) -> Result<()> {
    config.validate_paths()?;
    let classes = config.fault_classes()?;
    let geom = config.geometry();
    let per_class = config.segmentation.per_class;

    let healthy = healthy_pool(config)?;
    let split = split_healthy(&healthy, seed::mix(config.seed, &[0x22]))?;

    let source = generate_source_dataset(
        &split.source,
        &geom,
        &classes,
        per_class,
        seed::mix(config.seed, &[0x33]),
        &config.source_synth.to_params(),
    )?;

    let target = if !config.target.fault_files.is_empty() {
        let mut ds = Dataset::empty(DomainTag::RealTarget, classes.clone(), SampleKind::Segments);
        for seg in &split.target {
            let meta = SampleMeta {
                id: ds.len() as u64,
                label: Some(FaultClass::Healthy),
                shaft_speed_rpm: seg.shaft_speed_rpm,
                sample_rate_hz: seg.sample_rate_hz,
                seed: 0,
                carrier_id: None,
            };
            ds.push(meta, seg.samples.clone())?;
        }
        for &class in classes.iter().filter(|&&c| c != FaultClass::Healthy) {
            let entries: Vec<RecordingEntry> = config
                .target
                .fault_files
                .iter()
                .filter(|e| e.label.as_deref() == Some(class.as_str()))
                .cloned()
                .collect();
            if entries.is_empty() {
                bail!("no target recordings labeled `{class}`");
            }
            let recordings = load_recordings(&entries)?;
            let segments = segment_pool(
                &recordings,
                Some(class),
                DomainTag::RealTarget,
                config.segmentation.segment_len,
                per_class,
                seed::mix(config.seed, &[0x44, class.as_str().len() as u64]),
            )?;
            for seg in segments {
                let meta = SampleMeta {
                    id: ds.len() as u64,
                    label: Some(class),
                    shaft_speed_rpm: seg.shaft_speed_rpm,
                    sample_rate_hz: seg.sample_rate_hz,
                    seed: 0,
                    carrier_id: None,
                };
                ds.push(meta, seg.samples)?;
            }
        }
        ds
    } else if let Some(synth) = &config.target.synth {
        generate_dataset(
            &split.target,
            &geom,
            &classes,
            per_class,
            seed::mix(config.seed, &[0x55]),
            &synth.to_params(),
            DomainTag::RealTarget,
        )?
    } else {
        bail!("config needs [target] fault_files or [target.synth]");
    };

    std::fs::create_dir_all(&config.output)?;
    source.save(&config.output.join("source"))?;
    target.save(&config.output.join("target"))?;
    write_provenance(config, &config.output, command)?;
    println!(
        "wrote {} source and {} target samples to {}",
        source.len(),
        target.len(),
        config.output.display()
    );
    Ok(())
}

pub fn preprocess(input: &Path, output: &Path, csv: Option<&Path>) -> Result<()> {
    let ds = Dataset::load(input)?;
    let spectra = ds.preprocess()?;
    spectra.save(output)?;
    if let Some(csv_path) = csv {
        let mut f = File::create(csv_path)?;
        write!(f, "id,label")?;
        for i in 0..synfault::dsp::ORDER_POINTS {
            write!(f, ",o{:.2}", synfault::dsp::EnvelopeSpectrum::order_at(i))?;
        }
        writeln!(f)?;
        for (m, row) in spectra.meta.iter().zip(&spectra.data) {
            write!(f, "{},{}", m.id, m.label.map(|l| l.as_str()).unwrap_or(""))?;
            for v in row {
                write!(f, ",{v:.6e}")?;
            }
            writeln!(f)?;
        }
    }
    println!("preprocessed {} samples -> {}", spectra.len(), output.display());
    Ok(())
}

fn load_spectra_dataset(base: &Path) -> Result<Dataset> {
    let ds = Dataset::load(base)?;
    Ok(match ds.kind {
        SampleKind::Segments => ds.preprocess()?,
        SampleKind::Spectra => ds,
    })
}

struct PreparedData {
    classes: Vec<FaultClass>,
    source: Vec<synfault::dsp::EnvelopeSpectrum>,
    /// Unlabeled training view of the target.
    target: Vec<synfault::dsp::EnvelopeSpectrum>,
    /// Sealed labeled view of the same target rows, when labels exist.
    eval: Option<(Vec<synfault::dsp::EnvelopeSpectrum>, Vec<FaultClass>)>,
}

fn prepare(
    config: &RunConfig,
    source_base: &Path,
    target_base: &Path,
    imbalance: &ImbalanceSpec,
    subsample_seed: u64,
) -> Result<PreparedData> {
    let classes = config.fault_classes()?;
    let source_ds = load_spectra_dataset(source_base)?;
    let target_ds = load_spectra_dataset(target_base)?;
    let source = source_ds.spectra()?;

    let labeled = target_ds.meta.iter().all(|m| m.label.is_some());
    if !labeled && !imbalance.is_balanced() {
        bail!("imbalance subsampling needs a labeled target container");
    }
    let (target_view, eval) = if labeled {
        let views = subsample_imbalanced(&target_ds, imbalance, subsample_seed)?;
        let eval_spectra = views.eval.spectra()?;
        let labels: Vec<FaultClass> =
            views.eval.meta.iter().map(|m| m.label.expect("labeled")).collect();
        (views.train.spectra()?, Some((eval_spectra, labels)))
    } else {
        (target_ds.spectra()?, None)
    };
    Ok(PreparedData { classes, source, target: target_view, eval })
}

pub fn train(
    config: &RunConfig,
    source_base: &Path,
    target_base: &Path,
    command: &str,
) -> Result<()> {
    let train_cfg = config.train_config()?;
    let data = prepare(
        config,
        source_base,
        target_base,
        &config.imbalance_spec()?,
        seed::mix(config.seed, &[0x1B]),
    )?;

    std::fs::create_dir_all(&config.output)?;
    let mut log = File::create(config.output.join("train.log"))?;
    let mut model: Model<f32> = Model::new(
        ModelConfig {
            class_count: data.classes.len(),
            disc_mode: train_cfg.method.disc_mode(),
            dropout_rate: train_cfg.dropout_rate,
        },
        seed::mix(config.seed, &[0x0D]),
    )?;
    let eval_ref = data
        .eval
        .as_ref()
        .map(|(spectra, labels)| (spectra.as_slice(), labels.as_slice()));
    let outcome = adapt::train(
        &mut model,
        &data.source,
        &data.target,
        &data.classes,
        eval_ref,
        &train_cfg,
        Some(&mut log),
    )?;

    model.save(&config.output.join("model.sfck"))?;
    write_provenance(config, &config.output, command)?;

    if let Some((spectra, labels)) = &data.eval {
        let (cm, _) = adapt::evaluate(&model, spectra, labels, &data.classes, train_cfg.batch_size)?;
        let report = metrics::report(&cm)?;
        std::fs::write(config.output.join("metrics.txt"), &report)?;
        let names: Vec<String> = data.classes.iter().map(|c| c.as_str().to_string()).collect();
        std::fs::write(
            config.output.join("confusion.csv"),
            metrics::confusion_table(&cm, &names, ','),
        )?;
        print!("{report}");
    } else {
        println!("target container carries no labels; skipping evaluation");
    }
    if let Some(last) = outcome.records.last() {
        println!("{}", adapt::format_epoch_record(last));
    }
    println!("checkpoint: {}", config.output.join("model.sfck").display());
    Ok(())
}

pub fn eval(checkpoint: &Path, data_base: &Path, table: Option<&Path>) -> Result<()> {
    let model: Model<f32> = Model::load(checkpoint)?;
    let ds = load_spectra_dataset(data_base)?;
    if !ds.meta.iter().all(|m| m.label.is_some()) {
        bail!("container {} has unlabeled samples; cannot evaluate", data_base.display());
    }
    if ds.classes.len() != model.class_count() {
        bail!(
            "container has {} classes, checkpoint was trained for {}",
            ds.classes.len(),
            model.class_count()
        );
    }
    let spectra = ds.spectra()?;
    let labels: Vec<FaultClass> = ds.meta.iter().map(|m| m.label.expect("labeled")).collect();
    let (cm, _) = adapt::evaluate(&model, &spectra, &labels, &ds.classes, 128)?;
    print!("{}", metrics::report(&cm)?);
    let names: Vec<String> = ds.classes.iter().map(|c| c.as_str().to_string()).collect();
    let table_text = metrics::confusion_table(&cm, &names, ',');
    match table {
        Some(path) => std::fs::write(path, table_text)?,
        None => print!("{table_text}"),
    }
    Ok(())
}

pub struct SweepArgs {
    pub levels_percent: Vec<f64>,
    pub seeds: usize,
    pub methods: Vec<Method>,
    pub fault: FaultClass,
}

pub fn sweep(
    config: &RunConfig,
    source_base: &Path,
    target_base: &Path,
    args: &SweepArgs,
    command: &str,
) -> Result<()> {
    if args.levels_percent.is_empty() || args.methods.is_empty() || args.seeds == 0 {
        bail!("sweep needs at least one level, one method and one seed");
    }
    let train_cfg_base = config.train_config()?;
    std::fs::create_dir_all(&config.output)?;
    write_provenance(config, &config.output, command)?;

    let mut runs = File::create(config.output.join("sweep_runs.csv"))?;
    writeln!(runs, "balance_percent,method,rep,seed,balanced_accuracy")?;

    let mut grid: Vec<Vec<Option<f64>>> = Vec::new();
    let mut failures = 0usize;
    for (li, &level) in args.levels_percent.iter().enumerate() {
        let spec = ImbalanceSpec::new(vec![(args.fault, level / 100.0)])?;
        let mut row = Vec::new();
        for (mi, &method) in args.methods.iter().enumerate() {
            let mut scores = Vec::new();
            for rep in 0..args.seeds {
                let cell_seed = seed::mix(config.seed, &[0xCE, li as u64, mi as u64, rep as u64]);
                let result = run_cell(config, source_base, target_base, &train_cfg_base, method, &spec, cell_seed);
                match result {
                    Ok(score) => {
                        writeln!(runs, "{level},{method},{rep},{cell_seed},{score:.6}")?;
                        scores.push(score);
                    }
                    Err(e) => {
                        eprintln!("cell (level {level}%, {method}, rep {rep}) failed: {e:#}");
                        writeln!(runs, "{level},{method},{rep},{cell_seed},failed")?;
                        failures += 1;
                    }
                }
            }
            let mean = if scores.is_empty() {
                None
            } else {
                Some(scores.iter().sum::<f64>() / scores.len() as f64)
            };
            row.push(mean);
        }
        grid.push(row);
    }

    let mut table = String::from("balance_percent");
    for m in &args.methods {
        table.push(',');
        table.push_str(m.as_str());
    }
    table.push('\n');
    for (li, &level) in args.levels_percent.iter().enumerate() {
        table.push_str(&format!("{level}"));
        for cell in &grid[li] {
            match cell {
                Some(v) => table.push_str(&format!(",{v:.4}")),
                None => table.push_str(",failed"),
            }
        }
        table.push('\n');
    }
    std::fs::write(config.output.join("sweep.csv"), &table)?;
    print!("{table}");
    if failures > 0 {
        bail!("{failures} sweep cells failed");
    }
    Ok(())
}

fn run_cell(
    config: &RunConfig,
    source_base: &Path,
    target_base: &Path,
    base: &TrainConfig,
    method: Method,
    spec: &ImbalanceSpec,
    cell_seed: u64,
) -> Result<f64> {
    let data = prepare(config, source_base, target_base, spec, seed::mix(cell_seed, &[0x1B]))?;
    let Some((eval_spectra, eval_labels)) = &data.eval else {
        bail!("sweep needs a labeled target container");
    };
    let cfg = TrainConfig {
        method,
        seed: cell_seed,
        // Only the final evaluation matters for the grid.
        eval_every: base.epochs,
        ..base.clone()
    };
    let mut model: Model<f32> = Model::new(
        ModelConfig {
            class_count: data.classes.len(),
            disc_mode: method.disc_mode(),
            dropout_rate: cfg.dropout_rate,
        },
        seed::mix(cell_seed, &[0x0D]),
    )?;
    let outcome = adapt::train(
        &mut model,
        &data.source,
        &data.target,
        &data.classes,
        Some((eval_spectra.as_slice(), eval_labels.as_slice())),
        &cfg,
        None,
    )?;
    outcome
        .final_eval
        .map(|e| e.balanced_accuracy)
        .ok_or_else(|| anyhow::anyhow!("training produced no evaluation"))
}
