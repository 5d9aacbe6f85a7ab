//! Subcommand implementations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use emorec_core::corpus::{
    load_manifest, make_folds, read_spectrogram, save_manifest, split_indices, synth_corpus,
    write_spectrogram, compute_stats, Emotion, FoldSplit, Manifest, SynthOptions,
};
use emorec_core::dsp::{stft_log_magnitude, wav, Spectrogram};
use emorec_core::eval::{
    aggregate, round_half_up, run_fold, Aggregate, ConfusionMatrix, FoldData, FoldResult,
    FoldRun, FoldSample, Metrics,
};
use emorec_core::net::gradcheck::{
    default_setup, grad_check, setup_for_config, DEFAULT_STEP, MAX_REL_ERROR,
};
use emorec_core::net::{save_checkpoint, NetworkConfig};
use emorec_core::optim::GradLogWriter;
use emorec_core::vtlp::{warp_spectrogram, WarpParams, ALPHA_MAX, ALPHA_MIN};
use emorec_core::{parallel, Result as CoreResult};

use crate::config::{load_config, RunConfig};
use crate::CliError;

pub fn gen_corpus(
    out: &Path,
    seed: u64,
    per_class: usize,
    imbalanced: bool,
    sample_rate: u32,
) -> Result<(), CliError> {
    if per_class == 0 {
        return Err(CliError::Validation("--per-class must be positive".into()));
    }
    let opts = SynthOptions {
        seed,
        n_per_class: per_class,
        imbalanced,
        sample_rate,
        ..Default::default()
    };
    let corpus = synth_corpus(&opts)?;

    let wav_dir = out.join("wav");
    fs::create_dir_all(&wav_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", wav_dir.display())))?;
    let mut manifest = corpus.manifest.clone();
    for (u, clip) in manifest.utterances.iter_mut().zip(&corpus.clips) {
        let rel = PathBuf::from("wav").join(format!("{}.wav", u.id));
        wav::write_wav(&out.join(&rel), clip)?;
        u.path = rel;
    }
    save_manifest(&out.join("manifest.csv"), &manifest)?;

    let hist = manifest.class_histogram();
    let total: usize = hist.iter().sum();
    println!("wrote {total} utterances to {}", out.display());
    println!("class histogram:");
    for e in Emotion::ALL {
        println!("  {:<10} {}", e.name(), hist[e.index()]);
    }
    Ok(())
}

/// Path of one utterance's cached spectrogram.
fn cache_path(features: &Path, id: &str) -> PathBuf {
    features.join(format!("{id}.emsp"))
}

pub fn prepare(manifest_path: &Path, config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let manifest = load_manifest(manifest_path)?;
    let folds = make_folds(&manifest)?;

    // Validate every referenced audio file up front; no partial outputs on
    // a bad manifest.
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut audio_paths = Vec::with_capacity(manifest.utterances.len());
    for u in &manifest.utterances {
        let path = if u.path.is_absolute() {
            u.path.clone()
        } else {
            base.join(&u.path)
        };
        if !path.is_file() {
            return Err(CliError::Runtime(format!(
                "utterance {}: missing audio file {}",
                u.id,
                path.display()
            )));
        }
        audio_paths.push(path);
    }

    fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;

    // Decode and transform everything first; nothing is written until the
    // whole manifest processed cleanly.
    let specs: Vec<CoreResult<Spectrogram>> =
        parallel::map_indexed(manifest.utterances.len(), |i| {
            let clip = wav::read_wav(&audio_paths[i]).map_err(|e| {
                emorec_core::CoreError::data(format!(
                    "utterance {}: {e}",
                    manifest.utterances[i].id
                ))
            })?;
            stft_log_magnitude(&clip, &config.spectrogram).map_err(|e| {
                emorec_core::CoreError::data(format!(
                    "utterance {}: {e}",
                    manifest.utterances[i].id
                ))
            })
        });
    let cached = specs.into_iter().collect::<CoreResult<Vec<_>>>()?;
    for (u, spec) in manifest.utterances.iter().zip(&cached) {
        write_spectrogram(&cache_path(out, &u.id), spec)?;
    }

    // Per-fold normalization statistics over that fold's training split.
    for fold in &folds {
        let split = split_indices(&manifest, fold);
        let stats = compute_stats(split.train.iter().map(|&i| &cached[i]))?;
        let path = out.join(format!("fold_{:02}.stats", fold.fold_id));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "fold={}", fold.fold_id)?;
        writeln!(w, "test_session={}", fold.test.0)?;
        writeln!(w, "test_gender={}", fold.test.1.letter())?;
        writeln!(w, "mean={:.17e}", stats.mean)?;
        writeln!(w, "std={:.17e}", stats.std)?;
        writeln!(w, "epsilon={:.17e}", stats.epsilon)?;
        w.flush()?;
    }

    println!(
        "cached {} spectrograms and 10 fold statistics sidecars in {}",
        manifest.utterances.len(),
        out.display()
    );
    Ok(())
}

/// Loads the manifest and every cached spectrogram for train/cv.
fn load_features(config: &RunConfig) -> Result<(Manifest, Vec<Spectrogram>), CliError> {
    let manifest = load_manifest(&config.manifest)?;
    let mut specs = Vec::with_capacity(manifest.utterances.len());
    for u in &manifest.utterances {
        let path = cache_path(&config.features, &u.id);
        if !path.is_file() {
            return Err(CliError::Runtime(format!(
                "utterance {}: missing cached spectrogram {} (run prepare first)",
                u.id,
                path.display()
            )));
        }
        specs.push(read_spectrogram(&path)?);
    }
    Ok((manifest, specs))
}

fn fold_data(manifest: &Manifest, specs: &[Spectrogram], fold: &FoldSplit) -> FoldData {
    let split = split_indices(manifest, fold);
    let take = |indices: &[usize]| -> Vec<FoldSample> {
        indices
            .iter()
            .map(|&i| FoldSample {
                id: manifest.utterances[i].id.clone(),
                spec: specs[i].clone(),
                label: manifest.utterances[i].label,
            })
            .collect()
    };
    FoldData {
        train: take(&split.train),
        val: take(&split.val),
        test: take(&split.test),
    }
}

/// One results-CSV row, percentages rounded half-up to one decimal.
fn results_row(fold: &FoldSplit, result: &FoldResult) -> String {
    format!(
        "{},{},{},{:.1},{:.1},{}",
        result.fold_id,
        fold.test.0,
        fold.test.1.letter(),
        round_half_up(result.metrics.wa * 100.0, 1),
        round_half_up(result.metrics.ua * 100.0, 1),
        result.best_epoch
    )
}

const RESULTS_HEADER: &str = "fold,session,gender,wa,ua,best_epoch";

fn run_one_fold(
    config: &RunConfig,
    manifest: &Manifest,
    specs: &[Spectrogram],
    fold: &FoldSplit,
    out_dir: &Path,
) -> Result<FoldRun, CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let data = fold_data(manifest, specs, fold);
    let grad_file = fs::File::create(out_dir.join("gradients.csv"))?;
    let mut grad_log = GradLogWriter::new(BufWriter::new(grad_file))?;
    let run = run_fold(
        fold.fold_id,
        &data,
        &config.network,
        &config.optim,
        &config.groups,
        &config.train,
        Some(&mut grad_log),
    )?;
    grad_log.flush()?;

    save_checkpoint(&out_dir.join("checkpoint.emck"), &run.best_params)?;
    fs::write(
        out_dir.join("confusion.csv"),
        run.result.metrics.confusion.to_csv(),
    )?;
    let mut metrics = String::from(RESULTS_HEADER);
    metrics.push('\n');
    metrics.push_str(&results_row(fold, &run.result));
    metrics.push('\n');
    fs::write(out_dir.join("metrics.csv"), metrics)?;
    Ok(run)
}

pub fn train(config_path: &Path, fold_id: u8, out: &Path) -> Result<(), CliError> {
    if !(1..=10).contains(&fold_id) {
        return Err(CliError::Validation(format!(
            "fold {fold_id} outside 1..=10"
        )));
    }
    let config = load_config(config_path)?;
    let (manifest, specs) = load_features(&config)?;
    let folds = make_folds(&manifest)?;
    let fold = folds[fold_id as usize - 1];
    let run = run_one_fold(&config, &manifest, &specs, &fold, out)?;
    println!(
        "fold {fold_id}: wa {:.1} ua {:.1} (best epoch {} of {})",
        round_half_up(run.result.metrics.wa * 100.0, 1),
        round_half_up(run.result.metrics.ua * 100.0, 1),
        run.result.best_epoch,
        run.result.epochs_trained,
    );
    Ok(())
}

fn aggregate_json(agg: &Aggregate) -> String {
    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{:.1}", round_half_up(x * 100.0, 1)),
        None => "null".to_string(),
    };
    format!(
        "{{\n  \"folds\": {},\n  \"mean_wa\": {:.1},\n  \"mean_ua\": {:.1},\n  \"best5_wa\": {},\n  \"best5_ua\": {}\n}}\n",
        agg.n_folds,
        round_half_up(agg.mean_wa * 100.0, 1),
        round_half_up(agg.mean_ua * 100.0, 1),
        fmt_opt(agg.best5_wa),
        fmt_opt(agg.best5_ua),
    )
}

/// Parses a results CSV produced by `train`/`cv` back into fold results.
fn import_results(path: &Path) -> Result<Vec<FoldResult>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RESULTS_HEADER => {}
        _ => {
            return Err(CliError::Runtime(format!(
                "{}: expected header \"{RESULTS_HEADER}\"",
                path.display()
            )))
        }
    }
    let mut results = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CliError::Runtime(format!(
                "{}: row {row}: expected 6 fields",
                path.display()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64, CliError> {
            s.trim().parse().map_err(|_| {
                CliError::Runtime(format!("{}: row {row}: bad {what} \"{s}\"", path.display()))
            })
        };
        let fold_id: u8 = fields[0].trim().parse().map_err(|_| {
            CliError::Runtime(format!("{}: row {row}: bad fold id", path.display()))
        })?;
        let wa = parse_f(fields[3], "wa")? / 100.0;
        let ua = parse_f(fields[4], "ua")? / 100.0;
        let best_epoch: usize = fields[5].trim().parse().unwrap_or(0);
        results.push(FoldResult {
            fold_id,
            metrics: Metrics {
                wa,
                ua,
                confusion: ConfusionMatrix::new(),
            },
            epochs_trained: best_epoch,
            best_epoch,
        });
    }
    if results.is_empty() {
        return Err(CliError::Runtime(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(results)
}

pub fn cv(
    config_path: &Path,
    out: &Path,
    folds_arg: &[u8],
    jobs: Option<usize>,
    import: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(config_path)?;

    if let Some(results_path) = import {
        let results = import_results(results_path)?;
        let agg = aggregate(&results)?;
        fs::create_dir_all(out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
        let json = aggregate_json(&agg);
        fs::write(out.join("aggregate.json"), &json)?;
        print!("{json}");
        return Ok(());
    }

    let selected: Vec<u8> = if folds_arg.is_empty() {
        (1..=10).collect()
    } else {
        let mut f = folds_arg.to_vec();
        f.sort_unstable();
        f.dedup();
        for &k in &f {
            if !(1..=10).contains(&k) {
                return Err(CliError::Validation(format!("fold {k} outside 1..=10")));
            }
        }
        f
    };

    let (manifest, specs) = load_features(&config)?;
    let folds = make_folds(&manifest)?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;

    let runs: Vec<Result<FoldRun, CliError>> =
        parallel::map_slice_with_jobs(&selected, jobs, |&k| {
            let fold = folds[k as usize - 1];
            run_one_fold(
                &config,
                &manifest,
                &specs,
                &fold,
                &out.join(format!("fold_{k:02}")),
            )
        });

    let mut results = Vec::with_capacity(runs.len());
    for run in runs {
        results.push(run?.result);
    }

    let mut csv = String::from(RESULTS_HEADER);
    csv.push('\n');
    for result in &results {
        let fold = folds[result.fold_id as usize - 1];
        csv.push_str(&results_row(&fold, result));
        csv.push('\n');
    }
    fs::write(out.join("results.csv"), &csv)?;

    let agg = aggregate(&results)?;
    let json = aggregate_json(&agg);
    fs::write(out.join("aggregate.json"), &json)?;
    print!("{csv}");
    print!("{json}");
    Ok(())
}

pub fn gradcheck(config_path: Option<&Path>, precision: &str) -> Result<(), CliError> {
    let step = match precision {
        "default" => DEFAULT_STEP,
        "high" => 1e-6,
        other => {
            return Err(CliError::Validation(format!(
                "unknown precision \"{other}\" (use \"default\" or \"high\")"
            )))
        }
    };

    let (params, batch, labels) = match config_path {
        None => default_setup(7)?,
        Some(path) => {
            let config = load_config(path)?;
            let net = miniaturize(&config.network);
            let min_frames = net.min_frames();
            let lengths = vec![min_frames + 2, min_frames, min_frames + 5];
            let bins = min_bins(&net) + 3;
            setup_for_config(&net, bins, &lengths, 7)?
        }
    };

    let started = std::time::Instant::now();
    let report = grad_check(&params, &batch, &labels, step)?;
    for (name, err) in &report.per_tensor {
        println!("{name:<28} max relative error {err:.3e}");
    }
    println!(
        "overall max relative error {:.3e} (threshold {MAX_REL_ERROR:.0e}) in {:.2?}",
        report.max_rel,
        started.elapsed()
    );
    if report.passed() {
        println!("gradcheck PASS");
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "gradcheck FAIL: max relative error {:.3e} exceeds {MAX_REL_ERROR:.0e}",
            report.max_rel
        )))
    }
}

/// Shrinks an architecture to gradient-check scale: same layer structure,
/// small channel counts and hidden size.
fn miniaturize(net: &NetworkConfig) -> NetworkConfig {
    let mut mini = net.clone();
    for layer in &mut mini.conv_layers {
        layer.out_channels = layer.out_channels.min(6);
    }
    mini.hidden_size = mini.hidden_size.min(8);
    mini
}

/// Smallest frequency-bin count the conv stack accepts.
fn min_bins(net: &NetworkConfig) -> usize {
    let mut need = 1usize;
    for layer in net.conv_layers.iter().rev() {
        need = (need - 1) * layer.stride.1 + layer.kernel.1;
    }
    need
}

pub fn augment(input: &Path, alpha: f64, out: &Path, strict: bool) -> Result<(), CliError> {
    if !(ALPHA_MIN..=ALPHA_MAX).contains(&alpha) {
        if strict {
            return Err(CliError::Validation(format!(
                "alpha {alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]"
            )));
        }
        eprintln!(
            "warning: alpha {alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]; proceeding anyway"
        );
    }
    let spec = read_spectrogram(input)?;
    let params = WarpParams::unchecked(alpha, spec.meta.f_max_hz)?;
    let warped = warp_spectrogram(&spec, &params)?;
    write_spectrogram(out, &warped)?;
    println!(
        "warped {} ({} frames x {} bins) at alpha {alpha} -> {}",
        input.display(),
        warped.frames(),
        warped.bins(),
        out.display()
    );
    Ok(())
}
