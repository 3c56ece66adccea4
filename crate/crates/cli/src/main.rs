//! Command-line driver: corpus synthesis, manifest building, training,
//! both evaluation protocols, gradient checking, and filter-response
//! export.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csnc_core::checkpoint::{load_checkpoint, save_checkpoint};
use csnc_core::data::manifest::{build_manifest, read_manifest, write_manifest};
use csnc_core::data::synth::synth_corpus;
use csnc_core::error::Error;
use csnc_core::eval::{evaluate_inter, evaluate_intra};
use csnc_core::sinc::{frequency_response, SincFilterParams};
use csnc_core::train::{train, TrainHooks, TrainLogRow};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "csnc",
    version,
    about = "Raw-waveform speaker recognition with a trainable sinc filterbank and margin/curricular loss heads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set batch_size=64 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker thread cap; 1 forces the fully deterministic path.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic speaker corpus and its manifest.
    Synth {
        #[arg(long)]
        speakers: Option<usize>,
        /// Utterances per speaker.
        #[arg(long)]
        utts: Option<usize>,
        /// Seconds per utterance.
        #[arg(long)]
        seconds: Option<f64>,
        #[arg(long)]
        sample_rate: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build a manifest for a directory-per-speaker corpus.
    Manifest {
        #[arg(long)]
        root: PathBuf,
        /// Output path (default <root>/manifest.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss head: softmax, norm_softmax, arcface, am_softmax, curricular.
        #[arg(long)]
        loss: Option<String>,
        /// Margin.
        #[arg(long)]
        m: Option<f64>,
        /// Logit scale.
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batches_per_epoch: Option<usize>,
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint: intra (FER/CER) or inter (gallery CER).
    Eval {
        #[arg(long, value_parser = ["intra", "inter"])]
        protocol: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Optional run directory for report.json and the config echo.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        enroll_chunks: Option<usize>,
        #[arg(long)]
        eval_logits: Option<String>,
        #[arg(long)]
        loss: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Check every analytic gradient against finite differences.
    Gradcheck {
        /// Independent random draws per loss head.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Export filter frequency responses as CSV.
    Filters {
        /// Checkpoint to read the sinc layer from; omit for a fresh
        /// mel-initialized bank.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Export a single filter index instead of the whole bank.
        #[arg(long)]
        filter: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        /// Sample rate for a fresh bank (ignored with --ckpt).
        #[arg(long)]
        sample_rate: Option<f64>,
        /// Optional run directory for filters.csv and the config echo.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig { .. } | Error::InvalidFrequencyRange { .. } => 1,
        Error::NonFinite { .. } | Error::NumericFailure { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn load_run_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_overrides(&common.set)?;
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        // the global pool can only be set once per process; later calls
        // with the same cap are harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    Ok(cfg)
}

fn echo_config(cfg: &RunConfig, dir: &Path, command: &str) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(format!("{command}.config.txt"));
    fs::write(&path, cfg.to_canonical_string()).map_err(|e| Error::Io { path, source: e })
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Synth {
            speakers,
            utts,
            seconds,
            sample_rate,
            seed,
            out,
            common,
        } => {
            let mut cfg = load_run_config(&common)?;
            if let Some(v) = speakers {
                cfg.speakers = v;
            }
            if let Some(v) = utts {
                cfg.utts_per_speaker = v;
            }
            if let Some(v) = seconds {
                cfg.seconds_per_utt = v;
            }
            if let Some(v) = sample_rate {
                cfg.synth_sample_rate = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            cmd_synth(&cfg, &out)
        }
        Command::Manifest {
            root,
            out,
            seed,
            common,
        } => {
            let mut cfg = load_run_config(&common)?;
            if let Some(v) = seed {
                cfg.seed = v;
            }
            cmd_manifest(&cfg, &root, out.as_deref())
        }
        Command::Train {
            manifest,
            out,
            loss,
            m,
            s,
            alpha,
            lr,
            batch,
            epochs,
            batches_per_epoch,
            optimizer,
            seed,
            checkpoint_every,
            common,
        } => {
            let mut cfg = load_run_config(&common)?;
            if let Some(v) = loss {
                cfg.loss = v;
            }
            if let Some(v) = m {
                cfg.margin_m = v;
            }
            if let Some(v) = s {
                cfg.scale_s = v;
            }
            if let Some(v) = alpha {
                cfg.alpha = v;
            }
            if let Some(v) = lr {
                cfg.learning_rate = v;
            }
            if let Some(v) = batch {
                cfg.batch_size = v;
            }
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = batches_per_epoch {
                cfg.batches_per_epoch = v;
            }
            if let Some(v) = optimizer {
                cfg.optimizer = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = checkpoint_every {
                cfg.checkpoint_every = v;
            }
            cmd_train(&cfg, &manifest, &out)
        }
        Command::Eval {
            protocol,
            ckpt,
            manifest,
            out,
            enroll_chunks,
            eval_logits,
            loss,
            common,
        } => {
            let mut cfg = load_run_config(&common)?;
            if let Some(v) = enroll_chunks {
                cfg.enroll_chunks = v;
            }
            if let Some(v) = eval_logits {
                cfg.eval_logits = v;
            }
            if let Some(v) = loss {
                cfg.loss = v;
            }
            cmd_eval(&cfg, &protocol, &ckpt, &manifest, out.as_deref())
        }
        Command::Gradcheck { seeds, out, common } => {
            let mut cfg = load_run_config(&common)?;
            if let Some(v) = seeds {
                cfg.gradcheck_seeds = v;
            }
            cmd_gradcheck(&cfg, out.as_deref())
        }
        Command::Filters {
            ckpt,
            filter,
            points,
            sample_rate,
            out,
            common,
        } => {
            let mut cfg = load_run_config(&common)?;
            if let Some(v) = points {
                cfg.response_points = v;
            }
            cmd_filters(&cfg, ckpt.as_deref(), filter, sample_rate, out.as_deref())
        }
    }
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<u8, Error> {
    let synth_cfg = cfg.synth_config();
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    synth_corpus(&synth_cfg, out)?;
    let manifest = build_manifest(out, &cfg.split_config())?;
    write_manifest(&manifest, &out.join("manifest.tsv"))?;
    echo_config(cfg, out, "synth")?;
    eprintln!(
        "synthesized {} speakers × {} utterances at {} Hz into {}",
        synth_cfg.n_speakers,
        synth_cfg.utterances_per_speaker,
        synth_cfg.sample_rate,
        out.display()
    );
    report_manifest_notes(&manifest);
    Ok(0)
}

fn report_manifest_notes(manifest: &csnc_core::data::DatasetManifest) {
    for s in &manifest.excluded {
        eprintln!("warning: speaker {s} excluded (no WAV files)");
    }
    for s in &manifest.flagged {
        eprintln!("warning: speaker {s} flagged (insufficient audio for the duration split)");
    }
    if manifest.unused_utterances > 0 {
        eprintln!(
            "note: {} utterances beyond the duration budgets were left unassigned",
            manifest.unused_utterances
        );
    }
}

fn cmd_manifest(cfg: &RunConfig, root: &Path, out: Option<&Path>) -> Result<u8, Error> {
    let manifest = build_manifest(root, &cfg.split_config())?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| root.join("manifest.tsv"));
    write_manifest(&manifest, &out_path)?;
    let echo_dir = out_path.parent().unwrap_or(Path::new("."));
    echo_config(cfg, echo_dir, "manifest")?;
    eprintln!(
        "manifest: {} speakers, {} records → {}",
        manifest.class_count(),
        manifest.records.len(),
        out_path.display()
    );
    report_manifest_notes(&manifest);
    Ok(0)
}

fn cmd_train(cfg: &RunConfig, manifest_path: &Path, out: &Path) -> Result<u8, Error> {
    // read inputs before creating any outputs so a bad invocation leaves
    // no partial run directory behind
    let manifest = read_manifest(manifest_path)?;
    let sample_rate = manifest.sample_rate as f64;
    let model_cfg = cfg.model_config(sample_rate)?;
    let train_cfg = cfg.train_config(sample_rate)?;
    let dtype = cfg.checkpoint_dtype()?;

    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    echo_config(cfg, out, "train")?;
    let log_path = out.join("train_log.csv");
    let log_file = fs::File::create(&log_path).map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    let mut log = std::io::BufWriter::new(log_file);
    writeln!(log, "{}", TrainLogRow::CSV_HEADER).map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;

    let total = (train_cfg.epochs * train_cfg.batches_per_epoch) as u64;
    let log_cell = std::cell::RefCell::new(log);
    let log_err = std::cell::RefCell::new(None::<std::io::Error>);
    let ckpt_dir = out.to_path_buf();
    let mut hooks = TrainHooks::default();
    hooks.on_row = Box::new(|row: &TrainLogRow| {
        if log_err.borrow().is_none() {
            if let Err(e) = writeln!(log_cell.borrow_mut(), "{}", row.to_csv()) {
                *log_err.borrow_mut() = Some(e);
            }
        }
        if row.batch % 50 == 0 || row.batch + 1 == total {
            eprintln!(
                "batch {}/{total}: loss {:.4} t {:.3} grad_norm {:.3e}",
                row.batch + 1,
                row.loss,
                row.t,
                row.grad_norm
            );
        }
    });
    hooks.on_epoch_end = Box::new(|epoch, weights, state| {
        let path = ckpt_dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
        save_checkpoint(weights, state.t, dtype, &path)
    });

    let (weights, state) = train(&manifest, &model_cfg, &train_cfg, &mut hooks)?;
    drop(hooks);
    log_cell.borrow_mut().flush().map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    if let Some(e) = log_err.into_inner() {
        return Err(Error::Io {
            path: log_path,
            source: e,
        });
    }
    save_checkpoint(&weights, state.t, dtype, &out.join("final.ckpt"))?;
    eprintln!(
        "trained {} classes for {} batches → {}",
        weights.class_count,
        total,
        out.join("final.ckpt").display()
    );
    Ok(0)
}

fn cmd_eval(
    cfg: &RunConfig,
    protocol: &str,
    ckpt: &Path,
    manifest_path: &Path,
    out: Option<&Path>,
) -> Result<u8, Error> {
    let (weights, _t) = load_checkpoint(ckpt)?;
    let manifest = read_manifest(manifest_path)?;
    let eval_cfg = cfg.eval_config(weights.config.sample_rate)?;
    let fingerprint = cfg.fingerprint();

    let (report, decisions) = match protocol {
        "intra" => (
            evaluate_intra(&weights, &manifest, &eval_cfg, &fingerprint)?,
            Vec::new(),
        ),
        "inter" => evaluate_inter(&weights, &manifest, &eval_cfg, &fingerprint)?,
        other => {
            return Err(Error::InvalidConfig {
                detail: format!("unknown protocol {other:?}"),
            })
        }
    };

    for d in decisions.iter().filter(|d| d.tie) {
        eprintln!(
            "tie: probe of {} matched {} at similarity {} (lexicographic tie-break)",
            d.speaker, d.predicted, d.similarity
        );
    }

    let json = report.to_json();
    print!("{json}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let report_path = dir.join("report.json");
        fs::write(&report_path, &json).map_err(|e| Error::Io {
            path: report_path,
            source: e,
        })?;
        if !decisions.is_empty() {
            let mut csv = String::from("speaker,predicted,similarity,tie\n");
            for d in &decisions {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    d.speaker, d.predicted, d.similarity, d.tie
                ));
            }
            let path = dir.join("decisions.csv");
            fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;
        }
        echo_config(cfg, dir, "eval")?;
    }
    Ok(0)
}

fn cmd_gradcheck(cfg: &RunConfig, out: Option<&Path>) -> Result<u8, Error> {
    let report = csnc_core::battery::run_battery(cfg.gradcheck_seeds)?;
    let table = report.render();
    print!("{table}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = dir.join("gradcheck_report.txt");
        fs::write(&path, &table).map_err(|e| Error::Io { path, source: e })?;
        echo_config(cfg, dir, "gradcheck")?;
    }
    if report.passed() {
        Ok(0)
    } else {
        for row in report.failing() {
            eprintln!(
                "gradient mismatch: head {} group {} rel err {:.3e}",
                row.head, row.group, row.max_rel_err
            );
        }
        Ok(3)
    }
}

fn cmd_filters(
    cfg: &RunConfig,
    ckpt: Option<&Path>,
    filter: Option<usize>,
    sample_rate: Option<f64>,
    out: Option<&Path>,
) -> Result<u8, Error> {
    let params: SincFilterParams = match ckpt {
        Some(path) => load_checkpoint(path)?.0.sinc,
        None => {
            let sr = sample_rate.unwrap_or(16000.0);
            let model = cfg.model_config(sr)?;
            csnc_core::sinc::mel_init(
                model.sinc.count,
                sr,
                model.sinc.f_min_hz,
                model.sinc.f_max_hz,
                model.sinc.kernel_len,
                model.sinc.window,
            )?
        }
    };

    let mut csv = String::new();
    match filter {
        Some(index) => {
            let resp = frequency_response(&params, index, cfg.response_points)?;
            csv.push_str("freq_normalized,magnitude_db\n");
            for (f, db) in resp.freqs.iter().zip(&resp.magnitude_db) {
                csv.push_str(&format!("{f},{db}\n"));
            }
        }
        None => {
            csv.push_str("filter,freq_normalized,magnitude_db\n");
            for i in 0..params.count() {
                match frequency_response(&params, i, cfg.response_points) {
                    Ok(resp) => {
                        for (f, db) in resp.freqs.iter().zip(&resp.magnitude_db) {
                            csv.push_str(&format!("{i},{f},{db}\n"));
                        }
                    }
                    Err(Error::ZeroKernel { filter }) => {
                        eprintln!("warning: filter {filter} has zero bandwidth, skipped");
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
            let path = dir.join("filters.csv");
            fs::write(&path, &csv).map_err(|e| Error::Io { path, source: e })?;
            echo_config(cfg, dir, "filters")?;
            eprintln!("wrote {}", dir.join("filters.csv").display());
        }
        None => print!("{csv}"),
    }
    Ok(0)
}
