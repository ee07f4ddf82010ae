use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use underfit_core::corpus::{generate_synthetic_campaigns, load_jsonl, save_jsonl};
use underfit_core::eval::{
    incremental_eval, keyword_masked_eval, lipschitz_score, EvalConfig, EvalReport, Protocol,
};
use underfit_core::masking::KeywordTable;
use underfit_core::proxies::discover_proxies;
use underfit_core::trainer::{
    load_run, prepare, recenter_proxies, tokenize_dataset, train_modes, write_artifacts,
    Checkpoint, Mode, NoObserver, TrainConfig,
};
use underfit_core::{Dataset, SynthConfig, Vocabulary};

/// Controlled-underfitting text classifiers: synthetic campaigns, staged
/// training and campaign-shift evaluation.
#[derive(Parser)]
#[command(name = "underfit", version)]
struct Cli {
    /// Worker threads for training and evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic campaign dataset as JSONL.
    GenData {
        /// Synthetic corpus config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one mode and write checkpoints, proxies, keywords and the log.
    Train {
        /// Training data (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Training config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// plain_ft, mask_only, smooth_only or ufit; overrides the config.
        #[arg(long)]
        mode: Option<Mode>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a campaign evaluation grid and write a JSON report plus CSV.
    Eval {
        /// Dataset with at least two campaigns (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Run directory whose resolved config is reused.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        run: Option<PathBuf>,
        /// Training config (TOML), instead of --run.
        #[arg(long)]
        config: Option<PathBuf>,
        /// incremental, prior_year, fixed_first, oracle or pairwise.
        #[arg(long, default_value = "incremental")]
        protocol: Protocol,
        /// Runs per cell; run r uses seed + r.
        #[arg(long, default_value_t = 3)]
        runs: usize,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_values_t = Mode::ALL)]
        modes: Vec<Mode>,
        /// Report JSON path; the CSV goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print every proxy's top keywords with scores.
    Keywords {
        /// Run directory.
        #[arg(long)]
        run: PathBuf,
        /// Words per proxy.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Per-proxy local Lipschitz scores of a trained model on a dataset.
    Lipschitz {
        /// Run directory.
        #[arg(long)]
        run: PathBuf,
        /// Dataset to score (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// The run's training data; proxy centroids are recomputed from its members.
        #[arg(long)]
        train_data: PathBuf,
    },
    /// Accuracy on a dataset before and after masking every keyword.
    Probe {
        /// Run directory.
        #[arg(long)]
        run: PathBuf,
        /// Dataset to score (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Keyword mask sets (keyword_masks.json), default: the run's own.
        #[arg(long)]
        keywords: Option<PathBuf>,
    },
    /// Summarize an evaluation report.
    Report {
        /// Report JSON written by `eval`.
        #[arg(long)]
        report: PathBuf,
    },
}

fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TrainConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))
}

fn load_data(path: &Path) -> Result<Dataset> {
    load_jsonl(path).with_context(|| format!("loading {}", path.display()))
}

fn gen_data(config: &Path, out: &Path) -> Result<()> {
    let text =
        fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = SynthConfig::from_toml(&text).with_context(|| format!("in {}", config.display()))?;
    let data = generate_synthetic_campaigns(&cfg)?;
    save_jsonl(&data, out)?;
    println!(
        "{}: {} campaigns, {} samples, {} classes",
        out.display(),
        data.campaign_order().len(),
        data.len(),
        data.num_classes()
    );
    Ok(())
}

fn train(data: &Path, config: &Path, mode: Option<Mode>, out: &Path) -> Result<()> {
    let mut cfg = read_train_config(config)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let dataset = load_data(data)?;
    let output = train_modes(&dataset, &cfg, &[cfg.mode], &NoObserver)?;
    write_artifacts(&output, &cfg, out)?;
    let run = &output.runs[0];
    for cp in &run.checkpoints {
        println!(
            "{}: epoch {} validation {:.4}",
            cp.stage.name(),
            cp.epoch,
            cp.validation_metric
        );
    }
    println!(
        "wrote {} checkpoint(s) to {}",
        run.checkpoints.len(),
        out.display()
    );
    Ok(())
}

fn eval(
    data: &Path,
    run: Option<&Path>,
    config: Option<&Path>,
    protocol: Protocol,
    runs: usize,
    modes: &[Mode],
    out: &Path,
) -> Result<()> {
    let cfg = match (run, config) {
        (Some(dir), _) => read_train_config(&dir.join("config.resolved.toml"))?,
        (None, Some(path)) => read_train_config(path)?,
        (None, None) => bail!("either --run or --config is required"),
    };
    let dataset = load_data(data)?;
    let report = incremental_eval(&dataset, &EvalConfig::new(cfg, protocol, runs), modes)?;
    let csv = out.with_extension("csv");
    report.save(out, &csv)?;
    if report.audit.violations > 0 {
        bail!(
            "campaign audit found {} leaked training samples",
            report.audit.violations
        );
    }
    print_report(&report);
    println!("wrote {} and {}", out.display(), csv.display());
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("protocol {} over seeds {:?}", report.protocol, report.seeds);
    println!(
        "{:<12} {:>15} {:>15} {:>15} {:>9}",
        "mode", "id", "test", "id masked", "p"
    );
    for s in &report.summary {
        let ms = |m: &underfit_core::eval::MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
        println!(
            "{:<12} {:>15} {:>15} {:>15} {:>9}",
            s.mode.name(),
            ms(&s.id_accuracy),
            ms(&s.test_accuracy),
            s.id_masked_accuracy
                .as_ref()
                .map(ms)
                .unwrap_or_else(|| "-".into()),
            s.p_value
                .map(|p| format!("{p:.4}"))
                .unwrap_or_else(|| "-".into())
        );
    }
    println!(
        "audit: {} batches, {} samples, {} violations",
        report.audit.batches, report.audit.samples, report.audit.violations
    );
}

fn keywords(run: &Path, top: usize) -> Result<()> {
    let (_, cp) = load_run(run)?;
    let Some(table) = cp.keywords else {
        bail!(
            "{} has no keyword table (plain_ft and smooth_only runs do not extract keywords)",
            run.display()
        );
    };
    for p in &table.proxies {
        println!(
            "proxy {} (class {}, median length {:.1})",
            p.proxy_id, p.class, p.tau_hat
        );
        for (rank, (word, score)) in p.ranked.iter().take(top).enumerate() {
            println!("  {:>2}. {word:<20} {score:.6}", rank + 1);
        }
    }
    for (c, words) in table.class_keywords.iter().enumerate() {
        println!("class {c} mask set: {}", words.join(" "));
    }
    Ok(())
}

fn check_vocab(vocab: &Vocabulary, cp: &Checkpoint) -> Result<()> {
    if vocab.hash() != cp.vocab_hash {
        bail!("vocabulary does not match the checkpoint");
    }
    Ok(())
}

fn lipschitz(run: &Path, data: &Path, train_data: &Path) -> Result<()> {
    let (vocab, cp) = load_run(run)?;
    let cfg = read_train_config(&run.join("config.resolved.toml"))?;
    let prepared = prepare(&load_data(train_data)?, &cfg)?;
    if prepared.vocab.hash() != vocab.hash() {
        bail!(
            "{} is not the data this run was trained on",
            train_data.display()
        );
    }
    check_vocab(&vocab, &cp)?;
    let params = &cp.params;
    let proxies = match &cp.proxies {
        Some(set) => set.clone(),
        None => {
            let emb = prepared
                .train
                .tokens
                .iter()
                .map(|t| underfit_core::encoder::embed(params, t))
                .collect::<underfit_core::Result<Vec<_>>>()?;
            discover_proxies(
                &emb,
                &prepared.train.labels,
                params.num_classes,
                &cfg.proxies,
                cfg.seed,
            )?
        }
    };
    let proxies = recenter_proxies(params, &proxies, &prepared.train)?;
    let test = tokenize_dataset(&load_data(data)?, &vocab, cfg.model.max_len);
    let report = lipschitz_score(params, &proxies, &test.tokens, &test.labels)?;
    for p in &report.proxies {
        println!(
            "proxy {:>2} class {} members {:>4} L {:.6}",
            p.proxy_id, p.class, p.members, p.score
        );
    }
    println!(
        "L-score {:.6} accuracy {:.4}",
        report.l_score, report.accuracy
    );
    Ok(())
}

fn probe(run: &Path, data: &Path, keywords: Option<&Path>) -> Result<()> {
    let (vocab, cp) = load_run(run)?;
    let table = match keywords {
        Some(path) => KeywordTable::load_mask_sets(path)?,
        None => match &cp.keywords {
            Some(t) => t.clone(),
            None => bail!("{} has no keyword table; pass --keywords", run.display()),
        },
    };
    let test = tokenize_dataset(&load_data(data)?, &vocab, cp.params.config.max_len);
    let (plain, masked) = keyword_masked_eval(
        &cp.params,
        &test.tokens,
        &test.labels,
        &table.all_ids(&vocab),
    )?;
    println!(
        "accuracy {plain:.4} masked {masked:.4} drop {:.4}",
        plain - masked
    );
    Ok(())
}

fn report(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: EvalReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    print_report(&report);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, &out),
        Command::Train {
            data,
            config,
            mode,
            out,
        } => train(&data, &config, mode, &out),
        Command::Eval {
            data,
            run,
            config,
            protocol,
            runs,
            modes,
            out,
        } => eval(
            &data,
            run.as_deref(),
            config.as_deref(),
            protocol,
            runs,
            &modes,
            &out,
        ),
        Command::Keywords { run, top } => keywords(&run, top),
        Command::Lipschitz {
            run,
            data,
            train_data,
        } => lipschitz(&run, &data, &train_data),
        Command::Probe {
            run,
            data,
            keywords,
        } => probe(&run, &data, keywords.as_deref()),
        Command::Report { report: path } => report(&path),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNDERFIT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
