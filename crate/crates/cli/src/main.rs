//! `emoship` command-line tool.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use emoship::archive::TensorArchive;
use emoship::config::Config;
use emoship::dataio::{load_manifest, read_labels, read_records, records_text, Manifest};
use emoship::domain::EmotionLabel;
use emoship::energy::{energy_report, PowerProfile, UsageLedger};
use emoship::eyefeat::extract_eye_feature;
use emoship::fusion::{flatten_candidates, train_head, FusionHead, TrainingSample};
use emoship::metrics::{
    is_summary, is_summary_csv, load_pilot_csv, macro_metrics, pilot_summary, profile_type, ConfusionMatrix,
};
use emoship::pipeline::{run, Models, RunOutput};
use emoship::roiselect::select_candidates;
use emoship::synth::{write_demo, SynthSpec};
use emoship::vlprovider::conformance;
use emoship::vlprovider::{EmbeddingStore, MockProvider, MockTransport, ProviderClient, ProviderSpec, ReplayTransport};
use emoship::{Error, Result};

#[derive(Parser)]
#[command(name = "emoship", version, about = "Replay, train and evaluate the EMOShip-Net pipeline")]
struct Cli {
    /// Config file in `key = value` form.
    #[arg(long, global = true, env = "EMOSHIP_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for training and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a manifest and write records, ledger,
    /// diagnostics, the IS time series and the provider transcript.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// mock | exec:CMD | http:URL | replay:FILE
        #[arg(long, default_value = "mock")]
        provider: String,
        /// Word vectors for answer matching (`token v1 v2 ...` lines).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score records against one truth label per record.
    Eval {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Write the confusion matrix here instead of stdout.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Battery life for a usage ledger or explicit duty factors.
    Energy {
        #[arg(long, conflicts_with = "duties", required_unless_present = "duties")]
        ledger: Option<PathBuf>,
        /// `NEYE,CAPTURE` fractions of always-on time, e.g. `0.132,0.054`.
        #[arg(long)]
        duties: Option<String>,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Per-emotion record counts, mean and normalized influential score,
    /// and the wearer's emotion profile.
    IsSummary {
        #[arg(long)]
        records: PathBuf,
    },
    /// Precision, recall and time reductions of a pilot-study CSV.
    Pilot {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Train the fusion head on the labelled frames of a manifest.
    TrainHead {
        #[arg(long)]
        manifest: PathBuf,
        /// Archive holding the trigger (and optionally extractor) tensors.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "mock")]
        provider: String,
        /// Output archive: the input tensors plus the trained head.
        #[arg(long)]
        out: PathBuf,
    },
    /// Built-in checks on a generated demo, plus provider conformance.
    Selftest {
        /// Provider to check against frames of `--manifest`.
        #[arg(long, requires = "manifest")]
        provider: Option<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write a synthetic demo: manifest, sidecars, models and truth labels.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 6)]
        moments: usize,
    },
    /// Serve the mock provider over stdin/stdout.
    ServeMock {
        #[arg(long)]
        sidecar_dir: PathBuf,
    },
}

fn config_help() -> String {
    let cfg = Config::default();
    let mut out = String::from("Config keys (defaults):\n");
    for (key, about) in Config::KEYS {
        let value = cfg.get(key).unwrap_or_default();
        let _ = writeln!(out, "  {key} = {value}\n      {about}");
    }
    out.push_str("\nExit codes: 0 ok, 1 check or training failure, 2 input error, 3 provider error");
    out
}

struct Failed(String);

enum Outcome {
    Ok,
    Failed(Failed),
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(config_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(Failed(msg))) => {
            eprintln!("emoship: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("emoship: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_provider() => 3,
        Error::Divergence { .. } => 1,
        _ => 2,
    }
}

fn load_config(cli: &Cli, manifest: Option<&Manifest>) -> Result<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(m) = manifest {
        for (k, v) in &m.config {
            cfg.set(k, v)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn connect(spec: &str, manifest: &Manifest, cfg: &Config) -> Result<ProviderClient> {
    let spec: ProviderSpec = spec.parse()?;
    let transport = spec.connect(&manifest.sidecar_dir, Duration::from_millis(cfg.provider_timeout_ms))?;
    Ok(ProviderClient::new(transport, cfg.fusion.d_vis, cfg.max_candidates))
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Replay {
            manifest,
            models,
            provider,
            embeddings,
            out_dir,
        } => {
            let manifest = load_manifest(manifest)?;
            let cfg = load_config(cli, Some(&manifest))?;
            let store = match embeddings {
                Some(p) => EmbeddingStore::load(p)?,
                None => EmbeddingStore::default(),
            };
            let models = Models::from_archive(&TensorArchive::load(models)?, &cfg, store)?;
            let mut client = connect(provider, &manifest, &cfg)?;
            let out = run(&manifest.frames, &models, &mut client, &cfg)?;
            std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
                path: out_dir.clone(),
                source,
            })?;
            write_run(out_dir, &out, &client)?;
            print!(
                "records = {}\nincomplete_windows = {}\nout_dir = {}\n",
                out.records.len(),
                out.diagnostics.incomplete.len(),
                out_dir.display()
            );
            Ok(Outcome::Ok)
        }
        Command::Eval {
            records,
            truth,
            confusion,
        } => {
            let pred: Vec<EmotionLabel> = read_records(records)?.iter().map(|r| r.emotion).collect();
            let truth = read_labels(truth)?;
            if truth.is_empty() {
                return Err(Error::Input("truth file has no labels".into()));
            }
            if truth.len() != pred.len() {
                return Err(Error::Input(format!(
                    "{} truth labels but {} records; they must align one to one",
                    truth.len(),
                    pred.len()
                )));
            }
            let m = macro_metrics(&truth, &pred)?;
            print!("{}", m.to_text());
            let csv = ConfusionMatrix::from_pairs(&truth, &pred, false)?.to_csv();
            match confusion {
                Some(p) => write(p, &csv)?,
                None => print!("\n{csv}"),
            }
            Ok(Outcome::Ok)
        }
        Command::Energy {
            ledger,
            duties,
            profile,
        } => {
            let profile = match profile {
                Some(p) => PowerProfile::load(p)?,
                None => PowerProfile::default(),
            };
            let (dn, dc) = match (ledger, duties) {
                (Some(p), _) => UsageLedger::load(p)?.duties(),
                (None, Some(d)) => parse_duties(d)?,
                (None, None) => return Err(Error::Input("need --ledger or --duties".into())),
            };
            print!("{}", energy_report(&profile, dn, dc)?.to_csv());
            Ok(Outcome::Ok)
        }
        Command::IsSummary { records } => {
            let records = read_records(records)?;
            let rows = is_summary(&records);
            print!("{}", is_summary_csv(&rows));
            let counts: Vec<(EmotionLabel, u64)> = rows.iter().map(|r| (r.label, r.records as u64)).collect();
            if let Ok(p) = profile_type(&counts) {
                print!(
                    "\nprofile = {}\npositive_ratio = {:.6}\nnegative_ratio = {:.6}\n",
                    p.kind, p.positive_ratio, p.negative_ratio
                );
            }
            Ok(Outcome::Ok)
        }
        Command::Pilot { csv } => {
            print!("{}", pilot_summary(&load_pilot_csv(csv)?)?.to_text());
            Ok(Outcome::Ok)
        }
        Command::TrainHead {
            manifest,
            models,
            provider,
            out,
        } => {
            let manifest = load_manifest(manifest)?;
            let cfg = load_config(cli, Some(&manifest))?;
            let mut archive = TensorArchive::load(models)?;
            let loaded = Models::from_archive(&archive, &cfg, EmbeddingStore::default())
                .or_else(|_| models_without_head(&archive, &cfg))?;
            let mut client = connect(provider, &manifest, &cfg)?;
            let samples = manifest_samples(&manifest, &loaded, &mut client, &cfg)?;
            let (head, report) = train_head(&samples, FusionHead::init(cfg.fusion, cfg.train.seed)?, &cfg.train)?;
            put_head(&mut archive, &head)?;
            archive.save(out)?;
            println!("epoch,loss");
            for (i, l) in report.epoch_losses.iter().enumerate() {
                println!("{},{l:.6}", i + 1);
            }
            Ok(Outcome::Ok)
        }
        Command::Selftest { provider, manifest } => selftest(cli, provider.as_deref(), manifest.as_deref()),
        Command::Synth { out_dir, moments } => {
            let spec = SynthSpec::cycling(*moments, cli.seed.unwrap_or(0));
            let demo = write_demo(out_dir, &spec)?;
            print!(
                "manifest = {}\nmodels = {}\ntruth = {}\n",
                demo.manifest.display(),
                demo.models.display(),
                demo.truth.display()
            );
            Ok(Outcome::Ok)
        }
        Command::ServeMock { sidecar_dir } => {
            let mut mock = MockProvider::new(sidecar_dir);
            mock.serve(BufReader::new(io::stdin()), io::stdout().lock())
                .map_err(|e| Error::ProviderUnavailable(format!("stdio: {e}")))?;
            Ok(Outcome::Ok)
        }
    }
}

fn parse_duties(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::Input(format!("--duties expects NEYE,CAPTURE fractions, got `{text}`"));
    let [n, c] = parts[..] else { return Err(bad()) };
    Ok((n.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
}

fn write_run(dir: &Path, out: &RunOutput, client: &ProviderClient) -> Result<()> {
    write(&dir.join("records.jsonl"), &records_text(&out.records)?)?;
    write(&dir.join("ledger.txt"), &out.ledger.to_text())?;
    write(&dir.join("diagnostics.txt"), &out.diagnostics.to_text())?;
    write(&dir.join("is_series.csv"), &out.series_csv())?;
    write(&dir.join("transcript.txt"), &client.transcript().to_text())
}

/// Writes `head` into `archive`, replacing any head tensors already there.
fn put_head(archive: &mut TensorArchive, head: &FusionHead) -> Result<()> {
    let mut fresh = TensorArchive::new();
    head.write_to(&mut fresh)?;
    for t in fresh.tensors() {
        archive.upsert(&t.name, &t.shape, t.data.clone())?;
    }
    Ok(())
}

fn models_without_head(archive: &TensorArchive, cfg: &Config) -> Result<Models> {
    let mut with_head = archive.clone();
    put_head(&mut with_head, &FusionHead::zeros(cfg.fusion)?)?;
    Models::from_archive(&with_head, cfg, EmbeddingStore::default())
}

/// One training sample per labelled non-neutral frame.
fn manifest_samples(
    manifest: &Manifest,
    models: &Models,
    client: &mut ProviderClient,
    cfg: &Config,
) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for frame in &manifest.frames {
        let Some(label) = frame.label.filter(|l| !l.is_neutral()) else {
            continue;
        };
        let f_eye = extract_eye_feature(&frame.eye, models.extractor.as_ref())?;
        let regions = client.fetch_regions(&frame.scene)?;
        let cands = select_candidates(&regions, frame.eye.gaze, cfg.max_candidates);
        out.push(TrainingSample {
            f_eye: f_eye.vector,
            fc: flatten_candidates(&cands, &cfg.fusion)?,
            label,
        });
    }
    if out.is_empty() {
        return Err(Error::Input(format!(
            "{} has no frames with a non-neutral label",
            manifest.path.display()
        )));
    }
    Ok(out)
}

fn frame_ids(manifest: &Manifest) -> Vec<String> {
    let ids: BTreeSet<&str> = manifest.frames.iter().map(|f| f.scene.frame_id.as_str()).collect();
    ids.into_iter().take(5).map(String::from).collect()
}

fn replay_once(manifest: &Manifest, models: &Models, client: ProviderClient, cfg: &Config) -> Result<(RunOutput, ProviderClient)> {
    let mut client = client;
    let out = run(&manifest.frames, models, &mut client, cfg)?;
    Ok((out, client))
}

fn selftest(cli: &Cli, provider: Option<&str>, manifest: Option<&Path>) -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        let tag = if ok { "PASS" } else { "FAIL" };
        lines.push((ok, if detail.is_empty() { format!("{tag} {name}") } else { format!("{tag} {name} ({detail})") }));
    };

    let dir = std::env::temp_dir().join(format!("emoship-selftest-{}", std::process::id()));
    let demo = write_demo(&dir, &SynthSpec::cycling(3, cli.seed.unwrap_or(0)));
    let result = demo.and_then(|demo| {
        let m = load_manifest(&demo.manifest)?;
        let cfg = load_config(cli, Some(&m))?;
        let models = Models::from_archive(&TensorArchive::load(&demo.models)?, &cfg, EmbeddingStore::default())?;
        let mock = || ProviderClient::new(Box::new(MockTransport(MockProvider::new(&m.sidecar_dir))), cfg.fusion.d_vis, cfg.max_candidates);

        let mut t = MockTransport(MockProvider::new(&m.sidecar_dir));
        let report = conformance::run(&mut t, &frame_ids(&m), cfg.fusion.d_vis, &cfg.question);
        check("mock provider conformance", report.all_passed(), report.failures().map(|c| c.name.clone()).collect::<Vec<_>>().join(", "));

        let (a, client) = replay_once(&m, &models, mock(), &cfg)?;
        let (b, _) = replay_once(&m, &models, mock(), &cfg)?;
        let same = records_text(&a.records)? == records_text(&b.records)?
            && a.ledger.to_text() == b.ledger.to_text()
            && a.series_csv() == b.series_csv();
        check("replay determinism", same, String::new());

        let replayed = ProviderClient::new(
            Box::new(ReplayTransport::new(client.transcript().clone())),
            cfg.fusion.d_vis,
            cfg.max_candidates,
        );
        let (c, _) = replay_once(&m, &models, replayed, &cfg)?;
        check(
            "transcript replay",
            records_text(&a.records)? == records_text(&c.records)?,
            String::new(),
        );

        let truth: Vec<EmotionLabel> = read_labels(&demo.truth)?;
        let pred: Vec<EmotionLabel> = a.records.iter().map(|r| r.emotion).collect();
        check("demo records match truth", truth == pred, format!("{} records", pred.len()));
        Ok(())
    });
    let _ = std::fs::remove_dir_all(&dir);
    result?;

    let e = energy_report(&PowerProfile::default(), 0.132, 0.054)?;
    check(
        "energy model",
        (e.emoship_h - 5.5).abs() <= 0.1 + 0.05 && (e.record_everything_h - 1.5).abs() <= 0.1,
        format!("{:.3} h vs {:.3} h", e.emoship_h, e.record_everything_h),
    );

    if let (Some(spec), Some(path)) = (provider, manifest) {
        let m = load_manifest(path)?;
        let cfg = load_config(cli, Some(&m))?;
        let spec: ProviderSpec = spec.parse()?;
        let mut t = spec.connect(&m.sidecar_dir, Duration::from_millis(cfg.provider_timeout_ms))?;
        let report = conformance::run(t.as_mut(), &frame_ids(&m), cfg.fusion.d_vis, &cfg.question);
        for c in &report.checks {
            check(&format!("provider {}", c.name), c.passed, c.detail.clone());
        }
    }

    let mut failed = 0;
    for (ok, line) in &lines {
        println!("{line}");
        failed += usize::from(!ok);
    }
    Ok(if failed == 0 {
        Outcome::Ok
    } else {
        Outcome::Failed(Failed(format!("{failed} selftest check(s) failed")))
    })
}
