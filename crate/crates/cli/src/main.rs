use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use sphmm_sid::corpus::{ingest_wav, load_manifest, synthesize_corpus, Preset, Split};
use sphmm_sid::dsp::FeatureExtractor;
use sphmm_sid::eval::{self, Conditioning, ConfusionStage, PerformanceTable, SampleSummary, TTestMethod};
use sphmm_sid::pipeline::{
    load_split, train_registry, Approach, ModelRegistry, Overrides, Stage, Utterance,
};
use sphmm_sid::sphmm::Alpha;

mod config;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "sphmm-sid", version, about = "Speaker identification in emotional speech")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Fusion weight of the prosodic score, in [0, 1].
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Fuse raw log-likelihoods instead of per-observation averages.
    #[arg(long, global = true)]
    no_normalize: bool,
    /// Seed for synthesis and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Corpus directory (manifest.csv and wav/).
    #[arg(long, global = true)]
    corpus_dir: Option<PathBuf>,
    /// Where trained models are written and read.
    #[arg(long, global = true)]
    registry_dir: Option<PathBuf>,
    /// Where CSV and text reports go.
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth {
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
    },
    /// Train every model on the manifest's training split.
    Train {
        /// Also train the pooled models used by --ablation.
        #[arg(long)]
        ablations: bool,
    },
    /// Identify the speaker of one WAV file.
    Identify {
        wav: PathBuf,
        #[command(flatten)]
        approach: ApproachArgs,
    },
    /// Evaluate the test split and write performance and confusion reports.
    Evaluate {
        #[command(flatten)]
        approach: ApproachArgs,
        /// Force the wrong gender and a deranged emotion into later stages.
        #[arg(long, conflicts_with = "oracle")]
        worst_case: bool,
        /// Force the true gender and emotion into later stages.
        #[arg(long)]
        oracle: bool,
    },
    /// Evaluate the test split at alpha = 0.0, 0.1, ..., 1.0.
    Sweep {
        #[command(flatten)]
        approach: ApproachArgs,
    },
    /// Compare two performance reports (second minus first).
    Ttest {
        /// Performance CSVs written by `evaluate`.
        #[arg(num_args = 2, required_unless_present_all = ["first", "second"])]
        reports: Vec<PathBuf>,
        /// Summary as mean,sd,n instead of a report file.
        #[arg(long, requires = "second", conflicts_with = "reports")]
        first: Option<String>,
        #[arg(long, requires = "first", conflicts_with = "reports")]
        second: Option<String>,
        #[arg(long, value_enum, default_value_t = MethodArg::Welch)]
        method: MethodArg,
    },
}

#[derive(Debug, Args)]
struct ApproachArgs {
    #[arg(long, value_enum, default_value_t = ApproachArg::ThreeStage)]
    approach: ApproachArg,
    /// Run an ablation instead of the chosen approach.
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
}

impl ApproachArgs {
    fn resolve(&self) -> Approach {
        match (self.ablation, self.approach) {
            (Some(AblationArg::Exp1), _) => Approach::Exp1,
            (Some(AblationArg::Exp2), _) => Approach::Exp2,
            (Some(AblationArg::Exp3), _) => Approach::Exp3,
            (None, ApproachArg::OneStage) => Approach::OneStage,
            (None, ApproachArg::ThreeStage) => Approach::ThreeStage,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ApproachArg {
    OneStage,
    ThreeStage,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationArg {
    Exp1,
    Exp2,
    Exp3,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    CsdShape,
    Desk,
    Separable,
    ProsodyOnly,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::CsdShape => Preset::CsdShape,
            PresetArg::Desk => Preset::Desk,
            PresetArg::Separable => Preset::Separable,
            PresetArg::ProsodyOnly => Preset::ProsodyOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Welch,
    Pooled,
}

impl From<MethodArg> for TTestMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Welch => TTestMethod::Welch,
            MethodArg::Pooled => TTestMethod::Pooled,
        }
    }
}

/// Config file, then flags.
fn run_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(a) = cli.alpha {
        cfg.alpha = a;
    }
    if cli.no_normalize {
        cfg.normalize = false;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.corpus_dir {
        cfg.paths.corpus_dir = d.clone();
        cfg.paths.manifest = None;
    }
    if let Some(d) = &cli.registry_dir {
        cfg.paths.registry_dir = d.clone();
    }
    if let Some(d) = &cli.report_dir {
        cfg.paths.report_dir = d.clone();
    }
    match &cli.command {
        Command::Synth { preset: Some(p) } => cfg.synth.preset = (*p).into(),
        Command::Train { ablations: true } => cfg.ablations = true,
        _ => {}
    }
    cfg.fusion()?;
    Ok(cfg)
}

fn cmd_synth(cfg: &RunConfig) -> anyhow::Result<String> {
    let spec = cfg.synth_spec()?;
    let dir = &cfg.paths.corpus_dir;
    eprintln!("synthesizing {} corpus into {}", cfg.synth.preset, dir.display());
    let manifest = synthesize_corpus(&spec, dir)?;
    Ok(format!("{} records written to {}\n", manifest.records().len(), dir.display()))
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn cmd_train(cfg: &RunConfig) -> anyhow::Result<String> {
    let config = cfg.registry_config()?;
    let manifest_path = cfg.paths.manifest();
    let manifest = load_manifest(&manifest_path)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    let t0 = Instant::now();
    eprintln!("extracting features from the training split");
    let (utterances, labels) = load_split(&manifest, Split::Train, &FeatureExtractor::default())?;
    eprintln!("training on {} utterances", utterances.len());
    let registry = train_registry(&utterances, &labels, &config)?;
    let dir = &cfg.paths.registry_dir;
    registry.save(dir)?;
    let hash = registry.content_hash()?;
    let provenance = serde_json::json!({
        "manifest": manifest_path,
        "manifest_sha256": sha256_file(&manifest_path)?,
        "registry_sha256": hash,
    });
    std::fs::write(dir.join("corpus.json"), serde_json::to_string_pretty(&provenance)?)?;
    eprintln!("trained in {:.1} s", t0.elapsed().as_secs_f64());
    Ok(format!("{}\nregistry {} (sha256 {hash})\n", registry.counts(), dir.display()))
}

fn load_registry(cfg: &RunConfig) -> anyhow::Result<ModelRegistry> {
    let dir = &cfg.paths.registry_dir;
    ModelRegistry::load(dir).with_context(|| format!("loading registry {}", dir.display()))
}

fn cmd_identify(cfg: &RunConfig, wav: &Path, approach: Approach) -> anyhow::Result<String> {
    let registry = load_registry(cfg)?;
    let audio = ingest_wav(wav).with_context(|| format!("reading {}", wav.display()))?;
    let utterance = Utterance::from_audio(&FeatureExtractor::default(), &audio)?;
    let result = registry.identify(&utterance, approach, cfg.fusion()?, Overrides::default())?;
    let mut out = format!("{}\n", result.predicted);
    for stage in &result.stages {
        let forced = if stage.forced { " (forced)" } else { "" };
        writeln!(out, "{:?} stage{forced}:", stage.stage)?;
        for (i, (c, s)) in stage.candidates.iter().zip(&stage.scores).enumerate() {
            let mark = if i == stage.winner { "*" } else { " " };
            writeln!(out, "  {mark} {c:<24} {s:.4}")?;
        }
    }
    Ok(out)
}

fn load_test(cfg: &RunConfig) -> anyhow::Result<(Vec<Utterance>, Vec<sphmm_sid::labels::Label>)> {
    let path = cfg.paths.manifest();
    let manifest =
        load_manifest(&path).with_context(|| format!("loading manifest {}", path.display()))?;
    eprintln!("extracting features from the test split");
    Ok(load_split(&manifest, Split::Test, &FeatureExtractor::default())?)
}

fn write_report(dir: &Path, name: &str, body: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, approach: Approach, conditioning: Conditioning) -> anyhow::Result<String> {
    if conditioning != Conditioning::Cascade && approach != Approach::ThreeStage {
        bail!("--worst-case and --oracle apply to the three-stage approach only");
    }
    let registry = load_registry(cfg)?;
    let (utterances, labels) = load_test(cfg)?;
    let fusion = cfg.fusion()?;
    eprintln!("evaluating {} utterances", utterances.len());
    let results = eval::evaluate(&registry, &utterances, &labels, approach, fusion, conditioning)?;
    let table = PerformanceTable::from_results(&results)?;
    let stem = format!("{}_{}_a{:.2}", approach.tag(), conditioning.tag(), cfg.alpha);
    let title = format!("speaker identification, {approach}, {}, alpha {:.2}", conditioning.tag(), cfg.alpha);
    let mut text = eval::performance_text(&table, &title);
    let dir = &cfg.paths.report_dir;
    write_report(dir, &format!("performance_{stem}.csv"), &eval::performance_csv(&table))?;
    write_report(dir, &format!("performance_{stem}.txt"), &text)?;

    let mut stages = vec![(ConfusionStage::Gender, Stage::Gender, "gender")];
    if approach.predicts_emotion() {
        stages.push((ConfusionStage::Emotion, Stage::Emotion, "emotion"));
    }
    for (cstage, stage, name) in stages {
        writeln!(text, "{name} accuracy {:.2}", eval::stage_accuracy(&results, stage)?)?;
        let cm = eval::confusion_matrix(&results, cstage, None)?;
        write_report(dir, &format!("confusion-{name}_{stem}.csv"), &eval::confusion_csv(&cm))?;
    }
    Ok(text)
}

fn cmd_sweep(cfg: &RunConfig, approach: Approach) -> anyhow::Result<String> {
    let registry = load_registry(cfg)?;
    let (utterances, labels) = load_test(cfg)?;
    eprintln!("scoring {} utterances", utterances.len());
    let tables = eval::score_tables(&registry, &utterances)?;
    let sweep = eval::alpha_sweep(&registry, &tables, &labels, approach, &Alpha::sweep_grid(), cfg.normalize)?;
    write_report(&cfg.paths.report_dir, &format!("sweep_{}.csv", approach.tag()), &eval::sweep_csv(&sweep))?;
    Ok(eval::sweep_text(&sweep))
}

fn parse_summary(s: &str) -> anyhow::Result<SampleSummary> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [mean, sd, n] = parts[..] else {
        bail!("expected mean,sd,n but got {s:?}");
    };
    Ok(SampleSummary {
        mean: mean.parse().with_context(|| format!("bad mean in {s:?}"))?,
        sd: sd.parse().with_context(|| format!("bad SD in {s:?}"))?,
        n: n.parse().with_context(|| format!("bad n in {s:?}"))?,
    })
}

fn report_summary(path: &Path) -> anyhow::Result<SampleSummary> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(eval::read_performance_csv(&text)?.summary())
}

fn cmd_ttest(
    cfg: &RunConfig,
    reports: &[PathBuf],
    summaries: Option<(&str, &str)>,
    method: TTestMethod,
) -> anyhow::Result<String> {
    let (first, second) = match summaries {
        Some((a, b)) => (parse_summary(a)?, parse_summary(b)?),
        None => (report_summary(&reports[0])?, report_summary(&reports[1])?),
    };
    let r = eval::students_t(first, second, method)?;
    write_report(&cfg.paths.report_dir, &format!("ttest_{method}.csv"), &eval::ttest_csv(&r))?;
    Ok(eval::ttest_text(&r))
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let cfg = run_config(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Synth { .. } => cmd_synth(&cfg),
        Command::Train { .. } => cmd_train(&cfg),
        Command::Identify { wav, approach } => cmd_identify(&cfg, wav, approach.resolve()),
        Command::Evaluate { approach, worst_case, oracle } => {
            let conditioning = match (worst_case, oracle) {
                (true, _) => Conditioning::WorstCase,
                (_, true) => Conditioning::Oracle,
                _ => Conditioning::Cascade,
            };
            cmd_evaluate(&cfg, approach.resolve(), conditioning)
        }
        Command::Sweep { approach } => cmd_sweep(&cfg, approach.resolve()),
        Command::Ttest { reports, first, second, method } => {
            let summaries = first.as_deref().zip(second.as_deref());
            cmd_ttest(&cfg, reports, summaries, (*method).into())
        }
    }
}

/// 2 for usage and configuration problems, 3 for unreadable or bad data.
fn exit_code(err: &anyhow::Error) -> u8 {
    use sphmm_sid::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::MissingCell(_) | E::InvalidConfig(_) | E::UnknownLabel(_) | E::AblationModelsMissing => 2,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            // A closed pipe (`| head`) is not a failure.
            match std::io::stdout().write_all(out.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    eprintln!("error: writing output: {e}");
                    ExitCode::from(3)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
