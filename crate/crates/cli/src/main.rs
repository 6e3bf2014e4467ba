use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use soco_core::drwm::{evaluate_bce, train_drwm, TrainConfig};
use soco_core::experiment::run_case;
use soco_core::formats::{self, FileKind, HeadFile, MetricsFile, RankingsFile};
use soco_core::gradcheck::{run_gradcheck, Fault, GradcheckConfig};
use soco_core::losses::{top1_accuracy, train_classifier};
use soco_core::metrics::evaluate;
use soco_core::model::validate;
use soco_core::simulator::{build_case_fixture, CaseStudy};
use soco_core::{rank_dataset, BalanceStrategy, CharacterId, Dataset, ModalityMask, Mode, RunConfig, SimulatorConfig};

const OUT_DIR_ENV: &str = "SOCO_OUT_DIR";

#[derive(Parser)]
#[command(name = "soco", version, about = "Social context re-ranking for character search")]
struct Cli {
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic movie dataset.
    Generate(GenerateArgs),
    /// Rank every gallery detection for every query.
    Rank(RankArgs),
    /// Score a rankings file against dataset ground truth.
    Eval(EvalArgs),
    /// Train the relation head on labelled scene contexts.
    TrainDrwm(TrainDrwmArgs),
    /// Train the identity classifier on detection embeddings.
    TrainClassifier(TrainArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Build and check one of the hand-made case studies.
    Case(CaseArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON simulator config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    VisualOnly,
    Socosearch,
}

#[derive(Clone, Copy, ValueEnum)]
enum BalanceArg {
    Adaptive,
    Mean,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Both,
    VisualOnlyCtx,
    TextualOnlyCtx,
    None,
}

impl From<MaskArg> for ModalityMask {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Both => ModalityMask::Both,
            MaskArg::VisualOnlyCtx => ModalityMask::VisualOnlyCtx,
            MaskArg::TextualOnlyCtx => ModalityMask::TextualOnlyCtx,
            MaskArg::None => ModalityMask::None,
        }
    }
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Relation head file from train-drwm.
    #[arg(long)]
    relation_head: Option<PathBuf>,
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    balance: Option<BalanceArg>,
    /// Seed for the random balance strategy.
    #[arg(long)]
    balance_seed: Option<u64>,
    #[arg(long, value_enum)]
    modality_mask: Option<MaskArg>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    cmc_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics report written next to the rankings.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    rankings: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// CMC depth; defaults to the value recorded in the rankings file.
    #[arg(long)]
    cmc_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainDrwmArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Context halves visible during training.
    #[arg(long, value_enum, default_value = "both")]
    modality_mask: MaskArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Bce,
    Ce,
    Triplet,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Corrupt one analytic gradient to exercise the checker.
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<FaultArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Case1,
    Case2,
}

#[derive(Args)]
struct CaseArgs {
    #[arg(value_enum)]
    case: CaseArg,
    /// Fixture dataset path.
    #[arg(long)]
    dataset_out: Option<PathBuf>,
    /// Case report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Check(String),
    Input(String),
}

impl From<soco_core::Error> for Failure {
    fn from(e: soco_core::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out_dir = cli.out_dir.clone();
    let result = match cli.command {
        Command::Generate(a) => generate(&out_dir, a),
        Command::Rank(a) => rank(&out_dir, a),
        Command::Eval(a) => eval(&out_dir, a),
        Command::TrainDrwm(a) => train_relation(&out_dir, a),
        Command::TrainClassifier(a) => train_identity(&out_dir, a),
        Command::Gradcheck(a) => gradcheck(&out_dir, a),
        Command::Case(a) => case(&out_dir, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn output(out_dir: &Path, explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| out_dir.join(name))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    let data: Dataset = formats::read_dataset(path)?;
    if let Some(v) = validate(&data).first() {
        return Err(Failure::Input(format!("{}: {v}", path.display())));
    }
    Ok(data)
}

fn generate(out_dir: &Path, a: GenerateArgs) -> CmdResult {
    let mut cfg: SimulatorConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SimulatorConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (data, _) = soco_core::generate_movie::<f64>(&cfg)?;
    let path = output(out_dir, a.out, "dataset.jsonl");
    formats::write_dataset(&path, &data)?;
    println!(
        "wrote {} scenes, {} detections to {}",
        data.scenes.len(),
        data.num_detections(),
        path.display()
    );
    Ok(())
}

fn run_config(a: &RankArgs) -> Result<RunConfig, Failure> {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::VisualOnly => Mode::VisualOnly,
            ModeArg::Socosearch => Mode::Socosearch,
        };
    }
    match (a.balance, a.balance_seed) {
        (Some(BalanceArg::Adaptive), _) => cfg.balance_strategy = BalanceStrategy::Adaptive,
        (Some(BalanceArg::Mean), _) => cfg.balance_strategy = BalanceStrategy::Mean,
        (Some(BalanceArg::Random), Some(seed)) => cfg.balance_strategy = BalanceStrategy::Random { seed },
        (Some(BalanceArg::Random), None) => {
            return Err(Failure::Input("--balance random requires --balance-seed".into()))
        }
        (None, Some(seed)) => match cfg.balance_strategy {
            BalanceStrategy::Random { .. } => cfg.balance_strategy = BalanceStrategy::Random { seed },
            _ => return Err(Failure::Input("--balance-seed only applies to --balance random".into())),
        },
        (None, None) => {}
    }
    if let Some(m) = a.modality_mask {
        cfg.modality_mask = m.into();
    }
    if let Some(l) = a.layers {
        cfg.layers = l;
    }
    if let Some(k) = a.cmc_k {
        cfg.cmc_k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn rank(out_dir: &Path, a: RankArgs) -> CmdResult {
    let cfg = run_config(&a)?;
    let data = load_dataset(&a.dataset)?;
    let head = match &a.relation_head {
        Some(p) => Some(formats::read_head::<f64>(p, FileKind::RelationHead)?.head),
        None => None,
    };
    let out = rank_dataset(&data, &cfg, head.as_ref())?;
    let report = evaluate(&out.rankings, &data, cfg.cmc_k)?;
    let path = output(out_dir, a.out, "rankings.jsonl");
    formats::write_rankings(
        &path,
        &RankingsFile {
            config: cfg,
            rankings: out.rankings,
            scenes: out.scenes,
        },
    )?;
    let report_path = output(out_dir, a.report, "report.jsonl");
    formats::write_metrics(
        &report_path,
        &MetricsFile {
            config: json!({ "run": cfg }),
            report: report.clone(),
        },
    )?;
    println!(
        "mAP {:.4} mINP {:.4} R1 {:.4} -> {}",
        report.map,
        report.minp,
        report.rank1(),
        path.display()
    );
    Ok(())
}

fn eval(out_dir: &Path, a: EvalArgs) -> CmdResult {
    let data = load_dataset(&a.dataset)?;
    let rankings: RankingsFile = formats::read_rankings(&a.rankings)?;
    let k = a.cmc_k.unwrap_or(rankings.config.cmc_k);
    let report = evaluate(&rankings.rankings, &data, k)?;
    let path = output(out_dir, a.out, "metrics.jsonl");
    formats::write_metrics(
        &path,
        &MetricsFile {
            config: json!({ "run": rankings.config, "cmc_k": k }),
            report: report.clone(),
        },
    )?;
    println!(
        "mAP {:.4} mINP {:.4} R1 {:.4} over {} queries -> {}",
        report.map,
        report.minp,
        report.rank1(),
        report.num_evaluated,
        path.display()
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg
}

fn train_relation(out_dir: &Path, a: TrainDrwmArgs) -> CmdResult {
    let cfg = train_config(&a.train);
    let data = load_dataset(&a.train.dataset)?.with_modality_mask(a.modality_mask.into());
    let trained = train_drwm(&data.scenes, &cfg)?;
    let bce = evaluate_bce(&data.scenes, &trained.head, cfg.clamp_eps)?;
    let path = output(out_dir, a.train.out, "relation_head.jsonl");
    formats::write_head(
        &path,
        FileKind::RelationHead,
        &HeadFile {
            head: trained.head,
            train: cfg,
            loss_trace: trained.loss_trace,
        },
    )?;
    println!("mean BCE {bce:.6} after {} epochs -> {}", cfg.epochs, path.display());
    Ok(())
}

fn train_identity(out_dir: &Path, a: TrainArgs) -> CmdResult {
    let cfg = train_config(&a);
    let data = load_dataset(&a.dataset)?;
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut ids: Vec<CharacterId> = Vec::new();
    for q in &data.queries {
        features.push(q.embedding.0.clone());
        ids.push(q.id);
    }
    for scene in &data.scenes {
        for det in &scene.detections {
            features.push(det.embedding.0.clone());
            ids.push(det.true_id);
        }
    }
    let trained = train_classifier(&features, &ids, data.num_characters(), &cfg)?;
    let accuracy = top1_accuracy(&features, &ids, &trained.head)?;
    let path = output(out_dir, a.out, "classifier_head.jsonl");
    let final_ce = trained.loss_trace.last().copied();
    formats::write_head(
        &path,
        FileKind::ClassifierHead,
        &HeadFile {
            head: trained.head,
            train: cfg,
            loss_trace: trained.loss_trace,
        },
    )?;
    match final_ce {
        Some(ce) => println!("mean CE {ce:.6}, top-1 accuracy {accuracy:.4} -> {}", path.display()),
        None => println!("untrained head, top-1 accuracy {accuracy:.4} -> {}", path.display()),
    }
    Ok(())
}

fn gradcheck(out_dir: &Path, a: GradcheckArgs) -> CmdResult {
    let mut cfg = GradcheckConfig::default();
    if let Some(n) = a.instances {
        cfg.instances = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(h) = a.step {
        cfg.step = h;
    }
    if let Some(t) = a.tolerance {
        cfg.tolerance = t;
    }
    cfg.fault = match a.inject_fault {
        None => Fault::None,
        Some(FaultArg::Bce) => Fault::Bce,
        Some(FaultArg::Ce) => Fault::Ce,
        Some(FaultArg::Triplet) => Fault::Triplet,
    };
    let report = run_gradcheck(&cfg)?;
    let path = output(out_dir, a.out, "gradcheck.jsonl");
    formats::write_record(&path, FileKind::Gradcheck, &report)?;
    for c in &report.checks {
        println!(
            "{:8} {} max relative error {:.3e} over {} instances (tolerance {:.0e})",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.max_relative_error,
            c.instances,
            c.tolerance
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(
            "analytic gradient disagrees with finite differences".into(),
        ))
    }
}

fn case(out_dir: &Path, a: CaseArgs) -> CmdResult {
    let (case, name) = match a.case {
        CaseArg::Case1 => (CaseStudy::Case1, "case1"),
        CaseArg::Case2 => (CaseStudy::Case2, "case2"),
    };
    let data = build_case_fixture::<f64>(case);
    let data_path = output(out_dir, a.dataset_out, &format!("{name}_dataset.jsonl"));
    formats::write_dataset(&data_path, &data)?;
    let report = run_case(case)?;
    let path = output(out_dir, a.out, &format!("{name}.jsonl"));
    formats::write_record(&path, FileKind::Case, &report)?;
    let show = |order: &[CharacterId]| order.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
    println!("visual order: {}", show(&report.visual_order));
    println!("fused order:  {}", show(&report.fused_order));
    if report.passed {
        println!("{name} PASS -> {}", path.display());
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "{name} did not reproduce the expected re-ranking"
        )))
    }
}
