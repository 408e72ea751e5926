//! `fgreward` command line: `score`, `mask2box`, `analyze`, `simulate`.
//!
//! Exit codes: 0 success, 1 I/O or schema error, 2 usage error.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{self, VarianceReport};
use crate::mask2box::{read_pgm, to_boxes};
use crate::model::{BBox, ResponseRecord, RewardConfig, Sample, Scheme};
use crate::scoring::{score_group, ScoreRecordOut};
use crate::simulator::{compare_schemes, variance_snapshot, Scenario, TrainTrace};

pub const JOBS_ENV: &str = "FGREWARD_JOBS";

#[derive(Debug, Parser)]
#[command(
    name = "fgreward",
    version,
    about = "Localization-aware reward scoring for GRPO anomaly detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score grouped responses against ground-truth samples.
    Score(ScoreArgs),
    /// Convert PGM anomaly masks into pseudo ground-truth boxes.
    Mask2box(MaskArgs),
    /// Zero-variance report over a scored JSONL file.
    Analyze(AnalyzeArgs),
    /// Train the toy categorical policy under several reward schemes.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    /// Weight of the count term in the localization reward.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// KL regularization weight.
    #[arg(long, default_value_t = 0.04)]
    pub beta: f64,
    /// cls | cls_count | cls_loc | cls_loc_format | cls_random
    #[arg(long, default_value = "cls_loc_format")]
    pub scheme: Scheme,
    /// Groups with population reward std below this get zero advantages.
    #[arg(long, default_value_t = 1e-6)]
    pub std_eps: f64,
    /// Std of the Gaussian reward noise used by cls_random.
    #[arg(long, default_value_t = 0.3)]
    pub random_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl RewardArgs {
    fn config(&self) -> RewardConfig {
        RewardConfig {
            alpha: self.alpha,
            beta: self.beta,
            scheme: self.scheme,
            std_eps: self.std_eps,
            random_sigma: self.random_sigma,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// JSON array of samples: {id, label, gt_boxes, image_width?, image_height?}.
    #[arg(long)]
    pub samples: PathBuf,
    /// JSONL, one {sample_id, response_text, token_logprobs_policy?, token_logprobs_ref?} per line.
    #[arg(long)]
    pub responses: PathBuf,
    /// Scored JSONL output (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Variance report JSON output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Responses per group.
    #[arg(long, default_value_t = 6)]
    pub group_size: usize,
    /// Worker threads (default: $FGREWARD_JOBS, else all cores).
    #[arg(long, env = JOBS_ENV)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub reward: RewardArgs,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// P2 or P5 PGM masks; pixels > 127 are foreground.
    #[arg(required = true)]
    pub masks: Vec<PathBuf>,
    /// Odd side length of the square dilation kernel.
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    /// Drop boxes with smaller area (pixels^2).
    #[arg(long, default_value_t = 0.0)]
    pub min_area: f64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Scored JSONL produced by `score`.
    pub scored: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub std_eps: f64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// Also write per-group variances as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON.
    pub scenario: PathBuf,
    /// Comma-separated reward schemes.
    #[arg(long, value_delimiter = ',', default_value = "cls,cls_count,cls_loc")]
    pub schemes: Vec<Scheme>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overrides both the rollout and the reward-noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving trace.csv and summary.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

fn json_err(path: &Path, line: Option<usize>, e: serde_json::Error) -> CliError {
    // serde_json positions are relative to the parsed text
    let line = line.unwrap_or(e.line());
    CliError::data(format!("{}:{line}: {e}", path.display()))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_err(path, e))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let mut w = output(path)?;
    let shown = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::data(format!("{}: {e}", shown.display())))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&shown, e))
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Score(a) => cmd_score(&a),
        Command::Mask2box(a) => cmd_mask2box(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn load_samples(path: &Path) -> CliResult<Vec<Sample>> {
    let samples: Vec<Sample> =
        serde_json::from_reader(open(path)?).map_err(|e| json_err(path, None, e))?;
    let mut ids = HashSet::new();
    for s in &samples {
        s.validate()
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if !ids.insert(s.id.as_str()) {
            return Err(CliError::data(format!(
                "{}: duplicate sample id `{}`",
                path.display(),
                s.id
            )));
        }
    }
    Ok(samples)
}

struct PendingGroup {
    group_id: usize,
    repeat: usize,
    sample_index: usize,
    first_line: usize,
    responses: Vec<ResponseRecord>,
}

fn thread_pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| CliError::data(e.to_string()))
}

fn cmd_score(a: &ScoreArgs) -> CliResult<()> {
    if a.group_size < 2 {
        return Err(CliError::usage("--group-size must be at least 2"));
    }
    let cfg = a.reward.config();
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let pool = thread_pool(a.jobs)?;
    let samples = load_samples(&a.samples)?;
    let index: std::collections::HashMap<&str, usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();

    let mut out = output(a.out.as_deref())?;
    let out_name = a.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let batch_size = pool.current_num_threads() * 8;
    let mut group_rewards: Vec<Vec<f64>> = Vec::new();

    let mut flush = |batch: &mut Vec<PendingGroup>,
                     group_rewards: &mut Vec<Vec<f64>>|
     -> CliResult<()> {
        let scored: Vec<CliResult<Vec<ScoreRecordOut>>> = pool.install(|| {
            batch
                .par_iter()
                .map(|g| {
                    score_group(
                        &samples[g.sample_index],
                        &g.responses,
                        &cfg,
                        g.group_id,
                        g.repeat,
                    )
                    .map_err(|e| {
                        CliError::data(format!("{}:{}: {e}", a.responses.display(), g.first_line))
                    })
                })
                .collect()
        });
        for records in scored {
            let records = records?;
            group_rewards.push(records.iter().map(|r| r.total).collect());
            for r in &records {
                serde_json::to_writer(&mut out, r)
                    .map_err(|e| CliError::data(format!("{}: {e}", out_name.display())))?;
                writeln!(out).map_err(|e| io_err(&out_name, e))?;
            }
        }
        batch.clear();
        Ok(())
    };

    let reader = open(&a.responses)?;
    let mut finished: HashSet<String> = HashSet::new();
    let mut batch: Vec<PendingGroup> = Vec::new();
    let mut current: Option<(String, usize)> = None; // (sample id, groups emitted)
    let mut run: Vec<ResponseRecord> = Vec::new();
    let mut run_start = 0usize;
    let mut group_id = 0usize;
    let mut last_line = 0usize;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        last_line = lineno;
        let line = line.map_err(|e| io_err(&a.responses, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResponseRecord =
            serde_json::from_str(&line).map_err(|e| json_err(&a.responses, Some(lineno), e))?;
        rec.validate()
            .map_err(|e| CliError::data(format!("{}:{lineno}: {e}", a.responses.display())))?;
        let Some(&sample_index) = index.get(rec.sample_id.as_str()) else {
            return Err(CliError::data(format!(
                "{}:{lineno}: unknown sample id `{}`",
                a.responses.display(),
                rec.sample_id
            )));
        };

        let same = current.as_ref().is_some_and(|(id, _)| *id == rec.sample_id);
        if !same {
            if !run.is_empty() {
                return Err(CliError::data(format!(
                    "{}:{lineno}: group for `{}` has {} responses, expected {}",
                    a.responses.display(),
                    current.as_ref().map_or("", |c| c.0.as_str()),
                    run.len(),
                    a.group_size
                )));
            }
            if let Some((id, _)) = current.take() {
                finished.insert(id);
            }
            if finished.contains(&rec.sample_id) {
                return Err(CliError::data(format!(
                    "{}:{lineno}: responses for `{}` are not contiguous",
                    a.responses.display(),
                    rec.sample_id
                )));
            }
            current = Some((rec.sample_id.clone(), 0));
        }
        if run.is_empty() {
            run_start = lineno;
        }
        run.push(rec);
        if run.len() == a.group_size {
            let (_, repeat) = current.as_mut().expect("current sample");
            batch.push(PendingGroup {
                group_id,
                repeat: *repeat,
                sample_index,
                first_line: run_start,
                responses: std::mem::take(&mut run),
            });
            *repeat += 1;
            group_id += 1;
            if batch.len() >= batch_size {
                flush(&mut batch, &mut group_rewards)?;
            }
        }
    }
    if !run.is_empty() {
        return Err(CliError::data(format!(
            "{}:{last_line}: trailing group has {} responses, expected {}",
            a.responses.display(),
            run.len(),
            a.group_size
        )));
    }
    flush(&mut batch, &mut group_rewards)?;
    out.flush().map_err(|e| io_err(&out_name, e))?;

    let report = analytics::report(&group_rewards, cfg.std_eps, Some(cfg.scheme))
        .map_err(|e| CliError::data(e.to_string()))?;
    eprint!("{}", VarianceReport::table(std::slice::from_ref(&report)));
    if let Some(p) = &a.report {
        write_json(Some(p), &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MaskBoxes<'a> {
    path: &'a str,
    boxes: Vec<BBox>,
}

fn cmd_mask2box(a: &MaskArgs) -> CliResult<()> {
    if a.kernel.is_multiple_of(2) {
        return Err(CliError::usage(format!(
            "--kernel must be odd and >= 1, got {}",
            a.kernel
        )));
    }
    let names: Vec<String> = a.masks.iter().map(|p| p.display().to_string()).collect();
    let results: Vec<CliResult<Vec<BBox>>> = a
        .masks
        .par_iter()
        .map(|p| {
            let mask = read_pgm(p).map_err(|e| CliError::data(e.to_string()))?;
            to_boxes(&mask, a.kernel, a.iterations, a.min_area)
                .map_err(|e| CliError::data(format!("{}: {e}", p.display())))
        })
        .collect();
    let results = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    if results.len() == 1 {
        write_json(a.out.as_deref(), &results[0])
    } else {
        let entries: Vec<MaskBoxes> = names
            .iter()
            .zip(results)
            .map(|(path, boxes)| MaskBoxes { path, boxes })
            .collect();
        write_json(a.out.as_deref(), &entries)
    }
}

fn cmd_analyze(a: &AnalyzeArgs) -> CliResult<()> {
    if !(a.std_eps.is_finite() && a.std_eps > 0.0) {
        return Err(CliError::usage("--std-eps must be > 0"));
    }
    let reader = open(&a.scored)?;
    let mut groups: Vec<Vec<f64>> = Vec::new();
    let mut scheme: Option<Scheme> = None;
    let mut current: Option<usize> = None;
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| io_err(&a.scored, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecordOut =
            serde_json::from_str(&line).map_err(|e| json_err(&a.scored, Some(lineno), e))?;
        match scheme {
            None => scheme = Some(rec.scheme),
            Some(s) if s != rec.scheme => {
                return Err(CliError::data(format!(
                    "{}:{lineno}: scheme {} differs from earlier {}",
                    a.scored.display(),
                    rec.scheme,
                    s
                )))
            }
            _ => {}
        }
        if current != Some(rec.group_id) {
            if !seen.insert(rec.group_id) {
                return Err(CliError::data(format!(
                    "{}:{lineno}: group {} is not contiguous",
                    a.scored.display(),
                    rec.group_id
                )));
            }
            current = Some(rec.group_id);
            groups.push(Vec::new());
        }
        groups.last_mut().expect("open group").push(rec.total);
    }
    let report = analytics::report(&groups, a.std_eps, scheme)
        .map_err(|e| CliError::data(format!("{}: {e}", a.scored.display())))?;
    if let Some(p) = &a.csv {
        std::fs::write(p, report.variance_csv()).map_err(|e| io_err(p, e))?;
    }
    match a.format {
        ReportFormat::Json => write_json(a.out.as_deref(), &report),
        ReportFormat::Table => {
            let mut w = output(a.out.as_deref())?;
            let shown = a.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
            w.write_all(VarianceReport::table(&[report]).as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| io_err(&shown, e))
        }
    }
}

/// Per-scheme headline numbers written to `summary.json`.
#[derive(Debug, Serialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub final_accuracy: f64,
    pub final_expected_accuracy: f64,
    pub final_mean_reward: f64,
    pub final_mean_kl: f64,
    pub mean_zero_variance_fraction: f64,
    pub modal_r_loc_mean: f64,
    pub modal_count_correct: f64,
}

impl From<&TrainTrace> for SchemeSummary {
    fn from(t: &TrainTrace) -> Self {
        let last = t.epochs.last();
        Self {
            scheme: t.scheme,
            final_accuracy: t.final_accuracy,
            final_expected_accuracy: last.map_or(0.0, |e| e.expected_accuracy),
            final_mean_reward: last.map_or(0.0, |e| e.mean_reward),
            final_mean_kl: last.map_or(0.0, |e| e.mean_kl),
            mean_zero_variance_fraction: t.mean_zero_variance_fraction(),
            modal_r_loc_mean: t.modal_r_loc_mean,
            modal_count_correct: t.modal_count_correct,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub group_size: usize,
    pub samples: usize,
    pub schemes: Vec<SchemeSummary>,
    /// Reference-policy responses scored under each scheme.
    pub variance_snapshot: Vec<VarianceReport>,
}

/// `scheme,epoch,...` rows, one per epoch per scheme.
pub fn trace_csv(traces: &[TrainTrace]) -> String {
    let mut s = String::from(
        "scheme,epoch,mean_reward,zero_variance_fraction,accuracy,expected_accuracy,mean_kl\n",
    );
    for t in traces {
        for e in &t.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.scheme,
                e.epoch,
                e.mean_reward,
                e.zero_variance_fraction,
                e.accuracy,
                e.expected_accuracy,
                e.mean_kl
            ));
        }
    }
    s
}

pub fn load_scenario(path: &Path) -> Result<Scenario, String> {
    let sc: Scenario = serde_json::from_reader(
        File::open(path)
            .map(BufReader::new)
            .map_err(|e| format!("{}: {e}", path.display()))?,
    )
    .map_err(|e| format!("{}:{}: {e}", path.display(), e.line()))?;
    Ok(sc)
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    if a.schemes.is_empty() {
        return Err(CliError::usage("--schemes must name at least one scheme"));
    }
    let mut sc = load_scenario(&a.scenario).map_err(CliError::data)?;
    if let Some(e) = a.epochs {
        sc.epochs = e;
    }
    if let Some(lr) = a.lr {
        sc.learning_rate = lr;
    }
    if let Some(seed) = a.seed {
        sc.seed = seed;
        sc.reward.seed = seed;
    }
    let fail =
        |e: crate::simulator::SimError| CliError::data(format!("{}: {e}", a.scenario.display()));
    let traces = compare_schemes(&sc, &a.schemes).map_err(fail)?;
    let snapshot = variance_snapshot(&sc, &a.schemes).map_err(fail)?;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let trace_path = a.out_dir.join("trace.csv");
    std::fs::write(&trace_path, trace_csv(&traces)).map_err(|e| io_err(&trace_path, e))?;
    let summary = SimulationSummary {
        seed: sc.seed,
        epochs: sc.epochs,
        learning_rate: sc.learning_rate,
        group_size: sc.group_size,
        samples: sc.samples.len(),
        schemes: traces.iter().map(SchemeSummary::from).collect(),
        variance_snapshot: snapshot,
    };
    write_json(Some(&a.out_dir.join("summary.json")), &summary)
}
