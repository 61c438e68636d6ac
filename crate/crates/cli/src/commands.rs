use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use smp_client::{ClientConfig, ScoringClient};
use smp_core::api::{
    process_advantage, process_score, process_vote, AdvantageGroup, AdvantageRequest, AdvantageResult, ScoreItem,
    ScoreRequest, ScoreResult, VoteRequest, VoteResult,
};
use smp_core::config::RunConfig;
use smp_core::curriculum::{curriculum_order, DifficultyRecord};
use smp_core::eval::{grouped_report, random_bound, vote_curve, Ballot, EvalReport, RandomBound};
use smp_core::io::{read_jsonl, read_prices, write_jsonl_to, write_prices};
use smp_core::labeling::{
    assign_splits, balance_labels, label_universe, pick_ood_stocks, training_samples, DateRange, LabeledSample,
    SplitPolicy,
};
use smp_core::parsing::{self, FormatReport, ParsedResponse};
use smp_core::synth::{synth_prices, synth_rollouts, AccuracyProfile, SynthConfig};
use smp_core::{seed, MovementLabel};
use smp_service::{AppState, Server};

use crate::{Common, Remote};

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Validate after flag overrides.
fn finish(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

fn output(common: &Common) -> Result<Box<dyn Write>> {
    Ok(match &common.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn emit_jsonl<T: Serialize>(common: &Common, items: impl IntoIterator<Item = T>) -> Result<()> {
    let out = output(common)?;
    write_jsonl_to(out, items).context("cannot write output")
}

fn emit_json<T: Serialize>(common: &Common, value: &T) -> Result<()> {
    let mut out = output(common)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn client(url: &str, cfg: &RunConfig) -> Result<ScoringClient> {
    let mut cc = ClientConfig::new(url);
    cc.batch_cap = cfg.service.batch_cap;
    Ok(ScoringClient::new(cc)?)
}

#[derive(Args)]
pub struct LabelArgs {
    /// CSV with header stock_id,date,open,high,low,close,volume.
    prices: PathBuf,
    /// Number of held-out stocks (capped at the universe size).
    #[arg(long)]
    ood_stocks: Option<usize>,
    /// Held-out date range, START..END inclusive.
    #[arg(long)]
    ood_dates: Option<DateRange>,
    /// Keep only the training split, per the configured OOD stock policy.
    #[arg(long)]
    train_only: bool,
    /// Downsample every class to the minority count.
    #[arg(long)]
    balance: bool,
}

pub fn label(common: &Common, args: LabelArgs) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = args.ood_stocks {
        cfg.ood.stock_count = n;
    }
    if let Some(d) = args.ood_dates {
        cfg.ood.dates = Some(d);
    }
    let cfg = finish(cfg)?;

    let bars = read_prices(&args.prices)?;
    let samples =
        label_universe(&bars).with_context(|| format!("cannot label {}", args.prices.display()))?;
    let stocks: Vec<&str> = samples.iter().map(|s| s.stock_id.as_str()).collect();
    let policy = SplitPolicy {
        ood_stocks: pick_ood_stocks(stocks, cfg.ood.stock_count, seed::subseed(cfg.seed, "label.ood_stocks")),
        ood_dates: cfg.ood.dates,
    };
    let mut samples = assign_splits(&samples, &policy);
    if args.train_only {
        samples = training_samples(&samples, cfg.ood.stock_policy);
    }
    if args.balance {
        samples = balance_labels(&samples, seed::subseed(cfg.seed, "label.balance"))?;
    }
    emit_jsonl(common, &samples)
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    n_stocks: usize,
    #[arg(long, default_value_t = 30)]
    n_days: usize,
    /// Daily log-return standard deviation.
    #[arg(long, default_value_t = 0.03)]
    volatility: f64,
    /// Simulated rollouts per sample.
    #[arg(long, default_value_t = 32)]
    votes: usize,
    /// Per-vote accuracy: `0.5` or `up=0.6,hold=0.4,down=0.5`.
    #[arg(long, default_value = "0.5")]
    accuracy: AccuracyProfile,
}

pub fn synth(common: &Common, args: SynthArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let Some(dir) = &common.out else {
        bail!(smp_core::Error::Validation("synth needs --out DIR".into()));
    };
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let sc = SynthConfig {
        seed: cfg.seed,
        n_stocks: args.n_stocks,
        n_days: args.n_days,
        volatility: args.volatility,
        votes_per_sample: args.votes,
        accuracy: args.accuracy,
        ..SynthConfig::default()
    };
    let bars = synth_prices(&sc)?;
    let samples = label_universe(&bars)?;
    let (rollouts, ballots) = synth_rollouts(&samples, &sc)?;

    let create = |name: &str| -> Result<BufWriter<File>> {
        let path = dir.join(name);
        Ok(BufWriter::new(
            File::create(&path).with_context(|| format!("cannot create {}", path.display()))?,
        ))
    };
    let mut w = create("prices.csv")?;
    write_prices(&mut w, &bars)?;
    w.flush()?;
    write_jsonl_to(create("rollouts.jsonl")?, &rollouts)?;
    write_jsonl_to(create("votes.jsonl")?, &ballots)?;
    Ok(())
}

#[derive(Args)]
pub struct ParseArgs {
    /// JSONL of `{"id", "text"}`.
    input: PathBuf,
}

#[derive(Deserialize)]
struct ResponseLine {
    id: String,
    text: String,
}

#[derive(Serialize)]
struct ParseLine {
    id: String,
    format_score: f64,
    report: FormatReport,
    parsed: Option<ParsedResponse>,
}

pub fn parse(common: &Common, args: ParseArgs) -> Result<()> {
    load_config(common)?;
    let lines: Vec<ResponseLine> = read_jsonl(&args.input)?;
    emit_jsonl(
        common,
        lines.into_iter().map(|l| {
            let (parsed, report) = parsing::parse(&l.text);
            ParseLine {
                id: l.id,
                format_score: parsing::format_score(&report),
                report,
                parsed,
            }
        }),
    )
}

#[derive(Args)]
pub struct ScoreArgs {
    /// JSONL of `{"id", "text", "truth_label"}`; extra fields are ignored.
    input: PathBuf,
    #[command(flatten)]
    remote: Remote,
}

pub async fn score(common: &Common, args: ScoreArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let items: Vec<ScoreItem> = read_jsonl(&args.input)?;
    let results: Vec<ScoreResult> = match &args.remote.remote {
        None => {
            process_score(
                &ScoreRequest {
                    items,
                    weights: Some(cfg.weights),
                },
                &cfg.weights,
            )?
            .results
        }
        Some(url) => {
            let client = client(url, &cfg)?;
            let mut out = Vec::with_capacity(items.len());
            // Ids must be unique across the whole file, not just per chunk.
            check_unique(items.iter().map(|i| i.id.as_str()), "id")?;
            for chunk in items.chunks(cfg.service.batch_cap) {
                out.extend(client.score_batch(chunk.to_vec(), Some(cfg.weights)).await?.results);
            }
            out
        }
    };
    emit_jsonl(common, &results)
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            bail!(smp_core::Error::Validation(format!("duplicate {what} {id:?}")));
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct AdvantageArgs {
    /// JSONL of `{"group_id", "rewards", "token_logprobs"?}`, or score output with --from-scores.
    input: PathBuf,
    /// Group score results by sample (`<sample>#<j>` ids) and use their totals as rewards.
    #[arg(long)]
    from_scores: bool,
    #[command(flatten)]
    remote: Remote,
}

/// Split `<sample>#<j>` into the sample id and rollout index.
fn rollout_key(id: &str) -> Result<(&str, usize)> {
    id.rsplit_once('#')
        .and_then(|(s, j)| Some((s, j.parse().ok()?)))
        .ok_or_else(|| smp_core::Error::Validation(format!("rollout id {id:?} is not <sample>#<index>")).into())
}

/// Score results per sample, ordered by rollout index.
fn group_scores(results: &[ScoreResult]) -> Result<BTreeMap<&str, Vec<(usize, &ScoreResult)>>> {
    let mut groups: BTreeMap<&str, Vec<(usize, &ScoreResult)>> = BTreeMap::new();
    for r in results {
        let (sample, j) = rollout_key(&r.id)?;
        groups.entry(sample).or_default().push((j, r));
    }
    for (sample, g) in groups.iter_mut() {
        g.sort_by_key(|(j, _)| *j);
        if g.windows(2).any(|w| w[0].0 == w[1].0) {
            bail!(smp_core::Error::Validation(format!("sample {sample} repeats a rollout index")));
        }
    }
    Ok(groups)
}

pub async fn advantage(common: &Common, args: AdvantageArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let groups: Vec<AdvantageGroup> = if args.from_scores {
        let scores: Vec<ScoreResult> = read_jsonl(&args.input)?;
        group_scores(&scores)?
            .into_iter()
            .map(|(sample, g)| AdvantageGroup {
                group_id: sample.to_string(),
                rewards: g.iter().map(|(_, r)| r.reward.total).collect(),
                token_logprobs: None,
            })
            .collect()
    } else {
        read_jsonl(&args.input)?
    };
    let results: Vec<AdvantageResult> = match &args.remote.remote {
        None => process_advantage(&AdvantageRequest { groups, config: None }, &cfg.grpo)?.results,
        Some(url) => {
            check_unique(groups.iter().map(|g| g.group_id.as_str()), "group_id")?;
            let client = client(url, &cfg)?;
            let overrides = smp_core::api::GrpoOverrides {
                epsilon: Some(cfg.grpo.epsilon),
                kl_coef: Some(cfg.grpo.kl_coef),
                std_guard: Some(cfg.grpo.std_guard),
            };
            let mut out = Vec::with_capacity(groups.len());
            for chunk in groups.chunks(cfg.service.batch_cap) {
                out.extend(client.advantages_for_groups(chunk.to_vec(), Some(overrides)).await?.results);
            }
            out
        }
    };
    emit_jsonl(common, &results)
}

#[derive(Args)]
pub struct CurriculumArgs {
    /// JSONL of difficulty records, or score output with --from-scores.
    input: PathBuf,
    /// Count correct rollouts per sample from score results (`<sample>#<j>` ids).
    #[arg(long)]
    from_scores: bool,
    /// Rollouts per sample used for binning.
    #[arg(long)]
    rollouts: Option<u32>,
}

pub fn curriculum(common: &Common, args: CurriculumArgs) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = args.rollouts {
        cfg.curriculum.rollouts = n;
    }
    let cfg = finish(cfg)?;
    let records: Vec<DifficultyRecord> = if args.from_scores {
        let scores: Vec<ScoreResult> = read_jsonl(&args.input)?;
        let n = cfg.curriculum.rollouts as usize;
        group_scores(&scores)?
            .into_iter()
            .map(|(sample, g)| {
                if g.len() < n {
                    bail!(smp_core::Error::Validation(format!(
                        "sample {sample} has {} rollouts, {n} needed",
                        g.len()
                    )));
                }
                let correct = g[..n]
                    .iter()
                    .filter(|(_, r)| cfg.curriculum.correctness.is_correct(&r.reward))
                    .count();
                Ok(DifficultyRecord {
                    sample_id: sample.to_string(),
                    n_rollouts: cfg.curriculum.rollouts,
                    n_correct: correct as u32,
                })
            })
            .collect::<Result<_>>()?
    } else {
        read_jsonl(&args.input)?
    };
    emit_jsonl(common, curriculum_order(&records)?)
}

#[derive(Args)]
pub struct VoteArgs {
    /// JSONL of `{"sample_id", "votes"}`.
    input: PathBuf,
    #[command(flatten)]
    remote: Remote,
}

pub async fn vote(common: &Common, args: VoteArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let ballots: Vec<Ballot> = read_jsonl(&args.input)?;
    let results: Vec<VoteResult> = match &args.remote.remote {
        None => process_vote(&VoteRequest { ballots })?.results,
        Some(url) => {
            let client = client(url, &cfg)?;
            let mut out = Vec::with_capacity(ballots.len());
            for chunk in ballots.chunks(cfg.service.batch_cap) {
                out.extend(client.vote(chunk.to_vec()).await?.results);
            }
            out
        }
    };
    emit_jsonl(common, &results)
}

#[derive(Args)]
pub struct EvalArgs {
    /// Labeled samples JSONL (truth and split tags).
    #[arg(long)]
    samples: PathBuf,
    /// Ballots JSONL; produces one report per k.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    votes: Option<PathBuf>,
    /// Vote output JSONL (`{"sample_id", "winner"}`); produces a single report.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Vote counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Also write a plot-ready CSV of macro-F1 by k, split and label.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalOutput {
    seed: u64,
    reports: Vec<EvalReport>,
    random_bound: RandomBound,
}

pub fn eval(common: &Common, args: EvalArgs) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(ks) = args.ks {
        cfg.vote_ks = ks;
    }
    let cfg = finish(cfg)?;
    let samples: Vec<LabeledSample> = read_jsonl(&args.samples)?;
    let reports = match (&args.votes, &args.predictions) {
        (Some(path), _) => {
            let ballots: Vec<Ballot> = read_jsonl(path)?;
            if ballots.len() != samples.len() {
                bail!(smp_core::Error::Validation(format!(
                    "{} ballots for {} samples",
                    ballots.len(),
                    samples.len()
                )));
            }
            vote_curve(&ballots, &samples, &cfg.vote_ks, seed::subseed(cfg.seed, "eval.votes"))?
        }
        (None, Some(path)) => {
            let preds: Vec<VoteResult> = read_jsonl(path)?;
            let pairs: Vec<(String, MovementLabel)> = preds.into_iter().map(|p| (p.sample_id, p.winner)).collect();
            vec![grouped_report(&pairs, &samples)?]
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let truth: Vec<MovementLabel> = samples.iter().map(|s| s.label).collect();
    let seeds: Vec<u64> = (0..cfg.random_seeds as u64).collect();
    let out = EvalOutput {
        seed: cfg.seed,
        random_bound: random_bound(&truth, &seeds)?,
        reports,
    };
    if let Some(path) = &args.csv {
        write_csv(path, &out)?;
    }
    emit_json(common, &out)
}

fn write_csv(path: &Path, out: &EvalOutput) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    // Label rows carry the class's F1 within the whole set; split rows carry macro-F1.
    writeln!(w, "k,scope,group,count,f1")?;
    for r in &out.reports {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        writeln!(w, "{k},all,all,{},{}", r.global.count, r.global.macro_f1)?;
        for (split, s) in &r.per_split {
            writeln!(w, "{k},split,{},{},{}", split.as_str(), s.count, s.macro_f1)?;
        }
        for (label, s) in &r.per_label {
            writeln!(w, "{k},label,{label},{},{}", s.count, r.global.per_class_f1[label])?;
        }
    }
    writeln!(w, ",random_bound,mean,,{}", out.random_bound.mean)?;
    w.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct ServeArgs {
    /// Listen address, e.g. 127.0.0.1:8080.
    #[arg(long, env = "SMP_LISTEN")]
    listen: Option<String>,
    /// Maximum items, groups or ballots per request.
    #[arg(long, env = "SMP_BATCH_CAP")]
    batch_cap: Option<usize>,
}

pub async fn serve(common: &Common, args: ServeArgs) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(l) = args.listen {
        cfg.service.listen = l;
    }
    if let Some(c) = args.batch_cap {
        cfg.service.batch_cap = c;
    }
    let cfg = finish(cfg)?;
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stdout)
        .init();
    let server = Server::bind(&cfg.service.listen, AppState::from_config(&cfg))
        .await
        .with_context(|| format!("cannot listen on {}", cfg.service.listen))?;
    eprintln!("listening on http://{}", server.local_addr()?);
    server.run().await?;
    Ok(())
}
