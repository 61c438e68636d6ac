//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use smp_client::{ClientConfig, ScoringClient};
use smp_core::api::{
    process_advantage, process_score, AdvantageGroup, AdvantageRequest, AdvantageResult, ScoreItem, ScoreRequest,
};
use smp_core::curriculum::{bin, DifficultyBin};
use smp_core::eval::{default_random_seeds, majority_vote, random_bound, vote_curve, Ballot};
use smp_core::grpo::{clipped_surrogate, group_advantages, group_objective, GrpoConfig, TokenLogProbs};
use smp_core::labeling::{classify, LabeledSample, SplitTag};
use smp_core::parsing::{format_score, parse, render, EvidenceScores, ParsedResponse};
use smp_core::reward::{filter_for_sft, RewardWeights};
use smp_core::synth::{synth_balanced_ballots, AccuracyProfile};
use smp_core::MovementLabel::{self, Down, Hold, Up};

type Check = Result<(), String>;

/// Name, time limit in seconds, check.
type Criterion = (&'static str, u64, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($fmt)+)),
        }
    };
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("label thresholds", 1, label_thresholds),
        ("random bound", 5, random_bound_band),
        ("advantage oracle", 1, advantage_oracle),
        ("gradient check", 10, gradient_check),
        ("surrogate spot values", 1, surrogate_spots),
        ("curriculum exhaustive", 1, curriculum_exhaustive),
        ("voting oracle", 2, voting_oracle),
        ("scaling sanity", 10, scaling_sanity),
        ("parser corpus", 2, parser_corpus),
        ("rejection filter", 1, rejection_filter),
        ("service equivalence", 5, service_equivalence),
        ("end-to-end determinism", 60, end_to_end_determinism),
    ];
    let mut failed = 0;
    for (name, limit_s, check) in criteria {
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let outcome = outcome.and_then(|_| {
            if elapsed > Duration::from_secs(limit_s) {
                Err(format!("took {elapsed:.2?}, limit {limit_s} s"))
            } else {
                Ok(())
            }
        });
        match outcome {
            Ok(()) => println!("PASS {name} ({elapsed:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn label_thresholds() -> Check {
    let grid = [-5.0, -3.01, -3.0, -2.99, 0.0, 2.99, 3.0, 3.01, 5.0];
    let want = [Down, Down, Hold, Hold, Hold, Hold, Hold, Up, Up];
    let got: Vec<MovementLabel> = grid.iter().map(|&x| classify(x).unwrap()).collect();
    ensure!(got == want, "got {got:?}");
    Ok(())
}

fn random_bound_band() -> Check {
    let truth: Vec<MovementLabel> = (0..9000).map(|i| MovementLabel::ALL[i % 3]).collect();
    let b = random_bound(&truth, &default_random_seeds()).map_err(|e| e.to_string())?;
    ensure!(b.per_seed.len() == 32, "{} seeds", b.per_seed.len());
    ensure!((b.mean - 0.3333).abs() <= 0.01, "mean macro-F1 {}", b.mean);
    Ok(())
}

/// Two-pass mean and population standard deviation.
fn oracle_advantages(r: &[f64]) -> Vec<f64> {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return vec![0.0; r.len()];
    }
    r.iter().map(|x| (x - mean) / std).collect()
}

fn advantage_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for g in 0..1000 {
        let rewards: Vec<f64> = match g % 4 {
            0 => vec![rng.random_range(0.0..4.0); 8],
            1 => (0..8).map(|_| f64::from(rng.random_range(0..5u8))).collect(),
            _ => (0..8).map(|_| rng.random_range(-3.0..5.0)).collect(),
        };
        let got = group_advantages(&rewards, 1e-8).map_err(|e| e.to_string())?;
        let want = oracle_advantages(&rewards);
        if g % 4 == 0 {
            ensure!(got.iter().all(|&a| a == 0.0), "group {g}: constant rewards gave {got:?}");
        }
        for (a, b) in got.iter().zip(&want) {
            ensure!((a - b).abs() <= 1e-12, "group {g}: {a} vs {b}");
        }
    }
    Ok(())
}

/// Objective contribution of one token, before the 1/(G |o_i|) weight,
/// split into its surrogate and KL parts.
fn token_parts(adv: f64, cur: f64, old: f64, reference: f64, eps: f64, beta: f64) -> (f64, f64) {
    let rho = (cur - old).exp();
    let surrogate = (rho * adv).min(rho.clamp(1.0 - eps, 1.0 + eps) * adv);
    let d = reference - cur;
    (surrogate, -beta * (d.exp() - d - 1.0))
}

fn gradient_check() -> Check {
    let cfg = GrpoConfig::default();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut done = 0;
    while done < 100 {
        let g = 4;
        let lens: Vec<usize> = (0..g).map(|_| rng.random_range(1..=6)).collect();
        let rewards: Vec<f64> = (0..g).map(|_| f64::from(rng.random_range(0..5u8))).collect();
        let shape = |rng: &mut ChaCha8Rng, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| -> Vec<Vec<f64>> {
            lens.iter().map(|&n| (0..n).map(|_| f(rng)).collect()).collect()
        };
        let current = shape(&mut rng, &mut |r| r.random_range(-3.0..-0.05));
        let old: Vec<Vec<f64>> = current
            .iter()
            .map(|row| row.iter().map(|c| c - rng.random_range(-0.4..0.4)).collect())
            .collect();
        let reference: Vec<Vec<f64>> = current
            .iter()
            .map(|row| row.iter().map(|c| c + rng.random_range(-0.5..0.5)).collect())
            .collect();
        let near_kink = current.iter().flatten().zip(old.iter().flatten()).any(|(c, o)| {
            let rho = (c - o).exp();
            (rho - (1.0 - cfg.epsilon)).abs() <= 1e-4 || (rho - (1.0 + cfg.epsilon)).abs() <= 1e-4
        });
        if near_kink {
            continue;
        }
        let lp = TokenLogProbs {
            current: current.clone(),
            old: old.clone(),
            reference: reference.clone(),
        };
        let out = group_objective(&rewards, &lp, &cfg).map_err(|e| e.to_string())?;
        let adv = oracle_advantages(&rewards);
        for i in 0..g {
            let weight = 1.0 / (g as f64 * lens[i] as f64);
            for t in 0..lens[i] {
                // Only token (i, t) depends on current[i][t], so the objective's
                // central difference is that token's weighted difference.
                let at = |c: f64| token_parts(adv[i], c, old[i][t], reference[i][t], cfg.epsilon, cfg.kl_coef);
                let (s_hi, k_hi) = at(current[i][t] + h);
                let (s_lo, k_lo) = at(current[i][t] - h);
                let numeric = weight * ((s_hi - s_lo) / (2.0 * h) + (k_hi - k_lo) / (2.0 * h));
                let analytic = out.gradients[i][t];
                let scale = analytic.abs().max(numeric.abs());
                if scale == 0.0 {
                    continue;
                }
                let rel = (analytic - numeric).abs() / scale;
                ensure!(rel <= 1e-6, "instance {done} token ({i},{t}): analytic {analytic}, numeric {numeric}");
            }
        }
        done += 1;
    }
    Ok(())
}

fn surrogate_spots() -> Check {
    let s = |a, c, o, e| clipped_surrogate(a, c, o, e).map_err(|e| e.to_string());
    for a in [-2.5, -1.0, 0.0, 0.3, 1.0, 7.0] {
        for lp in [-5.0, -0.7, 0.0] {
            let v = s(a, lp, lp, 0.2)?;
            ensure!(v == a, "rho=1, A={a}: {v}");
        }
    }
    let v = s(1.0, 2f64.ln(), 0.0, 0.2)?;
    ensure!(v == 1.2, "A=1, rho=2: {v}");
    for (c, o) in [(0.0, 0.0), (2f64.ln(), 0.0), (-1.0, 0.0), (0.0, -3.0)] {
        let v = s(0.0, c, o, 0.2)?;
        ensure!(v == 0.0, "A=0: {v}");
    }
    Ok(())
}

fn curriculum_exhaustive() -> Check {
    for c in 0..=8 {
        let want = match c {
            0..=2 => DifficultyBin::Hard,
            3..=5 => DifficultyBin::Medium,
            _ => DifficultyBin::Easy,
        };
        let got = bin(c, 8).map_err(|e| e.to_string())?;
        ensure!(got == want, "n_correct {c}: {got:?}");
    }
    Ok(())
}

fn voting_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for b in 0..10_000 {
        let n = rng.random_range(1..=33);
        let votes: Vec<MovementLabel> = (0..n).map(|_| *MovementLabel::ALL.choose(&mut rng).unwrap()).collect();
        let count = |l| votes.iter().filter(|&&v| v == l).count();
        // Highest count wins; among equals the first of hold, down, up.
        let mut want = Hold;
        for l in [Down, Up] {
            if count(l) > count(want) {
                want = l;
            }
        }
        let got = majority_vote(&votes).map_err(|e| e.to_string())?;
        ensure!(got == want, "ballot {b} {votes:?}: {got} vs {want}");
    }
    Ok(())
}

fn dummy_samples(truth: &[MovementLabel]) -> Vec<LabeledSample> {
    let day0 = chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    truth
        .iter()
        .enumerate()
        .map(|(i, &label)| LabeledSample {
            stock_id: format!("S{i:05}"),
            date: day0,
            change_pct: 0.0,
            label,
            split: SplitTag::Train,
        })
        .collect()
}

fn scaling_sanity() -> Check {
    let acc = AccuracyProfile::uniform(0.5).map_err(|e| e.to_string())?;
    let run = || -> Result<(f64, f64), String> {
        let (truth, votes) = synth_balanced_ballots(3000, 32, &acc, 404).map_err(|e| e.to_string())?;
        let samples = dummy_samples(&truth);
        let ballots: Vec<Ballot> = samples
            .iter()
            .zip(votes)
            .map(|(s, votes)| Ballot { sample_id: s.id(), votes })
            .collect();
        let curve = vote_curve(&ballots, &samples, &[1, 32], 404).map_err(|e| e.to_string())?;
        Ok((curve[0].global.macro_f1, curve[1].global.macro_f1))
    };
    let (k1, k32) = run()?;
    ensure!(k32 > k1, "k=32 {k32} does not exceed k=1 {k1}");
    let again = run()?;
    ensure!(again.0.to_bits() == k1.to_bits() && again.1.to_bits() == k32.to_bits(), "not deterministic");
    Ok(())
}

#[derive(Deserialize)]
struct CorpusCase {
    id: String,
    text: String,
    expect: CorpusExpect,
}

#[derive(Deserialize)]
struct CorpusExpect {
    parse_ok: bool,
    missing_fields: Vec<String>,
    rules: Vec<String>,
}

fn random_reasoning(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 12] = [
        "revenue", " ", "\n", "<score>", "<answer>up</answer>", "3.5%", "é", "股价", "<think>", "-", "down: 4", "</answer>",
    ];
    let n = rng.random_range(0..12);
    (0..n).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

fn parser_corpus() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/parser_corpus.jsonl");
    let cases: Vec<CorpusCase> = smp_core::io::read_jsonl(&path).map_err(|e| e.to_string())?;
    let valid = cases.iter().filter(|c| c.expect.parse_ok).count();
    ensure!(valid >= 20 && cases.len() - valid >= 20, "corpus has {valid} valid of {}", cases.len());
    for c in &cases {
        let (parsed, report) = parse(&c.text);
        let want_score = if c.expect.parse_ok { 1.0 } else { 0.0 };
        ensure!(format_score(&report) == want_score, "{}: format score", c.id);
        ensure!(parsed.is_some() == c.expect.parse_ok, "{}: parsed presence", c.id);
        ensure!(report.missing_fields == c.expect.missing_fields, "{}: missing {:?}", c.id, report.missing_fields);
        let got: BTreeSet<&str> = report.violations.iter().map(|v| v.rule.id()).collect();
        let want: BTreeSet<&str> = c.expect.rules.iter().map(String::as_str).collect();
        ensure!(got == want, "{}: rules {got:?}", c.id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for i in 0..500 {
        let score = |rng: &mut ChaCha8Rng| match rng.random_range(0..3) {
            0 => f64::from(rng.random_range(0..=10u8)),
            1 => (rng.random_range(0.0..10.0) * 100.0f64).round() / 100.0,
            _ => rng.random_range(0.0..=10.0),
        };
        let change_pct = match rng.random_range(0..4) {
            0 => (rng.random_range(-20.0..20.0) * 100.0f64).round() / 100.0,
            1 => rng.random_range(-1e6..1e6),
            2 => rng.random_range(-1e-6..1e-6),
            _ => [-3.0, 3.0, 0.0, -0.0][rng.random_range(0..4)],
        };
        let p = ParsedResponse {
            reasoning_text: random_reasoning(&mut rng),
            evidence_scores: EvidenceScores {
                up: score(&mut rng),
                down: score(&mut rng),
            },
            change_pct,
            answer: *MovementLabel::ALL.choose(&mut rng).unwrap(),
        };
        let text = render(&p).map_err(|e| format!("round trip {i}: {e}"))?;
        let (back, report) = parse(&text);
        ensure!(back.as_ref() == Some(&p), "round trip {i}: {report:?}\n{text}");
        ensure!(back.unwrap().change_pct.to_bits() == p.change_pct.to_bits(), "round trip {i}: change bits");
    }
    Ok(())
}

fn response(answer: &str, change: &str) -> String {
    format!("<think>Checked filings.</think>\n<score>\nup: 6\ndown: 3\n</score>\n<change_pct>{change}</change_pct>\n<answer>{answer}</answer>")
}

fn rejection_filter() -> Check {
    let truth = LabeledSample {
        stock_id: "AAA".into(),
        date: chrono::NaiveDate::from_ymd_opt(2024, 5, 6).unwrap(),
        change_pct: 4.1,
        label: Up,
        split: SplitTag::Train,
    };
    let candidates = [
        response("down", "-4.0"),
        response("up", "4.5"),
        response("up", "1.0"),
        response("up", "3.2").replace("<answer>up</answer>", ""),
        response("hold", "0.5"),
        response("UP", "+3.01%"),
        response("up", "5").replace("up: 6", "up: 12"),
        format!("{}<answer>up</answer>", response("up", "4")),
    ];
    let accepted = filter_for_sft(&candidates, &truth);
    ensure!(accepted == [1, 5], "accepted {accepted:?}");
    Ok(())
}

fn service_equivalence() -> Check {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let state = smp_service::AppState::from_config(&smp_core::config::RunConfig::default());
        let (url, server) = smp_service::spawn_local(state).await.map_err(|e| e.to_string())?;
        let client = ScoringClient::new(ClientConfig::new(&url)).map_err(|e| e.to_string())?;

        let mut rng = ChaCha8Rng::seed_from_u64(606);
        let items: Vec<ScoreItem> = (0..64)
            .map(|i| {
                let answer = MovementLabel::ALL[rng.random_range(0..3)];
                let change = format!("{}", rng.random_range(-9.0..9.0f64));
                let mut text = response(answer.as_str(), &change);
                if i % 9 == 0 {
                    text = text.replace("</score>", "");
                }
                ScoreItem {
                    id: format!("r{i}"),
                    text,
                    truth_label: MovementLabel::ALL[rng.random_range(0..3)],
                }
            })
            .collect();
        let weights = Some(RewardWeights::new(0.7, 1.9, 0.3).map_err(|e| e.to_string())?);
        let remote = client.score_batch(items.clone(), weights).await.map_err(|e| e.to_string())?;
        let local = process_score(&ScoreRequest { items, weights }, &RewardWeights::default()).map_err(|e| e.to_string())?;
        ensure!(remote.results.len() == 64, "{} results", remote.results.len());
        for (r, l) in remote.results.iter().zip(&local.results) {
            let bits = |b: &smp_core::reward::RewardBreakdown| {
                [b.format, b.accuracy, b.consistency, b.total].map(f64::to_bits)
            };
            ensure!(r.id == l.id && bits(&r.reward) == bits(&l.reward), "score {} differs", r.id);
        }

        let groups: Vec<AdvantageGroup> = (0..16)
            .map(|g| {
                let n = rng.random_range(2..=8);
                let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
                let token_logprobs = (g % 2 == 1).then(|| {
                    let cur: Vec<Vec<f64>> = (0..n)
                        .map(|_| (0..rng.random_range(1..10)).map(|_| rng.random_range(-4.0..-0.01)).collect())
                        .collect();
                    let jitter = |rng: &mut ChaCha8Rng, m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                        m.iter().map(|r| r.iter().map(|x| x + rng.random_range(-0.3..0.3)).collect()).collect()
                    };
                    TokenLogProbs {
                        old: jitter(&mut rng, &cur),
                        reference: jitter(&mut rng, &cur),
                        current: cur,
                    }
                });
                AdvantageGroup {
                    group_id: format!("g{g}"),
                    rewards,
                    token_logprobs,
                }
            })
            .collect();
        let remote = client
            .advantages_for_groups(groups.clone(), None)
            .await
            .map_err(|e| e.to_string())?;
        let local = process_advantage(&AdvantageRequest { groups, config: None }, &GrpoConfig::default())
            .map_err(|e| e.to_string())?;
        ensure!(remote.results.len() == 16, "{} groups", remote.results.len());
        let bits = |r: &AdvantageResult| {
            (
                r.advantages.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                r.objective.map(f64::to_bits),
                r.gradients
                    .as_ref()
                    .map(|g| g.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>()),
            )
        };
        for (r, l) in remote.results.iter().zip(&local.results) {
            ensure!(r.group_id == l.group_id && bits(r) == bits(l), "group {} differs", r.group_id);
        }
        server.abort();
        Ok(())
    })
}

fn smp(args: &[&str]) -> Check {
    let out = Command::new(env!("CARGO_BIN_EXE_smp"))
        .args(args)
        .env_remove("SMP_SERVICE_URL")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "smp {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |name: &str| -> String { dir.join(name).to_string_lossy().into_owned() };
    smp(&["synth", "--seed", "42", "--n-stocks", "12", "--n-days", "40", "--votes", "32", "--out", &p("")])?;
    smp(&["label", &p("prices.csv"), "--seed", "42", "--ood-stocks", "3", "--ood-dates", "2024-02-12..2024-02-23", "--out", &p("samples.jsonl")])?;
    smp(&["score", &p("rollouts.jsonl"), "--out", &p("scores.jsonl")])?;
    smp(&["advantage", "--from-scores", &p("scores.jsonl"), "--out", &p("advantages.jsonl")])?;
    smp(&["curriculum", "--from-scores", &p("scores.jsonl"), "--out", &p("curriculum.jsonl")])?;
    smp(&["vote", &p("votes.jsonl"), "--out", &p("predictions.jsonl")])?;
    smp(&["eval", "--seed", "42", "--samples", &p("samples.jsonl"), "--votes", &p("votes.jsonl"), "--csv", &p("eval.csv"), "--out", &p("eval.json")])?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.path()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    files.sort();
    files
        .into_iter()
        .map(|f| {
            let bytes = std::fs::read(&f).map_err(|e| e.to_string())?;
            Ok((f.file_name().unwrap().to_string_lossy().into_owned(), bytes))
        })
        .collect()
}

fn end_to_end_determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    ensure!(first.len() == 10, "{} artifacts", first.len());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure!(!x.is_empty(), "{name} is empty");
        ensure!(x == y, "{name} differs between runs");
    }
    Ok(())
}
