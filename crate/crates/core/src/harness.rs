//! The `dp`, `train`, `eval` and `rollout` commands.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::dp::{DpCache, DpPlan, DpSolver, ExperienceTuple};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_tuples, write_json, write_tuples};
use crate::model::PendulumState;
use crate::net::MaceParameters;
use crate::policy::{EpisodeRecord, PolicyRuntime};
use crate::trainer::{log_to_csv, train};

/// RNG streams of the experiment seed. Training uses streams from 1 upward
/// and `u64::MAX` for its held-out set.
pub const DP_ROOT_STREAM: u64 = u64::MAX - 1;
pub const EVAL_STREAM: u64 = u64::MAX - 2;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: usize,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>, threads: usize) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            threads: threads.max(1),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Maps `f` over `items` on up to `threads` workers, keeping input order.
fn ordered_map<T: Sync, U: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> U + Sync,
) -> Vec<U> {
    if threads > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    items.iter().map(f).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpSummary {
    pub plans: usize,
    pub tuples: usize,
    pub mean_value: f64,
    pub tuples_path: PathBuf,
    pub plans_path: PathBuf,
}

/// Solves DP rollouts from N0 until `dp.n_tuples` tuples are collected.
pub fn cmd_dp(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<DpSummary> {
    cfg.validate()?;
    ensure_dir(&opts.out_dir)?;
    let solver = DpSolver::new(&cfg.model, &cfg.discretization)?;
    let cache = DpCache::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(DP_ROOT_STREAM);

    let mut plans: Vec<DpPlan> = Vec::new();
    let mut tuples: Vec<ExperienceTuple> = Vec::new();
    let mut empty_batches = 0;
    while tuples.len() < cfg.dp.n_tuples && empty_batches < 10 {
        let roots: Vec<PendulumState> = (0..cfg.dp.batch)
            .map(|_| cfg.training.init_state.sample(&cfg.model, &mut rng))
            .collect();
        let before = tuples.len();
        for plan in solver.plans(&roots, &cache, opts.threads) {
            if tuples.len() >= cfg.dp.n_tuples {
                break;
            }
            tuples.extend(solver.plan_tuples(&plan));
            plans.push(plan);
        }
        empty_batches = if tuples.len() == before {
            empty_batches + 1
        } else {
            0
        };
    }

    let tuples_path = cfg.resolve(&opts.out_dir, &cfg.paths.tuples);
    let plans_path = cfg.resolve(&opts.out_dir, &cfg.paths.plans);
    write_tuples(&tuples_path, &tuples)?;
    write_json(&plans_path, &plans)?;
    let mean_value = if plans.is_empty() {
        0.0
    } else {
        plans.iter().map(|p| p.value).sum::<f64>() / plans.len() as f64
    };
    Ok(DpSummary {
        plans: plans.len(),
        tuples: tuples.len(),
        mean_value,
        tuples_path,
        plans_path,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub initial_heldout_reward: f64,
    pub final_heldout_reward: f64,
    pub weights_path: PathBuf,
    pub log_path: PathBuf,
}

pub fn cmd_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    ensure_dir(&opts.out_dir)?;
    let tuples_path = cfg.resolve(&opts.out_dir, &cfg.paths.tuples);
    let tuples = read_tuples(&tuples_path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", tuples_path.display()),
        )),
        other => other,
    })?;
    let out = train(&cfg.training, &cfg.model, &tuples, opts.threads)?;
    let weights_path = cfg.resolve(&opts.out_dir, &cfg.paths.weights);
    let log_path = cfg.resolve(&opts.out_dir, &cfg.paths.train_log);
    out.params.save(&weights_path)?;
    fs::write(&log_path, log_to_csv(&out.log))?;
    Ok(TrainSummary {
        iterations: out.log.len(),
        initial_heldout_reward: out.initial_heldout_reward,
        final_heldout_reward: out
            .log
            .last()
            .map_or(out.initial_heldout_reward, |r| r.mean_heldout_reward),
        weights_path,
        log_path,
    })
}

fn load_weights(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<MaceParameters> {
    MaceParameters::load(
        &cfg.resolve(&opts.out_dir, &cfg.paths.weights),
        Some(&cfg.training.network),
    )
}

/// Paired policy/DP outcome for one evaluation case.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub case: usize,
    pub initial_state: PendulumState,
    pub policy_reward: f64,
    pub policy_max_impulse: f64,
    pub policy_contacts: Vec<usize>,
    pub policy_failed: bool,
    pub dp: Option<DpSide>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpSide {
    pub reward: f64,
    pub max_impulse: f64,
    pub contacts: Vec<usize>,
    pub failed: bool,
}

impl ComparisonRow {
    pub const HEADER: &'static str = "case,c1,r1,theta1,r1dot,theta1dot,policy_reward,dp_reward,policy_max_impulse,dp_max_impulse,policy_contacts,dp_contacts,policy_failed,dp_failed,winner";

    pub fn winner(&self) -> Option<&'static str> {
        let dp = self.dp.as_ref()?;
        Some(if self.policy_reward > dp.reward {
            "policy"
        } else if self.policy_reward == dp.reward {
            "tie"
        } else {
            "dp"
        })
    }

    pub fn to_csv(&self) -> String {
        let s = &self.initial_state;
        let seq = |c: &[usize]| {
            c.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("-")
        };
        let mut line = format!(
            "{},{},{},{},{},{},{},",
            self.case,
            s.contact,
            fmt_f64(s.r1),
            fmt_f64(s.theta1),
            fmt_f64(s.r1dot),
            fmt_f64(s.theta1dot),
            fmt_f64(self.policy_reward)
        );
        match &self.dp {
            Some(dp) => {
                let _ = write!(
                    line,
                    "{},{},{},{},{},{},{},{}",
                    fmt_f64(dp.reward),
                    fmt_f64(self.policy_max_impulse),
                    fmt_f64(dp.max_impulse),
                    seq(&self.policy_contacts),
                    seq(&dp.contacts),
                    u8::from(self.policy_failed),
                    u8::from(dp.failed),
                    self.winner().unwrap_or("")
                );
            }
            None => {
                let _ = write!(
                    line,
                    ",{},,{},,{},,",
                    fmt_f64(self.policy_max_impulse),
                    seq(&self.policy_contacts),
                    u8::from(self.policy_failed)
                );
            }
        }
        line
    }
}

/// Uniform bins over [0, 1]; a reward of exactly 1 falls in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values {
        let k = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub cases: usize,
    pub mean_policy_reward: f64,
    pub mean_dp_reward: Option<f64>,
    pub policy_wins: usize,
    pub ties: usize,
    pub comparison_path: PathBuf,
}

pub struct EvalResult {
    pub rows: Vec<ComparisonRow>,
    pub episodes: Vec<EpisodeRecord>,
    pub plans: Vec<DpPlan>,
    pub summary: EvalSummary,
}

pub fn eval_states(cfg: &ExperimentConfig) -> Vec<PendulumState> {
    cfg.eval
        .initial_state
        .sample_many(&cfg.model, cfg.eval.n_cases, cfg.rng_seed, EVAL_STREAM)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn cmd_eval(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<EvalResult> {
    cfg.validate()?;
    let params = load_weights(cfg, opts)?;
    let runtime = PolicyRuntime::new(&params, &cfg.model, cfg.training.max_depth)?;
    let states = eval_states(cfg);
    let episodes = ordered_map(&states, opts.threads, |s| runtime.run_episode(s));
    let plans = if cfg.eval.compare_dp {
        let solver = DpSolver::new(&cfg.model, &cfg.discretization)?;
        solver.plans(&states, &DpCache::new(), opts.threads)
    } else {
        Vec::new()
    };

    let rows: Vec<ComparisonRow> = episodes
        .iter()
        .enumerate()
        .map(|(case, ep)| ComparisonRow {
            case,
            initial_state: ep.initial_state,
            policy_reward: ep.episode_reward,
            policy_max_impulse: ep.max_impulse(),
            policy_contacts: ep.contact_sequence.clone(),
            policy_failed: ep.failed(),
            dp: plans.get(case).map(|p| DpSide {
                reward: p.value,
                max_impulse: p.max_impulse(),
                contacts: std::iter::once(p.initial_state.contact)
                    .chain(p.contacts())
                    .collect(),
                failed: p.failed(),
            }),
        })
        .collect();

    let results = cfg.resolve(&opts.out_dir, &cfg.paths.results);
    ensure_dir(&results)?;
    let mut csv = String::from(ComparisonRow::HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    let comparison_path = results.join("comparison.csv");
    fs::write(&comparison_path, csv)?;

    let mut summary_csv = String::from(EpisodeRecord::SUMMARY_HEADER);
    summary_csv.push('\n');
    for ep in &episodes {
        summary_csv.push_str(&ep.summary_row());
        summary_csv.push('\n');
    }
    fs::write(results.join("episodes.csv"), summary_csv)?;

    let bins = cfg.eval.histogram_bins;
    let policy_hist = histogram(
        &rows.iter().map(|r| r.policy_reward).collect::<Vec<_>>(),
        bins,
    );
    let dp_hist = histogram(&plans.iter().map(|p| p.value).collect::<Vec<_>>(), bins);
    let mut hist = String::from("bin_lo,bin_hi,policy_count,dp_count\n");
    for k in 0..bins {
        let _ = writeln!(
            hist,
            "{},{},{},{}",
            fmt_f64(k as f64 / bins as f64),
            fmt_f64((k + 1) as f64 / bins as f64),
            policy_hist[k],
            if cfg.eval.compare_dp {
                dp_hist[k].to_string()
            } else {
                String::new()
            }
        );
    }
    fs::write(results.join("histogram.csv"), hist)?;

    for &case in cfg.eval.profile_cases.iter().filter(|&&c| c < rows.len()) {
        let mut prof = String::from("method,step,contact,impulse\n");
        for (k, st) in episodes[case].steps.iter().enumerate() {
            let _ = writeln!(prof, "policy,{},{},{}", k, st.contact, fmt_f64(st.impulse));
        }
        if let Some(plan) = plans.get(case) {
            for (k, (a, j)) in plan.actions.iter().zip(&plan.impulses).enumerate() {
                let _ = writeln!(prof, "dp,{},{},{}", k, a.next_contact, fmt_f64(*j));
            }
        }
        fs::write(
            results.join(format!("impulse_profile_case{case}.csv")),
            prof,
        )?;
    }

    let summary = EvalSummary {
        cases: rows.len(),
        mean_policy_reward: mean(rows.iter().map(|r| r.policy_reward)),
        mean_dp_reward: cfg
            .eval
            .compare_dp
            .then(|| mean(plans.iter().map(|p| p.value))),
        policy_wins: rows.iter().filter(|r| r.winner() == Some("policy")).count(),
        ties: rows.iter().filter(|r| r.winner() == Some("tie")).count(),
        comparison_path,
    };
    Ok(EvalResult {
        rows,
        episodes,
        plans,
        summary,
    })
}

/// Where a single rollout starts.
#[derive(Clone, Debug, PartialEq)]
pub enum RolloutStart {
    /// Index into the evaluation sample.
    Case(usize),
    State(PendulumState),
}

pub fn cmd_rollout(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    start: &RolloutStart,
    timed: bool,
) -> Result<(EpisodeRecord, PathBuf)> {
    cfg.validate()?;
    let (s0, name) = match start {
        RolloutStart::Case(case) => {
            let states =
                cfg.eval
                    .initial_state
                    .sample_many(&cfg.model, case + 1, cfg.rng_seed, EVAL_STREAM);
            (states[*case], format!("rollout_case{case}.json"))
        }
        RolloutStart::State(s) => (*s, "rollout.json".to_string()),
    };
    if !s0.is_valid(&cfg.model) {
        return Err(Error::ConfigInvalid(format!(
            "invalid initial state {s0:?}"
        )));
    }
    let params = load_weights(cfg, opts)?;
    let runtime = PolicyRuntime::new(&params, &cfg.model, cfg.training.max_depth)?;
    let rec = if timed {
        runtime.run_episode_timed(&s0)
    } else {
        runtime.run_episode(&s0)
    };
    let results = cfg.resolve(&opts.out_dir, &cfg.paths.results);
    ensure_dir(&results)?;
    let path = results.join(name);
    write_json(&path, &rec)?;
    Ok((rec, path))
}
