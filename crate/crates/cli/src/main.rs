use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use irdqn_core::baselines::{oracle_search, train_handcrafted, write_oracle_report, HandcraftedPolicy};
use irdqn_core::dqn::{train, write_curve_csv, Checkpoint, DqnPolicy};
use irdqn_core::experiment::{
    format_table, load_results, make_synthetic, report, suite, CrossvalResult, Experiment, ExperimentConfig,
    FoldResult, PolicyKind, QueryResult, RunSpec,
};
use irdqn_core::sim::{simulate_episode, Simulator};
use irdqn_core::FeatureConfig;
use irdqn_service::{AppState, PolicySpec, ServiceConfig};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "irdqn", version, about = "Interactive retrieval with deep Q-learning")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic collection (corpus.jsonl, queries.jsonl, qrels.tsv).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy on every query and save it.
    Train {
        #[command(flatten)]
        common: Common,
        /// dqn or handcrafted.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a policy on every query.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<String>,
        /// Saved model for dqn or handcrafted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate one policy, or a suite of runs, and write a report.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "suite")]
        policy: Option<String>,
        /// table, layers or topn.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Best action sequence per query by exhaustive search.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge results.json files into one table and curve set.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
    /// Serve the HTTP session API.
    Serve {
        #[command(flatten)]
        common: Common,
        /// DQN checkpoint offered as policy "dqn".
        #[arg(long)]
        model: Option<PathBuf>,
        /// Hand-crafted model offered as policy "handcrafted".
        #[arg(long)]
        handcrafted: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
    },
    /// Print the default configuration.
    Config,
}

/// Saved hand-crafted baseline.
#[derive(Serialize, Deserialize)]
struct HandcraftedFile {
    features: FeatureConfig,
    policy: HandcraftedPolicy,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn policy_kind(flag: &Option<String>, cfg: &ExperimentConfig) -> Result<PolicyKind> {
    Ok(match flag {
        Some(p) => p.parse()?,
        None => cfg.policy,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn synth(common: &Common, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let s = make_synthetic(&cfg.synthetic, cfg.seed)?;
    s.write(out)?;
    println!(
        "wrote {} documents, {} queries to {}",
        s.corpus.len(),
        s.queries.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(common: &Common, policy: &Option<String>, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let kind = policy_kind(policy, &cfg)?;
    let mut ex = Experiment::load(cfg.clone())?;
    let qids = ex.query_ids();
    create_dir(out)?;
    match kind {
        PolicyKind::Dqn => {
            ex.sim.set_observation(cfg.features)?;
            let outcome = train(&mut ex.sim, &qids, &qids, &cfg.trainer, cfg.seed)?;
            let ck = Checkpoint::new(&outcome.model, &cfg.trainer, &cfg.features, outcome.train_steps);
            ck.save(&out.join("model.json"))?;
            write_curve_csv(&out.join("curve.csv"), &outcome.curve)?;
            if let Some(last) = outcome.curve.last() {
                println!("final curve point: return {:.2}, MAP {:.4}", last.mean_return, last.mean_map);
            }
            println!("wrote {}", out.join("model.json").display());
        }
        PolicyKind::Handcrafted => {
            let outcome = train_handcrafted(&mut ex.sim, &qids, &cfg.handcrafted, cfg.seed)?;
            let file = HandcraftedFile {
                features: cfg.handcrafted.features,
                policy: outcome.policy,
            };
            write_json(&out.join("handcrafted.json"), &file)?;
            println!(
                "FVI ran {} iterations; wrote {}",
                outcome.residuals.len(),
                out.join("handcrafted.json").display()
            );
        }
        other => bail!("policy `{}` has nothing to train (use dqn or handcrafted)", other.name()),
    }
    Ok(())
}

fn summary(label: &str, queries: Vec<QueryResult>) -> CrossvalResult {
    CrossvalResult::new(label.to_owned(), vec![FoldResult::new(0, queries)], Vec::new())
}

fn eval_cmd(common: &Common, policy: &Option<String>, model: &Option<PathBuf>, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let kind = policy_kind(policy, &cfg)?;
    let mut ex = Experiment::load(cfg.clone())?;
    let qids = ex.query_ids();
    let n = cfg.eval.episodes;
    let need_model = || model.as_ref().with_context(|| format!("--model is required for policy {}", kind.name()));
    let (queries, trajectories) = match kind {
        PolicyKind::Firstpass => (ex.evaluate_firstpass(&qids)?, Vec::new()),
        PolicyKind::Random => (ex.evaluate_random(&qids, cfg.eval.random_episodes)?, Vec::new()),
        PolicyKind::Oracle => (ex.evaluate_oracle(&qids, n)?, Vec::new()),
        PolicyKind::Dqn | PolicyKind::Handcrafted => {
            let (mut p, features): (Box<dyn irdqn_core::Policy>, FeatureConfig) = if kind == PolicyKind::Dqn {
                let ck = Checkpoint::load(need_model()?)?;
                (Box::new(DqnPolicy { model: ck.model()? }), ck.config.features)
            } else {
                let f: HandcraftedFile = read_json(need_model()?)?;
                (Box::new(f.policy), f.features)
            };
            let results = ex.evaluate_policy(p.as_mut(), features, &qids, n)?;
            let seed = ex.eval_seeds(1)[0];
            let mut records = Vec::new();
            for q in &qids {
                records.extend(simulate_episode(&mut ex.sim, p.as_mut(), q, seed)?.records());
            }
            (results, records)
        }
    };
    create_dir(out)?;
    let result = summary(kind.name(), queries);
    write_json(&out.join("eval.json"), &result)?;
    if !trajectories.is_empty() {
        let path = out.join("trajectories.jsonl");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for r in &trajectories {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    print!("{}", format_table(std::slice::from_ref(&result)));
    Ok(())
}

fn crossval_cmd(common: &Common, policy: &Option<String>, suite_name: &Option<String>, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let runs = match suite_name {
        Some(s) => suite(s, &cfg)?,
        None => {
            let mut c = cfg.clone();
            c.policy = policy_kind(policy, &cfg)?;
            vec![RunSpec::from_config(&c)]
        }
    };
    let mut ex = Experiment::load(cfg)?;
    let mut results = Vec::new();
    for run in &runs {
        tracing::info!(run = %run.label, "cross-validating");
        results.push(ex.crossval(run)?);
    }
    report(&results, out)?;
    print!("{}", format_table(&results));
    Ok(())
}

fn oracle_cmd(common: &Common, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let mut ex = Experiment::load(cfg.clone())?;
    let seed = ex.eval_seeds(1)[0];
    let mut results = Vec::new();
    for q in ex.query_ids() {
        results.push(oracle_search(&mut ex.sim, &q, cfg.eval.oracle_max_len, seed)?);
    }
    create_dir(out)?;
    write_oracle_report(&out.join("oracle.jsonl"), &results)?;
    let n = results.len() as f64;
    println!(
        "{} queries, {} sequences each; mean best return {:.2}, MAP {:.4}",
        results.len(),
        results.first().map_or(0, |r| r.evaluated),
        results.iter().map(|r| r.best_return).sum::<f64>() / n,
        results.iter().map(|r| r.best_final_ap).sum::<f64>() / n
    );
    Ok(())
}

fn report_cmd(out: &Path, inputs: &[PathBuf]) -> Result<()> {
    let mut all = Vec::new();
    for p in inputs {
        all.extend(load_results(p).with_context(|| format!("reading {}", p.display()))?);
    }
    report(&all, out)?;
    print!("{}", format_table(&all));
    Ok(())
}

async fn serve_cmd(common: &Common, model: &Option<PathBuf>, hand: &Option<PathBuf>, addr: std::net::SocketAddr) -> Result<()> {
    let cfg = load_config(common)?;
    let ex = Experiment::load(cfg)?;
    let mut policies = BTreeMap::new();
    policies.insert("random".to_owned(), PolicySpec::Random);
    if let Some(p) = model {
        let ck = Checkpoint::load(p)?;
        policies.insert(
            "dqn".to_owned(),
            PolicySpec::Dqn {
                model: ck.model()?,
                features: ck.config.features,
            },
        );
    }
    if let Some(p) = hand {
        let f: HandcraftedFile = read_json(p)?;
        policies.insert(
            "handcrafted".to_owned(),
            PolicySpec::Handcrafted {
                policy: f.policy,
                features: f.features,
            },
        );
    }
    let state = Arc::new(AppState::new(
        ex.env.clone(),
        Some(ex.judgments.clone()),
        policies,
        ServiceConfig::default(),
    ));
    println!("serving on http://{addr}");
    irdqn_service::serve(addr, state).await?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let filter = if cli.verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .with_writer(std::io::stderr)
        .init();
    match &cli.command {
        Command::Synth { common, out } => synth(common, out),
        Command::Train { common, policy, out } => train_cmd(common, policy, out),
        Command::Eval {
            common,
            policy,
            model,
            out,
        } => eval_cmd(common, policy, model, out),
        Command::Crossval {
            common,
            policy,
            suite,
            out,
        } => crossval_cmd(common, policy, suite, out),
        Command::Oracle { common, out } => oracle_cmd(common, out),
        Command::Report { out, results } => report_cmd(out, results),
        Command::Serve {
            common,
            model,
            handcrafted,
            addr,
        } => tokio::runtime::Runtime::new()?.block_on(serve_cmd(common, model, handcrafted, *addr)),
        Command::Config => {
            print!("{}", ExperimentConfig::default().to_toml()?);
            Ok(())
        }
    }
}
