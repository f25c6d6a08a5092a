//! Command-line driver for the pathforge pipeline.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad config, malformed
//! files, unknown ids), 2 on external-service failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pathforge::config::PipelineConfig;

#[derive(Parser)]
#[command(name = "pathforge", version, about = "Knowledge-graph-grounded reasoning data pipeline")]
struct Cli {
    /// JSON config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Force deterministic offline mocks for every external service.
    #[arg(long, global = true)]
    mock: bool,
    /// Worker threads for per-sample stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-graph construction and inspection.
    Kg {
        #[command(subcommand)]
        action: KgAction,
    },
    /// Anchor extracted entity mentions to graph nodes.
    Anchor {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        extraction: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Retrieve priority-weighted shortest reasoning paths.
    Paths {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        anchored: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_cost: Option<f64>,
    },
    /// Synthesize one question/answer/chain triplet from retrieved paths.
    Synth {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        anchored: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "What is the most likely diagnosis?")]
        question: String,
        #[arg(long, default_value = "option1")]
        template: String,
        #[arg(long, default_value = "case-0")]
        case_id: String,
        #[arg(long, default_value = "")]
        cancer_type: String,
        #[arg(long, default_value = "")]
        source: String,
    },
    /// Run the three-stage quality filter over a triplet corpus.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        kept: PathBuf,
        #[arg(long)]
        dropped: PathBuf,
    },
    /// Segment chains and emit the trajectory-masked SFT corpus.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Draw this many truncation indices per chain instead of the
        /// exhaustive family.
        #[arg(long)]
        sample_k: Option<usize>,
    },
    /// Score predictions against ground truth with the full reward stack.
    Reward {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Train the toy softmax policy on a fixed candidate-selection task.
    GrpoDemo {
        #[arg(long, default_value = "200")]
        iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Candidate rewards, comma separated.
        #[arg(long, default_value = "0.2,1.0,2.4")]
        rewards: String,
    },
    /// Compute answer/reasoning quality metrics for paired predictions.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum KgAction {
    /// Align and fuse two source graphs into one.
    Build {
        #[arg(long)]
        graph_a: Option<PathBuf>,
        #[arg(long)]
        graph_b: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Print aggregate counts for a graph.
    Stats { graph: PathBuf },
    /// Deduplicate edges and keep the largest connected component.
    Prune {
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if cli.mock {
        config.mock = true;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Kg { action } => match action {
            KgAction::Build {
                graph_a,
                graph_b,
                out,
                threshold,
            } => commands::kg_build(&config, graph_a.as_deref(), graph_b.as_deref(), &out, threshold),
            KgAction::Stats { graph } => commands::kg_stats(&graph),
            KgAction::Prune { graph, out } => commands::kg_prune(&graph, &out),
        },
        Command::Anchor {
            graph,
            extraction,
            out,
            threshold,
        } => commands::anchor(&config, graph.as_deref(), &extraction, &out, threshold),
        Command::Paths {
            graph,
            anchored,
            out,
            max_cost,
        } => commands::paths(&config, graph.as_deref(), &anchored, &out, max_cost),
        Command::Synth {
            graph,
            anchored,
            paths,
            out,
            question,
            template,
            case_id,
            cancer_type,
            source,
        } => commands::synth(
            &config,
            graph.as_deref(),
            &anchored,
            &paths,
            &out,
            &question,
            &template,
            &case_id,
            &cancer_type,
            &source,
        ),
        Command::Filter {
            input,
            kept,
            dropped,
        } => commands::filter(&config, &input, &kept, &dropped),
        Command::Augment {
            input,
            out,
            sample_k,
        } => commands::augment(&config, &input, &out, sample_k),
        Command::Reward {
            pred,
            gt,
            graph,
            out,
            alpha,
            beta,
        } => commands::reward(&config, &pred, &gt, graph.as_deref(), &out, alpha, beta),
        Command::GrpoDemo { iters, out, rewards } => {
            commands::grpo_demo(&config, iters, out.as_deref(), &rewards)
        }
        Command::Eval {
            pred,
            reference,
            out,
            summary,
        } => commands::eval(&config, &pred, &reference, &out, summary.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if commands::is_service_failure(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
