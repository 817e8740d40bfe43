use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use keystep::config::{Overrides, PipelineConfig};
use keystep::pipeline;
use keystep::Result;

/// Plan an easy-to-hard rationale distillation curriculum.
#[derive(Debug, Parser)]
#[command(name = "keystep", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Corpus JSONL (overrides `corpus` in the config).
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Drop unknown record keys instead of rejecting them.
    #[arg(long, global = true)]
    lenient: bool,
    /// Fill missing token logprobs from this seed.
    #[arg(long, global = true, value_name = "SEED")]
    synthetic_logprobs: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the token weighting model; writes weights.jsonl and model.json.
    Weigh,
    /// Score step difficulty; writes difficulty.jsonl.
    Assess,
    /// Cluster question embeddings; writes clusters.json.
    Cluster,
    /// Plan stages from difficulty.jsonl and clusters.json; writes schedule.json.
    Schedule,
    /// Emit per-stage loss specs; writes loss_specs.jsonl.
    ShapeLoss,
    /// Train the toy student on the schedule; writes trace.json.
    Simulate,
    /// Parse the corpus and check the config only.
    Validate,
    /// Run every stage in order.
    Run {
        /// Also run the toy student.
        #[arg(long)]
        simulate: bool,
    },
}

fn config(global: &GlobalArgs, simulate: bool) -> Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: global.seed,
        corpus: global.corpus.clone(),
        out: global.out.clone(),
        lenient: global.lenient,
        synthetic_logprobs: global.synthetic_logprobs,
        simulate,
    });
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let simulate_flag = matches!(cli.command, Command::Run { simulate: true });
    let cfg = config(&cli.global, simulate_flag)?;
    let out = cfg.out_dir();
    let report = |name: &str| eprintln!("wrote {}", out.join(name).display());

    if let Command::Validate = cli.command {
        let r = pipeline::validate(&cfg)?;
        println!(
            "ok: {} questions, {} steps, {} tokens ({} with logprobs, {} with weights)",
            r.questions, r.steps, r.tokens, r.with_logprobs, r.with_weights
        );
        return Ok(());
    }
    cfg.validate()?;

    match cli.command {
        Command::Weigh => {
            let corpus = pipeline::load_corpus(&cfg)?;
            let o = pipeline::weigh(&cfg, &corpus, &out)?;
            report(pipeline::WEIGHTS_FILE);
            report(pipeline::MODEL_FILE);
            eprintln!("final hard-mask ratio {:.3}", o.final_mask_ratio);
        }
        Command::Assess => {
            let corpus = pipeline::load_corpus(&cfg)?;
            let weights = pipeline::existing_weights(&out, &corpus)?;
            let table = pipeline::assess(&cfg, &corpus, &weights, &out)?;
            report(pipeline::DIFFICULTY_FILE);
            eprintln!("B = {}", table.corpus_total_difficulty());
        }
        Command::Cluster => {
            let corpus = pipeline::load_corpus(&cfg)?;
            pipeline::cluster(&cfg, &corpus, &out)?;
            report(pipeline::CLUSTERS_FILE);
        }
        Command::Schedule => {
            let table = pipeline::read_difficulty(&out)?;
            let clusters = pipeline::read_clusters(&out)?;
            let plan = pipeline::schedule(&cfg, &table, &clusters, &out)?;
            report(pipeline::SCHEDULE_FILE);
            eprintln!("{} stages", plan.stages.len());
        }
        Command::ShapeLoss => {
            let corpus = pipeline::load_corpus(&cfg)?;
            let plan = pipeline::read_schedule(&out)?;
            let weights = pipeline::existing_weights(&out, &corpus)?;
            pipeline::shape_loss(&corpus, &plan, &weights, &out)?;
            report(pipeline::LOSS_SPECS_FILE);
        }
        Command::Simulate => {
            let corpus = pipeline::load_corpus(&cfg)?;
            let plan = pipeline::read_schedule(&out)?;
            let weights = pipeline::existing_weights(&out, &corpus)?;
            pipeline::simulate(&cfg, &corpus, &plan, &weights, &out)?;
            report(pipeline::TRACE_FILE);
        }
        Command::Run { .. } => {
            for path in pipeline::run_pipeline(&cfg)?.written {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Validate => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
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
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
