//! `surgnet`: run the surgical co-worker network analysis stage by stage or
//! end to end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use surgnet_core::outcomes::ComplicationCodeset;
use surgnet_core::pipeline::{
    self, fmt_g, CodesetSource, PipelineConfig, PipelineError, RunOutput, Stage, SynthConfig, OUT_DIR_ENV,
};

#[derive(Debug, Parser)]
#[command(
    name = "surgnet",
    version,
    about = "Surgical co-worker networks and complication regression"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Case file (overrides `input`).
    #[arg(long, short, global = true)]
    input: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Segment width in days.
    #[arg(long, global = true)]
    window_days: Option<u32>,
    /// `embedded` or a `prefix<TAB>definition` file.
    #[arg(long, global = true)]
    codeset: Option<String>,
    /// Count each distinct complication code once per case.
    #[arg(long, global = true)]
    distinct_codes: bool,
    /// Random seed (recorded in the manifest; drives `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and apply exclusion rules; report diagnostics and counts.
    IngestCheck,
    /// Slice cases into day windows and build each co-worker network.
    Segment,
    /// Node centralities and clustering for every segment network.
    Metrics,
    /// Complication counts joined with team measures.
    Outcomes,
    /// Spearman correlation of team network measures.
    Correlate {
        /// Start from a `surgical_network_data.json` instead of the case file.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// VIF screen, Poisson and negative binomial regression.
    Regress {
        /// Start from a `surgical_network_data.json` instead of the case file.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// The full pipeline.
    Run,
    /// Write a seeded synthetic case file and its truth sidecar.
    Synth(SynthArgs),
    /// Print the embedded complication codeset.
    DumpCodeset,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Case file to write.
    #[arg(long)]
    cases_out: PathBuf,
    /// Truth sidecar path (default: `<cases_out>.truth.json`).
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_cases: usize,
    #[arg(long, default_value_t = 400)]
    n_providers: usize,
    /// Days covered by case start days.
    #[arg(long, default_value_t = 1250)]
    span_days: u32,
    #[arg(long, default_value_t = 8.0)]
    mean_team_size: f64,
    /// NB2 dispersion of the complication counts.
    #[arg(long)]
    alpha: Option<f64>,
    /// Team-size coefficient of the complication model.
    #[arg(long)]
    beta_team_size: Option<f64>,
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path).map_err(PipelineError::config)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &common.input {
        cfg.input = p.clone();
    }
    if let Some(p) = &common.out {
        cfg.output_dir = p.clone();
    }
    if let Some(w) = common.window_days {
        cfg.window_days = w;
    }
    if let Some(c) = &common.codeset {
        cfg.codeset = CodesetSource::try_from(c.clone()).map_err(PipelineError::config)?;
    }
    if common.distinct_codes {
        cfg.distinct_codes = true;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(PipelineError::config)?;
    Ok(cfg)
}

fn print_summary(out: &RunOutput, dir: &Path) {
    if let Some(ex) = &out.exclusions {
        println!(
            "cases: {} read, {} excluded, {} retained ({} parse diagnostics)",
            ex.input,
            ex.excluded(),
            ex.retained,
            out.parse_diagnostics
        );
    }
    if let Some(n) = out.manifest.segments {
        println!("segments: {n}");
    }
    for s in &out.segments {
        println!(
            "  segment {}: days [{}, {}), {} nodes, {} edges, {} cases, density {}",
            s.segment,
            s.start_day,
            s.end_day_exclusive,
            s.nodes,
            s.edges,
            s.cases,
            fmt_g(s.density, 6)
        );
    }
    if !out.rows.is_empty() {
        println!("case rows: {}", out.rows.len());
    }
    if let Some((nb, lr)) = &out.negbin {
        println!(
            "negative binomial (n = {}, log likelihood {}):",
            nb.n_obs,
            fmt_g(nb.log_likelihood, 6)
        );
        for r in &nb.rows {
            println!(
                "  {:<12} {:>12} (se {})",
                r.name,
                fmt_g(r.coef, 6),
                fmt_g(r.std_error, 6)
            );
        }
        if let Some(a) = &nb.alpha {
            println!("  alpha        {:>12} (se {})", fmt_g(a.alpha, 6), fmt_g(a.alpha_se, 6));
        }
        println!(
            "  LR test of alpha=0: chibar2(01) = {}, p = {}",
            fmt_g(lr.statistic, 6),
            fmt_g(lr.p_value, 6)
        );
    }
    println!("wrote {} files to {}", out.artifacts.len() + 1, dir.display());
}

fn run_stage(common: &Common, target: Stage, data: Option<&Path>) -> Result<(), PipelineError> {
    let cfg = load_config(common)?;
    let out = match data {
        Some(d) => pipeline::execute_from_data(&cfg, d, target)?,
        None => pipeline::execute(&cfg, target)?,
    };
    print_summary(&out, &cfg.output_dir);
    Ok(())
}

fn synth(common: &Common, args: &SynthArgs) -> Result<(), PipelineError> {
    let mut cfg = SynthConfig {
        n_cases: args.n_cases,
        n_providers: args.n_providers,
        span_days: args.span_days,
        mean_team_size: args.mean_team_size,
        ..SynthConfig::default()
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.window_days {
        cfg.window_days = w;
    }
    if let Some(a) = args.alpha {
        cfg.model.alpha = a;
    }
    if let Some(b) = args.beta_team_size {
        cfg.model.team_size = b;
    }
    let truth_path = args.truth_out.clone().unwrap_or_else(|| {
        let mut name = args.cases_out.as_os_str().to_owned();
        name.push(".truth.json");
        PathBuf::from(name)
    });
    let truth = pipeline::synth_generate(&cfg, &args.cases_out, Some(&truth_path))?;
    println!(
        "wrote {} cases ({} segments, mean team size {}, mean complications {}) to {}",
        cfg.n_cases,
        truth.segments,
        fmt_g(truth.mean_team_size, 4),
        fmt_g(truth.mean_complications, 4),
        args.cases_out.display()
    );
    println!("truth: {}", truth_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::IngestCheck => run_stage(&cli.common, Stage::Exclude, None),
        Command::Segment => run_stage(&cli.common, Stage::Network, None),
        Command::Metrics => run_stage(&cli.common, Stage::Metrics, None),
        Command::Outcomes => run_stage(&cli.common, Stage::Join, None),
        Command::Correlate { data } => run_stage(&cli.common, Stage::Correlate, data.as_deref()),
        Command::Regress { data } => run_stage(&cli.common, Stage::Negbin, data.as_deref()),
        Command::Run => run_stage(&cli.common, Stage::Negbin, None),
        Command::Synth(args) => synth(&cli.common, args),
        Command::DumpCodeset => {
            let mut stdout = std::io::stdout().lock();
            match ComplicationCodeset::embedded().write(&mut stdout) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(PipelineError::new(
                    Stage::Write,
                    pipeline::FailureKind::Io,
                    e.to_string(),
                )),
                _ => Ok(()),
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
