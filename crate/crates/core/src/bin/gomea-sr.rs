use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gomea_sr::experiments::{
    aggregate, export_similarity, measure_intervals, read_summaries, run_experiment, sweep, worker_threads,
    write_atomic, write_stats_csv, ExperimentConfig, Settings, SweepPlan, BOOTSTRAP_RESAMPLES,
};
use gomea_sr::linkage::MeasureKind;

#[derive(Parser)]
#[command(name = "gomea-sr", version, about = "GP-GOMEA symbolic regression with pluggable linkage measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its record.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output file (standard output when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the product of measures, heights and scaling over split runs.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated measures.
        #[arg(long, value_delimiter = ',')]
        measures: Vec<String>,
        /// Comma-separated template heights.
        #[arg(long, value_delimiter = ',')]
        heights: Vec<usize>,
        /// Comma-separated linear-scaling settings, e.g. `false,true`.
        #[arg(long = "ls-values", value_delimiter = ',')]
        ls_values: Vec<bool>,
        /// Split runs as `a-b` or a comma list (default all 30).
        #[arg(long)]
        runs: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-generation similarity matrices of fixed-size runs.
    ExportSimilarity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate the summaries of a directory of records as CSV.
    Stats {
        dir: PathBuf,
        #[arg(long, default_value_t = BOOTSTRAP_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also print per-measure intervals stratified over datasets.
        #[arg(long)]
        by_measure: bool,
    },
}

#[derive(Args, Default)]
struct Common {
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    measure: Option<String>,
    #[arg(long)]
    adjusted: bool,
    #[arg(long)]
    height: Option<String>,
    /// Enable linear scaling.
    #[arg(long)]
    ls: bool,
    /// `base` or `extended`.
    #[arg(long)]
    operators: Option<String>,
    /// `conventional` or `aq`.
    #[arg(long)]
    protection: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    population: Option<String>,
    #[arg(long)]
    generations: Option<String>,
    /// CSV dataset path.
    #[arg(long)]
    dataset: Option<String>,
    /// Target column name or index.
    #[arg(long)]
    target: Option<String>,
    /// Turn the date column into day of year.
    #[arg(long)]
    bike_sharing: bool,
    /// Synthetic problem name.
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long)]
    rows: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    run: Option<String>,
    /// `equal_width` or `equal_frequency`.
    #[arg(long)]
    binning: Option<String>,
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    p_op: Option<String>,
    /// Mix offspring in parallel within a generation.
    #[arg(long)]
    parallel: bool,
    /// Stamp improvements with elapsed milliseconds.
    #[arg(long)]
    wall_clock: bool,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Settings::parse(&text)?
            }
            None => Settings::default(),
        };
        let values = [
            ("measure", self.measure.clone()),
            ("height", self.height.clone()),
            ("operators", self.operators.clone()),
            ("protection", self.protection.clone()),
            ("budget", self.budget.clone()),
            ("population", self.population.clone()),
            ("generations", self.generations.clone()),
            ("dataset", self.dataset.clone()),
            ("target", self.target.clone()),
            ("synthetic", self.synthetic.clone()),
            ("rows", self.rows.clone()),
            ("noise", self.noise.clone()),
            ("seed", self.seed.clone()),
            ("run", self.run.clone()),
            ("binning", self.binning.clone()),
            ("bins", self.bins.clone()),
            ("p_op", self.p_op.clone()),
        ];
        for (k, v) in values {
            if let Some(v) = v {
                s.set(k, v)?;
            }
        }
        let flags = [
            ("adjusted", self.adjusted),
            ("ls", self.ls),
            ("bike_sharing", self.bike_sharing),
            ("parallel", self.parallel),
            ("wall_clock", self.wall_clock),
        ];
        for (k, on) in flags {
            if on {
                s.set(k, "true")?;
            }
        }
        Ok(s)
    }

    fn config(&self) -> Result<ExperimentConfig> {
        Ok(self.settings()?.to_config()?)
    }
}

fn parse_runs(text: Option<&str>) -> Result<Vec<usize>> {
    let Some(text) = text else {
        return Ok((0..30).collect());
    };
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty run range '{part}'");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse()?),
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common, out } => {
            let cfg = common.config()?;
            let rec = run_experiment(&cfg)?;
            let text = rec.to_jsonl()?;
            match out {
                Some(p) => write_atomic(&p, text.as_bytes())?,
                None => io::stdout().write_all(text.as_bytes())?,
            }
            let s = &rec.summary;
            eprintln!(
                "train R2 {:.6}  validation R2 {:.6}  test R2 {:.6}  {}",
                s.train_r2, s.validation_r2, s.test_r2, s.expression
            );
        }
        Command::Sweep {
            common,
            measures,
            heights,
            ls_values,
            runs,
            out,
        } => {
            let base = common.config()?;
            let measures = if measures.is_empty() {
                vec![base.measure]
            } else {
                measures
                    .iter()
                    .map(|m| m.parse::<MeasureKind>().and_then(|k| k.with_adjustment(common.adjusted)))
                    .collect::<Result<_, _>>()?
            };
            let plan = SweepPlan {
                heights: if heights.is_empty() { vec![base.height] } else { heights },
                linear_scaling: if ls_values.is_empty() { vec![base.linear_scaling] } else { ls_values },
                runs: parse_runs(runs.as_deref())?,
                measures,
                base,
            };
            let report = sweep(&plan, &out, worker_threads())?;
            eprintln!(
                "{} completed, {} skipped, {} failed",
                report.completed.len(),
                report.skipped.len(),
                report.failed.len()
            );
            for f in &report.failed {
                eprintln!("failed: {}", f.display());
            }
        }
        Command::ExportSimilarity { common, runs, out } => {
            let cfg = common.config()?;
            let report = export_similarity(&cfg, &parse_runs(runs.as_deref())?, &out, worker_threads())?;
            eprintln!(
                "wrote {} per-run matrices and {} mean matrices to {}",
                report.per_run.len(),
                report.means.len(),
                out.display()
            );
        }
        Command::Stats {
            dir,
            resamples,
            seed,
            by_measure,
        } => {
            let summaries = read_summaries(&dir)?;
            if summaries.is_empty() {
                bail!("no run records found in {}", dir.display());
            }
            let mut stdout = io::stdout().lock();
            write_stats_csv(&aggregate(&summaries, resamples, seed), &mut stdout)?;
            if by_measure {
                writeln!(stdout)?;
                writeln!(stdout, "measure,test_iqm_lo,test_iqm_hi")?;
                for (m, ci) in measure_intervals(&summaries, resamples, seed) {
                    match ci {
                        Ok((lo, hi)) => writeln!(stdout, "{m},{lo},{hi}")?,
                        Err(e) => writeln!(stdout, "{m},NaN,NaN # {e}")?,
                    }
                }
            }
        }
    }
    Ok(())
}
