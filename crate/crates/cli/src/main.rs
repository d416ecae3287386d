use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use il_lab_core::dataset::{sample_dataset, Dataset, Provenance};
use il_lab_core::harness::{
    build_instance, event_probe, fit_slope, read_csv_file, run_experiment, write_csv_file,
    ExperimentConfig, Family, FitOptions, InstanceParams, InstanceSpec, LearnerId, RowFilter,
    XAxis,
};
use il_lab_core::learners::{bc_train, mm_train, re_train, ReConfig};
use il_lab_core::mdp::{MarkovPolicy, TabularMdp};
use il_lab_core::verify::{run_one, Budget};

#[derive(Parser)]
#[command(
    name = "il-lab",
    version,
    about = "Tabular imitation learning laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an instance; writes the MDP to --out and the expert to <out stem>.expert.json.
    GenInstance {
        #[arg(long)]
        family: Family,
        #[arg(long = "H")]
        horizon: usize,
        #[arg(long, default_value_t = 100)]
        n_exp: usize,
        #[arg(long, default_value_t = 20)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample expert trajectories as JSON lines.
    SampleDataset {
        #[arg(long)]
        instance: PathBuf,
        /// Policy JSON; defaults to the expert written next to the instance.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a learner on a dataset and write its policy JSON.
    Train {
        #[arg(long)]
        learner: LearnerId,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Replay estimation settings: inline JSON or a path to a JSON file.
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a seed sweep and write the result rows as CSV.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frequencies of the mm-lb dataset events.
    ProbeEvents {
        #[arg(long)]
        n_exp: usize,
        #[arg(long = "H")]
        horizon: usize,
        #[arg(long, default_value_t = 10_000)]
        datasets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Log-log slope of the mean gap against n_exp or H.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "")]
        filter: String,
        #[arg(long, default_value = "n_exp")]
        x: XAxis,
        #[arg(long, default_value_t = 100)]
        min_seeds: usize,
    },
    /// Run the acceptance suite.
    Verify {
        /// Small budgets for a fast smoke run.
        #[arg(long)]
        quick: bool,
        /// Comma-separated criteria to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

fn read_mdp(path: &Path) -> Result<TabularMdp> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TabularMdp::from_json(&text)?)
}

fn read_policy(path: &Path) -> Result<MarkovPolicy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(MarkovPolicy::from_json(&text)?)
}

fn expert_path(instance: &Path) -> PathBuf {
    let stem = instance
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    instance.with_file_name(format!("{stem}.expert.json"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_re_config(arg: Option<&str>) -> Result<ReConfig> {
    let Some(arg) = arg else {
        return Ok(ReConfig::default());
    };
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?
    };
    serde_json::from_str(&text).context("parsing learner config")
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenInstance {
            family,
            horizon,
            n_exp,
            states,
            actions,
            seed,
            out,
        } => {
            let spec = InstanceSpec {
                family,
                params: InstanceParams {
                    states,
                    actions,
                    ..Default::default()
                },
            };
            let (inst, component) = build_instance(&spec, horizon, n_exp, seed)?;
            write_text(&out, &inst.mdp.to_json()?)?;
            let expert = expert_path(&out);
            write_text(&expert, &inst.expert.to_json()?)?;
            let shape = format!(
                "S={} A={} H={}",
                inst.mdp.num_states(),
                inst.mdp.num_actions(),
                inst.mdp.horizon()
            );
            match component.as_str() {
                "" => println!(
                    "{} {shape} -> {}, {}",
                    family.as_str(),
                    out.display(),
                    expert.display()
                ),
                c => println!(
                    "{} ({c}) {shape} -> {}, {}",
                    family.as_str(),
                    out.display(),
                    expert.display()
                ),
            }
        }
        Command::SampleDataset {
            instance,
            policy,
            n,
            seed,
            out,
        } => {
            let mdp = read_mdp(&instance)?;
            let policy_path = policy.unwrap_or_else(|| expert_path(&instance));
            let pol = read_policy(&policy_path)?;
            let mut data = sample_dataset(&mdp, &pol, n, seed)?;
            data.provenance = Provenance {
                instance: instance.display().to_string(),
                policy: policy_path.display().to_string(),
                seed,
            };
            let mut w = BufWriter::new(
                File::create(&out).with_context(|| format!("creating {}", out.display()))?,
            );
            data.write_jsonl(&mut w)?;
            w.flush()?;
            println!(
                "{n} trajectories of length {} -> {}",
                mdp.horizon(),
                out.display()
            );
        }
        Command::Train {
            learner,
            instance,
            dataset,
            config,
            out,
        } => {
            let mdp = read_mdp(&instance)?;
            let file =
                File::open(&dataset).with_context(|| format!("opening {}", dataset.display()))?;
            let data = Dataset::read_jsonl(BufReader::new(file))?;
            data.check_indices(mdp.num_states(), mdp.num_actions())?;
            if data.horizon() != mdp.horizon() {
                bail!(
                    "dataset horizon {} does not match the instance horizon {}",
                    data.horizon(),
                    mdp.horizon()
                );
            }
            let cfg = parse_re_config(config.as_deref())?;
            let policy = match learner {
                LearnerId::Bc => bc_train(
                    &data,
                    mdp.num_states(),
                    mdp.num_actions(),
                    mdp.horizon(),
                    cfg.tie_rule,
                )?,
                LearnerId::Mm => mm_train(&data, &mdp)?,
                LearnerId::Re => re_train(&data, &mdp, &cfg)?,
            };
            write_text(&out, &policy.to_json()?)?;
            println!("{} policy -> {}", learner.as_str(), out.display());
        }
        Command::Experiment { config, out } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg = ExperimentConfig::from_json(&text)?;
            let out = match (out, &cfg.output) {
                (Some(p), _) => p,
                (None, Some(p)) => PathBuf::from(p),
                (None, None) => bail!("no output path: pass --out or set \"output\" in the config"),
            };
            let rows = run_experiment(&cfg)?;
            write_csv_file(&rows, &out)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            println!("{} rows ({failed} failed) -> {}", rows.len(), out.display());
        }
        Command::ProbeEvents {
            n_exp,
            horizon,
            datasets,
            seed,
        } => {
            let f = event_probe(n_exp, horizon, datasets, seed)?;
            println!("{}", serde_json::to_string_pretty(&f)?);
        }
        Command::Fit {
            input,
            filter,
            x,
            min_seeds,
        } => {
            let rows = read_csv_file(&input)?;
            let filter = RowFilter::parse(&filter)?;
            let fit = fit_slope(
                &rows,
                &filter,
                x,
                FitOptions {
                    min_seeds,
                    ..Default::default()
                },
            )?;
            println!(
                "{:>8} {:>6} {:>12} {:>12} {:>12}",
                "x", "n", "mean", "median", "stderr"
            );
            for p in &fit.points {
                println!(
                    "{:>8} {:>6} {:>12.6} {:>12.6} {:>12.6}",
                    p.x,
                    p.n,
                    p.mean,
                    p.median,
                    p.stderr()
                );
            }
            println!(
                "slope {:.4} +- {:.4} (intercept {:.4})",
                fit.slope, fit.stderr, fit.intercept
            );
        }
        Command::Verify { quick, only } => {
            let budget = if quick {
                Budget::quick()
            } else {
                Budget::full()
            };
            let ids = if only.is_empty() {
                (1..=9).collect()
            } else {
                only
            };
            let mut all = true;
            for id in ids {
                let Some(r) = run_one(id, &budget) else {
                    bail!("unknown criterion {id}")
                };
                println!("{r}");
                for note in &r.notes {
                    println!("    note: {note}");
                }
                all &= r.passed();
            }
            return Ok(if all {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
