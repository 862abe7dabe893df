//! Command implementations behind the `ebm` binary.
//!
//! Each command resolves its configuration (file plus flag overrides),
//! writes the resolved document to the output directory, then runs. All
//! randomness flows from `seed`, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, SampleMethod};
use crate::energy::{load_checkpoint, save_checkpoint, Checkpoint, EnergyModel};
use crate::error::{Error, Result};
use crate::eval;
use crate::mla::{discretize, LabeledCloud};
use crate::rfm;
use crate::state::{self, parse_xyz, write_xyz, MixedState, SizeHistogram, Template};
use crate::steer::{self, InpaintTask, ShapeKind};
use crate::tempering::{self, ChainSampler, Generated, PriorRefill};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const OUT_DIR_ENV: &str = "EBM_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "ebm", version, about = "Train and sample per-atom energy landscapes")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct WithModel {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Use raw parameters instead of the EMA copy.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint and the loss history.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override `training.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate samples.
    Sample {
        #[command(flatten)]
        model: WithModel,
        /// Number of samples to write.
        #[arg(long)]
        count: Option<usize>,
        /// pt, fwde or ald.
        #[arg(long)]
        sampler: Option<SampleMethod>,
        /// Override `ladder.swaps_between_harvests`.
        #[arg(long)]
        swaps_between_harvests: Option<usize>,
    },
    /// Generate under a shape potential.
    Steer {
        #[command(flatten)]
        model: WithModel,
        /// linear, disk or sphere.
        #[arg(long)]
        shape: Option<ShapeKind>,
        /// Shape potential weight.
        #[arg(long)]
        weight: Option<f64>,
        /// Comma-separated weights; writes one summary row per weight.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        /// Samples per weight.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Fill in the free atoms of a fragment task.
    Inpaint {
        #[command(flatten)]
        model: WithModel,
        /// XYZ file whose comment line carries `frozen=i,j,...`.
        #[arg(long)]
        task: PathBuf,
        /// Override `inpaint.attempts`.
        #[arg(long)]
        attempts: Option<usize>,
    },
    /// Landscape diagnostics or sample metrics.
    Eval {
        #[command(flatten)]
        model: WithModel,
        #[arg(long, default_value = "landscape")]
        suite: Suite,
        /// Samples to score (metrics suite).
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Landscape,
    Metrics,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Write the configured dataset as XYZ.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Write an inpainting task from a template.
    Task {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "dumbbell")]
        template: String,
        /// Frozen atom indices; the dumbbell defaults to both rings.
        #[arg(long, value_delimiter = ',')]
        frozen: Option<Vec<usize>>,
    },
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(dir.join(name), contents).map_err(|e| io_err(&dir.join(name), e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn resolve(common: &Common, tweak: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    tweak(&mut cfg);
    cfg.validate()?;
    fs::create_dir_all(&common.out).map_err(|e| io_err(&common.out, e))?;
    write(&common.out, RESOLVED_CONFIG, cfg.to_toml())?;
    Ok(cfg)
}

fn load_model(m: &WithModel, cfg: &RunConfig) -> Result<EnergyModel> {
    let ck = load_checkpoint(&m.checkpoint)?;
    if ck.raw.config != cfg.model {
        return Err(Error::Checkpoint(format!(
            "checkpoint model {:?} does not match the [model] section {:?}",
            ck.raw.config, cfg.model
        )));
    }
    Ok(if cfg.sample.raw { ck.raw } else { ck.ema })
}

fn refill(cfg: &RunConfig, data: &[MixedState]) -> Result<PriorRefill> {
    Ok(PriorRefill {
        prior: cfg.prior(data)?,
        sizes: SizeHistogram::from_states(data),
    })
}

fn clouds_xyz(samples: &[LabeledCloud], energies: Option<&[f64]>) -> String {
    let states: Vec<MixedState> = samples.iter().map(LabeledCloud::to_state).collect();
    let comments: Vec<String> = (0..samples.len())
        .map(|i| match energies {
            Some(e) => format!("sample={i} energy={:.10e}", e[i]),
            None => format!("sample={i}"),
        })
        .collect();
    write_xyz(&states, Some(&comments))
}

fn write_generated(dir: &Path, g: &Generated) -> Result<()> {
    write(dir, "samples.xyz", clouds_xyz(&g.samples, Some(&g.energies)))?;
    write(dir, "report.json", g.report.to_json() + "\n")?;
    write(dir, "harvests.csv", g.report.harvest_csv())
}

/// Parse an inpainting task: first frame of an XYZ file with `frozen=...`
/// somewhere on its comment line.
pub fn parse_task(text: &str, n_types: usize) -> Result<InpaintTask> {
    let frame = parse_xyz(text, n_types)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::config("inpaint.task", "task file holds no frame"))?;
    let list = frame
        .comment
        .split_whitespace()
        .find_map(|w| w.strip_prefix("frozen="))
        .ok_or_else(|| Error::config("inpaint.task", "comment line needs `frozen=i,j,...`"))?;
    let frozen = list
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::config("inpaint.task", format!("bad frozen index `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    InpaintTask::new(state::center(&frame.state), &frozen)
}

pub fn task_text(template: &Template, frozen: &[usize], n_types: usize) -> Result<String> {
    let s = template.to_state(n_types)?;
    let list: Vec<String> = frozen.iter().map(|i| i.to_string()).collect();
    // validate before writing
    InpaintTask::new(s.clone(), frozen)?;
    Ok(write_xyz(&[s], Some(&[format!("template={} frozen={}", template.name, list.join(","))])))
}

#[derive(Serialize)]
struct LandscapeSummary {
    relaxation_median_delta_e: f64,
    relaxation_median_delta_e_per_atom: f64,
    relaxation_mean_aligned_rmsd: f64,
    relaxation_diverged: usize,
    grad_norm_at_t0: f64,
    grad_norm_at_t_pm1: f64,
    noise_curve_inversions: usize,
    noise_curve_monotone: bool,
}

#[derive(Serialize)]
struct Metrics {
    samples: usize,
    w2_pairwise_distance: f64,
    band: [f64; 2],
    /// Canonical-key uniqueness; a stand-in for graph-based uniqueness.
    uniqueness_proxy: eval::Uniqueness,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::config("threads", e.to_string()))?;
    }
    match cli.command {
        Command::Train { common, steps } => {
            let cfg = resolve(&common, |c| {
                if let Some(s) = steps {
                    c.training.steps = s;
                }
            })?;
            let data = cfg.load_dataset()?;
            let prior = cfg.prior(&data)?;
            let model = EnergyModel::new(cfg.model.clone())?;
            let res = rfm::train(&model, &data, &prior, &cfg.objective, &cfg.training, cfg.seed)?;
            write(&common.out, "loss.csv", rfm::history_csv(&res.history))?;
            let ck = Checkpoint {
                raw: res.model,
                ema: res.ema,
                run_config: Some(cfg.to_toml()),
            };
            save_checkpoint(&ck, common.out.join("checkpoint.ebm"))
        }
        Command::Sample {
            model,
            count,
            sampler,
            swaps_between_harvests,
        } => {
            let cfg = resolve(&model.common, |c| {
                c.sample.raw |= model.raw;
                if let Some(n) = count {
                    c.sample.count = n;
                }
                if let Some(s) = sampler {
                    c.sample.method = s;
                }
                if let Some(s) = swaps_between_harvests {
                    c.ladder.swaps_between_harvests = s;
                }
            })?;
            let pot = load_model(&model, &cfg)?;
            let data = cfg.load_dataset()?;
            let refill = refill(&cfg, &data)?;
            let ladder = cfg.ladder()?;
            let n = cfg.sample.count;
            let g = match cfg.sample.method {
                SampleMethod::Pt => tempering::generate(&pot, n, &ladder, &cfg.sampler, &refill, cfg.seed)?,
                m => {
                    let kind = if m == SampleMethod::Fwde { ChainSampler::Fwde } else { ChainSampler::Ald };
                    tempering::generate_chains(
                        &pot,
                        n,
                        kind,
                        cfg.chains.steps,
                        &cfg.chains.schedule,
                        &ladder,
                        &cfg.sampler,
                        &refill,
                        cfg.seed,
                    )?
                }
            };
            write_generated(&model.common.out, &g)
        }
        Command::Steer {
            model,
            shape,
            weight,
            sweep,
            count,
        } => {
            let cfg = resolve(&model.common, |c| {
                c.sample.raw |= model.raw;
                if let Some(k) = shape {
                    c.steering.kind = k;
                }
                if let Some(w) = weight {
                    c.steering.weight = w;
                }
                if let Some(n) = count {
                    c.sample.count = n;
                }
            })?;
            let pot = load_model(&model, &cfg)?;
            let data = cfg.load_dataset()?;
            let refill = refill(&cfg, &data)?;
            let ladder = cfg.ladder()?;
            let out = &model.common.out;
            if let Some(ws) = sweep {
                let rows = steer::weight_sweep(
                    &pot,
                    cfg.steering.kind,
                    &ws,
                    cfg.sample.count,
                    &ladder,
                    &cfg.sampler,
                    &refill,
                    cfg.seed,
                )?;
                return write(out, "sweep.csv", steer::sweep_csv(&rows));
            }
            let s = steer::steered_generate(&pot, &cfg.steering, cfg.sample.count, &ladder, &cfg.sampler, &refill, cfg.seed)?;
            write_generated(out, &s.generated)?;
            write(out, "shape_stats.csv", steer::shape_stats_csv(&s.stats))
        }
        Command::Inpaint { model, task, attempts } => {
            let cfg = resolve(&model.common, |c| {
                c.sample.raw |= model.raw;
                if let Some(a) = attempts {
                    c.inpaint.attempts = a;
                }
            })?;
            let pot = load_model(&model, &cfg)?;
            let text = fs::read_to_string(&task).map_err(|e| io_err(&task, e))?;
            let t = parse_task(&text, cfg.model.n_types)?;
            let ladder = cfg.ladder()?;
            let rep = steer::inpaint(&pot, &t, cfg.inpaint.attempts, &ladder, &cfg.sampler, cfg.seed)?;
            let out = &model.common.out;
            write(out, "inpaint.csv", rep.to_csv())?;
            write(out, "samples.xyz", clouds_xyz(&rep.samples, None))
        }
        Command::Eval { model, suite, samples } => {
            let cfg = resolve(&model.common, |c| c.sample.raw |= model.raw)?;
            let pot = load_model(&model, &cfg)?;
            let data = cfg.load_dataset()?;
            let out = &model.common.out;
            let e = &cfg.eval;
            match suite {
                Suite::Landscape => {
                    let relax = eval::relaxation_test(&pot, &data, e.relax_steps, e.relax_eta, &cfg.sampler)?;
                    let prior = cfg.prior(&data)?;
                    let prof = eval::gradient_profile(&pot, &data, &prior, &e.t_grid, e.n_molecules, cfg.seed)?;
                    let noise = eval::energy_vs_noise(&pot, &data, &e.sigma_grid, e.n_molecules, e.noise_draws, cfg.seed)?;
                    let at = |t: f64| {
                        let v: Vec<f64> = prof.magnitude.iter().filter(|p| p.x.abs() == t).map(|p| p.mean).collect();
                        if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 }
                    };
                    let summary = LandscapeSummary {
                        relaxation_median_delta_e: relax.median_delta_e,
                        relaxation_median_delta_e_per_atom: relax.median_delta_e_per_atom,
                        relaxation_mean_aligned_rmsd: relax.mean_rmsd,
                        relaxation_diverged: relax.diverged,
                        grad_norm_at_t0: at(0.0),
                        grad_norm_at_t_pm1: at(1.0),
                        noise_curve_inversions: eval::inversions(&noise),
                        noise_curve_monotone: eval::is_monotone_with_tolerance(&noise),
                    };
                    write(out, "relaxation.csv", relax.to_csv())?;
                    write(out, "gradient_profile.csv", prof.to_csv())?;
                    write(out, "energy_vs_noise.csv", eval::curve_csv("mean_energy", &noise))?;
                    write(out, "landscape.json", json(&summary))
                }
                Suite::Metrics => {
                    let path = samples.ok_or_else(|| Error::config("eval.samples", "--samples is required for the metrics suite"))?;
                    let gen = state::load_xyz(&path, cfg.model.n_types)?;
                    let clouds: Vec<LabeledCloud> = gen.iter().map(discretize).collect();
                    let a: Vec<_> = gen.iter().map(|s| s.coords.clone()).collect();
                    let b: Vec<_> = data.iter().map(|s| s.coords.clone()).collect();
                    let m = Metrics {
                        samples: gen.len(),
                        w2_pairwise_distance: eval::w2_pairwise_distance(&a, &b, (e.band[0], e.band[1]))?,
                        band: e.band,
                        uniqueness_proxy: eval::uniqueness_proxy(&clouds),
                    };
                    write(out, "metrics.json", json(&m))
                }
            }
        }
        Command::Dataset { command } => match command {
            DatasetCommand::Gen { common } => {
                let cfg = resolve(&common, |_| {})?;
                let data = cfg.load_dataset()?;
                write(&common.out, "dataset.xyz", write_xyz(&data, None))
            }
            DatasetCommand::Task {
                common,
                template,
                frozen,
            } => {
                let cfg = resolve(&common, |_| {})?;
                let t = Template::by_name(&template)?;
                let frozen = match (frozen, template.as_str()) {
                    (Some(f), _) => f,
                    (None, "dumbbell") => vec![0, 1, 2, 5, 6, 7],
                    (None, _) => return Err(Error::config("frozen", "--frozen is required for this template")),
                };
                write(&common.out, &format!("{template}.task"), task_text(&t, &frozen, cfg.model.n_types)?)
            }
        },
    }
}
