//! Parallel tempering: a ladder of temperatures with a batch of replicas per
//! level, Metropolis-Hastings swaps between adjacent levels, harvesting from
//! the coldest level with zero-temperature relaxation, and prior refills.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyEval, Potential};
use crate::error::{Error, Result};
use crate::mla::{self, discretize, DivergenceMonitor, LabeledCloud, SamplerConfig, Schedule};
use crate::rng;
use crate::state::{sample_prior, AtomMask, MixedState, PriorSpec, SizeHistogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapCriterion {
    /// Largest per-atom energy.
    AtomMax,
    /// Mean per-atom energy.
    AtomAvg,
}

impl SwapCriterion {
    pub fn of(self, eval: &EnergyEval) -> f64 {
        match self {
            SwapCriterion::AtomMax => eval.max_atom(),
            SwapCriterion::AtomAvg => eval.mean_atom(),
        }
    }
}

/// Strictly decreasing temperatures, hottest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    temps: Vec<f64>,
    pub batch_per_level: usize,
    pub steps_between_swaps: usize,
    pub swaps_between_harvests: usize,
    pub criterion: SwapCriterion,
    pub relax_steps: usize,
    pub relax_eta: f64,
}

impl Ladder {
    pub fn new(temps: Vec<f64>, cfg: &LadderConfig) -> Result<Self> {
        if temps.is_empty() {
            return Err(Error::config("ladder.levels", "need at least one level"));
        }
        if temps.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::config("ladder", "temperatures must be positive"));
        }
        if temps.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::config("ladder", "temperatures must be strictly decreasing"));
        }
        cfg.validate_counts()?;
        Ok(Ladder {
            temps,
            batch_per_level: cfg.batch_per_level,
            steps_between_swaps: cfg.steps_between_swaps,
            swaps_between_harvests: cfg.swaps_between_harvests,
            criterion: cfg.criterion,
            relax_steps: cfg.relax_steps,
            relax_eta: cfg.relax_eta,
        })
    }

    pub fn from_config(cfg: &LadderConfig) -> Result<Self> {
        cfg.validate()?;
        Self::new(cfg.temperatures(), cfg)
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn levels(&self) -> usize {
        self.temps.len()
    }

    pub fn coldest(&self) -> usize {
        self.temps.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderConfig {
    pub levels: usize,
    pub batch_per_level: usize,
    pub tau_max: f64,
    pub tau_min: f64,
    pub steps_between_swaps: usize,
    pub swaps_between_harvests: usize,
    pub criterion: SwapCriterion,
    pub relax_steps: usize,
    pub relax_eta: f64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            levels: 11,
            batch_per_level: 8,
            tau_max: 1.0,
            tau_min: 0.05,
            steps_between_swaps: 10,
            swaps_between_harvests: 8,
            criterion: SwapCriterion::AtomMax,
            relax_steps: 200,
            relax_eta: 0.01,
        }
    }
}

impl LadderConfig {
    fn validate_counts(&self) -> Result<()> {
        if self.batch_per_level == 0 {
            return Err(Error::config("ladder.batch_per_level", "must be >= 1"));
        }
        if self.swaps_between_harvests == 0 {
            return Err(Error::config("ladder.swaps_between_harvests", "must be >= 1"));
        }
        if !(self.relax_eta >= 0.0) {
            return Err(Error::config("ladder.relax_eta", "must be >= 0"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("ladder.levels", "must be >= 1"));
        }
        if !(self.tau_min > 0.0) {
            return Err(Error::config("ladder.tau_min", "must be > 0"));
        }
        if self.levels > 1 && !(self.tau_max > self.tau_min) {
            return Err(Error::config("ladder.tau_max", "must exceed tau_min"));
        }
        self.validate_counts()
    }

    /// Geometric spacing from `tau_max` down to `tau_min`; a single level
    /// sits at `tau_min`.
    pub fn temperatures(&self) -> Vec<f64> {
        if self.levels == 1 {
            return vec![self.tau_min];
        }
        let r = self.tau_min / self.tau_max;
        (0..self.levels)
            .map(|l| self.tau_max * r.powf(l as f64 / (self.levels - 1) as f64))
            .collect()
    }
}

/// `min(1, exp[(E_j - E_i)(1/tau_i - 1/tau_j)])`, where `E_i` is the
/// energy of the state proposed to enter level `i`.
pub fn swap_accept_prob(e_i: f64, e_j: f64, tau_i: f64, tau_j: f64) -> Result<f64> {
    if !(tau_i > 0.0) || !(tau_j > 0.0) {
        return Err(Error::contract("swap temperatures must be positive"));
    }
    let x = (e_j - e_i) * (1.0 / tau_i - 1.0 / tau_j);
    Ok(if x >= 0.0 { 1.0 } else { x.exp() })
}

/// Source of fresh replicas.
pub trait Refill: Sync {
    fn fresh(&self, rng: &mut rng::Rng) -> Result<MixedState>;
    fn mask(&self) -> Option<&AtomMask> {
        None
    }
}

/// Prior draws with atom counts from an empirical size histogram.
pub struct PriorRefill {
    pub prior: PriorSpec,
    pub sizes: SizeHistogram,
}

impl Refill for PriorRefill {
    fn fresh(&self, rng: &mut rng::Rng) -> Result<MixedState> {
        if self.sizes.total() == 0 {
            return Err(Error::config("dataset", "empty size histogram"));
        }
        let n = self.sizes.sample(rng);
        sample_prior(&self.prior, n, rng)
    }
}

#[derive(Debug, Clone)]
pub struct Replica {
    pub state: MixedState,
    monitor: DivergenceMonitor,
}

impl Replica {
    fn new(state: MixedState) -> Self {
        Replica {
            state,
            monitor: DivergenceMonitor::new(),
        }
    }
}

/// Replicas per level plus bookkeeping.
#[derive(Debug, Clone)]
pub struct ChainPool {
    pub ladder: Ladder,
    /// `levels[l][b]`, level 0 hottest.
    pub levels: Vec<Vec<Replica>>,
    /// Per adjacent pair `(l, l+1)`.
    pub attempted: Vec<u64>,
    pub accepted: Vec<u64>,
    pub rounds: u64,
    pub rounds_since_harvest: u64,
    pub diverged: u64,
    pub nfe: u64,
}

impl ChainPool {
    pub fn new<F: Refill + ?Sized>(ladder: Ladder, refill: &F, seed: u64) -> Result<Self> {
        let mut levels = Vec::with_capacity(ladder.levels());
        for l in 0..ladder.levels() {
            let mut row = Vec::with_capacity(ladder.batch_per_level);
            for b in 0..ladder.batch_per_level {
                let mut r = rng::stream(seed, (l * ladder.batch_per_level + b) as u64);
                row.push(Replica::new(refill.fresh(&mut r)?));
            }
            levels.push(row);
        }
        let pairs = ladder.levels().saturating_sub(1);
        Ok(ChainPool {
            ladder,
            levels,
            attempted: vec![0; pairs],
            accepted: vec![0; pairs],
            rounds: 0,
            rounds_since_harvest: 0,
            diverged: 0,
            nfe: 0,
        })
    }

    pub fn n_replicas(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

struct ReplicaUpdate {
    replica: Replica,
    nfe: u64,
    diverged: bool,
}

fn advance<P: Potential + ?Sized>(
    rep: &Replica,
    potential: &P,
    mask: Option<&AtomMask>,
    cfg: &SamplerConfig,
    steps: usize,
    rng: &mut rng::Rng,
) -> Result<ReplicaUpdate> {
    let mut out = rep.clone();
    let mut nfe = 0;
    for _ in 0..steps {
        let (next, report) = mla::mla_step(&out.state, potential, mask, cfg, rng)?;
        nfe += 1;
        if report.diverged || out.monitor.observe(report.energy_before, cfg) {
            return Ok(ReplicaUpdate {
                replica: out,
                nfe,
                diverged: true,
            });
        }
        out.state = next;
    }
    Ok(ReplicaUpdate {
        replica: out,
        nfe,
        diverged: false,
    })
}

fn criterion_energy<P: Potential + ?Sized>(potential: &P, state: &MixedState, c: SwapCriterion) -> Option<f64> {
    potential.energy(state).ok().map(|e| c.of(&e)).filter(|v| v.is_finite())
}

/// One round: every replica takes `steps_between_swaps` steps at its
/// level's temperature (in parallel, one stream per replica), diverged
/// replicas are replaced by fresh draws, then adjacent levels attempt
/// swaps slot by slot. Even pairs `(0,1), (2,3), ...` go on even rounds,
/// odd pairs on odd rounds.
pub fn pt_round<P, F>(
    pool: &mut ChainPool,
    potential: &P,
    refill: &F,
    cfg: &SamplerConfig,
    rng: &mut rng::Rng,
) -> Result<()>
where
    P: Potential + ?Sized,
    F: Refill + ?Sized,
{
    let seed = rng::fork(rng);
    let b = pool.ladder.batch_per_level;
    let steps = pool.ladder.steps_between_swaps;
    let mask = refill.mask();
    let temps = pool.ladder.temps().to_vec();
    let jobs: Vec<(usize, usize)> = (0..temps.len()).flat_map(|l| (0..b).map(move |s| (l, s))).collect();
    let updates: Vec<Result<(ReplicaUpdate, Option<MixedState>)>> = jobs
        .par_iter()
        .map(|&(l, s)| {
            let mut r = rng::stream(seed, (l * b + s) as u64);
            let c = cfg.with_tau(temps[l]);
            let u = advance(&pool.levels[l][s], potential, mask, &c, steps, &mut r)?;
            let fresh = if u.diverged { Some(refill.fresh(&mut r)?) } else { None };
            Ok((u, fresh))
        })
        .collect();
    for (&(l, s), u) in jobs.iter().zip(updates) {
        let (u, fresh) = u?;
        pool.nfe += u.nfe;
        pool.levels[l][s] = match fresh {
            Some(x) => {
                pool.diverged += 1;
                Replica::new(x)
            }
            None => u.replica,
        };
    }

    if temps.len() > 1 {
        let crit = pool.ladder.criterion;
        let energies: Vec<Vec<Option<f64>>> = pool
            .levels
            .par_iter()
            .map(|row| row.iter().map(|r| criterion_energy(potential, &r.state, crit)).collect())
            .collect();
        let parity = (pool.rounds % 2) as usize;
        let mut l = parity;
        while l + 1 < temps.len() {
            for s in 0..b {
                pool.attempted[l] += 1;
                let u: f64 = rng.gen();
                let (hot, cold) = (energies[l][s], energies[l + 1][s]);
                let p = match (hot, cold) {
                    // the hot state would enter the cold level j = l+1
                    (Some(eh), Some(ec)) => swap_accept_prob(ec, eh, temps[l], temps[l + 1])?,
                    _ => 0.0,
                };
                if u < p {
                    pool.accepted[l] += 1;
                    let (lo, hi) = pool.levels.split_at_mut(l + 1);
                    std::mem::swap(&mut lo[l][s], &mut hi[0][s]);
                }
            }
            l += 2;
        }
    }
    pool.rounds += 1;
    pool.rounds_since_harvest += 1;
    Ok(())
}

/// Relaxed coldest-level replicas from one harvest.
#[derive(Debug, Clone)]
pub struct Harvest {
    pub states: Vec<MixedState>,
    /// Total energies of `states`.
    pub energies: Vec<f64>,
    /// Total energies of the fresh refills placed at the coldest level.
    pub refill_energies: Vec<f64>,
    pub dropped: usize,
}

type HarvestCell = (mla::ChainOutcome, Option<f64>, MixedState, Option<f64>);

/// Extracts and relaxes the coldest level, then refills it.
pub fn harvest<P, F>(
    pool: &mut ChainPool,
    potential: &P,
    refill: &F,
    cfg: &SamplerConfig,
    rng: &mut rng::Rng,
) -> Result<Harvest>
where
    P: Potential + ?Sized,
    F: Refill + ?Sized,
{
    let need = pool.ladder.swaps_between_harvests as u64;
    if pool.rounds_since_harvest < need {
        return Err(Error::contract(format!(
            "harvest needs {need} rounds since the last harvest, have {}",
            pool.rounds_since_harvest
        )));
    }
    let seed = rng::fork(rng);
    let cold = pool.ladder.coldest();
    let mask = refill.mask();
    let (steps, eta) = (pool.ladder.relax_steps, pool.ladder.relax_eta);
    let results: Vec<Result<HarvestCell>> = pool.levels[cold]
        .par_iter()
        .enumerate()
        .map(|(s, rep)| {
            let out = mla::relax(&rep.state, potential, steps, eta, cfg, mask)?;
            let e = if out.diverged {
                None
            } else {
                potential.energy(&out.state).ok().map(|e| e.total).filter(|v| v.is_finite())
            };
            let mut r = rng::stream(seed, s as u64);
            let fresh = refill.fresh(&mut r)?;
            let fe = potential.energy(&fresh).ok().map(|e| e.total);
            Ok((out, e, fresh, fe))
        })
        .collect();
    let mut h = Harvest {
        states: Vec::new(),
        energies: Vec::new(),
        refill_energies: Vec::new(),
        dropped: 0,
    };
    for (s, res) in results.into_iter().enumerate() {
        let (out, e, fresh, fe) = res?;
        pool.nfe += out.nfe;
        match e {
            Some(e) if out.state.is_finite() => {
                h.states.push(out.state);
                h.energies.push(e);
            }
            _ => {
                h.dropped += 1;
                pool.diverged += 1;
            }
        }
        if let Some(fe) = fe {
            h.refill_energies.push(fe);
        }
        pool.levels[cold][s] = Replica::new(fresh);
    }
    pool.rounds_since_harvest = 0;
    Ok(h)
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestStat {
    pub index: usize,
    pub round: u64,
    pub n_valid: usize,
    pub median_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub sampler: String,
    pub samples: usize,
    pub nfe: u64,
    pub diverged: u64,
    pub rounds: u64,
    pub median_energy: f64,
    pub harvests: Vec<HarvestStat>,
    pub swap_attempted: Vec<u64>,
    pub swap_accepted: Vec<u64>,
}

impl GenerationReport {
    /// One row per harvest.
    pub fn harvest_csv(&self) -> String {
        let mut s = String::from("harvest,round,n_valid,median_energy\n");
        for h in &self.harvests {
            s.push_str(&format!("{},{},{},{:.10e}\n", h.index, h.round, h.n_valid, h.median_energy));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub samples: Vec<LabeledCloud>,
    /// Relaxed continuous states behind `samples`.
    pub states: Vec<MixedState>,
    pub energies: Vec<f64>,
    pub report: GenerationReport,
}

/// Harvests without a single valid sample before giving up.
pub const MAX_EMPTY_HARVESTS: usize = 50;

/// Runs rounds and harvests until `count` samples are collected. Extra
/// samples from the last harvest are discarded.
pub fn generate<P, F>(
    potential: &P,
    count: usize,
    ladder: &Ladder,
    cfg: &SamplerConfig,
    refill: &F,
    seed: u64,
) -> Result<Generated>
where
    P: Potential + ?Sized,
    F: Refill + ?Sized,
{
    if count == 0 {
        return Err(Error::contract("count must be >= 1"));
    }
    cfg.validate(potential.n_types())?;
    let mut r = rng::root(seed);
    let mut pool = ChainPool::new(ladder.clone(), refill, rng::fork(&mut r))?;
    let mut out = Generated {
        samples: Vec::new(),
        states: Vec::new(),
        energies: Vec::new(),
        report: GenerationReport {
            sampler: "pt".into(),
            samples: 0,
            nfe: 0,
            diverged: 0,
            rounds: 0,
            median_energy: f64::NAN,
            harvests: Vec::new(),
            swap_attempted: Vec::new(),
            swap_accepted: Vec::new(),
        },
    };
    let mut empty = 0;
    while out.states.len() < count {
        pt_round(&mut pool, potential, refill, cfg, &mut r)?;
        if pool.rounds_since_harvest < ladder.swaps_between_harvests as u64 {
            continue;
        }
        let h = harvest(&mut pool, potential, refill, cfg, &mut r)?;
        out.report.harvests.push(HarvestStat {
            index: out.report.harvests.len(),
            round: pool.rounds,
            n_valid: h.states.len(),
            median_energy: median(&h.energies),
        });
        if h.states.is_empty() {
            empty += 1;
            if empty >= MAX_EMPTY_HARVESTS {
                return Err(Error::Diverged(format!(
                    "{empty} consecutive harvests without a valid sample"
                )));
            }
            continue;
        }
        empty = 0;
        for (s, e) in h.states.into_iter().zip(h.energies) {
            if out.states.len() < count {
                out.states.push(s);
                out.energies.push(e);
            }
        }
    }
    out.samples = out.states.iter().map(discretize).collect();
    let rep = &mut out.report;
    rep.samples = out.samples.len();
    rep.nfe = pool.nfe;
    rep.diverged = pool.diverged;
    rep.rounds = pool.rounds;
    rep.median_energy = median(&out.energies);
    rep.swap_attempted = pool.attempted.clone();
    rep.swap_accepted = pool.accepted.clone();
    Ok(out)
}

/// Single-chain alternatives to tempering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainSampler {
    Fwde,
    Ald,
}

/// Independent chains from fresh draws: `steps` of FWDE (at `cfg.eta`) or
/// annealed Langevin, then the ladder's relaxation. Diverged chains are
/// counted and restarted from a new draw.
#[allow(clippy::too_many_arguments)]
pub fn generate_chains<P, F>(
    potential: &P,
    count: usize,
    kind: ChainSampler,
    steps: usize,
    schedule: &Schedule,
    ladder: &Ladder,
    cfg: &SamplerConfig,
    refill: &F,
    seed: u64,
) -> Result<Generated>
where
    P: Potential + ?Sized,
    F: Refill + ?Sized,
{
    if count == 0 {
        return Err(Error::contract("count must be >= 1"));
    }
    cfg.validate(potential.n_types())?;
    schedule.validate()?;
    let mask = refill.mask();
    let results: Vec<Result<(MixedState, f64, u64, u64)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let (mut nfe, mut div) = (0u64, 0u64);
            for _ in 0..MAX_EMPTY_HARVESTS {
                let x0 = refill.fresh(&mut r)?;
                let run = match kind {
                    ChainSampler::Fwde => mla::fwde_run(&x0, potential, steps, cfg.eta, cfg, mask)?,
                    ChainSampler::Ald => mla::ald_run(&x0, potential, steps, schedule, cfg, mask, false, &mut r)?,
                };
                nfe += run.nfe;
                if run.diverged {
                    div += 1;
                    continue;
                }
                let rel = mla::relax(&run.state, potential, ladder.relax_steps, ladder.relax_eta, cfg, mask)?;
                nfe += rel.nfe;
                let e = if rel.diverged {
                    None
                } else {
                    potential.energy(&rel.state).ok().map(|e| e.total).filter(|v| v.is_finite())
                };
                match e {
                    Some(e) => return Ok((rel.state, e, nfe, div)),
                    None => div += 1,
                }
            }
            Err(Error::Diverged(format!("chain {i}: no valid sample after {MAX_EMPTY_HARVESTS} restarts")))
        })
        .collect();
    let mut out = Generated {
        samples: Vec::new(),
        states: Vec::new(),
        energies: Vec::new(),
        report: GenerationReport {
            sampler: match kind {
                ChainSampler::Fwde => "fwde".into(),
                ChainSampler::Ald => "ald".into(),
            },
            samples: count,
            nfe: 0,
            diverged: 0,
            rounds: 0,
            median_energy: f64::NAN,
            harvests: Vec::new(),
            swap_attempted: Vec::new(),
            swap_accepted: Vec::new(),
        },
    };
    for res in results {
        let (s, e, nfe, div) = res?;
        out.report.nfe += nfe;
        out.report.diverged += div;
        out.states.push(s);
        out.energies.push(e);
    }
    out.samples = out.states.iter().map(discretize).collect();
    out.report.median_energy = median(&out.energies);
    Ok(out)
}

#[cfg(test)]
mod tests;
