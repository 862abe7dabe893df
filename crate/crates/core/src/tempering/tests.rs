use super::*;
use crate::energy::{EnergyModel, ModelConfig, QuadraticPotential};

fn ladder_cfg(levels: usize, batch: usize) -> LadderConfig {
    LadderConfig {
        levels,
        batch_per_level: batch,
        steps_between_swaps: 3,
        swaps_between_harvests: 2,
        relax_steps: 4,
        ..Default::default()
    }
}

fn refill(n: usize) -> PriorRefill {
    let mut counts = std::collections::BTreeMap::new();
    counts.insert(n, 1);
    PriorRefill {
        prior: PriorSpec::isotropic(1.0, 2),
        sizes: SizeHistogram { counts },
    }
}

/// Energy fixed by the first coordinate of atom 0, for frozen-energy fixtures.
struct Tagged;

impl Potential for Tagged {
    fn n_types(&self) -> usize {
        2
    }
    fn evaluate(&self, s: &MixedState) -> Result<EnergyEval> {
        let e = s.coords[0][0];
        Ok(EnergyEval {
            per_atom: vec![e],
            total: e,
            grad_coords: vec![[0.0; 3]],
            grad_types: vec![0.0; 2],
        })
    }
}

fn tagged(e: f64) -> MixedState {
    MixedState::from_labels(vec![[e, 0.0, 0.0]], &[0], 2).unwrap()
}

#[test]
fn swap_prob_examples() {
    assert_eq!(swap_accept_prob(1.3, 1.3, 0.5, 1.0).unwrap(), 1.0);
    assert_eq!(swap_accept_prob(1.0, 5.0, 0.7, 0.7).unwrap(), 1.0);
    let p = swap_accept_prob(2.0, 1.0, 0.5, 1.0).unwrap();
    assert!((p - (-1f64).exp()).abs() < 1e-15);
    assert!(swap_accept_prob(1.0, 2.0, 0.0, 1.0).is_err());
    assert!(swap_accept_prob(1.0, 2.0, 1.0, -1.0).is_err());
}

#[test]
fn ladder_must_decrease_strictly() {
    let c = ladder_cfg(3, 1);
    assert!(Ladder::new(vec![1.0, 1.0, 0.5], &c).is_err());
    assert!(Ladder::new(vec![0.5, 1.0], &c).is_err());
    assert!(Ladder::new(vec![1.0, 0.0], &c).is_err());
    let l = Ladder::from_config(&LadderConfig::default()).unwrap();
    assert_eq!(l.levels(), 11);
    assert_eq!(l.temps()[0], 1.0);
    assert!((l.temps()[10] - 0.05).abs() < 1e-15);
}

#[test]
fn single_level_never_swaps() {
    let l = Ladder::from_config(&ladder_cfg(1, 2)).unwrap();
    let f = refill(3);
    let mut pool = ChainPool::new(l, &f, 1).unwrap();
    let pot = QuadraticPotential { scale: 1.0, n_types: 2 };
    let mut r = rng::root(1);
    for _ in 0..5 {
        pt_round(&mut pool, &pot, &f, &SamplerConfig::default(), &mut r).unwrap();
    }
    assert!(pool.attempted.is_empty());
    assert_eq!(pool.nfe, 5 * 2 * 3);
}

/// Frozen energies: a state with E = 1 at the cold level (tau = 0.5) and
/// one with E = 2 at the hot level (tau = 1). Moving the higher energy
/// down is accepted with probability exp[(1 - 2)(2 - 1)] = 1/e.
#[test]
fn empirical_swap_rate_matches_rule() {
    let c = LadderConfig {
        steps_between_swaps: 0,
        ..ladder_cfg(2, 1)
    };
    let l = Ladder::new(vec![1.0, 0.5], &c).unwrap();
    let f = refill(1);
    let mut pool = ChainPool::new(l, &f, 1).unwrap();
    let mut r = rng::root(2);
    let trials = 100_000;
    let mut acc = 0;
    for _ in 0..trials {
        pool.levels[0][0].state = tagged(2.0);
        pool.levels[1][0].state = tagged(1.0);
        pool.rounds = 0; // keep the (0,1) pair active
        pt_round(&mut pool, &Tagged, &f, &SamplerConfig::default(), &mut r).unwrap();
        if pool.levels[1][0].state.coords[0][0] == 2.0 {
            acc += 1;
        }
    }
    let p = (-1f64).exp();
    let rate = acc as f64 / trials as f64;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((rate - p).abs() < 3.0 * se, "rate {rate} vs {p}");
    assert_eq!(pool.attempted[0], trials);
    assert_eq!(pool.accepted[0], acc);
}

#[test]
fn favourable_swap_always_accepted() {
    let c = LadderConfig {
        steps_between_swaps: 0,
        ..ladder_cfg(2, 1)
    };
    let l = Ladder::new(vec![1.0, 0.5], &c).unwrap();
    let f = refill(1);
    let mut pool = ChainPool::new(l, &f, 1).unwrap();
    pool.levels[0][0].state = tagged(-3.0);
    pool.levels[1][0].state = tagged(4.0);
    pt_round(&mut pool, &Tagged, &f, &SamplerConfig::default(), &mut rng::root(3)).unwrap();
    assert_eq!(pool.levels[1][0].state.coords[0][0], -3.0);
}

#[test]
fn pairing_alternates_and_covers_all_pairs() {
    let l = Ladder::from_config(&LadderConfig {
        steps_between_swaps: 0,
        ..ladder_cfg(5, 2)
    })
    .unwrap();
    let f = refill(3);
    let mut pool = ChainPool::new(l, &f, 1).unwrap();
    let pot = QuadraticPotential { scale: 1.0, n_types: 2 };
    let mut r = rng::root(4);
    pt_round(&mut pool, &pot, &f, &SamplerConfig::default(), &mut r).unwrap();
    assert_eq!(pool.attempted, vec![2, 0, 2, 0]);
    pt_round(&mut pool, &pot, &f, &SamplerConfig::default(), &mut r).unwrap();
    assert_eq!(pool.attempted, vec![2, 2, 2, 2]);
}

#[test]
fn harvest_requires_completed_rounds() {
    let l = Ladder::from_config(&ladder_cfg(2, 2)).unwrap();
    let f = refill(3);
    let mut pool = ChainPool::new(l, &f, 1).unwrap();
    let pot = QuadraticPotential { scale: 1.0, n_types: 2 };
    let mut r = rng::root(5);
    let err = harvest(&mut pool, &pot, &f, &SamplerConfig::default(), &mut r).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    pt_round(&mut pool, &pot, &f, &SamplerConfig::default(), &mut r).unwrap();
    assert!(harvest(&mut pool, &pot, &f, &SamplerConfig::default(), &mut r).is_err());
    pt_round(&mut pool, &pot, &f, &SamplerConfig::default(), &mut r).unwrap();
    let h = harvest(&mut pool, &pot, &f, &SamplerConfig::default(), &mut r).unwrap();
    assert_eq!(h.states.len(), 2);
    assert_eq!(pool.n_replicas(), 4);
    assert_eq!(pool.rounds_since_harvest, 0);
}

#[test]
fn nfe_accounting_is_exact() {
    // one level, one replica, one round, then harvest
    let c = LadderConfig {
        swaps_between_harvests: 1,
        steps_between_swaps: 10,
        relax_steps: 7,
        ..ladder_cfg(1, 1)
    };
    let l = Ladder::from_config(&c).unwrap();
    let pot = QuadraticPotential { scale: 1.0, n_types: 2 };
    let g = generate(&pot, 1, &l, &SamplerConfig::default(), &refill(3), 1).unwrap();
    assert_eq!(g.report.nfe, 17);
    assert_eq!(g.report.rounds, 1);
    assert_eq!(g.samples.len(), 1);

    let c = ladder_cfg(3, 2);
    let l = Ladder::from_config(&c).unwrap();
    let g = generate(&pot, 5, &l, &SamplerConfig::default(), &refill(3), 2).unwrap();
    // 3 harvests of 2: 6 rounds x 6 replicas x 3 steps + 3 x 2 x 4 relax steps
    assert_eq!(g.report.rounds, 6);
    assert_eq!(g.report.nfe, 6 * 6 * 3 + 3 * 2 * 4);
    assert_eq!(g.samples.len(), 5);
    assert_eq!(g.report.harvests.len(), 3);
}

#[test]
fn diverged_replicas_are_replaced_and_counted() {
    // a very large step on a stiff quadratic blows up every chain
    let l = Ladder::from_config(&ladder_cfg(2, 3)).unwrap();
    let f = refill(3);
    let mut pool = ChainPool::new(l, &f, 1).unwrap();
    let pot = QuadraticPotential { scale: 0.01, n_types: 2 };
    let cfg = SamplerConfig {
        eta: 1.0,
        ..Default::default()
    };
    pt_round(&mut pool, &pot, &f, &cfg, &mut rng::root(6)).unwrap();
    assert_eq!(pool.diverged, 6);
    assert_eq!(pool.n_replicas(), 6);
}

#[test]
fn generation_is_deterministic() {
    let m = EnergyModel::new(ModelConfig {
        n_layers: 2,
        embed_dim: 8,
        readout_hidden: 8,
        n_types: 2,
        init_seed: 4,
        ..Default::default()
    })
    .unwrap();
    let l = Ladder::from_config(&ladder_cfg(3, 2)).unwrap();
    let a = generate(&m, 3, &l, &SamplerConfig::default(), &refill(4), 9).unwrap();
    let b = generate(&m, 3, &l, &SamplerConfig::default(), &refill(4), 9).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.report, b.report);
    assert_eq!(a.report.harvest_csv(), b.report.harvest_csv());
}

#[test]
fn chain_samplers_produce_count() {
    let pot = QuadraticPotential { scale: 1.0, n_types: 2 };
    let l = Ladder::from_config(&ladder_cfg(1, 1)).unwrap();
    for kind in [ChainSampler::Fwde, ChainSampler::Ald] {
        let g = generate_chains(&pot, 4, kind.clone(), 20, &Schedule::default(), &l, &SamplerConfig::default(), &refill(3), 1)
            .unwrap();
        assert_eq!(g.samples.len(), 4);
        assert_eq!(g.report.nfe, 4 * (20 + 4));
    }
}

#[test]
fn median_of_even_and_odd() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
}
