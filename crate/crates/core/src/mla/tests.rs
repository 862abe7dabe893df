use super::*;
use crate::energy::{EnergyModel, ModelConfig, QuadraticPotential};
use crate::rng;
use crate::state::{sample_dirichlet_row, sample_prior, PriorSpec};

/// Potential with fixed gradients, for exercising the update arithmetic.
struct Fixed {
    gc: Vec<[f64; 3]>,
    gp: Vec<f64>,
    k: usize,
}

impl Potential for Fixed {
    fn n_types(&self) -> usize {
        self.k
    }
    fn evaluate(&self, s: &MixedState) -> Result<EnergyEval> {
        Ok(EnergyEval {
            per_atom: vec![0.0; s.n_atoms()],
            total: 0.0,
            grad_coords: self.gc.clone(),
            grad_types: self.gp.clone(),
        })
    }
}

fn zero_model(k: usize) -> EnergyModel {
    let mut m = EnergyModel::new(ModelConfig {
        n_layers: 2,
        embed_dim: 8,
        readout_hidden: 8,
        n_types: k,
        ..Default::default()
    })
    .unwrap();
    m.zero_head();
    m
}

fn clamped_state(r: &mut rng::Rng, n: usize, k: usize, eps: f64) -> MixedState {
    let mut s = sample_prior(&PriorSpec::isotropic(1.0, k), n, r).unwrap();
    for i in 0..n {
        let mut row = sample_dirichlet_row(1.0, k, r);
        // lift every entry above the floor, then renormalize
        for v in row.iter_mut() {
            *v = v.max(2.0 * eps);
        }
        let t: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= t);
        s.type_row_mut(i).copy_from_slice(&row);
    }
    s
}

#[test]
fn null_update_is_identity() {
    let mut r = rng::root(1);
    let cfg = SamplerConfig {
        eta: 0.0,
        tau: 0.0,
        ..Default::default()
    };
    let m = zero_model(3);
    for _ in 0..1000 {
        let n = r.gen_range(1..7);
        let s = clamped_state(&mut r, n, 3, cfg.eps);
        let (out, rep) = mla_step(&s, &m, None, &cfg, &mut r).unwrap();
        assert!(!rep.diverged);
        for (a, b) in out.coords.iter().flatten().zip(s.coords.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in out.types.iter().zip(&s.types) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn coordinate_update_example() {
    let s = MixedState::from_labels(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], &[0, 0], 2).unwrap();
    let pot = Fixed {
        gc: vec![[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]],
        gp: vec![0.0; 4],
        k: 2,
    };
    let cfg = SamplerConfig {
        eta: 0.1,
        tau: 0.0,
        ..Default::default()
    };
    let (out, _) = mla_step(&s, &pot, None, &cfg, &mut rng::root(0)).unwrap();
    assert!((out.coords[0][0] - 0.95).abs() < 1e-15);
    assert!((out.coords[1][0] + 0.95).abs() < 1e-15);
}

#[test]
fn type_update_example() {
    let s = MixedState::new(vec![[0.0; 3]], vec![0.5, 0.5], 2).unwrap();
    let pot = Fixed {
        gc: vec![[0.0; 3]],
        gp: vec![1.0, -1.0],
        k: 2,
    };
    let cfg = SamplerConfig {
        eta: 0.5,
        tau: 0.0,
        eps: 1e-3,
        ..Default::default()
    };
    let (out, _) = mla_step(&s, &pot, None, &cfg, &mut rng::root(0)).unwrap();
    let z = (-0.5f64).exp() + 0.5f64.exp();
    assert!((out.types[0] - (-0.5f64).exp() / z).abs() < 1e-12);
    assert!((out.types[1] - 0.5f64.exp() / z).abs() < 1e-12);
    assert!((out.types[0] - 0.2689).abs() < 1e-4);
}

#[test]
fn simplex_and_centering_hold_over_long_runs() {
    let mut r = rng::root(2);
    let m = EnergyModel::new(ModelConfig {
        n_layers: 2,
        embed_dim: 8,
        readout_hidden: 8,
        n_types: 4,
        init_seed: 3,
        ..Default::default()
    })
    .unwrap();
    let mut s = sample_prior(&PriorSpec::isotropic(1.0, 4), 5, &mut r).unwrap();
    let cfg = SamplerConfig {
        eta: 0.05,
        tau: 1.0,
        sigma_c: 0.2,
        sigma_p: 2.0,
        eps: 1e-3,
        ..Default::default()
    };
    for _ in 0..3000 {
        let (next, rep) = mla_step(&s, &m, None, &cfg, &mut r).unwrap();
        assert!(!rep.diverged);
        s = next;
        for i in 0..5 {
            let row = s.type_row(i);
            assert!(row.iter().all(|v| *v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let c = crate::geometry::centroid(&s.coords);
        assert!(c.iter().all(|v| v.abs() <= 1e-9));
    }
}

#[test]
fn softmax_is_shift_invariant_inverse_of_log() {
    let mut r = rng::root(3);
    for _ in 0..1000 {
        let k = r.gen_range(2..6);
        let p = sample_dirichlet_row(1.0, k, &mut r);
        if p.iter().any(|v| *v < 1e-300) {
            continue;
        }
        let shift: f64 = r.gen_range(-50.0..50.0);
        let mut y: Vec<f64> = p.iter().map(|v| v.ln() + shift).collect();
        softmax_row(&mut y);
        for (a, b) in y.iter().zip(&p) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn floor_keeps_log_domain_finite() {
    // a one-hot row would give log 0 without the clamp
    let s = MixedState::from_labels(vec![[0.0; 3]], &[1], 3).unwrap();
    let pot = Fixed {
        gc: vec![[0.0; 3]],
        gp: vec![0.0; 3],
        k: 3,
    };
    let cfg = SamplerConfig {
        eta: 0.1,
        tau: 1.0,
        eps: 1e-3,
        ..Default::default()
    };
    let (out, rep) = mla_step(&s, &pot, None, &cfg, &mut rng::root(4)).unwrap();
    assert!(!rep.diverged);
    assert!(out.types.iter().all(|v| v.is_finite() && *v > 0.0));
}

#[test]
fn eps_times_k_must_be_below_one() {
    let cfg = SamplerConfig {
        eps: 0.5,
        ..Default::default()
    };
    assert!(cfg.validate(2).is_err());
    assert!(cfg.validate(1).is_ok());
}

#[test]
fn frozen_atoms_are_bitwise_unchanged() {
    let mut r = rng::root(5);
    let m = EnergyModel::new(ModelConfig {
        n_layers: 2,
        embed_dim: 8,
        readout_hidden: 8,
        n_types: 2,
        init_seed: 1,
        ..Default::default()
    })
    .unwrap();
    let s0 = sample_prior(&PriorSpec::isotropic(1.0, 2), 6, &mut r).unwrap();
    let mask = AtomMask::from_indices(6, &[0, 2, 5]).unwrap();
    let mut s = s0.clone();
    let cfg = SamplerConfig::default();
    for _ in 0..200 {
        s = mla_step(&s, &m, Some(&mask), &cfg, &mut r).unwrap().0;
    }
    for i in [0, 2, 5] {
        assert_eq!(s.coords[i], s0.coords[i]);
        assert_eq!(s.type_row(i), s0.type_row(i));
    }
    assert_ne!(s.coords[1], s0.coords[1]);
}

#[test]
fn fwde_on_quadratic_decays_geometrically() {
    let mut r = rng::root(6);
    let s = sample_prior(&PriorSpec::isotropic(1.0, 2), 4, &mut r).unwrap();
    let pot = QuadraticPotential { scale: 1.0, n_types: 2 };
    let eta = 0.05;
    let out = fwde_run(&s, &pot, 30, eta, &SamplerConfig::default(), None).unwrap();
    assert_eq!(out.nfe, 30);
    let f = (1.0 - eta).powi(30);
    for (a, b) in out.state.coords.iter().flatten().zip(s.coords.iter().flatten()) {
        assert!((a - f * b).abs() < 1e-12);
    }
    let id = fwde_run(&s, &pot, 0, eta, &SamplerConfig::default(), None).unwrap();
    assert_eq!(id.state, s);
    assert_eq!(id.nfe, 0);
}

#[test]
fn zero_head_flow_keeps_state() {
    let mut r = rng::root(7);
    let s = clamped_state(&mut r, 5, 2, 1e-3);
    let cfg = SamplerConfig {
        eps: 1e-3,
        ..Default::default()
    };
    let out = fwde_run(&s, &zero_model(2), 10, 0.1, &cfg, None).unwrap();
    for (a, b) in out.state.coords.iter().flatten().zip(s.coords.iter().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in out.state.types.iter().zip(&s.types) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn ald_at_zero_temperature_equals_fwde() {
    let mut r = rng::root(8);
    let s = sample_prior(&PriorSpec::isotropic(1.0, 2), 4, &mut r).unwrap();
    let pot = QuadraticPotential { scale: 2.0, n_types: 2 };
    let cfg = SamplerConfig {
        eta: 0.07,
        ..Default::default()
    };
    let a = ald_run(&s, &pot, 25, &Schedule::Constant { tau: 0.0 }, &cfg, None, false, &mut r).unwrap();
    let b = fwde_run(&s, &pot, 25, 0.07, &cfg, None).unwrap();
    assert_eq!(a.state, b.state);
}

#[test]
fn schedules_validate_and_interpolate() {
    assert!(Schedule::Explicit { taus: vec![0.1, 0.5] }.validate().is_err());
    assert!(Schedule::Geometric { tau_max: 0.1, tau_min: 1.0 }.validate().is_err());
    let g = Schedule::default();
    g.validate().unwrap();
    assert_eq!(g.tau_at(0, 11), 1.0);
    assert!((g.tau_at(10, 11) - 0.05).abs() < 1e-15);
    assert!(g.tau_at(5, 11) < g.tau_at(4, 11));
}

#[test]
fn nan_gradient_is_reported_not_raised() {
    let s = MixedState::from_labels(vec![[0.0; 3], [1.0, 0.0, 0.0]], &[0, 0], 2).unwrap();
    let pot = Fixed {
        gc: vec![[f64::NAN, 0.0, 0.0], [0.0; 3]],
        gp: vec![0.0; 4],
        k: 2,
    };
    let (out, rep) = mla_step(&s, &pot, None, &SamplerConfig::default(), &mut rng::root(0)).unwrap();
    assert!(rep.diverged);
    assert_eq!(out, s);
}

#[test]
fn monitor_flags_energy_far_above_running_median() {
    let cfg = SamplerConfig {
        energy_bound: 1.0,
        median_factor: 10.0,
        ..Default::default()
    };
    let mut m = DivergenceMonitor::new();
    for _ in 0..10 {
        assert!(!m.observe(0.5, &cfg));
    }
    // bound is max(1, 10 * median 0.5)
    assert!(!m.observe(4.9, &cfg));
    assert!(m.observe(5.1, &cfg));
    assert!(m.observe(f64::NAN, &cfg));
    let mut big = DivergenceMonitor::new();
    for _ in 0..10 {
        big.observe(-0.5, &SamplerConfig { energy_bound: 1e9, ..cfg.clone() });
    }
    assert!(big.observe(6.0, &cfg));
}

#[test]
fn discretize_breaks_ties_low() {
    let s = MixedState::new(vec![[0.0; 3]; 3], vec![0.5, 0.5, 0.0, 0.2, 0.7, 0.1, 0.0, 0.0, 1.0], 3).unwrap();
    assert_eq!(discretize(&s).labels, vec![0, 1, 2]);
    let oh = discretize(&s).to_state();
    assert_eq!(oh.labels(), vec![0, 1, 2]);
}

/// Per-coordinate variance of the discretized Ornstein-Uhlenbeck chain on
/// `E = |c|^2 / (2 s^2)` against its AR(1) fixed point. Centering removes
/// one of N degrees of freedom per axis.
#[test]
fn langevin_variance_matches_ar1_closed_form() {
    let (eta, tau, sc, s2, n): (f64, f64, f64, f64, usize) = (0.1, 0.5, 0.7, 1.0, 4);
    let pot = QuadraticPotential { scale: s2.sqrt(), n_types: 2 };
    let cfg = SamplerConfig {
        eta,
        tau,
        sigma_c: sc,
        sigma_p: 0.0,
        ..Default::default()
    };
    let a: f64 = 1.0 - eta / s2;
    let predicted = 2.0 * eta * tau * sc * sc * (n as f64 - 1.0) / n as f64 / (1.0 - a * a);
    let mut r = rng::root(9);
    let mut s = MixedState::from_labels(vec![[0.0; 3]; n], &vec![0; n], 2).unwrap();
    let (mut acc, mut cnt) = (0.0, 0usize);
    for k in 0..200_000 {
        s = mla_step(&s, &pot, None, &cfg, &mut r).unwrap().0;
        if k >= 1000 {
            acc += s.coords.iter().flatten().map(|v| v * v).sum::<f64>();
            cnt += 3 * n;
        }
    }
    let var = acc / cnt as f64;
    assert!((var / predicted - 1.0).abs() < 0.05, "{var} vs {predicted}");
}
