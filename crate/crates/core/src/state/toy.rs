//! Rigid point-cloud templates standing in for molecules.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{center_in_place, MixedState};
use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};

/// Nearest-neighbour distance used by every built-in template.
pub const BOND: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub coords: Vec<Vec3>,
    pub labels: Vec<usize>,
}

impl Template {
    pub fn new(name: impl Into<String>, coords: Vec<Vec3>, labels: Vec<usize>) -> Self {
        let mut coords = coords;
        center_in_place(&mut coords);
        Template {
            name: name.into(),
            coords,
            labels,
        }
    }

    pub fn names() -> &'static [&'static str] {
        &[
            "chain3",
            "chain4",
            "chain5",
            "triangle",
            "square",
            "tetrahedron",
            "dumbbell",
        ]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        let b = BOND;
        let t = match name {
            "chain3" => zigzag(3),
            "chain4" => zigzag(4),
            "chain5" => zigzag(5),
            "triangle" => {
                let h = b * 3f64.sqrt() / 2.0;
                Template::new(
                    name,
                    vec![[0.0, 0.0, 0.0], [b, 0.0, 0.0], [b / 2.0, h, 0.0]],
                    vec![0, 1, 1],
                )
            }
            "square" => Template::new(
                name,
                vec![[0.0, 0.0, 0.0], [b, 0.0, 0.0], [b, b, 0.0], [0.0, b, 0.0]],
                vec![0, 1, 0, 1],
            ),
            "tetrahedron" => {
                let s = b / (2.0 * 2f64.sqrt());
                Template::new(
                    name,
                    vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]],
                    vec![0, 0, 1, 1],
                )
            }
            "dumbbell" => {
                // two triangles joined by a two-atom bridge along x
                let h = b * 3f64.sqrt() / 2.0;
                let a1 = -b / 2.0 - b;
                let b1 = b / 2.0 + b;
                Template::new(
                    name,
                    vec![
                        [a1, 0.0, 0.0],
                        [a1 - h, b / 2.0, 0.0],
                        [a1 - h, -b / 2.0, 0.0],
                        [-b / 2.0, 0.0, 0.0],
                        [b / 2.0, 0.0, 0.0],
                        [b1, 0.0, 0.0],
                        [b1 + h, 0.0, b / 2.0],
                        [b1 + h, 0.0, -b / 2.0],
                    ],
                    vec![0, 0, 0, 1, 1, 0, 0, 0],
                )
            }
            other => {
                return Err(Error::config(
                    "dataset.templates",
                    format!("unknown template `{other}` (known: {:?})", Self::names()),
                ))
            }
        };
        Ok(t)
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }

    pub fn min_distance(&self) -> f64 {
        geometry::pairwise_distances(&self.coords)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_state(&self, n_types: usize) -> Result<MixedState> {
        MixedState::from_labels(self.coords.clone(), &self.labels, n_types)
    }
}

fn zigzag(n: usize) -> Template {
    let b = BOND;
    // 120 degree bond angle: each bond tilted 30 degrees off the chain axis
    let dx = b * 30f64.to_radians().cos();
    let dy = b * 30f64.to_radians().sin();
    let coords = (0..n)
        .map(|i| [i as f64 * dx, if i % 2 == 0 { 0.0 } else { dy }, 0.0])
        .collect();
    let labels = (0..n).map(|i| i % 2).collect();
    Template::new(format!("chain{n}"), coords, labels)
}

/// Empirical histogram over atom counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SizeHistogram {
    pub counts: BTreeMap<usize, usize>,
}

impl SizeHistogram {
    pub fn from_states(data: &[MixedState]) -> Self {
        let mut counts = BTreeMap::new();
        for s in data {
            *counts.entry(s.n_atoms()).or_insert(0) += 1;
        }
        SizeHistogram { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = self.total();
        assert!(total > 0, "empty size histogram");
        let mut r = rng.gen_range(0..total);
        for (&n, &c) in &self.counts {
            if r < c {
                return n;
            }
            r -= c;
        }
        unreachable!()
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub templates: Vec<Template>,
    pub jitter: f64,
    pub n_types: usize,
}

impl ToyDataset {
    pub fn new(templates: Vec<Template>, jitter: f64, n_types: usize) -> Result<Self> {
        let ds = ToyDataset {
            templates,
            jitter,
            n_types,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn from_names(names: &[String], jitter: f64, n_types: usize) -> Result<Self> {
        let templates = names
            .iter()
            .map(|n| Template::by_name(n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(templates, jitter, n_types)
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::config("dataset.templates", "at least one template"));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::config("dataset.jitter", "must be >= 0"));
        }
        for t in &self.templates {
            if t.labels.iter().any(|&l| l >= self.n_types) {
                return Err(Error::config(
                    "dataset.n_types",
                    format!("template `{}` uses labels beyond K={}", t.name, self.n_types),
                ));
            }
            if t.n_atoms() >= 2 && self.jitter >= t.min_distance() / 4.0 {
                return Err(Error::config(
                    "dataset.jitter",
                    format!(
                        "jitter {} must stay below a quarter of `{}`'s minimum distance {}",
                        self.jitter,
                        t.name,
                        t.min_distance()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Smallest nearest-neighbour distance over the templates.
    pub fn nearest_neighbor_distance(&self) -> f64 {
        self.templates
            .iter()
            .map(Template::min_distance)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Randomly rotated, jittered, centered template instances with one-hot types.
pub fn generate_toy_dataset<R: Rng + ?Sized>(
    config: &ToyDataset,
    count: usize,
    rng: &mut R,
) -> Result<Vec<MixedState>> {
    if count == 0 {
        return Err(Error::contract("dataset count must be >= 1"));
    }
    config.validate()?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t = &config.templates[rng.gen_range(0..config.templates.len())];
        let rot = geometry::random_rotation(rng);
        let mut coords = geometry::rotate(&t.coords, &rot);
        for c in coords.iter_mut() {
            for v in c.iter_mut() {
                *v += config.jitter * normal.sample(rng);
            }
        }
        center_in_place(&mut coords);
        out.push(MixedState::from_labels(coords, &t.labels, config.n_types)?);
    }
    Ok(out)
}
