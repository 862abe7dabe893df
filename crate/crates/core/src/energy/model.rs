//! Invariant message-passing energy network with per-atom readout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::scalar::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng;
use crate::state::MixedState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
    /// Accepted by the parser only to be rejected: not twice differentiable.
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => x * x.sigmoid(),
            Activation::Tanh => x.tanh(),
            Activation::Relu => unreachable!("relu rejected at build time"),
        }
    }

    #[inline]
    fn deriv<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = x.sigmoid();
                s * (T::cst(1.0) + x * (T::cst(1.0) - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::cst(1.0) - t * t
            }
            Activation::Relu => unreachable!("relu rejected at build time"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub embed_dim: usize,
    pub n_types: usize,
    pub readout_hidden: usize,
    pub activation: Activation,
    /// Equivariant coordinate updates in every layer but the last.
    pub coord_updates: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            embed_dim: 32,
            n_types: 2,
            readout_hidden: 32,
            activation: Activation::Silu,
            coord_updates: true,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::config("model.n_layers", "must be >= 1"));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("model.embed_dim", "must be >= 1"));
        }
        if self.readout_hidden == 0 {
            return Err(Error::config("model.readout_hidden", "must be >= 1"));
        }
        if self.n_types == 0 {
            return Err(Error::config("model.n_types", "must be >= 1"));
        }
        if self.activation == Activation::Relu {
            return Err(Error::config(
                "model.activation",
                "relu is not twice differentiable; the training loss differentiates through input gradients",
            ));
        }
        Ok(())
    }
}

/// Offsets of a dense layer `y = W x + b` with `W` stored row-major (out x in).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    out: usize,
    inp: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    edge1: Dense,
    edge2: Dense,
    node1: Dense,
    node2: Dense,
    coord: Option<(Dense, Dense)>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embed: Dense,
    layers: Vec<LayerLayout>,
    read1: Dense,
    read2: Dense,
}

fn dense(p: &mut Parameters, name: &str, out: usize, inp: usize) -> Dense {
    let w = p.push(format!("{name}.weight"), vec![out, inp]);
    let b = p.push(format!("{name}.bias"), vec![out]);
    Dense { w, b, out, inp }
}

fn build_layout(cfg: &ModelConfig) -> (Parameters, Layout) {
    let d = cfg.embed_dim;
    let mut p = Parameters::empty();
    let embed = dense(&mut p, "embed", d, cfg.n_types);
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let edge1 = dense(&mut p, &format!("layer{l}.edge1"), d, 2 * d + 1);
        let edge2 = dense(&mut p, &format!("layer{l}.edge2"), d, d);
        let node1 = dense(&mut p, &format!("layer{l}.node1"), d, 2 * d);
        let node2 = dense(&mut p, &format!("layer{l}.node2"), d, d);
        let coord = if cfg.coord_updates && l + 1 < cfg.n_layers {
            Some((
                dense(&mut p, &format!("layer{l}.coord1"), d, d),
                dense(&mut p, &format!("layer{l}.coord2"), 1, d),
            ))
        } else {
            None
        };
        layers.push(LayerLayout {
            edge1,
            edge2,
            node1,
            node2,
            coord,
        });
    }
    let read1 = dense(&mut p, "readout1", cfg.readout_hidden, d);
    let read2 = dense(&mut p, "readout2", 1, cfg.readout_hidden);
    (
        p,
        Layout {
            embed,
            layers,
            read1,
            read2,
        },
    )
}

/// `out = W[:, col0..col0+n] x + (bias ? b : 0)`.
#[inline]
fn matvec<T: Scalar>(p: &[f64], l: Dense, col0: usize, x: &[T], bias: bool, out: &mut [T]) {
    for o in 0..l.out {
        let row = &p[l.w + o * l.inp + col0..l.w + o * l.inp + col0 + x.len()];
        let mut acc = if bias { T::cst(p[l.b + o]) } else { T::default() };
        for (w, xv) in row.iter().zip(x) {
            acc += xv.scale(*w);
        }
        out[o] = acc;
    }
}

/// `out += W[:, col0..col0+out.len()]^T dy`.
#[inline]
fn matvec_t<T: Scalar>(p: &[f64], l: Dense, col0: usize, dy: &[T], out: &mut [T]) {
    for (o, g) in dy.iter().enumerate() {
        let row = &p[l.w + o * l.inp + col0..l.w + o * l.inp + col0 + out.len()];
        for (w, ov) in row.iter().zip(out.iter_mut()) {
            *ov += g.scale(*w);
        }
    }
}

/// Parameter-gradient accumulation for `W[:, col0..] += dy x^T` and `b += dy`.
#[inline]
fn accum<T: Scalar>(g: &mut [T], l: Dense, col0: usize, dy: &[T], x: &[T], bias: bool) {
    for (o, d) in dy.iter().enumerate() {
        let row = &mut g[l.w + o * l.inp + col0..l.w + o * l.inp + col0 + x.len()];
        for (gw, xv) in row.iter_mut().zip(x) {
            *gw += *d * *xv;
        }
        if bias {
            g[l.b + o] += *d;
        }
    }
}

struct LayerCache<T> {
    h: Vec<T>,
    x: Vec<[T; 3]>,
    // per ordered edge (i, j), j != i, row-major in i
    diff: Vec<[T; 3]>,
    sq: Vec<T>,
    a1: Vec<T>,
    z1: Vec<T>,
    a2: Vec<T>,
    m: Vec<T>,
    c1: Vec<T>,
    zc: Vec<T>,
    gate: Vec<T>,
    agg: Vec<T>,
    b1: Vec<T>,
    zn: Vec<T>,
}

struct ForwardCache<T> {
    types: Vec<T>,
    layers: Vec<LayerCache<T>>,
    h_final: Vec<T>,
    r: Vec<T>,
    zr: Vec<T>,
    per_atom: Vec<T>,
}

/// Result of a reverse pass.
pub(crate) struct Adjoints<T> {
    pub coords: Vec<[T; 3]>,
    pub types: Vec<T>,
    pub params: Option<Vec<T>>,
}

/// Energy network: embedding of type rows, message-passing layers over the
/// fully connected graph, two-layer per-atom readout summed to the total.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub config: ModelConfig,
    pub params: Parameters,
    layout: Layout,
}

impl EnergyModel {
    /// Fan-in scaled uniform init; the last readout layer starts at zero so
    /// the initial landscape is flat.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (mut params, layout) = build_layout(&config);
        let mut r = rng::stream(config.init_seed, 0x5eed);
        let entries = params.entries.clone();
        for e in &entries {
            if e.name.starts_with("readout2") {
                continue;
            }
            let fan_in = if e.shape.len() == 2 {
                e.shape[1]
            } else {
                // bias: use the paired weight's fan-in
                let w = params
                    .entry(&e.name.replace(".bias", ".weight"))
                    .map(|w| w.shape[1])
                    .unwrap_or(1);
                w
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut params.flat[e.offset..e.offset + e.len()] {
                *v = r.gen_range(-bound..bound);
            }
        }
        Ok(EnergyModel {
            config,
            params,
            layout,
        })
    }

    /// Rebuilds a model around existing parameter values.
    pub fn with_params(config: ModelConfig, flat: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (mut params, layout) = build_layout(&config);
        if flat.len() != params.flat.len() {
            return Err(Error::Shape(format!(
                "parameter count {} != expected {}",
                flat.len(),
                params.flat.len()
            )));
        }
        params.flat = flat;
        Ok(EnergyModel {
            config,
            params,
            layout,
        })
    }

    pub fn n_types(&self) -> usize {
        self.config.n_types
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the readout head, making the landscape identically flat.
    pub fn zero_head(&mut self) {
        for name in ["readout2.weight", "readout2.bias"] {
            if let Some(v) = self.params.get_mut(name) {
                v.fill(0.0);
            }
        }
    }

    pub(crate) fn check_state(&self, state: &MixedState) -> Result<()> {
        if state.n_types != self.config.n_types {
            return Err(Error::Shape(format!(
                "state has K={} but the model expects K={}",
                state.n_types, self.config.n_types
            )));
        }
        Ok(())
    }

    fn forward_pass<T: Scalar>(&self, coords: &[[T; 3]], types: &[T]) -> ForwardCache<T> {
        let p = &self.params.flat;
        let act = self.config.activation;
        let n = coords.len();
        let k = self.config.n_types;
        let d = self.config.embed_dim;
        let inv = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };

        let mut h = vec![T::default(); n * d];
        for i in 0..n {
            matvec(p, self.layout.embed, 0, &types[i * k..(i + 1) * k], true, &mut h[i * d..(i + 1) * d]);
        }
        let mut x: Vec<[T; 3]> = coords.to_vec();
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        let n_edges = n * n.saturating_sub(1);

        for lay in &self.layout.layers {
            let mut pre_i = vec![T::default(); n * d];
            let mut pre_j = vec![T::default(); n * d];
            for i in 0..n {
                matvec(p, lay.edge1, 0, &h[i * d..(i + 1) * d], true, &mut pre_i[i * d..(i + 1) * d]);
                matvec(p, lay.edge1, d, &h[i * d..(i + 1) * d], false, &mut pre_j[i * d..(i + 1) * d]);
            }
            let has_coord = lay.coord.is_some();
            let cd = if has_coord { d } else { 0 };
            let mut c = LayerCache {
                h: h.clone(),
                x: x.clone(),
                diff: Vec::with_capacity(n_edges),
                sq: Vec::with_capacity(n_edges),
                a1: vec![T::default(); n_edges * d],
                z1: vec![T::default(); n_edges * d],
                a2: vec![T::default(); n_edges * d],
                m: vec![T::default(); n_edges * d],
                c1: vec![T::default(); n_edges * cd],
                zc: vec![T::default(); n_edges * cd],
                gate: vec![T::default(); if has_coord { n_edges } else { 0 }],
                agg: vec![T::default(); n * d],
                b1: vec![T::default(); n * d],
                zn: vec![T::default(); n * d],
            };
            let mut x_new = x.clone();
            let ws = lay.edge1.w + 2 * d; // column of the squared distance
            let mut e = 0;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let df = [x[i][0] - x[j][0], x[i][1] - x[j][1], x[i][2] - x[j][2]];
                    let s = df[0] * df[0] + df[1] * df[1] + df[2] * df[2];
                    c.diff.push(df);
                    c.sq.push(s);
                    let es = e * d..(e + 1) * d;
                    for o in 0..d {
                        let a = pre_i[i * d + o] + pre_j[j * d + o] + s.scale(p[ws + o * lay.edge1.inp]);
                        c.a1[e * d + o] = a;
                        c.z1[e * d + o] = act.apply(a);
                    }
                    let z1 = c.z1[es.clone()].to_vec();
                    matvec(p, lay.edge2, 0, &z1, true, &mut c.a2[es.clone()]);
                    for o in es.clone() {
                        c.m[o] = act.apply(c.a2[o]);
                        c.agg[i * d + (o - e * d)] += c.m[o];
                    }
                    if let Some((c1l, c2l)) = lay.coord {
                        let m = c.m[es.clone()].to_vec();
                        matvec(p, c1l, 0, &m, true, &mut c.c1[es.clone()]);
                        let mut g = T::cst(p[c2l.b]);
                        for o in 0..d {
                            let z = act.apply(c.c1[e * d + o]);
                            c.zc[e * d + o] = z;
                            g += z.scale(p[c2l.w + o]);
                        }
                        let gate = g.tanh();
                        c.gate[e] = gate;
                        let w = gate.scale(inv);
                        for a in 0..3 {
                            x_new[i][a] += df[a] * w;
                        }
                    }
                    e += 1;
                }
            }
            let mut nin = vec![T::default(); 2 * d];
            let mut upd = vec![T::default(); d];
            for i in 0..n {
                nin[..d].copy_from_slice(&h[i * d..(i + 1) * d]);
                nin[d..].copy_from_slice(&c.agg[i * d..(i + 1) * d]);
                matvec(p, lay.node1, 0, &nin, true, &mut c.b1[i * d..(i + 1) * d]);
                for o in 0..d {
                    c.zn[i * d + o] = act.apply(c.b1[i * d + o]);
                }
                matvec(p, lay.node2, 0, &c.zn[i * d..(i + 1) * d], true, &mut upd);
                for o in 0..d {
                    h[i * d + o] += upd[o];
                }
            }
            layers.push(c);
            x = x_new;
        }

        let hr = self.config.readout_hidden;
        let mut r = vec![T::default(); n * hr];
        let mut zr = vec![T::default(); n * hr];
        let mut per_atom = vec![T::default(); n];
        for i in 0..n {
            matvec(p, self.layout.read1, 0, &h[i * d..(i + 1) * d], true, &mut r[i * hr..(i + 1) * hr]);
            for o in 0..hr {
                zr[i * hr + o] = act.apply(r[i * hr + o]);
            }
            let mut out = [T::default()];
            matvec(p, self.layout.read2, 0, &zr[i * hr..(i + 1) * hr], true, &mut out);
            per_atom[i] = out[0];
        }
        ForwardCache {
            types: types.to_vec(),
            layers,
            h_final: h,
            r,
            zr,
            per_atom,
        }
    }

    fn backward_pass<T: Scalar>(
        &self,
        cache: &ForwardCache<T>,
        seeds: &[T],
        want_params: bool,
    ) -> Adjoints<T> {
        let p = &self.params.flat;
        let act = self.config.activation;
        let n = seeds.len();
        let k = self.config.n_types;
        let d = self.config.embed_dim;
        let hr = self.config.readout_hidden;
        let inv = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
        let mut pg = if want_params {
            Some(vec![T::default(); self.params.len()])
        } else {
            None
        };

        // readout
        let mut dh = vec![T::default(); n * d];
        let mut dzr = vec![T::default(); hr];
        let mut dr = vec![T::default(); hr];
        for i in 0..n {
            let s = [seeds[i]];
            dzr.iter_mut().for_each(|v| *v = T::default());
            matvec_t(p, self.layout.read2, 0, &s, &mut dzr);
            for o in 0..hr {
                dr[o] = dzr[o] * act.deriv(cache.r[i * hr + o]);
            }
            matvec_t(p, self.layout.read1, 0, &dr, &mut dh[i * d..(i + 1) * d]);
            if let Some(g) = pg.as_mut() {
                accum(g, self.layout.read2, 0, &s, &cache.zr[i * hr..(i + 1) * hr], true);
                accum(g, self.layout.read1, 0, &dr, &cache.h_final[i * d..(i + 1) * d], true);
            }
        }
        let mut dx = vec![[T::default(); 3]; n];

        let mut dnin = vec![T::default(); 2 * d];
        let mut dzn = vec![T::default(); d];
        let mut db1 = vec![T::default(); d];
        let mut nin = vec![T::default(); 2 * d];
        let mut dm = vec![T::default(); d];
        let mut da2 = vec![T::default(); d];
        let mut dz1 = vec![T::default(); d];
        let mut da1 = vec![T::default(); d];
        let mut dzc = vec![T::default(); d];
        let mut dc1 = vec![T::default(); d];

        for (lay, c) in self.layout.layers.iter().zip(&cache.layers).rev() {
            // node update: h' = h + node2(act(node1([h, agg])))
            let mut dh_in = dh.clone();
            let mut dagg = vec![T::default(); n * d];
            for i in 0..n {
                let dho = &dh[i * d..(i + 1) * d];
                dzn.iter_mut().for_each(|v| *v = T::default());
                matvec_t(p, lay.node2, 0, dho, &mut dzn);
                for o in 0..d {
                    db1[o] = dzn[o] * act.deriv(c.b1[i * d + o]);
                }
                dnin.iter_mut().for_each(|v| *v = T::default());
                matvec_t(p, lay.node1, 0, &db1, &mut dnin);
                for o in 0..d {
                    dh_in[i * d + o] += dnin[o];
                    dagg[i * d + o] = dnin[d + o];
                }
                if let Some(g) = pg.as_mut() {
                    accum(g, lay.node2, 0, dho, &c.zn[i * d..(i + 1) * d], true);
                    nin[..d].copy_from_slice(&c.h[i * d..(i + 1) * d]);
                    nin[d..].copy_from_slice(&c.agg[i * d..(i + 1) * d]);
                    accum(g, lay.node1, 0, &db1, &nin, true);
                }
            }

            let mut dx_in = dx.clone();
            let mut dpre_i = vec![T::default(); n * d];
            let mut dpre_j = vec![T::default(); n * d];
            let ws = lay.edge1.w + 2 * d;
            let mut e = 0;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let df = c.diff[e];
                    let mut ddf = [T::default(); 3];
                    dm.copy_from_slice(&dagg[i * d..(i + 1) * d]);
                    if let Some((c1l, c2l)) = lay.coord {
                        let gate = c.gate[e];
                        let dxo = dx[i];
                        let dot = dxo[0] * df[0] + dxo[1] * df[1] + dxo[2] * df[2];
                        let dgate = dot.scale(inv);
                        let w = gate.scale(inv);
                        for a in 0..3 {
                            ddf[a] += dxo[a] * w;
                        }
                        let dg = dgate * (T::cst(1.0) - gate * gate);
                        for o in 0..d {
                            dzc[o] = dg.scale(p[c2l.w + o]);
                            dc1[o] = dzc[o] * act.deriv(c.c1[e * d + o]);
                        }
                        matvec_t(p, c1l, 0, &dc1, &mut dm);
                        if let Some(g) = pg.as_mut() {
                            accum(g, c2l, 0, &[dg], &c.zc[e * d..(e + 1) * d], true);
                            accum(g, c1l, 0, &dc1, &c.m[e * d..(e + 1) * d], true);
                        }
                    }
                    for o in 0..d {
                        da2[o] = dm[o] * act.deriv(c.a2[e * d + o]);
                    }
                    dz1.iter_mut().for_each(|v| *v = T::default());
                    matvec_t(p, lay.edge2, 0, &da2, &mut dz1);
                    let mut ds = T::default();
                    for o in 0..d {
                        da1[o] = dz1[o] * act.deriv(c.a1[e * d + o]);
                        dpre_i[i * d + o] += da1[o];
                        dpre_j[j * d + o] += da1[o];
                        ds += da1[o].scale(p[ws + o * lay.edge1.inp]);
                    }
                    if let Some(g) = pg.as_mut() {
                        accum(g, lay.edge2, 0, &da2, &c.z1[e * d..(e + 1) * d], true);
                        for o in 0..d {
                            g[ws + o * lay.edge1.inp] += da1[o] * c.sq[e];
                        }
                    }
                    let two_ds = ds + ds;
                    for a in 0..3 {
                        ddf[a] += two_ds * df[a];
                        dx_in[i][a] += ddf[a];
                        dx_in[j][a] -= ddf[a];
                    }
                    e += 1;
                }
            }
            for i in 0..n {
                let hi = &c.h[i * d..(i + 1) * d];
                matvec_t(p, lay.edge1, 0, &dpre_i[i * d..(i + 1) * d], &mut dh_in[i * d..(i + 1) * d]);
                matvec_t(p, lay.edge1, d, &dpre_j[i * d..(i + 1) * d], &mut dh_in[i * d..(i + 1) * d]);
                if let Some(g) = pg.as_mut() {
                    accum(g, lay.edge1, 0, &dpre_i[i * d..(i + 1) * d], hi, true);
                    accum(g, lay.edge1, d, &dpre_j[i * d..(i + 1) * d], hi, false);
                }
            }
            dh = dh_in;
            dx = dx_in;
        }

        let mut dtypes = vec![T::default(); n * k];
        for i in 0..n {
            matvec_t(p, self.layout.embed, 0, &dh[i * d..(i + 1) * d], &mut dtypes[i * k..(i + 1) * k]);
            if let Some(g) = pg.as_mut() {
                accum(g, self.layout.embed, 0, &dh[i * d..(i + 1) * d], &cache.types[i * k..(i + 1) * k], true);
            }
        }
        Adjoints {
            coords: dx,
            types: dtypes,
            params: pg,
        }
    }

    /// Per-atom energies only.
    pub(crate) fn per_atom_raw(&self, state: &MixedState) -> Vec<f64> {
        self.forward_pass::<f64>(&state.coords, &state.types).per_atom
    }

    /// Forward and reverse pass in `f64`, seeding the reverse pass with
    /// `seeds` (defaults to all ones, i.e. the total energy).
    pub(crate) fn eval_raw(
        &self,
        state: &MixedState,
        seeds: Option<&[f64]>,
        want_params: bool,
    ) -> (Vec<f64>, Adjoints<f64>) {
        let cache = self.forward_pass::<f64>(&state.coords, &state.types);
        let ones;
        let s = match seeds {
            Some(s) => s,
            None => {
                ones = vec![1.0; state.n_atoms()];
                &ones
            }
        };
        let adj = self.backward_pass(&cache, s, want_params);
        (cache.per_atom, adj)
    }

    /// Dual-number pass at `x + eps * dir` with dual seeds; returns the
    /// parameter adjoints.
    pub(crate) fn eval_dual_params(
        &self,
        state: &MixedState,
        dir_coords: &[Vec3],
        dir_types: &[f64],
        seeds: &[Dual],
    ) -> Vec<Dual> {
        let coords: Vec<[Dual; 3]> = state
            .coords
            .iter()
            .zip(dir_coords)
            .map(|(c, w)| [Dual::new(c[0], w[0]), Dual::new(c[1], w[1]), Dual::new(c[2], w[2])])
            .collect();
        let types: Vec<Dual> = state
            .types
            .iter()
            .zip(dir_types)
            .map(|(&p, &w)| Dual::new(p, w))
            .collect();
        let cache = self.forward_pass(&coords, &types);
        self.backward_pass(&cache, seeds, true)
            .params
            .expect("params requested")
    }

    /// Internal coordinates after every layer (input first). Test hook for
    /// checking equivariance of the hidden coordinate updates.
    pub fn internal_coordinates(&self, state: &MixedState) -> Vec<Vec<Vec3>> {
        let cache = self.forward_pass::<f64>(&state.coords, &state.types);
        cache.layers.iter().map(|l| l.x.clone()).collect()
    }
}
