//! Messages computed from raw relative positions, with no symmetry constraint.
//!
//! `m_uv = silu(h_u·Wa + h_v·Wb + [r_uv/c, |r_uv|/c]·Wg + b)·env(|r_uv|)`, and
//! the receiver adds `mean_u(m_uv)·W2`. Applying `W2` after the mean is the
//! same map as applying it per edge, at node cost.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::model::params::{Bound, Init, ModelState, ParamSpec};
use crate::model::{Batch, ModelConfig};
use std::sync::Arc;

pub(crate) fn specs(cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let w = cfg.width;
    for t in 0..cfg.depth {
        let n = |s: &str| format!("layer{t}.{s}");
        out.push(ParamSpec::new(n("wa"), w, w, Init::FanIn));
        out.push(ParamSpec::new(n("wb"), w, w, Init::FanIn));
        out.push(ParamSpec::new(n("wg"), 4, w, Init::FanIn));
        out.push(ParamSpec::new(n("b"), 1, w, Init::Zeros));
        out.push(ParamSpec::new(n("w2"), w, w, Init::FanIn));
    }
    out.push(ParamSpec::new("force.wa", w, w, Init::FanIn));
    out.push(ParamSpec::new("force.wb", w, w, Init::FanIn));
    out.push(ParamSpec::new("force.wg", 4 + cfg.n_radial, w, Init::FanIn));
    out.push(ParamSpec::new("force.b", 1, w, Init::Zeros));
    out.push(ParamSpec::new("force.wo", w, 1, Init::FanIn));
}

/// `silu(h_u·Wa + h_v·Wb + g·Wg + b)` on every edge.
#[allow(clippy::too_many_arguments)]
pub(crate) fn edge_mlp(tape: &mut Tape, h: Var, batch: &Batch, geo: Var, wa: Var, wb: Var, wg: Var, b: Var) -> Var {
    let a = tape.matmul(h, wa);
    let a = tape.gather_rows(a, batch.src.clone());
    let bb = tape.matmul(h, wb);
    let bb = tape.gather_rows(bb, batch.dst.clone());
    let g = tape.matmul(geo, wg);
    let pre = tape.add(a, bb);
    let pre = tape.add(pre, g);
    let pre = tape.add_row(pre, b);
    tape.silu(pre)
}

/// `f_v = Σ_u env(|r_uv|) · s_uv · dir_uv` with a scalar edge gate `s_uv`.
///
/// A plain sum rather than a neighbor mean, since pair forces add up.
pub(crate) fn pairwise_force(tape: &mut Tape, gate: Var, dirs: Tensor, batch: &Batch) -> Var {
    let d = tape.constant(dirs);
    let contrib = tape.mul_col(d, gate);
    tape.scatter_rows(contrib, batch.dst.clone(), batch.n_atoms, Some(batch.envelope.clone()))
}

pub(crate) fn forward(
    state: &ModelState,
    tape: &mut Tape,
    p: &Bound,
    batch: &Batch,
    emb: Var,
    weights: &Arc<Vec<f64>>,
    probes: &mut Vec<(String, Var)>,
) -> Result<(Var, Var)> {
    let raw = batch.raw.clone().expect("raw features for the unconstrained family");
    let geo = tape.constant(raw.clone());
    let mut h = emb;
    for t in 0..state.config.depth {
        let n = |s: &str| p.get(&format!("layer{t}.{s}"));
        let a = edge_mlp(tape, h, batch, geo, n("wa"), n("wb"), n("wg"), n("b"));
        probes.push((format!("layer{t}.message"), a));
        let agg = tape.scatter_rows(a, batch.dst.clone(), batch.n_atoms, Some(weights.clone()));
        let upd = tape.matmul(agg, n("w2"));
        h = tape.add(h, upd);
        probes.push((format!("layer{t}.h"), h));
    }
    let radial = tape.constant(batch.radial.clone());
    let geo_force = tape.concat_cols(&[geo, radial]);
    let s = edge_mlp(tape, h, batch, geo_force, p.get("force.wa"), p.get("force.wb"), p.get("force.wg"), p.get("force.b"));
    let gate = tape.matmul(s, p.get("force.wo"));
    let mut dirs = Tensor::zeros(raw.rows, 3);
    for e in 0..raw.rows {
        dirs.data[e * 3..e * 3 + 3].copy_from_slice(&raw.row(e)[..3]);
    }
    let forces = pairwise_force(tape, gate, dirs, batch);
    Ok((h, forces))
}

pub(crate) fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    assert_eq!(x.len(), w.rows, "vector length does not match matrix rows");
    let mut out = vec![0.0; w.cols];
    for (i, xi) in x.iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wv;
        }
    }
    out
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Message of layer `layer` along one edge, `silu(…)·env·W2`, outside any tape.
pub fn message_unconstrained(state: &ModelState, layer: usize, h_u: &[f64], h_v: &[f64], r_uv: crate::so3::Vec3) -> Result<Vec<f64>> {
    let cfg = &state.config;
    if cfg.family != crate::model::Family::Unconstrained || layer >= cfg.depth {
        return Err(crate::Error::Config("no such unconstrained layer".into()));
    }
    if h_u.len() != cfg.width || h_v.len() != cfg.width {
        return Err(crate::Error::Shape(format!("states must have width {}", cfg.width)));
    }
    let w = |s: &str| state.get(&format!("layer{layer}.{s}")).expect("declared parameter");
    let c = cfg.preset.cutoff;
    let d = crate::so3::rotation::norm(r_uv);
    let geo = [r_uv[0] / c, r_uv[1] / c, r_uv[2] / c, d / c];
    let (a, b, g) = (vec_mat(h_u, w("wa")), vec_mat(h_v, w("wb")), vec_mat(&geo, w("wg")));
    let env = crate::model::batch::cosine_envelope(d, c);
    let act: Vec<f64> = (0..cfg.width).map(|i| silu(a[i] + b[i] + g[i] + w("b").data[i]) * env).collect();
    Ok(vec_mat(&act, w("w2")))
}
