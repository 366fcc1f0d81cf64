//! Invariant messages plus `E` channels of equivariant vectors.
//!
//! Vectors live in an `[n, 3E]` array laid out `a·E + i` for coordinate `a`
//! and channel `i`. Messages see only the channel-wise squared norms of
//! `X_uv = X_u − X_v` and a radial expansion of the edge length. Vectors are
//! updated by `X_v += mean_u(X_uv·Φ(m_uv))/E` with `Φ(m)` an `E × E` mixer
//! read linearly from the message.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::model::batch::radial_basis;
use crate::model::params::{Bound, Init, ModelState, ParamSpec};
use crate::model::{Batch, ModelConfig};
use std::sync::Arc;

fn channels(cfg: &ModelConfig) -> usize {
    cfg.vector_channels.expect("validated")
}

pub(crate) fn specs(cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let (w, e) = (cfg.width, channels(cfg));
    for t in 0..cfg.depth {
        let n = |s: &str| format!("layer{t}.{s}");
        out.push(ParamSpec::new(n("wa"), w, w, Init::FanIn));
        out.push(ParamSpec::new(n("wb"), w, w, Init::FanIn));
        out.push(ParamSpec::new(n("wq"), e, w, Init::FanIn));
        out.push(ParamSpec::new(n("wd"), cfg.n_radial, w, Init::FanIn));
        out.push(ParamSpec::new(n("b1"), 1, w, Init::Zeros));
        out.push(ParamSpec::new(n("w2"), w, w, Init::FanIn));
        out.push(ParamSpec::new(n("b2"), 1, w, Init::Zeros));
        out.push(ParamSpec::new(n("wx"), w, e * e, Init::FanIn));
    }
    out.push(ParamSpec::new("force.w", e, 1, Init::FanIn));
}

/// Initial vectors: each channel holds the centered position.
pub(crate) fn initial_vectors(batch: &Batch, e: usize) -> Tensor {
    let mut x = Tensor::zeros(batch.n_atoms, 3 * e);
    for (i, p) in batch.pos.iter().enumerate() {
        for a in 0..3 {
            for c in 0..e {
                x.data[i * 3 * e + a * e + c] = p[a];
            }
        }
    }
    x
}

pub(crate) fn forward(
    state: &ModelState,
    tape: &mut Tape,
    p: &Bound,
    batch: &Batch,
    emb: Var,
    _weights: &Arc<Vec<f64>>,
    probes: &mut Vec<(String, Var)>,
) -> Result<(Var, Var)> {
    let cfg = &state.config;
    let e = channels(cfg);
    let inv_c2 = 1.0 / (cfg.preset.cutoff * cfg.preset.cutoff);
    let x0 = tape.constant(initial_vectors(batch, e));
    let mean = batch.mean_weights.clone();
    let radial = tape.constant(batch.radial.clone());
    let (mut h, mut x) = (emb, x0);
    for t in 0..cfg.depth {
        let n = |s: &str| p.get(&format!("layer{t}.{s}"));
        let xu = tape.gather_rows(x, batch.src.clone());
        let xv = tape.gather_rows(x, batch.dst.clone());
        let xuv = tape.sub(xu, xv);
        let sq = tape.mul(xuv, xuv);
        let q = tape.fold_cols(sq, 3);
        let q = tape.scale(q, inv_c2);

        let a = tape.matmul(h, n("wa"));
        let a = tape.gather_rows(a, batch.src.clone());
        let b = tape.matmul(h, n("wb"));
        let b = tape.gather_rows(b, batch.dst.clone());
        let g = tape.matmul(q, n("wq"));
        let d = tape.matmul(radial, n("wd"));
        let pre = tape.add(a, b);
        let pre = tape.add(pre, g);
        let pre = tape.add(pre, d);
        let pre = tape.add_row(pre, n("b1"));
        let hid = tape.silu(pre);
        let m = tape.matmul(hid, n("w2"));
        let m = tape.add_row(m, n("b2"));
        let m = tape.scale_rows(m, batch.envelope.clone());
        probes.push((format!("layer{t}.message"), m));

        let agg = tape.scatter_rows(m, batch.dst.clone(), batch.n_atoms, Some(mean.clone()));
        h = tape.add(h, agg);

        let phi = tape.matmul(m, n("wx"));
        let mixed = tape.edge_mat_product(xuv, phi, e);
        let mixed = tape.scale(mixed, 1.0 / e as f64);
        probes.push((format!("layer{t}.mixer"), mixed));
        let upd = tape.scatter_rows(mixed, batch.dst.clone(), batch.n_atoms, Some(mean.clone()));
        x = tape.add(x, upd);
        probes.push((format!("layer{t}.h"), h));
        probes.push((format!("layer{t}.x"), x));
    }
    let disp = tape.sub(x, x0);
    let disp = tape.reshape(disp, 3 * batch.n_atoms, e);
    let f = tape.matmul(disp, p.get("force.w"));
    let forces = tape.reshape(f, batch.n_atoms, 3);
    Ok((h, forces))
}

/// Invariant message and vector update term `X_uv·Φ(m)/E` of one edge of
/// length `dist`, before the cutoff envelope, outside any tape.
pub fn message_cartesian(
    state: &ModelState,
    layer: usize,
    h_u: &[f64],
    h_v: &[f64],
    x_u: &[f64],
    x_v: &[f64],
    dist: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    use crate::model::unconstrained::{silu, vec_mat};
    let cfg = &state.config;
    if cfg.family != crate::model::Family::CartesianVector || layer >= cfg.depth {
        return Err(crate::Error::Config("no such cartesian layer".into()));
    }
    let (w, e) = (cfg.width, channels(cfg));
    if h_u.len() != w || h_v.len() != w || x_u.len() != 3 * e || x_v.len() != 3 * e {
        return Err(crate::Error::Shape(format!("expected states of width {w} and vectors of width {}", 3 * e)));
    }
    let p = |s: &str| state.get(&format!("layer{layer}.{s}")).expect("declared parameter");
    let c2 = cfg.preset.cutoff * cfg.preset.cutoff;
    let xuv: Vec<f64> = x_u.iter().zip(x_v).map(|(a, b)| a - b).collect();
    let q: Vec<f64> = (0..e).map(|i| (0..3).map(|a| xuv[a * e + i].powi(2)).sum::<f64>() / c2).collect();
    let (a, b, g) = (vec_mat(h_u, p("wa")), vec_mat(h_v, p("wb")), vec_mat(&q, p("wq")));
    let d = vec_mat(&radial_basis(&[dist], cfg.preset.cutoff, cfg.n_radial).data, p("wd"));
    let hid: Vec<f64> = (0..w).map(|i| silu(a[i] + b[i] + g[i] + d[i] + p("b1").data[i])).collect();
    let m: Vec<f64> = vec_mat(&hid, p("w2")).iter().zip(&p("b2").data).map(|(x, b)| x + b).collect();
    let phi = vec_mat(&m, p("wx"));
    let mut upd = vec![0.0; 3 * e];
    for a in 0..3 {
        for j in 0..e {
            upd[a * e + j] = (0..e).map(|i| xuv[a * e + i] * phi[i * e + j]).sum::<f64>() / e as f64;
        }
    }
    Ok((m, upd))
}
