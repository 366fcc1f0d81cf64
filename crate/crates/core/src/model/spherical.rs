//! Spherical-tensor features convolved edge by edge in the aligned frame.
//!
//! Features are `[n, C(ℓ_max+1)²]` laid out `(ℓ² + ℓ + m)·C + c`. Each layer
//! rotates the sender's features into the edge frame, applies the SO(2)
//! kernels (orders `|m| ≤ m_max`), scales every order by an invariant radial
//! gate, rotates back and averages over neighbors. A scalar MLP then updates
//! the `ℓ = 0` channels.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::model::params::{Bound, Init, ModelState, ParamSpec};
use crate::model::so3conv::component_col;
use crate::model::{Batch, ModelConfig};
use std::sync::Arc;

struct Layout {
    width: usize,
    scalar: Arc<Vec<usize>>,
    vector: Arc<Vec<usize>>,
    m0: Arc<Vec<usize>>,
    pos: Vec<Arc<Vec<usize>>>,
    neg: Vec<Arc<Vec<usize>>>,
    gate_expand: Arc<Vec<usize>>,
}

fn dims(cfg: &ModelConfig) -> (usize, usize, usize) {
    (cfg.l_max.expect("validated"), cfg.m_max.expect("validated"), cfg.channels.expect("validated"))
}

fn layout(cfg: &ModelConfig) -> Layout {
    let (l_max, m_max, c) = dims(cfg);
    let cols = |m: i64| -> Arc<Vec<usize>> {
        let lo = m.unsigned_abs() as usize;
        Arc::new((lo..=l_max).flat_map(|l| (0..c).map(move |ch| component_col(l, m, c, ch))).collect())
    };
    let mut gate_expand = Vec::with_capacity(cfg.width);
    for l in 0..=l_max {
        for _m in 0..2 * l + 1 {
            gate_expand.extend((0..c).map(|ch| l * c + ch));
        }
    }
    Layout {
        width: cfg.width,
        scalar: Arc::new((0..c).collect()),
        vector: Arc::new((c..(4 * c).min(cfg.width)).collect()),
        m0: cols(0),
        pos: (1..=m_max as i64).map(cols).collect(),
        neg: (1..=m_max as i64).map(|m| cols(-m)).collect(),
        gate_expand: Arc::new(gate_expand),
    }
}

pub(crate) fn specs(cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let (l_max, m_max, c) = dims(cfg);
    let nr = cfg.n_radial;
    for t in 0..cfg.depth {
        let n = |s: &str| format!("layer{t}.{s}");
        let d0 = (l_max + 1) * c;
        out.push(ParamSpec::new(n("so2.w0"), d0, d0, Init::FanIn));
        for m in 1..=m_max {
            let d = (l_max + 1 - m) * c;
            out.push(ParamSpec::new(n(&format!("so2.wa{m}")), d, d, Init::FanIn));
            out.push(ParamSpec::new(n(&format!("so2.wb{m}")), d, d, Init::FanIn));
        }
        out.push(ParamSpec::new(n("gate.wa"), c, c, Init::FanIn));
        out.push(ParamSpec::new(n("gate.wb"), c, c, Init::FanIn));
        out.push(ParamSpec::new(n("gate.wd"), nr, c, Init::FanIn));
        out.push(ParamSpec::new(n("gate.b"), 1, c, Init::Zeros));
        out.push(ParamSpec::new(n("gate.wo"), c, d0, Init::FanIn));
        out.push(ParamSpec::new(n("node.w1"), c, c, Init::FanIn));
        out.push(ParamSpec::new(n("node.b1"), 1, c, Init::Zeros));
        out.push(ParamSpec::new(n("node.w2"), c, c, Init::FanIn));
    }
    if l_max >= 1 {
        out.push(ParamSpec::new("force.w", c, 1, Init::FanIn));
    }
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
    let cfg = &state.config;
    let (l_max, m_max, c) = dims(cfg);
    let lay = layout(cfg);
    let rot = batch.rotations.clone().expect("edge rotations for the spherical family");
    let radial = tape.constant(batch.radial.clone());
    let mut h = tape.scatter_cols(emb, lay.scalar.clone(), lay.width);
    for t in 0..cfg.depth {
        let n = |s: &str| p.get(&format!("layer{t}.{s}"));
        let hu = tape.gather_rows(h, batch.src.clone());
        let ht = tape.rotate(hu, rot.clone(), false);

        let x0 = tape.gather_cols(ht, lay.m0.clone());
        let y0 = tape.matmul(x0, n("so2.w0"));
        let mut y = tape.scatter_cols(y0, lay.m0.clone(), lay.width);
        for m in 1..=m_max {
            let (wa, wb) = (n(&format!("so2.wa{m}")), n(&format!("so2.wb{m}")));
            let xp = tape.gather_cols(ht, lay.pos[m - 1].clone());
            let xn = tape.gather_cols(ht, lay.neg[m - 1].clone());
            let pa = tape.matmul(xp, wa);
            let nb = tape.matmul(xn, wb);
            let yp = tape.sub(pa, nb);
            let pb = tape.matmul(xp, wb);
            let na = tape.matmul(xn, wa);
            let yn = tape.add(pb, na);
            let yp = tape.scatter_cols(yp, lay.pos[m - 1].clone(), lay.width);
            let yn = tape.scatter_cols(yn, lay.neg[m - 1].clone(), lay.width);
            y = tape.add(y, yp);
            y = tape.add(y, yn);
        }

        let s = tape.gather_cols(h, lay.scalar.clone());
        let ga = tape.matmul(s, n("gate.wa"));
        let ga = tape.gather_rows(ga, batch.src.clone());
        let gb = tape.matmul(s, n("gate.wb"));
        let gb = tape.gather_rows(gb, batch.dst.clone());
        let gd = tape.matmul(radial, n("gate.wd"));
        let g = tape.add(ga, gb);
        let g = tape.add(g, gd);
        let g = tape.add_row(g, n("gate.b"));
        let g = tape.silu(g);
        let g = tape.matmul(g, n("gate.wo"));
        let g = tape.gather_cols(g, lay.gate_expand.clone());
        let y = tape.mul(y, g);

        let back = tape.rotate(y, rot.clone(), true);
        let agg = tape.scatter_rows(back, batch.dst.clone(), batch.n_atoms, Some(weights.clone()));
        h = tape.add(h, agg);

        let s = tape.gather_cols(h, lay.scalar.clone());
        let u = tape.matmul(s, n("node.w1"));
        let u = tape.add_row(u, n("node.b1"));
        let u = tape.silu(u);
        let u = tape.matmul(u, n("node.w2"));
        let u = tape.scatter_cols(u, lay.scalar.clone(), lay.width);
        h = tape.add(h, u);
        probes.push((format!("layer{t}.h"), h));
    }
    let scalars = tape.gather_cols(h, lay.scalar.clone());
    let forces = if l_max >= 1 {
        let v = tape.gather_cols(h, lay.vector.clone());
        let v = tape.reshape(v, 3 * batch.n_atoms, c);
        let f = tape.matmul(v, p.get("force.w"));
        tape.reshape(f, batch.n_atoms, 3)
    } else {
        tape.constant(crate::autodiff::Tensor::zeros(batch.n_atoms, 3))
    };
    Ok((scalars, forces))
}
