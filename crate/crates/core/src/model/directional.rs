//! Messages built from distances, bond angles and dihedrals only.
//!
//! Each edge `u→v` gets a pre-activation `P_uv` from the two atom states and
//! the radial basis. Triplets `(u, v, k)` add an angle term `T`, and
//! quadruplets `(u, v, k, j)` add a dihedral term on top of it; both are
//! activated and summed back onto their edge. The sums are multiplied by
//! frozen per-layer scales so their spread stays near one at init.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::model::params::{Bound, Init, ModelState, ParamSpec};
use crate::model::unconstrained::{edge_mlp, pairwise_force};
use crate::model::{Batch, ModelConfig};
use std::sync::Arc;

pub(crate) fn specs(cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let (w, nr) = (cfg.width, cfg.n_radial);
    let nf = cfg.n_angular + cfg.n_radial;
    for t in 0..cfg.depth {
        let n = |s: &str| format!("layer{t}.{s}");
        out.push(ParamSpec::new(n("wa"), w, w, Init::FanIn));
        out.push(ParamSpec::new(n("wb"), w, w, Init::FanIn));
        out.push(ParamSpec::new(n("wd"), nr, w, Init::FanIn));
        out.push(ParamSpec::new(n("b"), 1, w, Init::Zeros));
        out.push(ParamSpec::new(n("wt"), nf, w, Init::FanIn));
        out.push(ParamSpec::new(n("wq"), nf, w, Init::FanIn));
        out.push(ParamSpec::new(n("w2"), w, w, Init::FanIn));
    }
    out.push(ParamSpec::new("force.wa", w, w, Init::FanIn));
    out.push(ParamSpec::new("force.wb", w, w, Init::FanIn));
    out.push(ParamSpec::new("force.wd", nr, w, Init::FanIn));
    out.push(ParamSpec::new("force.b", 1, w, Init::Zeros));
    out.push(ParamSpec::new("force.wo", w, 1, Init::FanIn));
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
    let trip = batch.triplets.as_ref().expect("triplets for the directional family");
    let radial = tape.constant(batch.radial.clone());
    let t_feat = tape.constant(trip.features.clone());
    let q_feat = tape.constant(trip.quad_features.clone());
    let n_edges = batch.n_edges();
    let mut h = emb;
    for t in 0..state.config.depth {
        let n = |s: &str| p.get(&format!("layer{t}.{s}"));
        let a = tape.matmul(h, n("wa"));
        let a = tape.gather_rows(a, batch.src.clone());
        let b = tape.matmul(h, n("wb"));
        let b = tape.gather_rows(b, batch.dst.clone());
        let d = tape.matmul(radial, n("wd"));
        let pre = tape.add(a, b);
        let pre = tape.add(pre, d);
        let pre = tape.add_row(pre, n("b"));

        let ang = tape.matmul(t_feat, n("wt"));
        let pt = tape.gather_rows(pre, trip.edge.clone());
        let pt = tape.add(pt, ang);
        let at = tape.silu(pt);
        let st = tape.scatter_rows(at, trip.edge.clone(), n_edges, None);
        probes.push((format!("layer{t}.triplet_sum"), st));

        let dih = tape.matmul(q_feat, n("wq"));
        let pq = tape.gather_rows(pre, trip.quad_edge.clone());
        let aq = tape.gather_rows(ang, trip.quad_triplet.clone());
        let pq = tape.add(pq, aq);
        let pq = tape.add(pq, dih);
        let aq = tape.silu(pq);
        let sq = tape.scatter_rows(aq, trip.quad_edge.clone(), n_edges, None);
        probes.push((format!("layer{t}.quadruplet_sum"), sq));

        let st = tape.scale(st, state.buffer(&format!("layer{t}.scale_triplet")));
        let sq = tape.scale(sq, state.buffer(&format!("layer{t}.scale_quadruplet")));
        let m = tape.silu(pre);
        let m = tape.add(m, st);
        let m = tape.add(m, sq);
        probes.push((format!("layer{t}.message"), m));
        let agg = tape.scatter_rows(m, batch.dst.clone(), batch.n_atoms, Some(weights.clone()));
        let upd = tape.matmul(agg, n("w2"));
        h = tape.add(h, upd);
        probes.push((format!("layer{t}.h"), h));
    }
    let s = edge_mlp(tape, h, batch, radial, p.get("force.wa"), p.get("force.wb"), p.get("force.wd"), p.get("force.b"));
    let gate = tape.matmul(s, p.get("force.wo"));
    let mut dirs = Tensor::zeros(n_edges, 3);
    for (e, (r, d)) in batch.vec.iter().zip(&batch.dist).enumerate() {
        for k in 0..3 {
            dirs.data[e * 3 + k] = r[k] / d;
        }
    }
    let forces = pairwise_force(tape, gate, dirs, batch);
    Ok((h, forces))
}
