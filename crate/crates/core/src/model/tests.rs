use super::*;
use crate::data::{generate, ToyPotentialSpec};
use crate::graph::build_graph;
use crate::so3::rotation::{norm, sample_rotation, Rotation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn molecules(n: usize, max_atoms: usize, seed: u64) -> Vec<AtomicSystem> {
    let spec = ToyPotentialSpec { min_atoms: 3, max_atoms, ..ToyPotentialSpec::default() };
    generate(&spec, n, seed).0
}

fn small_configs() -> Vec<ModelConfig> {
    vec![ModelConfig::unconstrained(2, 8), ModelConfig::directional(2, 6), ModelConfig::cartesian(2, 9), ModelConfig::spherical(2, 2, 2, 1)]
}

/// Fresh state with non-zero biases so every parameter affects the loss.
fn perturbed_state(cfg: &ModelConfig, seed: u64) -> ModelState {
    let mut s = init_state(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in &mut s.params {
        for x in &mut t.data {
            *x += 0.1 * (rng.random::<f64>() - 0.5);
        }
    }
    s
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + 1e-8)
}

#[test]
fn param_count_matches_state() {
    for cfg in small_configs() {
        let s = init_state(&cfg, 0).unwrap();
        assert_eq!(param_count(&cfg).unwrap(), s.param_count(), "{}", cfg.family);
    }
}

#[test]
fn affine_count_convention() {
    let w = 7;
    let specs = [ParamSpec::new("w", w, w, Init::FanIn), ParamSpec::new("b", 1, w, Init::Zeros)];
    assert_eq!(specs.iter().map(ParamSpec::len).sum::<usize>(), w * w + w);
}

#[test]
fn unconstrained_count_formula() {
    let (d, w) = (3, 10);
    let cfg = ModelConfig::unconstrained(d, w);
    let per_layer = 3 * w * w + 4 * w + w;
    let force = 2 * w * w + (4 + cfg.n_radial) * w + w + w;
    let expect = 4 * w + d * per_layer + force + w * w + w + w;
    assert_eq!(param_count(&cfg).unwrap(), expect);
}

#[test]
fn single_atom_uses_embedding_readout() {
    for cfg in small_configs() {
        let s = perturbed_state(&cfg, 1);
        let sys = AtomicSystem::new(vec![6], vec![[0.3, -0.2, 1.0]]).unwrap();
        let g = build_graph(&sys, cfg.preset.cutoff, cfg.preset.k_max).unwrap();
        let pred = forward(&s, &sys, &g).unwrap();
        assert!(pred.forces[0].iter().all(|f| *f == 0.0), "{}", cfg.family);
        if cfg.family != Family::SphericalTensor {
            // no messages, so the readout sees the embedding row of carbon
            let row = s.get("embed").unwrap().row(1).to_vec();
            let mut hid = unconstrained::vec_mat(&row, s.get("readout.w1").unwrap());
            for (h, b) in hid.iter_mut().zip(&s.get("readout.b1").unwrap().data) {
                *h = unconstrained::silu(*h + b);
            }
            let e = unconstrained::vec_mat(&hid, s.get("readout.w2").unwrap())[0];
            assert!((pred.energy - e).abs() < 1e-12, "{}", cfg.family);
        }
    }
}

#[test]
fn permutation_equivariance() {
    let sys = molecules(1, 7, 3).remove(0);
    let n = sys.n_atoms();
    let perm: Vec<usize> = (0..n).rev().collect();
    let permuted = AtomicSystem::new(perm.iter().map(|&i| sys.z[i]).collect(), perm.iter().map(|&i| sys.pos[i]).collect()).unwrap();
    for cfg in small_configs() {
        let s = perturbed_state(&cfg, 2);
        let a = predict(&s, &Batch::new(std::slice::from_ref(&sys), &cfg).unwrap()).unwrap().remove(0);
        let b = predict(&s, &Batch::new(std::slice::from_ref(&permuted), &cfg).unwrap()).unwrap().remove(0);
        assert!(rel(a.energy, b.energy) < 1e-12, "{}", cfg.family);
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..3 {
                assert!((a.forces[i][c] - b.forces[k][c]).abs() < 1e-12, "{}", cfg.family);
            }
        }
    }
}

#[test]
fn duplicated_messages_leave_mean_unchanged() {
    let sys = molecules(1, 6, 4).remove(0);
    for cfg in [ModelConfig::unconstrained(2, 8), ModelConfig::cartesian(2, 9), ModelConfig::spherical(1, 2, 2, 2)] {
        let s = perturbed_state(&cfg, 3);
        let g = build_graph(&sys, cfg.preset.cutoff, cfg.preset.k_max).unwrap();
        let mut doubled = g.clone();
        doubled.src = g.src.iter().flat_map(|&u| [u, u]).collect();
        doubled.dst = g.dst.iter().flat_map(|&v| [v, v]).collect();
        doubled.vec = g.vec.iter().flat_map(|&r| [r, r]).collect();
        doubled.dist = g.dist.iter().flat_map(|&d| [d, d]).collect();
        let a = forward(&s, &sys, &g).unwrap();
        let b = forward(&s, &sys, &doubled).unwrap();
        assert!(rel(a.energy, b.energy) < 1e-12, "{}", cfg.family);
        // the pairwise force head sums over neighbors; node heads read mean-aggregated states
        let factor = if cfg.family == Family::Unconstrained { 2.0 } else { 1.0 };
        for (fa, fb) in a.forces.iter().zip(&b.forces) {
            for c in 0..3 {
                assert!((factor * fa[c] - fb[c]).abs() < 1e-12, "{}", cfg.family);
            }
        }
    }
}

fn equivariance_errors(cfg: &ModelConfig, rotations: usize, seed: u64) -> (f64, f64) {
    let s = perturbed_state(cfg, seed);
    let sys = molecules(1, 7, seed + 10).remove(0);
    let base = predict(&s, &Batch::new(std::slice::from_ref(&sys), cfg).unwrap()).unwrap().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut we, mut wf) = (0.0f64, 0.0f64);
    let fnorm = base.forces.iter().map(|f| f.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    for _ in 0..rotations {
        let r = sample_rotation(&mut rng);
        let rot = predict(&s, &Batch::new(&[sys.rotated(&r)], cfg).unwrap()).unwrap().remove(0);
        we = we.max(rel(base.energy, rot.energy));
        let diff: f64 = base
            .forces
            .iter()
            .zip(&rot.forces)
            .map(|(f, g)| {
                let rf = r.apply(*f);
                (0..3).map(|c| (rf[c] - g[c]).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        wf = wf.max(diff / (fnorm + 1e-8));
    }
    (we, wf)
}

#[test]
fn symmetric_families_are_equivariant() {
    for cfg in &small_configs()[1..] {
        let (we, wf) = equivariance_errors(cfg, 10, 5);
        assert!(we < 1e-5 && wf < 1e-5, "{}: {we} {wf}", cfg.family);
    }
}

#[test]
fn unconstrained_is_not_equivariant() {
    let cfg = ModelConfig::unconstrained(2, 8);
    let s = perturbed_state(&cfg, 6);
    let sys = molecules(1, 7, 6).remove(0);
    let base = predict(&s, &Batch::new(std::slice::from_ref(&sys), &cfg).unwrap()).unwrap().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut errs: Vec<f64> = (0..25)
        .map(|_| {
            let r = sample_rotation(&mut rng);
            let rot = predict(&s, &Batch::new(&[sys.rotated(&r)], &cfg).unwrap()).unwrap().remove(0);
            let num: f64 = base.forces.iter().zip(&rot.forces).map(|(f, g)| norm(crate::so3::rotation::sub(r.apply(*f), *g)).powi(2)).sum();
            let den: f64 = base.forces.iter().map(|f| norm(*f).powi(2)).sum();
            (num / den).sqrt()
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    assert!(errs[errs.len() / 2] > 1e-3);
}

#[test]
fn unconstrained_message_properties() {
    let cfg = ModelConfig::unconstrained(1, 8);
    let mut s = perturbed_state(&cfg, 7);
    let h: Vec<f64> = s.get("embed").unwrap().row(1).to_vec();
    let r = [1.0, -0.5, 0.7];
    let m1 = message_unconstrained(&s, 0, &h, &h, r).unwrap();
    let m2 = message_unconstrained(&s, 0, &h, &h, [-1.0, 0.5, -0.7]).unwrap();
    assert!(m1.iter().zip(&m2).any(|(a, b)| (a - b).abs() > 1e-6));
    // the standalone message matches the tape's per-edge activation times W2
    let sys = AtomicSystem::new(vec![6, 6], vec![[1.0, -0.5, 0.7], [0.0; 3]]).unwrap();
    let batch = Batch::new(&[sys], &cfg).unwrap();
    let mut tape = Tape::new();
    let p = s.bind(&mut tape, false);
    let out = forward_on_tape(&s, &mut tape, &p, &batch).unwrap();
    let act = out.probes.iter().find(|(k, _)| k == "layer0.message").unwrap().1;
    let e01 = (0..batch.n_edges()).find(|&e| batch.src[e] == 0).unwrap();
    let env = batch.envelope[e01];
    let from_tape = unconstrained::vec_mat(&tape.value(act).row(e01).iter().map(|x| x * env).collect::<Vec<_>>(), s.get("layer0.w2").unwrap());
    for (a, b) in from_tape.iter().zip(&m1) {
        assert!((a - b).abs() < 1e-12);
    }
    s.get_mut("layer0.w2").unwrap().data.iter_mut().for_each(|x| *x = 0.0);
    assert!(message_unconstrained(&s, 0, &h, &h, r).unwrap().iter().all(|x| *x == 0.0));
}

#[test]
fn cartesian_message_rotates() {
    let cfg = ModelConfig::cartesian(1, 9);
    let e = cfg.vector_channels.unwrap();
    let s = perturbed_state(&cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h_u: Vec<f64> = (0..9).map(|_| rng.random::<f64>() - 0.5).collect();
    let h_v: Vec<f64> = (0..9).map(|_| rng.random::<f64>() - 0.5).collect();
    let x_u: Vec<f64> = (0..3 * e).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let x_v: Vec<f64> = (0..3 * e).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let rotate = |r: &Rotation, x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; 3 * e];
        for i in 0..e {
            let v = r.apply([x[i], x[e + i], x[2 * e + i]]);
            for a in 0..3 {
                out[a * e + i] = v[a];
            }
        }
        out
    };
    let (m, upd) = message_cartesian(&s, 0, &h_u, &h_v, &x_u, &x_v, 2.5).unwrap();
    for _ in 0..5 {
        let r = sample_rotation(&mut rng);
        let (m2, upd2) = message_cartesian(&s, 0, &h_u, &h_v, &rotate(&r, &x_u), &rotate(&r, &x_v), 2.5).unwrap();
        assert!(m.iter().zip(&m2).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(rotate(&r, &upd).iter().zip(&upd2).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}

#[test]
fn single_vector_channel_works() {
    let mut cfg = ModelConfig::cartesian(2, 4);
    cfg.vector_channels = Some(1);
    let (we, wf) = equivariance_errors(&cfg, 5, 9);
    assert!(we < 1e-5 && wf < 1e-5);
}

#[test]
fn directional_messages_are_invariant() {
    let cfg = ModelConfig::directional(2, 6);
    let s = perturbed_state(&cfg, 10);
    let sys = molecules(1, 6, 10).remove(0);
    let messages = |sys: &AtomicSystem| -> Vec<f64> {
        let b = Batch::new(std::slice::from_ref(sys), &cfg).unwrap();
        let mut tape = Tape::new();
        let p = s.bind(&mut tape, false);
        let out = forward_on_tape(&s, &mut tape, &p, &b).unwrap();
        let v = out.probes.iter().find(|(k, _)| k == "layer1.message").unwrap().1;
        tape.value(v).data.clone()
    };
    let base = messages(&sys);
    let r = sample_rotation(&mut ChaCha8Rng::seed_from_u64(10));
    let rot = messages(&sys.rotated(&r));
    assert!(base.iter().zip(&rot).all(|(a, b)| (a - b).abs() < 1e-8));
    let b0 = Batch::new(std::slice::from_ref(&sys), &cfg).unwrap().triplets.unwrap();
    let b1 = Batch::new(&[sys.rotated(&r)], &cfg).unwrap().triplets.unwrap();
    assert!(b0.quad_features.data.iter().zip(&b1.quad_features.data).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn finite_difference_gradients() {
    for cfg in small_configs() {
        let s = perturbed_state(&cfg, 11);
        let systems = molecules(2, 5, 11);
        let batch = Batch::new(&systems, &cfg).unwrap();
        let check = check_gradients(&s, &batch, &LossSpec::default(), 24, 1e-5, 1e-5, 11).unwrap();
        assert_eq!(check.entries.len(), 24);
        assert!(check.max_relative_error < 1e-4, "{}: {:?}", cfg.family, check);
    }
}

#[test]
fn symmetry_weighted_gradients_are_consistent() {
    // Weighting every system by 1/n equals the plain mean.
    let cfg = ModelConfig::cartesian(1, 4);
    let s = perturbed_state(&cfg, 12);
    let batch = Batch::new(&molecules(3, 5, 12), &cfg).unwrap();
    let a = gradients(&s, &batch, &LossSpec::default()).unwrap();
    let b = weighted_gradients(&s, &batch, &LossSpec::default(), &[1.0 / 3.0; 3]).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.grads, b.grads);
}

#[test]
fn non_finite_gradient_names_the_layer() {
    let cfg = ModelConfig::unconstrained(1, 4);
    let mut s = init_state(&cfg, 13).unwrap();
    s.params[0].data[4] = f64::INFINITY;
    let batch = Batch::new(&molecules(1, 4, 13), &cfg).unwrap();
    match gradients(&s, &batch, &LossSpec::default()) {
        Err(Error::NonFiniteGradient { layer }) => assert!(!layer.is_empty()),
        other => panic!("expected a non-finite gradient error, got {:?}", other.map(|g| g.loss)),
    }
}

#[test]
fn calibration_normalizes_directional_sums() {
    let cfg = ModelConfig::directional(2, 6);
    let mut s = init_state(&cfg, 14).unwrap();
    let batches: Vec<Batch> = (0..4).map(|i| Batch::new(&molecules(2, 6, 100 + i), &cfg).unwrap()).collect();
    calibrate_scales(&mut s, &batches).unwrap();
    for t in 0..2 {
        for kind in ["triplet", "quadruplet"] {
            let v = s.buffer(&format!("layer{t}.scale_{kind}"));
            assert!(v.is_finite() && v > 0.0 && v != 1.0);
        }
    }
    // after calibration, the scaled sums of the first batch have spread near one
    let mut tape = Tape::new();
    let p = s.bind(&mut tape, false);
    let out = forward_on_tape(&s, &mut tape, &p, &batches[0]).unwrap();
    let raw = out.probes.iter().find(|(k, _)| k == "layer0.triplet_sum").unwrap().1;
    let vals: Vec<f64> = tape.value(raw).data.iter().map(|x| x * s.buffer("layer0.scale_triplet")).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let std = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    assert!(std > 0.3 && std < 3.0, "{std}");
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn probe_rms(state: &ModelState, batch: &Batch, name: &str) -> f64 {
    let mut tape = Tape::new();
    let p = state.bind(&mut tape, false);
    let out = forward_on_tape(state, &mut tape, &p, batch).unwrap();
    let v = out.probes.iter().find(|(k, _)| k == name).unwrap().1;
    rms(&tape.value(v).data)
}

#[test]
fn activations_stay_order_one_across_widths() {
    let systems = molecules(3, 8, 15);
    for family in [Family::Unconstrained, Family::CartesianVector] {
        for layer in ["layer0.h", "layer1.h"] {
            let vals: Vec<f64> = [16usize, 64, 256]
                .iter()
                .map(|&w| {
                    let cfg = ModelConfig::for_family(family, 2, w);
                    let batch = Batch::new(&systems, &cfg).unwrap();
                    // average over seeds to tame init noise
                    (0..4).map(|seed| probe_rms(&init_state(&cfg, seed).unwrap(), &batch, layer)).sum::<f64>() / 4.0
                })
                .collect();
            let ratio = vals.iter().cloned().fold(0.0, f64::max) / vals.iter().cloned().fold(f64::MAX, f64::min);
            assert!(ratio < 2.0, "{family} {layer}: {vals:?}");
        }
    }
}

#[test]
fn cartesian_vectors_stay_order_one_across_widths() {
    let systems = molecules(3, 8, 16);
    let vals: Vec<f64> = [64usize, 256, 1024]
        .iter()
        .map(|&w| {
            let cfg = ModelConfig::cartesian(1, w);
            let batch = Batch::new(&systems, &cfg).unwrap();
            probe_rms(&init_state(&cfg, 1).unwrap(), &batch, "layer0.x")
        })
        .collect();
    let ratio = vals.iter().cloned().fold(0.0, f64::max) / vals.iter().cloned().fold(f64::MAX, f64::min);
    assert!(ratio < 2.0, "{vals:?}");
}

#[test]
fn cartesian_mixer_term_follows_inverse_sqrt_channels() {
    // At init every channel of X_uv is the edge vector and Φ is independent of
    // it, so each of the 3E mixer entries has variance |r|²|m|²/(3wE). Dividing
    // the measured RMS by the E-free part leaves an E^{-1/2} law.
    let systems = molecules(3, 8, 17);
    let vals: Vec<f64> = [64usize, 256, 1024]
        .iter()
        .map(|&w| {
            let cfg = ModelConfig::cartesian(1, w);
            let batch = Batch::new(&systems, &cfg).unwrap();
            let e = config::vector_channels_for(w) as f64;
            let seeds = 4;
            let ratio: f64 = (0..seeds)
                .map(|seed| {
                    let s = init_state(&cfg, seed).unwrap();
                    let mut tape = Tape::new();
                    let p = s.bind(&mut tape, false);
                    let out = forward_on_tape(&s, &mut tape, &p, &batch).unwrap();
                    let probe = |name: &str| tape.value(out.probes.iter().find(|(k, _)| k == name).unwrap().1).clone();
                    let (mix, msg) = (probe("layer0.mixer"), probe("layer0.message"));
                    let expected: f64 = (0..batch.n_edges())
                        .map(|k| norm(batch.vec[k]).powi(2) * msg.row(k).iter().map(|x| x * x).sum::<f64>() / (3 * w) as f64)
                        .sum::<f64>()
                        / batch.n_edges() as f64;
                    rms(&mix.data) / expected.sqrt()
                })
                .sum::<f64>()
                / seeds as f64;
            ratio * e.sqrt()
        })
        .collect();
    for v in &vals {
        assert!((v - 1.0).abs() < 0.1, "{vals:?}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = ModelConfig::directional(1, 4);
    let mut s = init_state(&cfg, 18).unwrap();
    s.buffers.insert("layer0.scale_triplet".into(), 0.25);
    let back = checkpoint::from_json(&checkpoint::to_json(&s).unwrap()).unwrap();
    assert_eq!(back, s);
    let mut bad: serde_json::Value = serde_json::from_str(&checkpoint::to_json(&s).unwrap()).unwrap();
    bad["n_params"] = serde_json::json!(1);
    assert!(checkpoint::from_json(&bad.to_string()).is_err());
}

#[test]
fn state_shape_mismatch_rejected() {
    let cfg = ModelConfig::unconstrained(1, 4);
    let s = init_state(&cfg, 0).unwrap();
    let other = ModelConfig::unconstrained(1, 5);
    assert!(matches!(ModelState::from_parts(other, s.names.clone(), s.params.clone(), BTreeMap::new(), 0), Err(Error::Shape(_))));
}

#[test]
fn forward_flops_are_linear_in_copies() {
    for cfg in small_configs() {
        let s = init_state(&cfg, 0).unwrap();
        let sys = molecules(1, 6, 19);
        let one = forward_flops(&s, &Batch::new(&sys, &cfg).unwrap()).unwrap();
        let two = forward_flops(&s, &Batch::new(&[sys[0].clone(), sys[0].clone()], &cfg).unwrap()).unwrap();
        assert_eq!(two, 2 * one, "{}", cfg.family);
    }
}
