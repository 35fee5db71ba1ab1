//! Shape contracts, finite-difference checks and scalar oracles for the
//! network and its losses.

use std::collections::BTreeMap;

use fewshot_rir::autodiff::gradcheck::random_tensor;
use fewshot_rir::autodiff::{
    check_gradients, compare_with_finite_differences, GradCheckOptions, Graph, ParamStore, Tensor, Var,
};
use fewshot_rir::dsp::{schroeder_edc, Spectrogram, StftConfig};
use fewshot_rir::mapping::{episode_origin, MapSpec};
use fewshot_rir::model::{
    decay_db, decay_target, loss_edm, loss_stft, loss_total, pose_matrix, Ablation, ContextInput, EpisodeInputs,
    Forward, Model, ModelConfig,
};
use fewshot_rir::scene::{sample_episode, EpisodeConfig, Pose, RaycastScan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stft_for(cfg: &ModelConfig) -> StftConfig {
    StftConfig {
        window_len: 2 * cfg.freq_bins,
        hop: cfg.freq_bins / 2,
        frames: cfg.frames,
        ..StftConfig::default()
    }
}

fn random_spec(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Spectrogram {
    let stft = stft_for(cfg);
    let n = 2 * cfg.freq_bins * cfg.frames;
    Spectrogram::new(stft, (0..n).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap()
}

/// A simulated room seen through `n` context scans with synthetic echoes.
fn episode(cfg: &ModelConfig, seed: u64, n: usize, queries: usize, resolution: f64) -> (EpisodeInputs, Vec<Pose>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ep_cfg = EpisodeConfig {
        context: n,
        queries,
        rays: cfg.rays,
        ..EpisodeConfig::default()
    };
    let ep = sample_episode(&mut rng, &ep_cfg).unwrap();
    let listeners: Vec<_> = ep.context.iter().map(|c| c.pose.listener).collect();
    let origin = episode_origin(&ep.scene, &listeners, ep_cfg.grid_resolution).unwrap();
    let context = ep
        .context
        .iter()
        .map(|c| ContextInput {
            pose: c.pose,
            echo: random_spec(cfg, &mut rng),
            scan: c.scan.clone(),
        })
        .collect();
    let inputs = EpisodeInputs {
        map: MapSpec::new(cfg.map_size, resolution, origin).unwrap(),
        context,
    };
    (inputs, ep.queries.iter().map(|q| q.pose).collect())
}

fn scans_of(inputs: &EpisodeInputs) -> Vec<&RaycastScan> {
    inputs.context.iter().map(|c| &c.scan).collect()
}

/// Runs `body` on a forward pass sharing the checker's tape, with `names`
/// bound to the checker's input variables.
fn on_tape<F>(model: &Model, g: &mut Graph, names: &[&str], vars: &[Var], body: F) -> fewshot_rir::Result<Var>
where
    F: FnOnce(&mut Forward) -> fewshot_rir::Result<Var>,
{
    let mut f = Forward::with_graph(&model.config, &model.params, false, std::mem::take(g));
    for (n, &v) in names.iter().zip(vars) {
        f.params.bind(*n, v);
    }
    let out = body(&mut f);
    *g = f.graph;
    out
}

fn opts(sample: usize) -> GradCheckOptions {
    GradCheckOptions {
        sample: Some(sample),
        ..GradCheckOptions::with_tolerance(1e-4)
    }
}

#[test]
fn visual_encoder_contract_and_gradient() {
    let model = Model::new(ModelConfig::desk(), 1).unwrap();
    let (inputs, _) = episode(&model.config, 2, 2, 1, 0.25);
    let scan = &inputs.context[0].scan;
    let mut f = model.forward(false);
    let out = f.visual_encoder(&[scan]).unwrap();
    assert_eq!(f.graph.shape(out), &[64, 16]);
    let base = f.graph.value(out).clone();

    let mut changed = scan.clone();
    changed.materials[10] = (changed.materials[10] + 1) % 8;
    let mut f = model.forward(false);
    let out = f.visual_encoder(&[&changed]).unwrap();
    assert!(f.graph.value(out).max_abs_diff(&base) > 0.0);

    let mut odd = scan.clone();
    odd.depths.pop();
    odd.materials.pop();
    assert!(model.forward(false).visual_encoder(&[&odd]).is_err());

    let table = model.params.get("material.embed").unwrap().clone();
    let report = check_gradients(
        |g, v| on_tape(&model, g, &["material.embed"], v, |f| f.visual_encoder(&[scan])),
        &[table],
        &GradCheckOptions::with_tolerance(1e-4),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn anticipation_is_identity_at_init() {
    let model = Model::new(ModelConfig::desk(), 3).unwrap();
    let (inputs, _) = episode(&model.config, 4, 8, 1, 0.25);
    let mut f = model.forward(false);
    let feats = f.visual_encoder(&scans_of(&inputs)).unwrap();
    let m_osm = f.observation_map(feats, &scans_of(&inputs), &inputs.map).unwrap();
    let m_ssm = f.anticipate(m_osm, true).unwrap();
    assert_eq!(f.graph.shape(m_ssm), &[32, 32, 16]);
    assert!(f.graph.value(m_osm).data().iter().any(|&v| v != 0.0));
    assert_eq!(f.graph.value(m_osm), f.graph.value(m_ssm));

    let wrong = f.graph.constant(Tensor::zeros(&[16, 16, 16]));
    assert!(f.anticipate(wrong, true).is_err());
}

#[test]
fn patch_embedding_geometry() {
    let model = Model::new(ModelConfig::desk(), 5).unwrap();
    let cfg = &model.config;
    let mut f = model.forward(false);
    let zero = f.graph.constant(Tensor::zeros(&[32, 32, 16]));
    let tokens = f.patch_embed(zero).unwrap();
    assert_eq!(f.graph.shape(tokens), &[64, cfg.d_model]);
    let raw = f.patch_project(zero).unwrap();
    let bias = model.params.get("patch.bias").unwrap();
    for t in 0..64 {
        for c in 0..cfg.d_model {
            assert_eq!(f.graph.value(raw).at(&[t, c]), bias.data()[c]);
        }
    }

    // Content confined to the left patch columns, shifted right by one patch.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut map = Tensor::zeros(&[32, 32, 16]);
    let mut moved = Tensor::zeros(&[32, 32, 16]);
    for r in 0..32 {
        for c in 0..24 {
            for k in 0..16 {
                let v = rng.gen_range(-1.0..1.0);
                map.set(&[r, c, k], v);
                moved.set(&[r, c + 4, k], v);
            }
        }
    }
    let a = f.graph.constant(map);
    let b = f.graph.constant(moved);
    let (ta, tb) = (f.patch_project(a).unwrap(), f.patch_project(b).unwrap());
    let (ta, tb) = (f.graph.value(ta).clone(), f.graph.value(tb).clone());
    for row in 0..8 {
        for col in 0..7 {
            for c in 0..cfg.d_model {
                let x = ta.at(&[row * 8 + col, c]);
                assert!((x - tb.at(&[row * 8 + col + 1, c])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn audio_encoder_contract_and_gradient() {
    let model = Model::new(ModelConfig::desk(), 7).unwrap();
    let (inputs, _) = episode(&model.config, 8, 2, 1, 0.25);
    let echo = &inputs.context[0].echo;
    let poses = [inputs.context[0].pose, inputs.context[1].pose];
    let emb = pose_matrix(&poses, inputs.map.origin, 16).unwrap();
    let mut f = model.forward(false);
    let out = f.audio_encoder(&[echo, echo], &emb).unwrap();
    assert_eq!(f.graph.shape(out), &[2, 64]);
    let v = f.graph.value(out);
    let rows_differ = (0..64).any(|c| v.at(&[0, c]) != v.at(&[1, c]));
    assert!(rows_differ, "same echo, different poses must differ");

    let token = model.params.get("audio.modality").unwrap().clone();
    let report = check_gradients(
        |g, v| on_tape(&model, g, &["audio.modality"], v, |f| f.audio_encoder(&[echo, echo], &emb)),
        &[token],
        &GradCheckOptions::with_tolerance(1e-4),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    random_tensor(&[n, d], -1.0, 1.0, rng)
}

#[test]
fn attention_over_a_single_token_returns_its_value() {
    let model = Model::new(ModelConfig::desk(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut f = model.forward(false);
    let q = f.graph.constant(random_rows(&mut rng, 3, 64));
    let kv = f.graph.constant(random_rows(&mut rng, 1, 64));
    let out = f.attention(q, kv, "decoder.0.attn").unwrap();
    // o(v(kv)) computed directly.
    let p = |n: &str| model.params.get(n).unwrap().clone();
    let mut g = Graph::new();
    let x = g.constant(f.graph.value(kv).clone());
    let (wv, bv, wo, bo) = (
        g.constant(p("decoder.0.attn.v.weight")),
        g.constant(p("decoder.0.attn.v.bias")),
        g.constant(p("decoder.0.attn.o.weight")),
        g.constant(p("decoder.0.attn.o.bias")),
    );
    let v = g.linear(x, wv, bv).unwrap();
    let expected = g.linear(v, wo, bo).unwrap();
    for r in 0..3 {
        for c in 0..64 {
            assert_eq!(f.graph.value(out).at(&[r, c]), g.value(expected).at(&[0, c]));
        }
    }
}

fn decode(model: &Model, memory: &Tensor, queries: &Tensor) -> Tensor {
    let mut f = model.forward(false);
    let m = f.graph.constant(memory.clone());
    let out = f.decode(m, queries).unwrap();
    f.graph.value(out).clone()
}

fn rows(t: &Tensor, order: &[usize]) -> Tensor {
    let d = t.shape()[1];
    let data = order.iter().flat_map(|&r| t.data()[r * d..(r + 1) * d].to_vec()).collect();
    Tensor::new(vec![order.len(), d], data).unwrap()
}

#[test]
fn decoder_memory_permutation_and_duplication() {
    let model = Model::new(ModelConfig::desk(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let memory = random_rows(&mut rng, 6, 64);
    let queries = random_rows(&mut rng, 4, 80);
    let base = decode(&model, &memory, &queries);
    assert_eq!(base.shape(), &[4, 64]);

    let permuted = decode(&model, &rows(&memory, &[3, 0, 5, 1, 4, 2]), &queries);
    assert!(base.max_abs_diff(&permuted) < 1e-12);

    // Doubling every token halves each weight and leaves the mixture intact.
    let doubled = decode(&model, &rows(&memory, &[0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]), &queries);
    assert!(base.max_abs_diff(&doubled) < 1e-12);
    let one = rows(&memory, &[2]);
    assert_eq!(decode(&model, &one, &queries), decode(&model, &rows(&memory, &[2, 2]), &queries));
}

#[test]
fn queries_are_decoded_independently() {
    let model = Model::new(ModelConfig::desk(), 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let memory = random_rows(&mut rng, 10, 64);
    let queries = random_rows(&mut rng, 5, 80);
    let base = decode(&model, &memory, &queries);
    let mut other = random_rows(&mut rng, 5, 80);
    other.data_mut()[2 * 80..3 * 80].copy_from_slice(&queries.data()[2 * 80..3 * 80]);
    let out = decode(&model, &memory, &other);
    assert_eq!(&base.data()[2 * 64..3 * 64], &out.data()[2 * 64..3 * 64]);
    let alone = decode(&model, &memory, &rows(&queries, &[2]));
    assert_eq!(&base.data()[2 * 64..3 * 64], alone.data());
}

#[test]
fn spectrogram_head_contract_and_gradient() {
    let model = Model::new(ModelConfig::desk(), 15).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random_rows(&mut rng, 3, 64);
    let mut f = model.forward(false);
    let xv = f.graph.constant(x.clone());
    let out = f.spectrogram_head(xv).unwrap();
    assert_eq!(f.graph.shape(out), &[3, 2, 64, 128]);
    assert!(f.graph.value(out).data().iter().all(|&v| v >= 0.0));
    assert!(f.graph.value(out).data().iter().any(|&v| v > 0.0));

    let names = ["head.up1.weight", "head.up2.weight", "head.up3.weight", "head.up4.weight"];
    let kernels: Vec<Tensor> = names.iter().map(|n| model.params.get(n).unwrap().clone()).collect();
    let one = rows(&x, &[0]);
    let report = check_gradients(
        |g, v| {
            on_tape(&model, g, &names, v, |f| {
                let x = f.graph.constant(one.clone());
                f.spectrogram_head(x)
            })
        },
        &kernels,
        &opts(12),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.inputs.iter().all(|r| r.checked == 12));
}

#[test]
fn prediction_is_pure_and_accepts_one_context() {
    let model = Model::new(ModelConfig::desk(), 17).unwrap();
    let (inputs, queries) = episode(&model.config, 18, 8, 5, 0.25);
    let a = model.predict(&inputs, &queries, Ablation::default()).unwrap();
    let b = model.predict(&inputs, &queries, Ablation::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.spectrograms.shape(), &[5, 2, 64, 128]);

    let single = EpisodeInputs {
        map: inputs.map,
        context: inputs.context[..1].to_vec(),
    };
    let p = model.predict(&single, &queries, Ablation::default()).unwrap();
    assert_eq!(p.spectrograms.shape(), &[5, 2, 64, 128]);
    for ablation in [
        Ablation { no_mapper: true, ..Ablation::default() },
        Ablation { no_anticipation: true, ..Ablation::default() },
        Ablation { no_skip: true, ..Ablation::default() },
    ] {
        let p = model.predict(&inputs, &queries, ablation).unwrap();
        assert_eq!(p.spectrograms.shape(), &[5, 2, 64, 128]);
    }
}

#[test]
fn outputs_are_finite_at_initialization() {
    let cfg = ModelConfig::desk();
    for pass in 0..100u64 {
        let model = Model::new(cfg.clone(), pass / 10).unwrap();
        let (inputs, queries) = episode(&cfg, 100 + pass, 8, 2, 0.25);
        let p = model.predict(&inputs, &queries, Ablation::default()).unwrap();
        assert!(p.spectrograms.all_finite(), "pass {pass}");
    }
}

fn random_target(cfg: &ModelConfig, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    random_tensor(&[n, 2, cfg.freq_bins, cfg.frames], 0.0, 2.0, rng)
}

fn loss_and_grads(model: &Model, inputs: &EpisodeInputs, queries: &[Pose], target: &Tensor, ablation: Ablation) -> (f64, BTreeMap<String, Tensor>) {
    let mut f = model.forward(true);
    let out = f.predict_rir(inputs, queries, ablation).unwrap();
    let loss = loss_total(&mut f.graph, out.spectrograms, target, model.config.lambda).unwrap();
    let value = f.graph.value(loss).item();
    let mut grads = f.graph.backward(loss).unwrap();
    (value, f.params.collect(&mut grads))
}

#[test]
fn full_pipeline_gradient_on_reduced_config() {
    let mut model = Model::new(ModelConfig::tiny(), 19).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    // Move off the zero initializations: the zero output layer would block
    // gradient into the U-Net, and zero biases on empty map cells put relu
    // inputs exactly on the kink.
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in names {
        let t = model.params.get_mut(&name).unwrap();
        if name.ends_with(".bias") || name == "anticipation.up1.weight" {
            *t = random_tensor(&t.shape().to_vec(), -0.3, 0.3, &mut rng);
        }
    }
    let (inputs, queries) = episode(&model.config, 21, 3, 2, 1.0);
    let target = random_target(&model.config, 2, &mut rng);
    let (_, grads) = loss_and_grads(&model, &inputs, &queries, &target, Ablation::default());
    let unused = ["visual.fuse.weight", "visual.fuse.bias", "visual.modality"];
    for name in model.params.names() {
        assert_eq!(grads.contains_key(name), !unused.contains(&name.as_str()), "{name}");
    }

    let names: Vec<String> = grads.keys().cloned().collect();
    let point: Vec<Tensor> = names.iter().map(|n| model.params.get(n).unwrap().clone()).collect();
    let analytic: Vec<Tensor> = names.iter().map(|n| grads[n].clone()).collect();
    let base = model.params.clone();
    let eval = |xs: &[Tensor]| {
        let mut store: ParamStore = base.clone();
        for (n, x) in names.iter().zip(xs) {
            *store.get_mut(n).unwrap() = x.clone();
        }
        let m = Model {
            config: model.config.clone(),
            params: store,
        };
        let mut f = m.forward(false);
        let out = f.predict_rir(&inputs, &queries, Ablation::default())?;
        let loss = loss_total(&mut f.graph, out.spectrograms, &target, m.config.lambda)?;
        Ok(f.graph.value(loss).item())
    };
    let report = compare_with_finite_differences(eval, &point, &analytic, &opts(2)).unwrap();
    assert!(report.passed, "worst {}: {report:?}", report.max_rel_error());
    let checked: usize = report.inputs.iter().map(|r| r.checked).sum();
    assert!(checked >= 10);
}

#[test]
fn no_mapper_leaves_map_parameters_untouched() {
    let model = Model::new(ModelConfig::tiny(), 22).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (inputs, queries) = episode(&model.config, 24, 3, 2, 1.0);
    let target = random_target(&model.config, 2, &mut rng);
    let ablation = Ablation { no_mapper: true, ..Ablation::default() };
    let (_, grads) = loss_and_grads(&model, &inputs, &queries, &target, ablation);
    assert!(grads.keys().all(|n| !n.starts_with("anticipation.") && !n.starts_with("patch.")));
    assert!(grads.contains_key("visual.fuse.weight") && grads.contains_key("material.embed"));
}

#[test]
fn loss_stft_oracles() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let p = random_target(&cfg, 3, &mut rng);
    let t = random_target(&cfg, 3, &mut rng);
    let value = |p: &Tensor, t: &Tensor| {
        let mut g = Graph::new();
        let pv = g.constant(p.clone());
        let l = loss_stft(&mut g, pv, t).unwrap();
        g.value(l).item()
    };
    assert_eq!(value(&p, &p), 0.0);
    assert!((value(&p.map(|v| v + 1.0), &p) - 1.0).abs() < 1e-12);
    let n = 2 * cfg.freq_bins * cfg.frames;
    let mut per_query = 0.0;
    for q in 0..3 {
        let s: f64 = (0..n).map(|i| (p.data()[q * n + i] - t.data()[q * n + i]).abs()).sum();
        per_query += s / n as f64;
    }
    assert!((value(&p, &t) - per_query / 3.0).abs() < 1e-12);
}

#[test]
fn loss_edm_matches_schroeder_analysis() {
    let cfg = ModelConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    // Decaying targets with a silent tail so some frames are masked.
    let mut t = random_target(&cfg, 2, &mut rng);
    let frames = cfg.frames;
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        let frame = i % frames;
        *v = if frame >= 100 { 0.0 } else { *v * (-(frame as f64) * 0.05).exp() };
    }
    let p = random_target(&cfg, 2, &mut rng);
    let mut g = Graph::new();
    let pv = g.constant(p.clone());
    let loss = loss_edm(&mut g, pv, &t).unwrap();

    let curve = |x: &Tensor, q: usize, ch: usize| {
        let mut e = vec![0.0; frames];
        for f in 0..cfg.freq_bins {
            for (k, acc) in e.iter_mut().enumerate() {
                *acc += (x.at(&[q, ch, f, k]).exp() - 1.0).powi(2);
            }
        }
        schroeder_edc(&e).unwrap().db
    };
    let (mut sum, mut count) = (0.0, 0usize);
    for q in 0..2 {
        for ch in 0..2 {
            let (dp, dt) = (curve(&p, q, ch), curve(&t, q, ch));
            for k in 0..frames {
                if dt[k] > -100.0 {
                    sum += (dp[k] - dt[k]).abs();
                    count += 1;
                }
            }
        }
    }
    assert_eq!(count, 2 * 2 * 100);
    assert!((g.value(loss).item() - sum / count as f64).abs() < 1e-10);

    let mut g = Graph::new();
    let tv = g.constant(t.clone());
    let zero = loss_edm(&mut g, tv, &t).unwrap();
    assert_eq!(g.value(zero).item(), 0.0);
    assert!(loss_edm(&mut g, tv, &Tensor::zeros(t.shape())).is_err());
}

#[test]
fn masked_decay_frames_get_no_gradient() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut t = random_target(&cfg, 1, &mut rng);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if i % cfg.frames >= 5 {
            *v = 0.0;
        }
    }
    let (target_db, mask) = decay_target(&t).unwrap();
    assert_eq!(mask.data().iter().filter(|&&m| m == 0.0).count(), 2 * 3);
    let p = random_target(&cfg, 1, &mut rng);
    let mut g = Graph::new();
    let pv = g.constant(p);
    let curve = decay_db(&mut g, pv).unwrap();
    let curve = g.value(curve).clone();

    let loss_of = |db: &Tensor| {
        let mut g = Graph::new();
        let d = g.param(db.clone());
        let tv = g.constant(target_db.clone());
        let l = g.l1_masked(d, tv, &mask).unwrap();
        let value = g.value(l).item();
        let grad = g.backward(l).unwrap().take(d).unwrap();
        (value, grad)
    };
    let (base, grad) = loss_of(&curve);
    for (i, &m) in mask.data().iter().enumerate() {
        if m == 0.0 {
            assert_eq!(grad.data()[i], 0.0);
            let mut bumped = curve.clone();
            bumped.data_mut()[i] += 1e-3;
            assert_eq!(loss_of(&bumped).0, base);
        } else if i % cfg.frames > 0 {
            // Frame 0 is 0 dB on both sides by construction.
            assert!(grad.data()[i] != 0.0);
        }
    }
}

#[test]
fn total_loss_combines_components() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let p = random_target(&cfg, 2, &mut rng);
    let t = random_target(&cfg, 2, &mut rng);
    let mut g = Graph::new();
    let pv = g.constant(p.clone());
    let (s, e) = (loss_stft(&mut g, pv, &t).unwrap(), loss_edm(&mut g, pv, &t).unwrap());
    let (s, e) = (g.value(s).item(), g.value(e).item());
    let total = loss_total(&mut g, pv, &t, 0.01).unwrap();
    assert!((g.value(total).item() - (s + 0.01 * e)).abs() < 1e-15);
    let plain = loss_total(&mut g, pv, &t, 0.0).unwrap();
    assert_eq!(g.value(plain).item(), s);
    assert!(g.value(total).item() >= 0.0);
    assert!(loss_total(&mut g, pv, &t, -1.0).is_err());

    // Gradient of the sum is the weighted sum of gradients.
    let report = check_gradients(
        |g, v| loss_total(g, v[0], &t, 0.01),
        &[p],
        &GradCheckOptions { kink_radius: None, ..opts(40) },
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}
