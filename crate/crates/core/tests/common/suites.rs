//! Measured outcomes of the formula and property checks, shared by the
//! per-module tests and the acceptance target.

use candle_core::{DType, Device, Tensor};
use rand::Rng;

use super::losses::*;
use super::*;
use simgrasp::advsup::*;
use simgrasp::diffusion::*;
use simgrasp::eval::*;
use simgrasp::grasp::*;
use simgrasp::scenegen::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn perfect(inst: &LossInstance, fake_channel: bool) -> Vol {
    let mut v = vec![vec![vec![vec![0.0; inst.w]; inst.h]; inst.k + 1]; inst.b];
    for bi in 0..inst.b {
        for i in 0..inst.h {
            for j in 0..inst.w {
                let c = if fake_channel { inst.k } else { (0..inst.k).find(|&c| inst.labels[bi][c][i][j] == 1.0).unwrap() };
                v[bi][c][i][j] = 1.0;
            }
        }
    }
    v
}

#[derive(Debug)]
pub struct LossOracleOutcome {
    pub max_weight_err: f64,
    pub max_dis_err: f64,
    pub max_gen_err: f64,
    pub max_perfect_loss: f64,
}

impl LossOracleOutcome {
    pub fn max_err(&self) -> f64 {
        self.max_weight_err.max(self.max_dis_err).max(self.max_gen_err)
    }
}

/// Closed-form losses on random probability volumes, plus the full
/// segmenter-driven path through a probe network, against scalar loops.
pub fn loss_oracle_suite(instances: usize, seed: u64) -> LossOracleOutcome {
    let mut r = rng(seed);
    let mut out = LossOracleOutcome { max_weight_err: 0.0, max_dis_err: 0.0, max_gen_err: 0.0, max_perfect_loss: 0.0 };
    for n in 0..instances {
        let inst = random_instance(&mut r);
        let labels = tensor(&inst.labels);
        let w = class_weights(&labels).unwrap();
        for (a, b) in w.gamma.iter().zip(class_weights_oracle(&inst)) {
            out.max_weight_err = out.max_weight_err.max(rel(*a, b));
        }
        let dis = discriminator_loss_from_probs(&tensor(&inst.real), &tensor(&inst.fake), &labels, &w).unwrap();
        let gen = generator_adv_loss_from_probs(&tensor(&inst.fake), &labels, &w).unwrap();
        out.max_dis_err = out.max_dis_err.max(rel(dis.to_scalar::<f64>().unwrap(), discriminator_loss_oracle(&inst, &inst.real, &inst.fake)));
        out.max_gen_err = out.max_gen_err.max(rel(gen.to_scalar::<f64>().unwrap(), generator_loss_oracle(&inst, &inst.fake)));

        let real_ok = tensor(&perfect(&inst, false));
        let fake_ok = tensor(&perfect(&inst, true));
        let d0: f64 = discriminator_loss_from_probs(&real_ok, &fake_ok, &labels, &w).unwrap().to_scalar().unwrap();
        let g0: f64 = generator_adv_loss_from_probs(&real_ok, &labels, &w).unwrap().to_scalar().unwrap();
        out.max_perfect_loss = out.max_perfect_loss.max(d0.abs()).max(g0.abs());

        if n % 4 == 0 {
            let seg = ProbeSegmenter::new(inst.k, n as u64);
            let img = |r: &mut rand_chacha::ChaCha8Rng| {
                let v: Vec<f64> = (0..inst.b * 3 * inst.h * inst.w).map(|_| r.random_range(-1.0..1.0)).collect();
                Tensor::from_vec(v, (inst.b, 3, inst.h, inst.w), &Device::Cpu).unwrap()
            };
            let (real, fake) = (img(&mut r), img(&mut r));
            let vol = |t: &Tensor| -> Vol { unflatten(t) };
            let (pr, pf) = (vol(&seg.probabilities(&real).unwrap()), vol(&seg.probabilities(&fake).unwrap()));
            let dis: f64 = discriminator_loss(&real, &fake, &labels, &seg).unwrap().to_scalar().unwrap();
            let gen: f64 = generator_adv_loss(&fake, &labels, &seg).unwrap().to_scalar().unwrap();
            out.max_dis_err = out.max_dis_err.max(rel(dis, discriminator_loss_oracle(&inst, &pr, &pf)));
            out.max_gen_err = out.max_gen_err.max(rel(gen, generator_loss_oracle(&inst, &pf)));
        }
    }
    out
}

#[derive(Debug)]
pub struct GradientOutcome {
    pub discriminator: Vec<f64>,
    pub generator: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub max_params: usize,
}

impl GradientOutcome {
    pub fn worst(&self) -> f64 {
        self.discriminator.iter().chain(&self.generator).chain(&self.diffusion).fold(0.0, |a, &b| a.max(b))
    }
}

fn random_tensor(r: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Central-difference checks of both adversarial losses and the
/// ε-prediction loss on small probe networks.
pub fn gradient_suite(probes: usize, seed: u64) -> GradientOutcome {
    let mut r = rng(seed);
    let mut out = GradientOutcome { discriminator: vec![], generator: vec![], diffusion: vec![], max_params: 0 };
    for p in 0..probes as u64 {
        let mut inst = random_instance(&mut r);
        inst.h = inst.h.max(2);
        inst.w = inst.w.max(2);
        let inst = {
            let mut labels = vec![vec![vec![vec![0.0; inst.w]; inst.h]; inst.k]; inst.b];
            for bi in 0..inst.b {
                for i in 0..inst.h {
                    for j in 0..inst.w {
                        labels[bi][r.random_range(0..inst.k)][i][j] = 1.0;
                    }
                }
            }
            LossInstance { labels, ..inst }
        };
        let (b, k, h, w) = (inst.b, inst.k, inst.h, inst.w);
        let labels = tensor(&inst.labels);

        let seg = ProbeSegmenter::new(k, 100 + p);
        let real = random_tensor(&mut r, &[b, 3, h, w]);
        let fake = random_tensor(&mut r, &[b, 3, h, w]);
        out.max_params = out.max_params.max(seg.params.num_params());
        out.discriminator.push(directional_check(&seg.params, &mut r, &|| {
            discriminator_loss(&real, &fake, &labels, &seg).unwrap()
        }));

        let gen = ProbeGenerator::new(200 + p);
        let z = random_tensor(&mut r, &[b, 2, h, w]);
        out.max_params = out.max_params.max(gen.params.num_params());
        out.generator.push(directional_check(&gen.params, &mut r, &|| {
            generator_adv_loss(&gen.forward(&z), &labels, &seg).unwrap()
        }));

        let cfg = DiffusionConfig { timesteps: 50, ..Default::default() };
        let schedule = build_schedule(&cfg).unwrap();
        let den = ProbeDenoiser::new(k, cfg.timesteps, 300 + p);
        let x0 = random_tensor(&mut r, &[b, 3, h, w]);
        out.max_params = out.max_params.max(den.params.num_params());
        out.diffusion.push(directional_check(&den.params, &mut r, &|| {
            let mut noise = simgrasp::rng::stream(p, "probe-noise");
            diffusion_loss(&x0, &labels, &vec![0; b], &den, &schedule, &mut noise).unwrap()
        }));
    }
    out
}

#[derive(Debug)]
pub struct AlgebraOutcome {
    pub inversion_err: f64,
    pub schedule_monotone: bool,
    pub sampling_deterministic: bool,
    pub seeds_differ: bool,
    pub batch_independent: bool,
}

impl AlgebraOutcome {
    pub fn passed(&self) -> bool {
        self.inversion_err < 1e-6 && self.schedule_monotone && self.sampling_deterministic && self.seeds_differ && self.batch_independent
    }
}

pub fn diffusion_algebra_suite(seed: u64) -> AlgebraOutcome {
    let mut r = rng(seed);
    let mut inversion_err: f64 = 0.0;
    let mut schedule_monotone = true;
    for (timesteps, lo, hi) in [(1000, 1e-4, 0.02), (200, 1e-4, 0.02), (50, 1e-3, 0.05), (10, 0.01, 0.01)] {
        let cfg = DiffusionConfig { timesteps, beta_min: lo, beta_max: hi, ..Default::default() };
        let s = build_schedule(&cfg).unwrap();
        schedule_monotone &= s.len() == timesteps;
        schedule_monotone &= s.betas.windows(2).all(|w| w[1] >= w[0]);
        schedule_monotone &= s.alpha_bar.windows(2).all(|w| w[1] < w[0]);
        schedule_monotone &= s.alpha_bar.iter().all(|&a| a > 0.0 && a < 1.0);
        for _ in 0..10 {
            let b = r.random_range(1..4);
            let x0 = random_tensor(&mut r, &[b, 3, 4, 4]);
            let eps = random_tensor(&mut r, &[b, 3, 4, 4]);
            let t: Vec<usize> = (0..b).map(|_| r.random_range(0..timesteps)).collect();
            let xt = q_sample(&x0, &t, &eps, &s).unwrap();
            let back = predict_x0_unclamped(&xt, &t, &eps, &s).unwrap();
            let e: f64 = (back - &x0).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
            inversion_err = inversion_err.max(e);
        }
    }

    let cfg = DiffusionConfig { timesteps: 8, base_width: 8, ..Default::default() };
    let model = DiffusionModel::new(&cfg, DType::F32).unwrap();
    let spec = SceneSpec::default();
    let scenes: Vec<LayoutScene> = (0..3).map(|s| generate_scene(&spec, s).unwrap()).collect();
    let req = |i: usize, seed: u64| SampleRequest { layout: &scenes[i], style: "real".into(), seed, guidance_weight: 1.5 };
    let a = model.sample_batch(&[req(0, 1), req(1, 2)]).unwrap();
    let b = model.sample_batch(&[req(0, 1), req(1, 2)]).unwrap();
    let c = model.sample_batch(&[req(0, 1), req(2, 9)]).unwrap();
    let d = model.sample(&req(0, 3)).unwrap();
    AlgebraOutcome {
        inversion_err,
        schedule_monotone,
        sampling_deterministic: a == b,
        seeds_differ: d != a[0],
        batch_independent: c[0] == a[0],
    }
}

#[derive(Debug)]
pub struct MetricsOutcome {
    pub mismatches: usize,
    pub max_err: f64,
    pub coarse_exceeds_fine: usize,
}

/// Every metric against its brute-force counterpart on random small
/// instances with at most ten boxes per image.
pub fn metrics_oracle_suite(instances: u64) -> MetricsOutcome {
    let mut out = MetricsOutcome { mismatches: 0, max_err: 0.0, coarse_exceeds_fine: 0 };
    let track = |a: Option<f64>, b: Option<f64>, out: &mut MetricsOutcome| match (a, b) {
        (Some(a), Some(b)) => out.max_err = out.max_err.max((a - b).abs()),
        (None, None) => {}
        _ => out.mismatches += 1,
    };
    for seed in 0..instances {
        let mut r = rng(1000 + seed);
        let n_img = r.random_range(1..4);
        let data: Vec<(Vec<simgrasp::detector::Detection>, Vec<GtBox>)> = (0..n_img)
            .map(|_| {
                let np = r.random_range(0..=10);
                let ng = r.random_range(0..=10);
                (random_detections(&mut r, np, 3), random_gts(&mut r, ng, 3))
            })
            .collect();
        let evals: Vec<ImageEval> = data.iter().map(|(p, g)| ImageEval { preds: p, gts: g }).collect();
        for (p, g) in &data {
            for a in p {
                for b in g {
                    track(Some(simgrasp::detector::iou(&a.bbox, &b.bbox).unwrap()), Some(iou_by_cells(&a.bbox, &b.bbox)), &mut out);
                }
            }
            if simgrasp::detector::nms(p, 0.5) != nms_reference(p, 0.5) {
                out.mismatches += 1;
            }
            let m = match_detections(p, g, 0.5);
            let (tps, fps, fns) = match_reference(p, g, 0.5);
            let mut got: Vec<(usize, usize)> = m.true_positives.iter().map(|t| (t.pred, t.gt)).collect();
            let mut want = tps;
            got.sort();
            want.sort();
            let mut fp = m.false_positives.clone();
            fp.sort();
            let mut fp_want = fps;
            fp_want.sort();
            if got != want || fp != fp_want || m.false_negatives != fns {
                out.mismatches += 1;
            }
            let pairs: Vec<(simgrasp::scenegen::BBox, simgrasp::scenegen::BBox)> =
                m.true_positives.iter().map(|t| (p[t.pred].bbox, g[t.gt].bbox)).collect();
            match (center_deviation(&pairs), deviation_reference(&pairs)) {
                (Some(d), Some((mean, median, max))) => {
                    for (a, b) in [(d.mean, mean), (d.median, median), (d.max, max)] {
                        track(Some(a), Some(b), &mut out);
                    }
                }
                (None, None) => {}
                _ => out.mismatches += 1,
            }
        }
        for class in 1..=3 {
            track(average_precision(&evals, class, 0.5), ap_reference(&data, class, 0.5), &mut out);
        }
        let (m50, m5095) = (map50(&evals), map50_95(&evals));
        track(m50, map_reference(&data, 0.5), &mut out);
        track(m5095, map50_95_reference(&data), &mut out);
        if let (Some(a), Some(b)) = (m50, m5095) {
            if b > a + 1e-12 {
                out.coarse_exceeds_fine += 1;
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct ControllerOutcome {
    pub linearity_err: f64,
    pub fixed_point_moves: usize,
    pub decay_err: f64,
    pub plain_success: f64,
}

impl ControllerOutcome {
    pub fn passed(&self) -> bool {
        self.linearity_err == 0.0 && self.fixed_point_moves == 0 && self.decay_err < 1e-9 && self.plain_success == 1.0
    }
}

pub fn controller_suite(seed: u64) -> ControllerOutcome {
    let mut r = rng(seed);
    let cfg = ControllerConfig::default();
    let rig = Rig::default();
    let mut linearity_err: f64 = 0.0;
    for _ in 0..200 {
        let l = [r.random_range(-8i32..8) as f64 / 4.0, r.random_range(-8i32..8) as f64 / 4.0];
        let g = [r.random_range(-8i32..8) as f64 / 4.0, r.random_range(-8i32..8) as f64 / 4.0];
        let alpha = r.random_range(0..=8) as f64 / 8.0;
        let got = blend(l, g, alpha);
        for k in 0..2 {
            linearity_err = linearity_err.max((got[k] - (alpha * l[k] + (1.0 - alpha) * g[k])).abs());
        }
    }
    let mut fixed_point_moves = 0;
    for _ in 0..100 {
        let robot = RobotState::new(
            (r.random_range(0.0..32.0), r.random_range(0.0..32.0)),
            (r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)),
            1,
        );
        let robot = RobotState { gripper_offset: (robot.gripper_offset.0.clamp(-robot.base_position.0, 32.0 - robot.base_position.0), robot.gripper_offset.1.clamp(-robot.base_position.1, 32.0 - robot.base_position.1)), ..robot };
        if step(&robot, [0.0, 0.0], [0.0, 0.0], &cfg, &rig) != robot {
            fixed_point_moves += 1;
        }
    }
    let protocol = TrialProtocol::default();
    let mut decay_err: f64 = 0.0;
    let run = run_tier(&protocol, Tier::Plain, seed, &OracleDetector, &cfg, &rig).unwrap();
    for res in &run.results {
        let errs: Vec<ControlError> = res.error_trace.iter().filter_map(|s| s.error()).collect();
        for w in errs.windows(2) {
            for (a, b, gain) in [(w[0].e_local, w[1].e_local, cfg.gain_local), (w[0].e_global, w[1].e_global, cfg.gain_global)] {
                for k in 0..2 {
                    decay_err = decay_err.max((b[k] - (1.0 - gain) * a[k]).abs());
                }
            }
        }
    }
    ControllerOutcome {
        linearity_err,
        fixed_point_moves,
        decay_err,
        plain_success: success_rate(&run.results).unwrap(),
    }
}
