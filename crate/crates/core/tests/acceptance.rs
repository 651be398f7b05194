//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use orthohuman::datagen::{make_sample, prepare_mesh, place_lights, procedural_background, RenderConfig, Sample};
use orthohuman::eval::{chamfer, normal_error, p2s};
use orthohuman::fusion::{carve_volume, reconstruct_maps, ReconstructionConfig};
use orthohuman::geometry::primitives::{capsule, capsule_distance, cuboid, mannequin, random_blob};
use orthohuman::geometry::{
    render_depth_ortho, render_perspective_image, DepthMap, Image, MapPair, Mesh, NormalMap, OrthoFrame, OrthographicCamera, Side, Vec3,
};
use orthohuman::losses::{
    gram_matrix, l1_loss, perceptual_loss, spatial_gradient, ssim_loss, total_loss, ConvStack, LossTargets, LossWeights, SSIM_C1, SSIM_C2,
    SSIM_WINDOW,
};
use orthohuman::runtime::{infer_image, train, windows_nonincreasing, Dataset, InferConfig, TrainOutcome};
use orthohuman::{AblationMode, ModelConfig, OrthoHumanNet, PipelineOutput, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEV: Device = Device::Cpu;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn tensor(v: Vec<f64>, shape: (usize, usize, usize, usize)) -> Tensor {
    Tensor::from_vec(v, shape, &DEV).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

/// Mirror index without repeating the edge sample.
fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

fn ssim_oracle(x: &[f64], y: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut total = 0.0;
    for ch in 0..c {
        let at = |v: &[f64], i: isize, j: isize| v[(ch * h + mirror(i, h)) * w + mirror(j, w)];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for di in -r..=r {
                    for dj in -r..=r {
                        let (a, b) = (at(x, i + di, j + dj), at(y, i + di, j + dj));
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                        n += 1.0;
                    }
                }
                let (mx, my) = (sx / n, sy / n);
                let (vx, vy, cov) = (sxx / n - mx * mx, syy / n - my * my, sxy / n - mx * my);
                total += (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            }
        }
    }
    1.0 - total / (c * h * w) as f64
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0f64;
    for case in 0..50 {
        let (b, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(2..=16), rng.random_range(2..=16));
        let n = b * c * h * w;
        let x = rand_vec(&mut rng, n, 0.0, 1.0);
        let y = rand_vec(&mut rng, n, 0.0, 1.0);
        let (tx, ty) = (tensor(x.clone(), (b, c, h, w)), tensor(y.clone(), (b, c, h, w)));
        let plane = c * h * w;

        let l1 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
        let mut diffs = vec![(scalar(&l1_loss(&tx, &ty).map_err(err)?) - l1).abs()];

        let ssim = (0..b).map(|k| ssim_oracle(&x[k * plane..(k + 1) * plane], &y[k * plane..(k + 1) * plane], c, h, w)).sum::<f64>() / b as f64;
        diffs.push((scalar(&ssim_loss(&tx, &ty).map_err(err)?) - ssim).abs());

        let gram = flat(&gram_matrix(&tx).map_err(err)?);
        for k in 0..b {
            for p in 0..c {
                for q in 0..c {
                    let s: f64 = (0..h * w).map(|t| x[k * plane + p * h * w + t] * x[k * plane + q * h * w + t]).sum();
                    diffs.push((gram[(k * c + p) * c + q] - s / (h * w * c) as f64).abs());
                }
            }
        }

        let (dx, dy) = spatial_gradient(&tx).map_err(err)?;
        let (dx, dy) = (flat(&dx), flat(&dy));
        for plane_idx in 0..b * c {
            for i in 0..h {
                for j in 0..w {
                    let at = |a: usize, bb: usize| x[(plane_idx * h + a) * w + bb];
                    let k = (plane_idx * h + i) * w + j;
                    let want_x = if j + 1 < w { at(i, j + 1) - at(i, j) } else { 0.0 };
                    let want_y = if i + 1 < h { at(i + 1, j) - at(i, j) } else { 0.0 };
                    diffs.push((dx[k] - want_x).abs());
                    diffs.push((dy[k] - want_y).abs());
                }
            }
        }
        let d = diffs.into_iter().fold(0.0, f64::max);
        check(d <= 1e-6, || format!("case {case} ({b}x{c}x{h}x{w}) deviates by {d:e}"))?;
        worst = worst.max(d);
    }
    Ok(format!("50 cases, max abs deviation {worst:.2e}"))
}

/// Norm-wise relative error of the analytic gradient against central differences.
fn grad_check(x: &Tensor, f: &dyn Fn(&Tensor) -> Tensor) -> f64 {
    let var = Var::from_tensor(x).unwrap();
    let grads = f(var.as_tensor()).backward().unwrap();
    let analytic = flat(grads.get(var.as_tensor()).unwrap());
    let base = flat(x);
    let eps = 1e-6;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..base.len() {
        let eval = |d: f64| {
            let mut v = base.clone();
            v[i] += d;
            scalar(&f(&Tensor::from_vec(v, x.shape(), &DEV).unwrap()))
        };
        let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
        num += (analytic[i] - fd).powi(2);
        den += fd * fd;
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

fn toy_extractor(rng: &mut ChaCha8Rng) -> ConvStack {
    let mut layer = |cin: usize, cout: usize| {
        (tensor(rand_vec(rng, cout * cin * 9, -0.5, 0.5), (cout, cin, 3, 3)), Tensor::from_vec(rand_vec(rng, cout, -0.1, 0.1), cout, &DEV).unwrap())
    };
    let stages = vec![vec![layer(3, 4)], vec![layer(4, 4)]];
    ConvStack::from_layers("toy", stages, false)
}

fn output(normals: &Tensor, colors: &Tensor, depths: &Tensor) -> PipelineOutput {
    PipelineOutput { normals: Some(normals.clone()), colors: Some(colors.clone()), depths: depths.clone(), phi_color: None, phi_normal: None }
}

fn random_targets(rng: &mut ChaCha8Rng) -> LossTargets {
    LossTargets {
        normals: tensor(rand_vec(rng, 6 * 64, -0.9, 0.9), (1, 6, 8, 8)),
        colors: tensor(rand_vec(rng, 6 * 64, 0.05, 0.95), (1, 6, 8, 8)),
        depths: tensor(rand_vec(rng, 2 * 64, 0.05, 0.95), (1, 2, 8, 8)),
    }
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = (1, 2, 8, 8);
    let target = tensor(rand_vec(&mut rng, 128, 0.05, 0.95), s);
    let x = tensor(rand_vec(&mut rng, 128, 0.05, 0.95), s);
    let ex = toy_extractor(&mut rng);
    let color_target = tensor(rand_vec(&mut rng, 192, 0.0, 1.0), (1, 3, 8, 8));
    let color = tensor(rand_vec(&mut rng, 192, 0.0, 1.0), (1, 3, 8, 8));
    let t = random_targets(&mut rng);
    let p = random_targets(&mut rng);
    let w = LossWeights::default();

    let cases: Vec<(&str, Tensor, Box<dyn Fn(&Tensor) -> Tensor + '_>)> = vec![
        ("l1", x.clone(), Box::new(|v: &Tensor| l1_loss(v, &target).unwrap())),
        ("ssim", x.clone(), Box::new(|v: &Tensor| ssim_loss(v, &target).unwrap())),
        ("perceptual", color, Box::new(|v: &Tensor| perceptual_loss(v, &color_target, &ex).unwrap())),
        ("total/normals", p.normals.clone(), Box::new(|v: &Tensor| total_loss(&output(v, &p.colors, &p.depths), &t, &w, &ex).unwrap().0)),
        ("total/colors", p.colors.clone(), Box::new(|v: &Tensor| total_loss(&output(&p.normals, v, &p.depths), &t, &w, &ex).unwrap().0)),
        ("total/depths", p.depths.clone(), Box::new(|v: &Tensor| total_loss(&output(&p.normals, &p.colors, v), &t, &w, &ex).unwrap().0)),
    ];
    let mut report = Vec::new();
    for (name, at, f) in &cases {
        let e = grad_check(at, f.as_ref());
        check(e < 1e-3, || format!("{name}: relative error {e:e}"))?;
        report.push(format!("{name} {e:.1e}"));
    }
    Ok(report.join(", "))
}

fn ssim_constant_case() -> Outcome {
    let s = (1, 1, 8, 8);
    let got = scalar(&ssim_loss(&Tensor::zeros(s, DType::F64, &DEV).unwrap(), &Tensor::ones(s, DType::F64, &DEV).unwrap()).map_err(err)?);
    let want = 1.0 - SSIM_C1 / (1.0 + SSIM_C1);
    let d = (got - want).abs();
    check(d <= 1e-9, || format!("{got} vs {want}"))?;
    Ok(format!("loss {got:.12}, expected {want:.12}"))
}

fn weight_ledger() -> Outcome {
    let w = LossWeights::default();
    check(w.0 == [0.9, 0.1, 0.85, 0.15, 0.45, 0.05, 0.45, 0.05], || format!("defaults {:?}", w.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ex = ConvStack::random_default(DType::F64, &DEV).map_err(err)?;
    let mut worst = 0f64;
    for _ in 0..5 {
        let t = random_targets(&mut rng);
        let p = random_targets(&mut rng);
        let (total, r) = total_loss(&output(&p.normals, &p.colors, &p.depths), &t, &w, &ex).map_err(err)?;
        let want: f64 = r.terms.as_array().iter().zip(w.0).map(|(a, b)| a * b).sum();
        worst = worst.max((r.total - want).abs()).max((scalar(&total) - want).abs());
    }
    check(worst <= 1e-6, || format!("total deviates from the weighted sum by {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn frame(h: usize, w: usize, pitch: f64) -> OrthoFrame {
    OrthoFrame { center: [0.0, 0.0], pixel_pitch: pitch, height: h, width: w }
}

fn render_pair(mesh: &Mesh, f: OrthoFrame) -> Result<MapPair<DepthMap>, String> {
    Ok(MapPair::new(
        render_depth_ortho(mesh, &OrthographicCamera::front(f)).map_err(err)?,
        render_depth_ortho(mesh, &OrthographicCamera::back(f)).map_err(err)?,
    ))
}

fn geometry_round_trip() -> Outcome {
    let t0 = Instant::now();
    let (radius, half) = (0.15, 0.3);
    let gt = capsule(Vec3::zeros(), radius, half, 48, 64);
    let f = frame(256, 128, 0.004);
    let pair = render_pair(&gt, f)?;
    let cfg = ReconstructionConfig { z_resolution: 256, ..Default::default() };
    let voxel = carve_volume(&pair.front, &pair.back, &cfg).map_err(err)?.voxel_size();
    let recon = reconstruct_maps(&pair, None, &cfg).map_err(err)?;
    let chamfer_m = chamfer(&recon, &gt, 50_000, 5).map_err(err)? / 100.0;
    let worst = recon.vertices.iter().map(|v| capsule_distance(Vec3::zeros(), radius, half, v)).fold(0.0, f64::max);
    let iou = render_depth_ortho(&recon, &OrthographicCamera::front(f)).map_err(err)?.mask.iou(&pair.front.mask);
    let secs = t0.elapsed().as_secs_f64();
    check(chamfer_m < 2.0 * voxel, || format!("chamfer {chamfer_m} m vs 2 voxels {}", 2.0 * voxel))?;
    check(iou > 0.98, || format!("silhouette IoU {iou}"))?;
    check(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("chamfer {:.3} voxels, worst vertex {:.2} voxels, IoU {iou:.4}, {secs:.1} s", chamfer_m / voxel, worst / voxel))
}

fn first_last_surface() -> Outcome {
    let (half, gap) = (Vec3::new(0.1, 0.1, 0.1), 0.1);
    let plates = Mesh::merge(&[cuboid(Vec3::new(0.0, 0.0, -gap - half.z), half), cuboid(Vec3::new(0.0, 0.0, gap + half.z), half)]);
    let pair = render_pair(&plates, frame(48, 48, 0.01))?;
    let recon = reconstruct_maps(&pair, None, &ReconstructionConfig { z_resolution: 128, ..Default::default() }).map_err(err)?;
    let inner = recon.vertices.iter().filter(|v| v.z.abs() < gap - 0.01 && v.x.abs() < 0.09 && v.y.abs() < 0.09).count();
    check(inner == 0, || format!("{inner} vertices inside the gap"))?;
    let outer = 2.0 * (gap + 2.0 * half.z);
    let near_face = |z: f64| recon.vertices.iter().any(|v| (v.z - z).abs() < 0.01);
    check(near_face(-outer / 2.0) && near_face(outer / 2.0), || "outer faces missing".into())?;
    // The gap is filled: the volume is that of one box spanning both plates.
    let solid = 4.0 * half.x * half.y * outer;
    let vol = recon.signed_volume().abs();
    check((vol / solid - 1.0).abs() < 0.05, || format!("volume {vol} vs solid {solid}"))?;
    Ok(format!("no gap vertices, volume {:.4} of the filled box", vol / solid))
}

fn unit_square(z: f64) -> Mesh {
    let v = vec![Vec3::new(0.0, 0.0, z), Vec3::new(1.0, 0.0, z), Vec3::new(1.0, 1.0, z), Vec3::new(0.0, 1.0, z)];
    Mesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
}

fn metric_sanity() -> Outcome {
    let m = mannequin();
    let self_p2s = p2s(&m, &m, 20_000, 7).map_err(err)?;
    check(self_p2s.abs() <= 1e-9, || format!("p2s(m, m) = {self_p2s}"))?;
    let other = random_blob(3, Vec3::new(0.0, 0.05, 0.0), 0.3, 0.3);
    let (ab, ba) = (chamfer(&m, &other, 20_000, 8).map_err(err)?, chamfer(&other, &m, 20_000, 8).map_err(err)?);
    check((ab - ba).abs() <= 1e-9, || format!("chamfer asymmetric: {ab} vs {ba}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut n, mut neg) = (NormalMap::new(Side::Front, 16, 16), NormalMap::new(Side::Front, 16, 16));
    for k in 0..256 {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..-0.1)).normalize();
        n.set(k / 16, k % 16, v);
        neg.set(k / 16, k % 16, -v);
    }
    let same = normal_error(&n, &n).map_err(err)?;
    let opposite = normal_error(&n, &neg).map_err(err)?;
    check(same.abs() <= 1e-6, || format!("normal_error(n, n) = {same}"))?;
    check((opposite - PI).abs() <= 1e-6, || format!("normal_error(n, -n) = {opposite}"))?;

    let plane = p2s(&unit_square(0.01), &unit_square(0.0), 20_000, 10).map_err(err)?;
    check((plane - 1.0).abs() <= 0.02, || format!("offset plane p2s {plane} cm"))?;
    Ok(format!("self p2s {self_p2s:.1e}, chamfer {ab:.4} cm both ways, normal errors {same:.1e} / {opposite:.9}, plane {plane:.6} cm"))
}

const TOY_H: usize = 128;
const TOY_W: usize = 64;

fn toy_samples() -> Result<Vec<Sample>, String> {
    let rc = RenderConfig { height: TOY_H, width: TOY_W, light_count: 16, ..Default::default() };
    let m = mannequin();
    (0..4u64).map(|i| make_sample(&m, -30.0 + 20.0 * i as f64, &procedural_background(i, TOY_H, TOY_W), i, &rc).map_err(err)).collect()
}

fn toy_config(mode: AblationMode, max_steps: usize) -> TrainConfig {
    // Tiny depth with doubled width: converges in a few hundred steps on one CPU core.
    let toy = ModelConfig { base_width: 8, ..ModelConfig::tiny() };
    TrainConfig {
        epochs: max_steps,
        batch_size: 4,
        lr: 1e-3,
        lr_decay_per_epoch: 1.0,
        resolution: [TOY_H, TOY_W],
        ablation_mode: mode,
        unet_depth: toy.depth,
        base_width: toy.base_width,
        max_steps: Some(max_steps),
        early_stop_depth_l1: Some(0.01),
        ..Default::default()
    }
}

const WINDOW: usize = 200;

fn trainability(_samples: &[Sample], run: &TrainOutcome) -> Outcome {
    let last = run.history.last().ok_or("no steps were taken")?;
    let totals: Vec<f64> = run.history.iter().map(|r| r.report.total).collect();
    let window = WINDOW.min(totals.len() / 2).max(1);
    check(run.history.len() <= 2000, || format!("{} steps", run.history.len()))?;
    check(last.report.terms.depth_l1 < 0.01, || format!("depth L1 {} after {} steps ({:.0} s)", last.report.terms.depth_l1, run.history.len(), run.seconds))?;
    check(windows_nonincreasing(&totals, window, 0.0), || format!("loss rose between {window}-step windows"))?;
    check(run.seconds < 1800.0, || format!("took {:.0} s", run.seconds))?;
    Ok(format!("depth L1 {:.4} after {} steps, {:.0} s, stop {:?}", last.report.terms.depth_l1, run.history.len(), run.seconds, run.stop))
}

const ABLATION_STEPS: usize = 100;

fn ablation_parity(samples: &[Sample], full: &TrainOutcome) -> Outcome {
    let mut parts = Vec::new();
    let mut nets = Vec::new();
    for mode in [AblationMode::Full, AblationMode::NoAttention, AblationMode::DirectDepth] {
        let run;
        let outcome = if mode == AblationMode::Full {
            full
        } else {
            run = train(&Dataset::in_memory(samples.to_vec(), vec![]), &toy_config(mode, ABLATION_STEPS), None).map_err(err)?;
            &run
        };
        let (first, last) = (outcome.history.first().ok_or("no steps")?, outcome.history.last().ok_or("no steps")?);
        check(last.report.total.is_finite() && last.report.total < first.report.total, || format!("{mode}: loss {} -> {}", first.report.total, last.report.total))?;
        let net = outcome.checkpoint.build_model(&DEV).map_err(err)?;
        let camera = outcome.checkpoint.camera.ok_or("checkpoint has no camera")?;
        let res = infer_image(&net, &samples[0].input_image, &camera, &InferConfig { reconstruct: false, ..Default::default() }).map_err(err)?;
        check(res.output.depths.dims() == [1, 2, TOY_H, TOY_W], || format!("{mode}: depth shape {:?}", res.output.depths.dims()))?;
        parts.push(format!("{mode} {} steps", outcome.history.len()));
        nets.push(net);
    }
    let (full_gates, plain_gates) = (nets[0].num_gate_params(), nets[1].num_gate_params());
    check(full_gates > plain_gates, || format!("gate params full {full_gates} vs no_attention {plain_gates}"))?;
    check(nets[2].num_networks() == 1 && nets[0].num_networks() == 3, || format!("networks {} / {}", nets[0].num_networks(), nets[2].num_networks()))?;
    Ok(format!("{}; gate params {full_gates} > {plain_gates}; direct_depth has 1 network", parts.join(", ")))
}

fn alignment_invariant() -> Outcome {
    let rc = RenderConfig { height: 256, width: 128, light_count: 4, ..Default::default() };
    let lights = place_lights(rc.light_count, 0).sources(rc.light_intensity);
    let mut ious = Vec::new();
    for seed in 0..10u64 {
        let mesh = prepare_mesh(&random_blob(seed, Vec3::zeros(), 0.3, 0.4).painted([0.6, 0.6, 0.6]), &rc);
        let front = render_depth_ortho(&mesh, &rc.ortho(Side::Front)).map_err(err)?;
        let back = render_depth_ortho(&mesh, &rc.ortho(Side::Back)).map_err(err)?;
        check(front.mask == back.mask, || format!("mesh {seed}: front and back masks differ"))?;
        let (_, silhouette) = render_perspective_image(&mesh, &lights, &rc.perspective()).map_err(err)?;
        let iou = silhouette.iou(&front.mask);
        check(iou < 1.0, || format!("mesh {seed}: perspective silhouette equals the orthographic one"))?;
        ious.push(iou);
    }
    let (lo, hi) = ious.iter().fold((1f64, 0f64), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(format!("10 meshes, masks equal, perspective IoU in [{lo:.3}, {hi:.3}]"))
}

fn inference_budget(trained: &TrainOutcome) -> Outcome {
    let net: OrthoHumanNet = trained.checkpoint.build_model(&DEV).map_err(err)?;
    let rc = RenderConfig { height: 512, width: 256, light_count: 16, ..Default::default() };
    let sample = make_sample(&mannequin(), 15.0, &procedural_background(42, 512, 256), 42, &rc).map_err(err)?;
    let image: Image = sample.input_image;
    // Median of three runs, so one stall on a shared machine does not decide the outcome.
    let mut times = Vec::new();
    let mut res = None;
    for _ in 0..3 {
        let t0 = Instant::now();
        res = Some(infer_image(&net, &image, &rc.ortho(Side::Front), &InferConfig::default()).map_err(err)?);
        times.push(t0.elapsed().as_secs_f64());
    }
    let res = res.expect("three runs");
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let secs = sorted[1];
    let shape = |t: &Option<Tensor>| t.as_ref().map(|t| t.dims().to_vec());
    check(res.output.depths.dims() == [1, 2, 512, 256], || format!("depths {:?}", res.output.depths.dims()))?;
    check(shape(&res.output.normals) == Some(vec![1, 6, 512, 256]), || format!("normals {:?}", shape(&res.output.normals)))?;
    check(shape(&res.output.colors) == Some(vec![1, 6, 512, 256]), || format!("colors {:?}", shape(&res.output.colors)))?;
    let inside = |t: &Tensor, lo: f64, hi: f64| flat(t).iter().all(|v| (lo..=hi).contains(v));
    check(inside(&res.output.depths, 0.0, 1.0), || "depth outside [0, 1]".into())?;
    check(inside(res.output.normals.as_ref().unwrap(), -1.0, 1.0), || "normals outside [-1, 1]".into())?;
    check(inside(res.output.colors.as_ref().unwrap(), 0.0, 1.0), || "colors outside [0, 1]".into())?;
    check(res.mesh.as_ref().is_some_and(|m| !m.faces.is_empty()), || "no mesh".into())?;
    let runs = times.iter().map(|t| format!("{t:.2}")).collect::<Vec<_>>().join("/");
    check(secs < 5.0, || format!("median {secs:.2} s (runs {runs} s)"))?;
    Ok(format!("median {secs:.2} s (runs {runs} s) including fusion, {} faces", res.mesh.as_ref().map_or(0, |m| m.faces.len())))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {id:>2} {name} [{secs:.1} s]: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {id:>2} {name} [{secs:.1} s]: {detail}");
            }
        }
    };

    report(1, "loss oracles", &mut loss_oracles);
    report(2, "gradient checks", &mut gradient_checks);
    report(3, "ssim constant case", &mut ssim_constant_case);
    report(4, "weight ledger", &mut weight_ledger);
    report(5, "geometry round trip", &mut geometry_round_trip);
    report(6, "first/last surface limitation", &mut first_last_surface);
    report(7, "metric sanity", &mut metric_sanity);

    let samples = toy_samples();
    let full = samples
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|s| train(&Dataset::in_memory(s.clone(), vec![]), &toy_config(AblationMode::Full, 2000), None).map_err(err));
    let with_run = |f: &dyn Fn(&[Sample], &TrainOutcome) -> Outcome| match (&samples, &full) {
        (Ok(s), Ok(run)) => f(s, run),
        (Err(e), _) | (_, Err(e)) => Err(format!("toy training failed: {e}")),
    };
    report(8, "end-to-end trainability", &mut || with_run(&trainability));
    report(9, "ablation parity", &mut || with_run(&ablation_parity));
    report(10, "alignment invariant", &mut alignment_invariant);
    report(11, "inference budget", &mut || with_run(&|_, run| inference_budget(run)));

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
