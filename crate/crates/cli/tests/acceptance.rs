//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test --test acceptance`.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::{fixtures, maffsrn, p, save};
use maffsrn::complexity::{analyze, count_params, Resolution, CONVENTION};
use maffsrn::exec::ParamKind;
use maffsrn::imaging::{bicubic_resize, make_pair, psnr, read_png, ssim, Plane};
use maffsrn::model::{read_checkpoint, write_checkpoint};
use maffsrn::tensor::{channel_shuffle, conv2d, pixel_shuffle, pixel_unshuffle, ConvSpec, Shape, Tensor};
use maffsrn::training::{gradcheck_network, smoke};
use maffsrn::{NetConfig, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BABOON_ENV: &str = "MAFFSRN_BABOON";

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Element count summed over the built parameter tensors.
fn built_params(cfg: &NetConfig) -> usize {
    let net = Network::<f32>::build(cfg, 0).unwrap();
    net.params().iter().map(|p| p.tensor.numel()).sum()
}

fn variant(fusion: &str, cea: bool) -> NetConfig {
    let mut cfg = NetConfig::maffsrn(2);
    cfg.ffg.fusion = fusion.parse().unwrap();
    cfg.mab.cea_enabled = cea;
    cfg
}

fn c1_param_budget() -> Outcome {
    let targets: [(&str, NetConfig, f64); 8] = [
        ("MAFFSRN x2", NetConfig::maffsrn(2), 402_394.0),
        ("MAFFSRN x3", NetConfig::maffsrn(3), 418_000.0),
        ("MAFFSRN x4", NetConfig::maffsrn(4), 441_000.0),
        ("MAFFSRN-L x2", NetConfig::maffsrn_l(2), 790_000.0),
        ("HFF", variant("hff", false), 364_000.0),
        ("M-BFF", variant("mbff", false), 372_000.0),
        ("HFF+CEA", variant("hff", true), 394_000.0),
        ("M-BFF+CEA", variant("mbff", true), 402_000.0),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, cfg, target) in targets {
        let built = built_params(&cfg);
        let closed = count_params(&cfg).unwrap() as usize;
        let dev = built as f64 / target - 1.0;
        ok &= built == closed && dev.abs() <= 0.01;
        parts.push(format!("{name} {built} ({:+.2}%)", 100.0 * dev));
    }
    verdict(ok, parts.join(", "))
}

fn c2_ablation_deltas() -> Outcome {
    let base = NetConfig::maffsrn(2);
    let mut wide = base.clone();
    wide.mab.branch_kernels = vec![3, 5];
    wide.mab.dilations = vec![1, 1];
    let mut three = base.clone();
    three.mab.branch_kernels = vec![3, 3, 3];
    three.mab.dilations = vec![1, 2, 3];
    let b = built_params(&base) as i64;
    let d_wide = built_params(&wide) as i64 - b;
    let d_three = built_params(&three) as i64 - b;
    verdict(
        d_wide == 16_384 && d_three == 9_344,
        format!("5x5 branch {d_wide:+} (want +16384), third branch {d_three:+} (want +9344)"),
    )
}

/// Multi-adds from the parameter map alone: each weight tensor costs its
/// element count per output pixel, at LR resolution except inside the
/// strided attention path.
fn multi_adds_from_weights(cfg: &NetConfig, hr: Resolution) -> u64 {
    let (h, w) = (hr.height / cfg.scale, hr.width / cfg.scale);
    let st = cfg.mab.attn_stride;
    let (hs, ws) = ((h - 1) / st + 1, (w - 1) / st + 1);
    let net = Network::<f32>::build(cfg, 0).unwrap();
    net.params()
        .iter()
        .filter(|p| p.kind == ParamKind::Weight)
        .map(|p| {
            let strided = p.name.contains("attn.stride") || p.name.contains("attn.branch");
            let pixels = if strided { hs * ws } else { h * w };
            (p.tensor.numel() * pixels) as u64
        })
        .sum()
}

fn c3_multi_adds() -> Outcome {
    let cases = [
        ("x2", NetConfig::maffsrn(2), Resolution::HD720, 77.2e9),
        // 1280 is not a multiple of 3; the HR frame is modcropped
        ("x3", NetConfig::maffsrn(3), Resolution::new(1278, 720), 34.2e9),
        ("x4", NetConfig::maffsrn(4), Resolution::HD720, 19.3e9),
        ("L x2", NetConfig::maffsrn_l(2), Resolution::HD720, 154.4e9),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, cfg, hr, target) in cases {
        let report = analyze(&cfg, hr).unwrap();
        let independent = multi_adds_from_weights(&cfg, hr);
        let dev = report.multi_adds as f64 / target - 1.0;
        ok &= dev.abs() <= 0.25 && independent == report.multi_adds && report.convention == CONVENTION;
        parts.push(format!(
            "{name} {:.2}G ({:+.1}%)",
            report.multi_adds as f64 / 1e9,
            100.0 * dev
        ));
    }
    println!("    convention: {CONVENTION}");
    verdict(ok, parts.join(", "))
}

fn brute_conv(x: &Tensor<f32>, w: &Tensor<f32>, b: Option<&Tensor<f32>>, spec: &ConvSpec) -> Vec<f64> {
    let s = x.shape();
    let o = spec.output_shape(s).unwrap();
    let (kh, kw) = spec.kernel;
    let icg = spec.in_channels / spec.groups;
    let ocg = spec.out_channels / spec.groups;
    let mut out = Vec::with_capacity(o.numel());
    for n in 0..o.n {
        for oc in 0..o.c {
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let mut acc = b.map_or(0.0, |b| b.data()[oc] as f64);
                    for icl in 0..icg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * spec.stride.0 + ky * spec.dilation.0) as isize - spec.padding.0 as isize;
                                let ix = (ox * spec.stride.1 + kx * spec.dilation.1) as isize - spec.padding.1 as isize;
                                if (0..s.h as isize).contains(&iy) && (0..s.w as isize).contains(&ix) {
                                    acc += x.at(n, (oc / ocg) * icg + icl, iy as usize, ix as usize) as f64
                                        * w.at(oc, icl, ky, kx) as f64;
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn c4_conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rand_tensor = |rng: &mut ChaCha8Rng, shape: Shape| {
        Tensor::from_vec(
            shape,
            (0..shape.numel()).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
        .unwrap()
    };
    let mut cases = 0;
    let mut worst = 0.0f64;
    // every stride x dilation x groups combination, several draws each
    for stride in 1..=3 {
        for dilation in 1..=3 {
            for groups in [1, 2, 4] {
                let mut drawn = 0;
                while drawn < 40 {
                    let k = rng.random_range(1..=5);
                    let padding = rng.random_range(0..=2);
                    let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
                    let span = dilation * (k - 1) + 1;
                    if h + 2 * padding < span || w + 2 * padding < span {
                        continue;
                    }
                    let in_c = groups * rng.random_range(1..=2);
                    let out_c = groups * rng.random_range(1..=2);
                    let spec = ConvSpec::new(in_c, out_c, k)
                        .stride(stride)
                        .dilation(dilation)
                        .padding(padding)
                        .groups(groups)
                        .bias(rng.random_bool(0.5));
                    let n = rng.random_range(1..=2);
                    let x = rand_tensor(&mut rng, Shape::new(n, in_c, h, w));
                    let wt = rand_tensor(&mut rng, spec.weight_shape());
                    let b = spec.has_bias.then(|| rand_tensor(&mut rng, spec.bias_shape()));
                    let y = conv2d(&x, &wt, b.as_ref(), &spec).unwrap();
                    let expect = brute_conv(&x, &wt, b.as_ref(), &spec);
                    for (a, e) in y.data().iter().zip(&expect) {
                        worst = worst.max((*a as f64 - e).abs());
                    }
                    drawn += 1;
                    cases += 1;
                }
            }
        }
    }
    verdict(
        cases >= 1000 && worst < 1e-5,
        format!("{cases} cases, max abs diff {worst:.2e}"),
    )
}

fn c5_gradcheck() -> Outcome {
    let mut cfg = NetConfig::maffsrn(2);
    cfg.n_ffg = 1;
    cfg.ffg.m = 2;
    cfg.mab.channels = 8;
    let report = gradcheck_network(&cfg, 64, 1e-6, 0).unwrap();
    let gates = cfg.gate_count();
    verdict(
        report.all_finite && report.max_rel_error < 1e-4 && report.entries.len() >= 50 && report.gates_checked == gates,
        format!(
            "max rel error {:.2e} over {} entries, {}/{gates} gates",
            report.max_rel_error,
            report.entries.len(),
            report.gates_checked
        ),
    )
}

fn c6_zero_network() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut worst = 0;
    let mut checked = 0;
    for scale in 2..=4 {
        let cfg = dir.path().join("cfg.json");
        fs::write(&cfg, format!("{{\"scale\": {scale}}}")).unwrap();
        let ckpt = dir.path().join("zero.mafw");
        assert_eq!(
            maffsrn(&["init", "--zero", "--config", p(&cfg), "--output", p(&ckpt)]).code,
            0
        );
        for name in ["astronaut_crop.png", "coffee_crop.png"] {
            let lr = make_pair(&read_png(&fixtures().join(name)).unwrap(), scale).unwrap().lr;
            let (lr_path, sr_path) = (dir.path().join("lr.png"), dir.path().join("sr.png"));
            save(&lr, &lr_path);
            let run = maffsrn(&[
                "sr",
                "--ckpt",
                p(&ckpt),
                "--input",
                p(&lr_path),
                "--output",
                p(&sr_path),
            ]);
            assert_eq!(run.code, 0, "{}", run.stderr);
            let sr = read_png(&sr_path).unwrap();
            let up = bicubic_resize(&lr, lr.width() * scale, lr.height() * scale).unwrap();
            assert_eq!((sr.width(), sr.height()), (up.width(), up.height()));
            let d = sr
                .data()
                .iter()
                .zip(up.data())
                .map(|(&a, &b)| (a as i32 - b as i32).abs())
                .max()
                .unwrap();
            worst = worst.max(d);
            checked += 1;
        }
    }
    verdict(
        worst <= 1,
        format!("{checked} images at x2/x3/x4, max 8-bit difference {worst}"),
    )
}

fn ssim_per_window(a: &Plane, b: &Plane) -> f64 {
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
            *v = (-d2 / 4.5).exp();
            total += *v;
        }
    }
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=a.height - 11 {
        for x0 in 0..=a.width - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, row) in g.iter().enumerate() {
                for (j, &k) in row.iter().enumerate() {
                    let k = k / total;
                    let (va, vb) = (a.get(x0 + j, y0 + i), b.get(x0 + j, y0 + i));
                    ma += k * va;
                    mb += k * vb;
                    saa += k * va * va;
                    sbb += k * vb * vb;
                    sab += k * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn c7_metrics() -> Outcome {
    let a = Plane::filled(24, 24, 100.0);
    let psnr1 = psnr(&a, &Plane::filled(24, 24, 101.0), 0).unwrap();
    let ssim_c = ssim(&a, &Plane::filled(24, 24, 110.0)).unwrap();
    let mut ok = (psnr1 - 48.1308).abs() < 5e-5 && (ssim_c - 0.99548).abs() < 5e-6;
    ok &= psnr(&a, &a, 0).unwrap() == f64::INFINITY && ssim(&a, &a).unwrap() == 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut plane = || Plane::new(32, 32, (0..1024).map(|_| rng.random_range(0..=255) as f64).collect()).unwrap();
        let (x, y) = (plane(), plane());
        let blend = Plane::new(
            32,
            32,
            x.data
                .iter()
                .zip(&y.data)
                .map(|(u, v)| (0.7 * u + 0.3 * v).round())
                .collect(),
        )
        .unwrap();
        for (p, q) in [(&x, &y), (&x, &blend)] {
            worst = worst.max((ssim(p, q).unwrap() - ssim_per_window(p, q)).abs());
        }
    }
    ok &= worst < 1e-6;
    verdict(
        ok,
        format!("PSNR {psnr1:.4} dB, SSIM {ssim_c:.5}, windowed SSIM vs oracle {worst:.1e}"),
    )
}

fn c8_smoke() -> Outcome {
    let start = Instant::now();
    let a = smoke::run_smoke(0).unwrap();
    let b = smoke::run_smoke(0).unwrap();
    let secs = start.elapsed().as_secs_f64() / 2.0;
    let same = a.curve == b.curve;
    verdict(
        a.ratio <= 0.5 && same && a.curve.len() == smoke::SMOKE_ITERATIONS,
        format!(
            "L1 {:.4} -> {:.4} (ratio {:.3}), repeat identical: {same}, {secs:.1}s per run",
            a.initial_loss, a.final_loss, a.ratio
        ),
    )
}

fn baboon_path() -> Option<PathBuf> {
    std::env::var_os(BABOON_ENV)
        .map(PathBuf::from)
        .or_else(|| Some(fixtures().join("baboon.png")))
        .filter(|p| p.is_file())
}

fn c9_baboon() -> Outcome {
    let Some(path) = baboon_path() else {
        return Outcome::Skip(format!("baboon image not supplied (set {BABOON_ENV})"));
    };
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    fs::create_dir(&hr).unwrap();
    fs::copy(&path, hr.join("baboon.png")).unwrap();
    let ckpt = dir.path().join("zero.mafw");
    assert_eq!(maffsrn(&["init", "--zero", "--output", p(&ckpt)]).code, 0);
    let run = maffsrn(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--hr-dir",
        p(&hr),
        "--scale",
        "2",
        "--border",
        "2",
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let v = run.json();
    let got = v["mean_psnr"].as_f64().unwrap();
    verdict(
        (got - 24.86).abs() <= 0.1,
        format!(
            "bicubic x2 PSNR {got:.3} dB, SSIM {:.4}",
            v["mean_ssim"].as_f64().unwrap()
        ),
    )
}

fn c10_permutations() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ok = true;
    let mut count = 0;
    for r in 1..=4 {
        for c in [1, 3, 8] {
            let shape = Shape::new(2, c * r * r, 5, 6);
            let x = Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random::<f32>()).collect()).unwrap();
            let y = pixel_shuffle(&x, r).unwrap();
            ok &= pixel_unshuffle(&y, r).unwrap() == x;
            ok &= pixel_shuffle(&pixel_unshuffle(&y, r).unwrap(), r).unwrap() == y;
            count += 2;
        }
    }
    for (c, g) in [(64, 2), (64, 4), (96, 3), (12, 6)] {
        let shape = Shape::new(1, c, 4, 4);
        let x = Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random::<f32>()).collect()).unwrap();
        ok &= channel_shuffle(&channel_shuffle(&x, g).unwrap(), c / g).unwrap() == x;
        count += 1;
    }
    let mut same_bits = true;
    for cfg in [NetConfig::maffsrn(2), NetConfig::maffsrn(4)] {
        let net = Network::<f32>::build(&cfg, 123).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        same_bits &= back.config() == net.config();
        for (a, b) in net.params().iter().zip(back.params().iter()) {
            same_bits &= a.name == b.name && a.kind == b.kind;
            same_bits &= a
                .tensor
                .data()
                .iter()
                .map(|v| v.to_bits())
                .eq(b.tensor.data().iter().map(|v| v.to_bits()));
        }
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        same_bits &= again == bytes;
    }
    verdict(
        ok && same_bits,
        format!("{count} shuffle identities, checkpoint round trip bit-exact: {same_bits}"),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("parameter budget", c1_param_budget),
        ("ablation deltas", c2_ablation_deltas),
        ("multi-adds at 720p", c3_multi_adds),
        ("conv2d oracle", c4_conv_oracle),
        ("gradient check", c5_gradcheck),
        ("zero-weight network is bicubic", c6_zero_network),
        ("metrics", c7_metrics),
        ("training smoke", c8_smoke),
        ("baboon bicubic baseline", c9_baboon),
        ("permutation laws and checkpoints", c10_permutations),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Outcome::Fail(format!("panicked: {}", panic_message(&e))));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("PASS {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Outcome::Skip(d) => println!("SKIP {:>2} {name}: {d}", i + 1),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
