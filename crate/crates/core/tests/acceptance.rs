//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on failure.

mod common;

use std::time::Instant;

use plainusr::backbone::{Schedule, UnitKind};
use plainusr::bench::{bench, BenchConfig};
use plainusr::init::ParamRng;
use plainusr::io::{self, FORMAT_VERSION};
use plainusr::lia::{self, LiaGeometry, LiaVariant};
use plainusr::metrics::{profile, psnr, ssim, ImageMode};
use plainusr::reparam::{self, RepGeometry};
use plainusr::{
    build_model_with, CheckpointError, ConvParams, Init, ModelConfig, PlainUsrModel, RepMBConvParams, Tensor4, Variant,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_rel(value: f64, target: f64, tol: f64) -> bool {
    ((value - target) / target).abs() <= tol
}

fn rep_geometry(c: usize) -> RepGeometry {
    RepGeometry {
        channels: c,
        expansion: 2,
        kernel: 3,
        se_reduction: 4,
        identity_branch: true,
    }
}

fn fusion_equivalence() -> Outcome {
    let start = Instant::now();
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    for draw in 0..100u64 {
        let c = [8, 16, 32][draw as usize % 3];
        let mut rng = ParamRng::new(1000 + draw);
        let p64 = RepMBConvParams::<f64>::init(rep_geometry(c), &mut rng, Init::Random);
        let x64: Tensor4<f64> = rng.uniform_tensor([1, c, 12, 12], 0.0, 1.0);
        let fused64 = reparam::fuse(&p64).map_err(|e| e.to_string())?;
        let a = reparam::forward_train(&x64, &p64).map_err(|e| e.to_string())?;
        let b = plainusr::ops::conv2d(&x64, &fused64).map_err(|e| e.to_string())?;
        worst64 = worst64.max(a.max_abs_diff(&b).map_err(|e| e.to_string())?);

        let p32 = p64.cast::<f32>();
        let x32 = x64.cast::<f32>();
        let fused32 = reparam::fuse(&p32).map_err(|e| e.to_string())?;
        let a = reparam::forward_train(&x32, &p32).map_err(|e| e.to_string())?;
        let b = plainusr::ops::conv2d(&x32, &fused32).map_err(|e| e.to_string())?;
        worst32 = worst32.max(a.max_abs_diff(&b).map_err(|e| e.to_string())?);
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max err f32 {worst32:.3e} (<= 1e-4), f64 {worst64:.3e} (<= 1e-10), {secs:.1}s (< 30s)");
    ensure(worst32 <= 1e-4 && worst64 <= 1e-10 && secs < 30.0, detail.clone())?;
    Ok(detail)
}

fn footprint_identity() -> Outcome {
    for c in [8usize, 16, 32, 64] {
        let mut rng = ParamRng::new(c as u64);
        let p = RepMBConvParams::<f32>::init(rep_geometry(c), &mut rng, Init::Random);
        let fused = reparam::fuse(&p).map_err(|e| e.to_string())?;
        let vanilla = c * c * 9 + c;
        ensure(
            fused.param_count() == vanilla && fused.kernel_hw() == (3, 3) && fused.stride() == 1,
            format!(
                "C={c}: fused unit has {} params, vanilla conv {vanilla}",
                fused.param_count()
            ),
        )?;
    }
    let mut checked = Vec::new();
    for v in [Variant::U, Variant::S, Variant::B] {
        let cfg = ModelConfig::preset(v, 4);
        let fused = build_model_with::<f32>(&cfg, 1, Init::Random)
            .and_then(|m| m.fuse())
            .map_err(|e| e.to_string())?;
        let baseline = build_model_with::<f32>(&cfg.clone().with_unit(UnitKind::Conv), 1, Init::Training)
            .map_err(|e| e.to_string())?;
        let (pf, pb) = (profile(&fused, 64, 64), profile(&baseline, 64, 64));
        let shapes = |m: &PlainUsrModel<f32>| m.named_tensors().into_iter().map(|t| t.dims).collect::<Vec<_>>();
        ensure(
            pf.params == pb.params && pf.macs == pb.macs && shapes(&fused) == shapes(&baseline),
            format!(
                "variant {v:?}: fused {} params / {} MACs, conv baseline {} / {}",
                pf.params, pf.macs, pb.params, pb.macs
            ),
        )?;
        checked.push(format!("{v:?}={}", pf.params));
    }
    Ok(format!(
        "fused == vanilla for C in 8..64; model params {}",
        checked.join(" ")
    ))
}

fn complexity_counts() -> Outcome {
    let cfg = ModelConfig::preset(Variant::B, 4).with_attention(LiaVariant::Identity);
    let m = build_model_with::<f32>(&cfg, 0, Init::Training)
        .and_then(|m| m.fuse())
        .map_err(|e| e.to_string())?;
    let r = profile(&m, 256, 256);
    let conv = ConvParams::<f32>::zeros(64, 64, 3, 1, 1).param_count();
    let detail = format!(
        "params {} (280K ±1%), MACs {:.3}G (18.34G ±2%), activations {:.2}M (41.09M ±2%), 64->64 3x3 conv {conv}",
        r.params,
        r.macs as f64 / 1e9,
        r.activations as f64 / 1e6
    );
    ensure(
        within_rel(r.params as f64, 280e3, 0.01)
            && within_rel(r.macs as f64, 18.34e9, 0.02)
            && within_rel(r.activations as f64, 41.09e6, 0.02)
            && conv == 36_928,
        detail.clone(),
    )?;
    Ok(detail)
}

fn schedule_equivalence() -> Outcome {
    let mut compared = 0;
    for i in 0..20u64 {
        let v = if i % 2 == 0 { Variant::U } else { Variant::S };
        let cfg = ModelConfig::preset(v, [2, 3, 4][i as usize % 3]);
        let train = build_model_with::<f32>(&cfg, 50 + i, Init::Random).map_err(|e| e.to_string())?;
        let fused = train.fuse().map_err(|e| e.to_string())?;
        let x: Tensor4<f32> = ParamRng::new(i).uniform_tensor([1, 3, 20, 24], 0.0, 1.0);
        for m in [&train, &fused] {
            let a = m
                .forward_with_schedule(&x, Schedule::SplitConcat)
                .map_err(|e| e.to_string())?;
            let b = m
                .forward_with_schedule(&x, Schedule::ChannelIndex)
                .map_err(|e| e.to_string())?;
            ensure(
                a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()),
                format!("model {i} ({v:?}, {:?}): schedules differ", m.form),
            )?;
            compared += 1;
        }
    }
    Ok(format!("{compared} model/form pairs bit-identical"))
}

fn end_to_end_fusion() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let cfg = ModelConfig::preset(Variant::U, [2, 3, 4][i as usize % 3]);
        let train = build_model_with::<f32>(&cfg, 200 + i, Init::Random).map_err(|e| e.to_string())?;
        let fused = train.fuse().map_err(|e| e.to_string())?;
        let x: Tensor4<f32> = ParamRng::new(300 + i).uniform_tensor([1, 3, 64, 64], 0.0, 1.0);
        let a = train.forward_train(&x).map_err(|e| e.to_string())?;
        let b = fused.forward_fused(&x).map_err(|e| e.to_string())?;
        worst = worst.max(a.max_abs_diff(&b).map_err(|e| e.to_string())?);
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("20 models at 64x64, max err {worst:.3e} (<= 1e-4), {secs:.1}s (< 60s)");
    ensure(worst <= 1e-4 && secs < 60.0, detail.clone())?;
    Ok(detail)
}

fn lia_behaviour() -> Outcome {
    let g = LiaGeometry {
        channels: 16,
        squeeze: 4,
        kernel: 3,
        pool_kernel: 2,
        pool_stride: 2,
        conv_stride: 2,
    };
    let mut worst_oracle = 0.0f64;
    let mut bound_violations = 0usize;
    for i in 0..10u64 {
        let mut rng = ParamRng::new(400 + i);
        let p = lia::LiaParams::<f64>::init(g, &mut rng);
        let side = 2 + 3 * i as usize;
        let x: Tensor4<f64> = rng.uniform_tensor([1, 16, side, side + 1], -3.0, 3.0);
        let pooled = plainusr::ops::softpool2d(&x, p.pool).map_err(|e| e.to_string())?;
        worst_oracle = worst_oracle.max(
            pooled
                .max_abs_diff(&common::naive_softpool(&x, 2, 2))
                .map_err(|e| e.to_string())?,
        );
        let got = lia::local_importance(&x, &p).map_err(|e| e.to_string())?;
        let want = common::naive_importance(&x, &p.conv_a, &p.conv_b, 2, 2);
        worst_oracle = worst_oracle.max(got.max_abs_diff(&want).map_err(|e| e.to_string())?);

        let a = lia::apply_lia(&x, &p).map_err(|e| e.to_string())?;
        bound_violations += a.data().iter().zip(x.data()).filter(|(y, x)| y.abs() > x.abs()).count();

        let ident = lia::lia_variant(&x, &p, LiaVariant::Identity).map_err(|e| e.to_string())?;
        ensure(ident == x, "variant I is not the identity")?;
        let full = lia::lia_variant(&x, &p, LiaVariant::Full).map_err(|e| e.to_string())?;
        ensure(full == a, "variant VI differs from the full module")?;
    }
    let orders: Vec<usize> = LiaVariant::ALL.iter().map(|v| v.interaction_order()).collect();
    ensure(orders == [0, 1, 1, 2, 2, 2], format!("interaction orders {orders:?}"))?;
    let mut rng = ParamRng::new(9);
    let p = lia::LiaParams::<f64>::init(g, &mut rng);
    let x: Tensor4<f64> = rng.uniform_tensor([1, 16, 9, 9], -1.0, 1.0);
    for v in LiaVariant::ALL {
        let maps = lia::lia_modulators(x.view(), Some(&p), v).map_err(|e| e.to_string())?;
        ensure(
            maps.len() == v.interaction_order(),
            format!("variant {v} yields {} maps", maps.len()),
        )?;
    }
    let swapped = lia::lia_variant(&x, &p, LiaVariant::SwappedActivation).map_err(|e| e.to_string())?;
    let full = lia::lia_variant(&x, &p, LiaVariant::Full).map_err(|e| e.to_string())?;
    ensure(swapped != full, "swapping activation and upsampling has no effect")?;
    let mut flat = p.clone();
    flat.conv_b.kernel_mut().fill(0.0);
    flat.conv_b.bias_mut()[0] = 0.7;
    let swapped = lia::lia_variant(&x, &flat, LiaVariant::SwappedActivation).map_err(|e| e.to_string())?;
    let full = lia::lia_variant(&x, &flat, LiaVariant::Full).map_err(|e| e.to_string())?;
    let gap = swapped.max_abs_diff(&full).map_err(|e| e.to_string())?;
    ensure(
        gap <= 1e-12,
        format!("variants V and VI differ by {gap:.3e} on a constant importance map"),
    )?;
    let tiny: Tensor4<f64> = rng.uniform_tensor([1, 16, 2, 2], -1.0, 1.0);
    lia::apply_lia(&tiny, &p).map_err(|e| format!("2x2 input rejected: {e}"))?;

    let detail = format!(
        "softpool and importance vs oracle {worst_oracle:.3e} (<= 1e-6), |A(x)| > |x| at {bound_violations} points"
    );
    ensure(worst_oracle <= 1e-6 && bound_violations == 0, detail.clone())?;
    Ok(detail)
}

fn quality_metrics() -> Outcome {
    let a = Tensor4::<f64>::zeros([1, 3, 16, 16]);
    let b = Tensor4::<f64>::full([1, 3, 16, 16], 0.5);
    let p = psnr(&a, &b, ImageMode::Rgb).map_err(|e| e.to_string())?;
    let mut rng = ParamRng::new(77);
    let x: Tensor4<f64> = rng.uniform_tensor([1, 1, 32, 32], 0.0, 1.0);
    let noise: Tensor4<f64> = rng.uniform_tensor([1, 1, 32, 32], -0.1, 0.1);
    let y = Tensor4::from_fn([1, 1, 32, 32], |[n, c, h, w]| {
        (x.at(n, c, h, w) + noise.at(n, c, h, w)).clamp(0.0, 1.0)
    });
    let self_ssim = ssim(&x, &x, ImageMode::Rgb).map_err(|e| e.to_string())?;
    let s = ssim(&x, &y, ImageMode::Rgb).map_err(|e| e.to_string())?;
    let oracle = common::direct_ssim_plane(x.data(), y.data(), 32, 32);
    let detail = format!(
        "PSNR(0, 0.5) {p:.4} dB (6.0206 ±1e-3), SSIM(x,x) {self_ssim:.9}, SSIM vs direct {:.3e} (<= 1e-6)",
        (s - oracle).abs()
    );
    ensure(
        (p - 6.0206).abs() <= 1e-3 && (self_ssim - 1.0).abs() <= 1e-12 && (s - oracle).abs() <= 1e-6,
        detail.clone(),
    )?;
    Ok(detail)
}

fn checkpoint_round_trip() -> Outcome {
    let cfg = ModelConfig::preset(Variant::U, 2);
    let train = build_model_with::<f32>(&cfg, 5, Init::Random).map_err(|e| e.to_string())?;
    let fused = train.fuse().map_err(|e| e.to_string())?;
    for m in [&train, &fused] {
        let bytes = io::to_bytes(m);
        let back = io::from_bytes::<f32>(&bytes).map_err(|e| e.to_string())?;
        ensure(
            io::to_bytes(&back) == bytes,
            format!("{:?} form: save/load/save not byte-identical", m.form),
        )?;
        ensure(back.form == m.form, "form not preserved")?;
    }
    let f64_bytes = io::to_bytes(&train.cast::<f64>());
    ensure(
        io::to_bytes(&io::from_bytes::<f64>(&f64_bytes).map_err(|e| e.to_string())?) == f64_bytes,
        "f64 round trip not byte-identical",
    )?;

    let good = io::to_bytes(&fused);
    let mut rejected = Vec::new();
    let mut expect = |label: &str, bytes: &[u8], ok: fn(&CheckpointError) -> bool| -> Result<(), String> {
        match io::from_bytes::<f32>(bytes) {
            Err(e) if ok(&e) => {
                rejected.push(label.to_owned());
                Ok(())
            }
            Err(e) => Err(format!("{label}: wrong error {e}")),
            Ok(_) => Err(format!("{label}: accepted")),
        }
    };
    let mut bad = good.clone();
    bad[0] = b'X';
    expect("magic", &bad, |e| matches!(e, CheckpointError::BadMagic(_)))?;
    let mut bad = good.clone();
    bad[4..6].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    expect("version", &bad, |e| matches!(e, CheckpointError::UnsupportedVersion(_)))?;
    expect("truncated", &good[..good.len() - 3], |e| {
        matches!(e, CheckpointError::Truncated { .. })
    })?;
    let mut bad = good.clone();
    bad.push(0);
    expect("trailing", &bad, |e| matches!(e, CheckpointError::TrailingBytes(_)))?;
    let mut bad = good.clone();
    let name = b"head.kernel";
    let at = bad
        .windows(name.len())
        .position(|w| w == name)
        .ok_or("head.kernel entry not found")?;
    let dim0 = at + name.len() + 2;
    bad[dim0..dim0 + 4].copy_from_slice(&1u32.to_le_bytes());
    expect(
        "shape",
        &bad,
        |e| matches!(e, CheckpointError::TensorShape { name, .. } if name == "head.kernel"),
    )?;
    expect("dtype", &f64_bytes, |e| matches!(e, CheckpointError::Dtype { .. }))?;
    Ok(format!(
        "both forms and dtypes byte-identical; rejected {}",
        rejected.join(", ")
    ))
}

fn fused_latency() -> Outcome {
    let cfg = ModelConfig::preset(Variant::B, 4);
    let train = build_model_with::<f32>(&cfg, 0, Init::Training).map_err(|e| e.to_string())?;
    let fused = train.fuse().map_err(|e| e.to_string())?;
    let bc = BenchConfig {
        height: 256,
        width: 256,
        warmup: 0,
        iters: 3,
        threads: 1,
    };
    let rf = bench(&fused, bc).map_err(|e| e.to_string())?;
    let rt = bench(&train, BenchConfig { iters: 1, ..bc }).map_err(|e| e.to_string())?;
    let detail = format!(
        "variant B at 256x256, 1 thread: fused median {:.0} ms, training {:.0} ms \
         (trained-model quality and device latencies are not reproduced here)",
        rf.median_ms, rt.median_ms
    );
    ensure(rf.median_ms <= rt.median_ms, detail.clone())?;
    Ok(detail)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("RepMBConv fusion equivalence", fusion_equivalence),
        ("fused footprint equals vanilla conv", footprint_identity),
        ("parameter / MAC / activation counts", complexity_counts),
        ("split/concat and channel-index schedules agree", schedule_equivalence),
        ("end-to-end training vs fused output", end_to_end_fusion),
        ("local importance attention", lia_behaviour),
        ("PSNR / SSIM", quality_metrics),
        ("checkpoint round trip and rejection", checkpoint_round_trip),
        ("fused model is not slower", fused_latency),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        match run() {
            Ok(detail) => println!("criterion {id} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
