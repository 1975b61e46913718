//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. The training criteria drive the `ocu` binary with the
//! shipped desk-scale configs, so this target takes a while.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use num_complex::Complex64;
use ocu_core::data::{add_awgn, psnr};
use ocu_core::ocnn::gradcheck::{check_gradients, Targets, Tolerance};
use ocu_core::ocnn::{ConvShape, LayerSpec, LossKind, Network, NetworkSpec, OclSpec, Shape, Task};
use ocu_core::optics::{
    diffraction_matrix, phase_mask_matrix, Cascade, ComplexMatrix, InputEncoding, OcuGeometry, OcuModel, Point, MICRON,
};
use ocu_core::perf::{energy, ops_count, throughput, PerfSpec};
use ocu_core::tensorize::{feature_dim, im2col, FeatureMap, ImageTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn failed(err: impl std::fmt::Display) -> Verdict {
    verdict(false, format!("error: {err}"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run_ocu(command: &str, config: &str, out_dir: &Path) -> Result<String, String> {
    let config = repo_root().join("configs").join(config);
    let out = Command::new(env!("CARGO_BIN_EXE_ocu"))
        .args([command, "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(out_dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "ocu {command} {} exited with {:?}: {}",
            config.display(),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Values of `column` in a headed CSV file.
fn csv_column(path: &Path, column: &str) -> Result<Vec<(String, f64)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let idx = header
        .iter()
        .position(|h| *h == column)
        .ok_or_else(|| format!("{}: no column {column}", path.display()))?;
    lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let v = cells
                .get(idx)
                .and_then(|c| c.parse::<f64>().ok())
                .ok_or_else(|| format!("{}: bad row {l}", path.display()))?;
            Ok((cells[0].to_string(), v))
        })
        .collect()
}

fn stdout_value(stdout: &str, prefix: &str) -> Result<f64, String> {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(prefix))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format!("no `{prefix}` line in output"))
}

// --- 1: kernel emulation -------------------------------------------------

fn kernel_emulation(dir: &Path) -> Result<f64, String> {
    run_ocu("fit-kernel", "fit_kernels.toml", dir)?;
    let rows = csv_column(&dir.join("mse.csv"), "test_mse")?;
    if rows.len() != 8 {
        return Err(format!("expected 8 kernels, got {}", rows.len()));
    }
    Ok(rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64)
}

fn criterion_kernels(dir: &Path) -> Verdict {
    match kernel_emulation(dir) {
        Ok(avg) => verdict(avg <= 0.05, format!("average test mse {avg:.6} (limit 0.05)")),
        Err(e) => failed(e),
    }
}

// --- 2: gradient oracle --------------------------------------------------

fn gradient_instance(seed: u64) -> Result<(bool, usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = NetworkSpec {
        input: Shape::new(1, 4),
        layers: vec![
            LayerSpec::Optical(OclSpec {
                shape: ConvShape {
                    out_channels: 2,
                    in_channels: 1,
                    kernel_size: 2,
                    stride: 1,
                    padding: 0,
                },
                encoding: InputEncoding::Intensity,
                geometry: OcuGeometry::new(4, 8, 3),
            }),
            LayerSpec::BatchNorm { channels: 2 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 18, outputs: 3 },
        ],
        task: Task::Classification { classes: 3 },
        loss: LossKind::CrossEntropy,
    };
    let mut net = Network::build(spec, &mut rng).map_err(|e| e.to_string())?;
    let inputs: Vec<FeatureMap> = (0..3)
        .map(|_| FeatureMap::new(4, 1, (0..16).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap())
        .collect();
    net.calibrate(&inputs).map_err(|e| e.to_string())?;
    let labels = Targets::Labels((0..3).map(|_| rng.gen_range(0..3)).collect());
    let report = check_gradients(&mut net, &inputs, &labels, 1e-5, Tolerance { rel: 1e-4, abs: 1e-8 })
        .map_err(|e| e.to_string())?;
    Ok((report.passed(), report.checked, report.max_rel_error))
}

fn criterion_gradients() -> Verdict {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for seed in 0..20 {
        match gradient_instance(seed) {
            Ok((ok, n, rel)) => {
                checked += n;
                worst = worst.max(rel);
                if !ok {
                    bad.push(seed);
                }
            }
            Err(e) => return failed(e),
        }
    }
    verdict(
        bad.is_empty(),
        format!("20 instances, {checked} derivatives, max rel error {worst:.2e}, failing seeds {bad:?}"),
    )
}

// --- 3: convolution oracle -----------------------------------------------

fn criterion_convolution() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=16);
        let h = rng.gen_range(1..=5.min(n));
        let s = rng.gen_range(1..=3);
        let img = ImageTensor::from_fn(n, 1, |_, _, _| rng.gen::<f64>());
        let kernel: Vec<f64> = (0..h * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let patches = match im2col(&img, h, s) {
            Ok(p) => p,
            Err(e) => return failed(e),
        };
        let g = feature_dim(n, h, s).unwrap();
        for gy in 0..g {
            for gx in 0..g {
                let col = patches.column(gy * g + gx);
                let product: f64 = col.iter().zip(&kernel).map(|(p, k)| p * k).sum();
                let mut direct = 0.0;
                for ky in 0..h {
                    for kx in 0..h {
                        direct += kernel[ky * h + kx] * img.get(0, gy * s + ky, gx * s + kx);
                    }
                }
                worst = worst.max((product - direct).abs());
            }
        }
    }
    verdict(worst <= 1e-12, format!("100 pairs, max abs difference {worst:.2e}"))
}

// --- 4: physics properties -----------------------------------------------

fn criterion_physics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut norm_err: f64 = 0.0;
    for _ in 0..50 {
        let v = rng.gen_range(1..80);
        let phases: Vec<f64> = (0..v).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let field: Vec<Complex64> = (0..v).map(|_| Complex64::new(rng.gen(), rng.gen())).collect();
        let x = ComplexMatrix::from_vec(v, 1, field).unwrap();
        let y = phase_mask_matrix(&phases).unwrap().matmul(&x).unwrap();
        norm_err = norm_err.max((y.norm() - x.norm()).abs() / x.norm());
    }

    let g = OcuGeometry::for_kernel(3, 3);
    let mut mirror_exact = true;
    for _ in 0..50 {
        let src = [Point::new(0.0, 0.0)];
        let dx = rng.gen_range(10.0..200.0) * MICRON;
        let dy = rng.gen_range(0.0..150.0) * MICRON;
        let m = diffraction_matrix(&src, &[Point::new(dx, dy), Point::new(dx, -dy)], &g).unwrap();
        mirror_exact &= m[(0, 0)] == m[(1, 0)];
    }

    let mut split_err: f64 = 0.0;
    for seed in 0..10 {
        let layers = 2 + seed as usize % 4;
        let cascade = Cascade::new(OcuGeometry::new(9, 20, layers)).unwrap();
        let model = OcuModel::random(cascade, &mut ChaCha8Rng::seed_from_u64(seed));
        let whole = model.system_matrix();
        for split in 1..layers {
            let two = model
                .segment(split, layers)
                .unwrap()
                .matmul(&model.segment(0, split).unwrap())
                .unwrap();
            split_err = split_err.max(whole.max_abs_diff(&two) / whole.norm());
        }
    }
    verdict(
        norm_err <= 1e-12 && mirror_exact && split_err <= 1e-12,
        format!("mask norm error {norm_err:.2e}, mirror exact {mirror_exact}, split composition rel error {split_err:.2e}"),
    )
}

// --- 5: performance model ------------------------------------------------

fn criterion_perf() -> Verdict {
    let spec = PerfSpec {
        kernel_size: 3,
        channels: 3,
        ocks: 16,
        rate: 100e9,
        symbols: 8e6,
        bit_depth: 8.0,
        energy_per_bit: 100e-15,
        detector_power: 0.1,
    };
    let (o_conv, _) = ops_count(3, 1).unwrap();
    let t = throughput(&spec).unwrap();
    let e = energy(&spec).unwrap();
    let pass = o_conv == 17 && t.ocu == 1.7e12 && t.ocl == 8.16e13 && e.total == 1.808e-4;
    verdict(
        pass,
        format!("O_conv {o_conv}, S_ocu {:e}, S_ocl {:e}, E_ocu {:e}", t.ocu, t.ocl, e.total),
    )
}

// --- 6: noise model ------------------------------------------------------

fn criterion_noise() -> Verdict {
    let gray = ImageTensor::new(256, 1, vec![128.0 / 255.0; 256 * 256]).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for (sigma, reference) in [(10.0, 28.13), (15.0, 24.61), (20.0, 22.10)] {
        let mut total = 0.0;
        for seed in 0..12 {
            let sample = add_awgn(&gray, sigma, seed).unwrap();
            total += psnr(&sample.clean, &sample.noisy).unwrap();
        }
        let mean = total / 12.0;
        pass &= (mean - reference).abs() <= 0.2;
        details.push(format!("σ={sigma}: {mean:.2} dB (ref {reference})"));
    }
    verdict(pass, details.join(", "))
}

// --- 7: classification ---------------------------------------------------

fn classifier(config: &str, dir: &Path) -> Result<f64, String> {
    let stdout = run_ocu("train-classifier", config, dir)?;
    stdout_value(&stdout, "test accuracy: ")
}

fn criterion_classifier(dir: &Path) -> Verdict {
    let optical = match classifier("fashion_mnist_desk.toml", &dir.join("optical")) {
        Ok(a) => a,
        Err(e) => return failed(e),
    };
    let electrical = match classifier("fashion_mnist_desk_electrical.toml", &dir.join("electrical")) {
        Ok(a) => a,
        Err(e) => return failed(e),
    };
    let gap = (optical - electrical) * 100.0;
    verdict(
        optical >= 0.80 && gap.abs() <= 5.0,
        format!(
            "optical {:.2}%, electrical {:.2}%, gap {gap:+.2} points (need ≥ 80% and |gap| ≤ 5)",
            optical * 100.0,
            electrical * 100.0
        ),
    )
}

// --- 8: denoising --------------------------------------------------------

fn denoiser(config: &str, dir: &Path) -> Result<(f64, f64, usize), String> {
    run_ocu("train-denoiser", config, dir)?;
    let path = dir.join("psnr.csv");
    let noisy = csv_column(&path, "noisy_db")?;
    let denoised = csv_column(&path, "denoised_db")?;
    let avg = |rows: &[(String, f64)]| {
        rows.iter()
            .find(|r| r.0 == "average")
            .map(|r| r.1)
            .ok_or_else(|| "psnr.csv has no average row".to_string())
    };
    Ok((avg(&noisy)?, avg(&denoised)?, noisy.len() - 1))
}

fn criterion_denoiser(dir: &Path) -> Verdict {
    let (noisy, optical, images) = match denoiser("denoise_desk.toml", &dir.join("optical")) {
        Ok(v) => v,
        Err(e) => return failed(e),
    };
    let (_, electrical, _) = match denoiser("denoise_desk_electrical.toml", &dir.join("electrical")) {
        Ok(v) => v,
        Err(e) => return failed(e),
    };
    let gain = optical - noisy;
    let gap = optical - electrical;
    verdict(
        images >= 4 && gain >= 3.0 && gap.abs() <= 1.0,
        format!(
            "{images} test images: noisy {noisy:.2} dB, optical {optical:.2} dB (+{gain:.2}), electrical {electrical:.2} dB, \
             gap {gap:+.2} dB (need ≥ +3 dB and |gap| ≤ 1 dB)"
        ),
    )
}

// --- 9: determinism ------------------------------------------------------

const REPORTS: [&str; 8] = [
    "kernels/mse.csv",
    "kernels/loss.csv",
    "classifier/optical/metrics.csv",
    "classifier/electrical/metrics.csv",
    "denoiser/optical/metrics.csv",
    "denoiser/optical/psnr.csv",
    "denoiser/electrical/metrics.csv",
    "denoiser/electrical/psnr.csv",
];

fn criterion_determinism(first: &Path, second: &Path) -> Verdict {
    let _ = criterion_kernels(&second.join("kernels"));
    let _ = criterion_classifier(&second.join("classifier"));
    let _ = criterion_denoiser(&second.join("denoiser"));
    let mut differing = Vec::new();
    for report in REPORTS {
        match (fs::read(first.join(report)), fs::read(second.join(report))) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => differing.push(report),
        }
    }
    verdict(
        differing.is_empty(),
        format!("{} reports compared byte for byte, differing: {differing:?}", REPORTS.len()),
    )
}

fn main() -> ExitCode {
    let tmp = TempDir::new().expect("temporary directory");
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");

    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("kernel emulation", Box::new(|| criterion_kernels(&first.join("kernels")))),
        ("gradient oracle", Box::new(criterion_gradients)),
        ("convolution oracle", Box::new(criterion_convolution)),
        ("physics properties", Box::new(criterion_physics)),
        ("performance model", Box::new(criterion_perf)),
        ("noise model", Box::new(criterion_noise)),
        ("classification", Box::new(|| criterion_classifier(&first.join("classifier")))),
        ("denoising", Box::new(|| criterion_denoiser(&first.join("denoiser")))),
        ("determinism", Box::new(|| criterion_determinism(&first, &second))),
    ];

    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let v = check();
        if !v.pass {
            failures += 1;
        }
        println!(
            "criterion {} {name}: {} ({}) [{:.0}s]",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
