use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const GEOMETRY: &str = r#"
[geometry]
wavelength_um = 1.55
slab_index = 2.85
slot_index = 1.44
layer_gap_um = 75
aperture_um = 300
metaunit_period_um = 1.5
metaunits = 24
layers = 3
"#;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ocu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocu"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn ocu")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_pgm(path: &Path, size: usize, f: impl Fn(usize, usize) -> u8) {
    let mut bytes = format!("P5\n{size} {size}\n255\n").into_bytes();
    for y in 0..size {
        for x in 0..size {
            bytes.push(f(y, x));
        }
    }
    fs::write(path, bytes).unwrap();
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect())
        .collect()
}

fn fit_identity(dir: &Path, epochs: usize) -> PathBuf {
    let config = dir.join("fit.toml");
    fs::write(
        &config,
        format!(
            "{GEOMETRY}\n[fit]\nepochs = {epochs}\nlearning_rate = 0.02\nseed = 3\npattern_size = 48\n\n\
             [[kernels]]\nname = \"identity\"\nvalues = [0, 0, 0, 0, 1, 0, 0, 0, 0]\n"
        ),
    )
    .unwrap();
    config
}

#[test]
fn perf_table_reports_reference_throughput() {
    let tmp = TempDir::new().unwrap();
    let config = repo_root().join("configs/perf.toml");
    let out = ocu(&["perf", "--config", config.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("1.7 TOPS"), "{text}");
    assert!(text.contains("81.6 TOPS"), "{text}");
    let csv = fs::read_to_string(tmp.path().join("perf.csv")).unwrap();
    assert!(csv.contains("1700000000000"), "{csv}");
}

#[test]
fn missing_geometry_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("bad.toml");
    let text = GEOMETRY.replace("layer_gap_um = 75\n", "");
    fs::write(&config, format!("{text}\n[fit]\nepochs = 1\nlearning_rate = 0.01\nseed = 0\n")).unwrap();
    let out = ocu(&["fit-kernel", "--config", config.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("layer_gap_um"), "{}", stderr(&out));
    assert!(!tmp.path().join("checkpoint.json").exists());
}

#[test]
fn zero_threads_is_rejected() {
    let config = repo_root().join("configs/perf.toml");
    let out = ocu(&["perf", "--config", config.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_kernel_is_deterministic_and_convolves() {
    let tmp = TempDir::new().unwrap();
    let config = fit_identity(tmp.path(), 300);
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = ocu(&["fit-kernel", "--config", config.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        dir
    };
    let a = run("a");
    let b = run("b");
    let ck = a.join("checkpoint.json");
    assert_eq!(fs::read(&ck).unwrap(), fs::read(b.join("checkpoint.json")).unwrap());
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
    assert!(fs::read_to_string(a.join("geometry.csv")).unwrap().starts_with("unit,layer,metaunit"));

    // a 256×256 input through a 3×3 unit gives a 254×254 map that tracks
    // the interior crop of the image
    let image = repo_root().join("data/images/test/camera.pgm");
    let conv = tmp.path().join("conv");
    let out = ocu(&[
        "convolve",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out-dir",
        conv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let map = read_matrix(&conv.join("identity_feature_map.csv"));
    assert_eq!(map.len(), 254);
    assert!(map.iter().all(|row| row.len() == 254));
    assert!(conv.join("identity_feature_map.pgm").exists());

    let bytes = fs::read(&image).unwrap();
    let pixels = &bytes[bytes.len() - 256 * 256..];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for y in 1..255 {
        for x in 1..255 {
            xs.push(pixels[y * 256 + x] as f64);
            ys.push(map[y - 1][x - 1]);
        }
    }
    let r = pearson(&xs, &ys);
    assert!(r > 0.99, "correlation {r}");

    let zero = tmp.path().join("zero.pgm");
    write_pgm(&zero, 16, |_, _| 0);
    let zdir = tmp.path().join("zero");
    let out = ocu(&[
        "convolve",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--image",
        zero.to_str().unwrap(),
        "--out-dir",
        zdir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let map = read_matrix(&zdir.join("identity_feature_map.csv"));
    assert_eq!(map.len(), 14);
    assert!(map.iter().flatten().all(|&v| v == 0.0));

    let geo = tmp.path().join("geo");
    let out = ocu(&[
        "export-geometry",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out-dir",
        geo.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    // two metalines of 24 metaunits plus the header
    assert_eq!(fs::read_to_string(geo.join("geometry.csv")).unwrap().lines().count(), 49);
}

#[test]
fn untrained_classifier_is_at_chance() {
    let tmp = TempDir::new().unwrap();
    let write_batch = |name: &str, per_class: usize, seed: u8| {
        let mut bytes = Vec::new();
        let mut state = seed as u32 + 1;
        for i in 0..per_class * 4 {
            // cycle through classes 0..4 and throw in other labels the
            // loader must skip
            bytes.push((i % 4) as u8);
            for _ in 0..3072 {
                state = state.wrapping_mul(1_103_515_245).wrapping_add(12_345);
                bytes.push((state >> 16) as u8);
            }
            bytes.push(7);
            bytes.extend(std::iter::repeat(0u8).take(3072));
        }
        let path = tmp.path().join(name);
        fs::write(&path, bytes).unwrap();
        path
    };
    write_batch("train.bin", 8, 1);
    write_batch("test.bin", 100, 2);
    let config = tmp.path().join("cifar.toml");
    fs::write(
        &config,
        format!(
            "{GEOMETRY}\n[network]\nkind = \"optical\"\npreset = \"cifar4\"\n\n\
             [data]\nformat = \"cifar10\"\ntrain_batches = [\"train.bin\"]\ntest_batches = [\"test.bin\"]\n\n\
             [train]\nepochs = 1\nbatch_size = 8\nlearning_rate = 0.001\nseed = 5\n"
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("eval");
    let out = ocu(&["eval", "--config", config.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let acc: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("test accuracy: "))
        .expect("accuracy line")
        .trim()
        .parse()
        .unwrap();
    assert!((acc - 0.25).abs() <= 0.05, "accuracy {acc}");
    let confusion = fs::read_to_string(out_dir.join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 5);
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
