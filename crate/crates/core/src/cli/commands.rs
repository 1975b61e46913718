use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::report::{aligned, ensure_dir, geometry_rows, write_csv, write_matrix, GeometryRow};
use super::{Command, Common, Failure};
use crate::checkpoint::{Body, Checkpoint, FittedUnit, Provenance};
use crate::config::{
    self, ClassifierConfig, DatasetConfig, DenoiserConfig, FitKernelConfig, NetworkKind, PerfConfig,
};
use crate::data::{crop_patches, load_cifar4, load_idx, load_image_dir, read_pgm, write_pgm, LabeledDataset, Split};
use crate::error::{OcuError, Result};
use crate::ocnn::{
    evaluate_classifier, evaluate_denoiser, train_classifier, train_denoiser, Layer, Network, NetworkSpec, Task,
};
use crate::optics::{Cascade, OcuModel};
use crate::perf::perf_table;
use crate::srp::{fit_kernel, generate_pattern, kernel_mse, ocu_convolve, standard_kernels, Kernel};
use crate::tensorize::{FeatureMap, ImageTensor};

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs one subcommand. Everything read before training starts is
/// validated first, and failures there exit with the configuration code.
pub fn run(cmd: &Command) -> CliResult<()> {
    let common = cmd.common();
    if common.threads == 0 {
        return Err(Failure::config(OcuError::Config("--threads must be at least 1".into())));
    }
    if common.threads > 1 {
        log::warn!("--threads {}: computation is single-threaded; running on one thread", common.threads);
    }
    match cmd {
        Command::FitKernel { common } => fit_kernel_cmd(common),
        Command::Convolve {
            common,
            checkpoint,
            image,
            kernel,
        } => convolve_cmd(common, checkpoint, image, kernel.as_deref()),
        Command::TrainClassifier { common } => train_classifier_cmd(common),
        Command::TrainDenoiser { common } => train_denoiser_cmd(common),
        Command::Eval {
            common,
            checkpoint,
            image,
        } => eval_cmd(common, checkpoint.as_deref(), image.as_deref()),
        Command::Perf { common } => perf_cmd(common),
        Command::ExportGeometry { common, checkpoint } => export_geometry_cmd(common, checkpoint),
    }
}

fn config_path(common: &Common) -> CliResult<&Path> {
    common
        .config
        .as_deref()
        .ok_or_else(|| Failure::config(OcuError::Config("--config is required for this command".into())))
}

fn load_config<T: serde::de::DeserializeOwned>(common: &Common) -> CliResult<(PathBuf, T)> {
    let path = config_path(common)?;
    let cfg = config::load(path).map_err(Failure::config)?;
    Ok((path.to_path_buf(), cfg))
}

fn out_dir(common: &Common) -> CliResult<&Path> {
    ensure_dir(&common.out_dir).map_err(Failure::config)?;
    Ok(&common.out_dir)
}

fn load_test_image(path: &Path) -> Result<ImageTensor> {
    let img = read_pgm(path)?;
    img.to_tensor(img.width.min(img.height))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

#[derive(Serialize)]
struct LossRow<'a> {
    kernel: &'a str,
    epoch: usize,
    #[serde(rename = "J")]
    j: f64,
    mse: f64,
}

#[derive(Serialize)]
struct MseRow<'a> {
    kernel: &'a str,
    train_mse: f64,
    test_mse: f64,
}

fn fit_kernel_cmd(common: &Common) -> CliResult<()> {
    let (path, cfg): (PathBuf, FitKernelConfig) = load_config(common)?;
    let seed = common.seed.unwrap_or(cfg.fit.seed);
    let kernels: Vec<(String, Kernel)> = if cfg.kernels.is_empty() {
        standard_kernels().into_iter().map(|(n, k)| (n.to_string(), k)).collect()
    } else {
        cfg.kernels
            .iter()
            .map(|k| {
                let h = (k.values.len() as f64).sqrt().round() as usize;
                Kernel::new(h, k.values.clone())
                    .map(|kernel| (k.name.clone(), kernel))
                    .map_err(|e| OcuError::Config(format!("kernels.{}: {e}", k.name)))
            })
            .collect::<Result<_>>()
            .map_err(Failure::config)?
    };
    let h = kernels[0].1.size();
    if let Some((name, _)) = kernels.iter().find(|(_, k)| k.size() != h) {
        return Err(Failure::config(OcuError::Config(format!(
            "kernels.{name}: every kernel must be {h}×{h}"
        ))));
    }
    let geometry = cfg.geometry.build(h).map_err(Failure::config)?;
    let fit = cfg.fit_config(seed);
    fit.validate().map_err(|e| Failure::config(OcuError::Config(format!("[fit]: {e}"))))?;
    let test = cfg
        .test_image
        .as_ref()
        .map(|p| load_test_image(&config::resolve(&path, p)))
        .transpose()
        .map_err(Failure::config)?;
    let dir = out_dir(common)?;

    let cascade = Cascade::new(geometry.clone())?;
    let pattern = generate_pattern(seed, cfg.fit.pattern_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::new();
    let mut loss_rows = Vec::new();
    let mut mse_rows = Vec::new();
    let mut final_loss = 0.0;
    for (name, kernel) in &kernels {
        let init = OcuModel::random(cascade.clone(), &mut rng);
        let outcome = fit_kernel(init, kernel, &pattern, &fit)?;
        for r in &outcome.history {
            loss_rows.push((name.clone(), r.epoch, r.loss, r.mse));
        }
        let test_mse = match &test {
            Some(img) => kernel_mse(&outcome.model, kernel, img, fit.stride, fit.encoding)?,
            None => outcome.best.mse,
        };
        log::info!("{name}: train mse {:.6}, test mse {test_mse:.6}", outcome.best.mse);
        final_loss += outcome.best.loss;
        mse_rows.push((name.clone(), outcome.best.mse, test_mse));
        units.push(FittedUnit {
            name: name.clone(),
            kernel: kernel.clone(),
            phases: outcome.model.phases().to_vec(),
            gain: outcome.model.gain(),
            mse: test_mse,
        });
    }

    write_csv(
        &dir.join("loss.csv"),
        loss_rows.iter().map(|(k, epoch, j, mse)| LossRow {
            kernel: k,
            epoch: *epoch,
            j: *j,
            mse: *mse,
        }),
    )?;
    write_csv(
        &dir.join("mse.csv"),
        mse_rows.iter().map(|(k, train, test)| MseRow {
            kernel: k,
            train_mse: *train,
            test_mse: *test,
        }),
    )?;
    let ck = Checkpoint::kernels(
        Provenance {
            command: "fit-kernel".into(),
            seed,
            epochs: fit.epochs,
            final_loss: final_loss / kernels.len() as f64,
        },
        geometry,
        fit.encoding,
        fit.stride,
        units,
    );
    ck.save(&dir.join("checkpoint.json"))?;
    write_geometry(&ck, dir)?;

    let table: Vec<Vec<String>> = mse_rows
        .iter()
        .map(|(k, train, test)| vec![k.clone(), format!("{train:.6}"), format!("{test:.6}")])
        .collect();
    print!("{}", aligned(&["kernel", "train_mse", "test_mse"], &table));
    let avg = mse_rows.iter().map(|r| r.2).sum::<f64>() / mse_rows.len() as f64;
    println!("average test mse: {avg:.6}");
    Ok(())
}

fn kernel_units(ck: &Checkpoint) -> Result<Vec<(FittedUnit, OcuModel)>> {
    ck.kernel_models()
}

fn convolve_cmd(common: &Common, checkpoint: &Path, image: &Path, only: Option<&str>) -> CliResult<()> {
    let ck = Checkpoint::load(checkpoint).map_err(Failure::config)?;
    let Body::Kernels { stride, encoding, .. } = &ck.body else {
        return Err(Failure::config(OcuError::InvalidArgument(
            "convolve needs a fit-kernel checkpoint".into(),
        )));
    };
    let units = kernel_units(&ck).map_err(Failure::config)?;
    let units: Vec<_> = match only {
        Some(name) => {
            let picked: Vec<_> = units.into_iter().filter(|(u, _)| u.name == name).collect();
            if picked.is_empty() {
                return Err(Failure::config(OcuError::InvalidArgument(format!(
                    "checkpoint has no kernel named {name:?}"
                ))));
            }
            picked
        }
        None => units,
    };
    let img = load_test_image(image).map_err(Failure::config)?;
    let dir = out_dir(common)?;
    for (unit, model) in &units {
        let map = ocu_convolve(model, &img, *stride, *encoding)?;
        write_feature_map(dir, &unit.name, &map)?;
        println!("{}: {}×{} feature map", unit.name, map.size(), map.size());
    }
    Ok(())
}

/// Raw values as CSV and a min-max normalized PGM for viewing.
fn write_feature_map(dir: &Path, name: &str, map: &FeatureMap) -> Result<()> {
    let g = map.size();
    let rows: Vec<Vec<f64>> = map.data().chunks(g).map(<[f64]>::to_vec).collect();
    write_matrix(&dir.join(format!("{name}_feature_map.csv")), None, &rows)?;
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let view = ImageTensor::new(
        g,
        1,
        map.data().iter().map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect(),
    )?;
    write_pgm(&dir.join(format!("{name}_feature_map.pgm")), &view)
}

fn load_dataset(path: &Path, data: &DatasetConfig, classes: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test, train_limit, test_limit) = match data {
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            class_names,
            train_limit,
            test_limit,
        } => {
            let names = class_names.clone().unwrap_or_else(|| (0..classes).map(|i| i.to_string()).collect());
            let r = |p: &PathBuf| config::resolve(path, p);
            (
                load_idx(&r(train_images), &r(train_labels), Split::Train, names.clone())?,
                load_idx(&r(test_images), &r(test_labels), Split::Test, names)?,
                *train_limit,
                *test_limit,
            )
        }
        DatasetConfig::Cifar10 {
            train_batches,
            test_batches,
            classes: picked,
            train_limit,
            test_limit,
        } => {
            let r = |ps: &[PathBuf]| ps.iter().map(|p| config::resolve(path, p)).collect::<Vec<_>>();
            (
                load_cifar4(&r(train_batches), picked, Split::Train)?,
                load_cifar4(&r(test_batches), picked, Split::Test)?,
                *train_limit,
                *test_limit,
            )
        }
    };
    let train = match train_limit {
        Some(n) => train.truncated(n),
        None => train,
    };
    let test = match test_limit {
        Some(n) => test.truncated(n),
        None => test,
    };
    if train.num_classes() != classes || test.num_classes() != classes {
        return Err(OcuError::Config(format!(
            "[data]: dataset has {} classes, network expects {classes}",
            train.num_classes()
        )));
    }
    Ok((train, test))
}

fn classifier_spec(cfg: &ClassifierConfig) -> Result<NetworkSpec> {
    let topology = cfg.network.topology();
    let geometry = cfg.geometry.build(topology.kernel_size)?;
    let spec = topology.spec(&geometry)?;
    Ok(match cfg.network.kind {
        NetworkKind::Optical => spec,
        NetworkKind::Electrical => spec.to_electrical(),
    })
}

fn denoiser_spec(cfg: &DenoiserConfig) -> Result<NetworkSpec> {
    let topology = cfg.network.topology(cfg.train.patch_size);
    let geometry = cfg.geometry.build(topology.kernel_size)?;
    let spec = topology.spec(&geometry)?;
    Ok(match cfg.network.kind {
        NetworkKind::Optical => spec,
        NetworkKind::Electrical => spec.to_electrical(),
    })
}

#[derive(Serialize)]
struct ClassifierMetricsRow {
    epoch: usize,
    loss: f64,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
}

fn write_confusion(dir: &Path, names: &[String], matrix: &[Vec<usize>]) -> Result<()> {
    let mut header = vec!["true\\pred".to_string()];
    header.extend(names.iter().cloned());
    let rows: Vec<Vec<String>> = matrix
        .iter()
        .zip(names)
        .map(|(row, name)| std::iter::once(name.clone()).chain(row.iter().map(usize::to_string)).collect())
        .collect();
    write_matrix(&dir.join("confusion.csv"), Some(header), &rows)
}

fn train_classifier_cmd(common: &Common) -> CliResult<()> {
    let (path, cfg): (PathBuf, ClassifierConfig) = load_config(common)?;
    let seed = common.seed.unwrap_or(cfg.train.seed);
    let spec = classifier_spec(&cfg).map_err(Failure::config)?;
    let classes = match spec.task {
        Task::Classification { classes } => classes,
        Task::Denoising => unreachable!("classifier presets are classification networks"),
    };
    let train_cfg = cfg.train.train_config(seed);
    train_cfg
        .validate()
        .map_err(|e| Failure::config(OcuError::Config(format!("[train]: {e}"))))?;
    let (train, test) = load_dataset(&path, &cfg.data, classes).map_err(Failure::config)?;
    let dir = out_dir(common)?;

    let mut net = Network::build(spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let report = train_classifier(&mut net, &train, &test, &train_cfg)?;
    write_csv(
        &dir.join("metrics.csv"),
        report.history.iter().map(|h| ClassifierMetricsRow {
            epoch: h.epoch,
            loss: h.loss,
            train_accuracy: h.train_accuracy,
            test_accuracy: h.test_accuracy,
        }),
    )?;
    write_confusion(dir, test.class_names(), &report.confusion)?;
    let final_loss = report.history.last().map_or(f64::NAN, |h| h.loss);
    Checkpoint::network(
        Provenance {
            command: "train-classifier".into(),
            seed,
            epochs: train_cfg.epochs,
            final_loss,
        },
        &net,
    )
    .save(&dir.join("checkpoint.json"))?;
    println!("test accuracy: {:.4}", report.test_accuracy);
    Ok(())
}

fn load_denoise_images(path: &Path, cfg: &DenoiserConfig, seed: u64) -> Result<(Vec<ImageTensor>, Vec<(PathBuf, ImageTensor)>)> {
    let d = &cfg.data;
    let sources: Vec<ImageTensor> = load_image_dir(&config::resolve(path, &d.train_dir), d.train_image_size)?
        .into_iter()
        .map(|(_, img)| img)
        .collect();
    if sources.is_empty() {
        return Err(OcuError::Config("[data]: train_dir holds no .pgm images".into()));
    }
    let train = crop_patches(&sources, d.train_crop, d.crops_per_source, seed)?;
    let test = load_image_dir(&config::resolve(path, &d.test_dir), d.test_image_size)?;
    if test.is_empty() {
        return Err(OcuError::Config("[data]: test_dir holds no .pgm images".into()));
    }
    Ok((train, test))
}

#[derive(Serialize)]
struct DenoiseMetricsRow {
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct PsnrCsvRow {
    image: String,
    noisy_db: f64,
    denoised_db: f64,
}

fn write_psnr(dir: &Path, net: &mut Network, test: &[(PathBuf, ImageTensor)], sigma: f64, seed: u64) -> Result<(f64, f64)> {
    let images: Vec<ImageTensor> = test.iter().map(|(_, img)| img.clone()).collect();
    let table = evaluate_denoiser(net, &images, sigma, seed)?;
    let names: Vec<String> = test.iter().map(|(p, _)| file_stem(p)).collect();
    let mut rows: Vec<PsnrCsvRow> = table
        .rows
        .iter()
        .map(|r| PsnrCsvRow {
            image: names[r.index].clone(),
            noisy_db: r.noisy,
            denoised_db: r.denoised,
        })
        .collect();
    rows.push(PsnrCsvRow {
        image: "average".into(),
        noisy_db: table.mean_noisy,
        denoised_db: table.mean_denoised,
    });
    write_csv(&dir.join("psnr.csv"), &rows)?;
    let images_dir = dir.join("images");
    ensure_dir(&images_dir)?;
    for (i, name) in names.iter().enumerate() {
        write_pgm(&images_dir.join(format!("{name}_noisy.pgm")), &table.noisy[i])?;
        write_pgm(&images_dir.join(format!("{name}_denoised.pgm")), &table.denoised[i])?;
    }
    let text: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.image.clone(), format!("{:.2}", r.noisy_db), format!("{:.2}", r.denoised_db)])
        .collect();
    print!("{}", aligned(&["image", "noisy_db", "denoised_db"], &text));
    Ok((table.mean_noisy, table.mean_denoised))
}

fn train_denoiser_cmd(common: &Common) -> CliResult<()> {
    let (path, cfg): (PathBuf, DenoiserConfig) = load_config(common)?;
    let seed = common.seed.unwrap_or(cfg.train.seed);
    let spec = denoiser_spec(&cfg).map_err(Failure::config)?;
    let dn_cfg = cfg.train.denoise_config(seed);
    dn_cfg
        .validate()
        .map_err(|e| Failure::config(OcuError::Config(format!("[train]: {e}"))))?;
    let (train, test) = load_denoise_images(&path, &cfg, seed).map_err(Failure::config)?;
    let dir = out_dir(common)?;

    let mut net = Network::build(spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let history = train_denoiser(&mut net, &train, &dn_cfg)?;
    write_csv(
        &dir.join("metrics.csv"),
        history.iter().map(|h| DenoiseMetricsRow {
            epoch: h.epoch,
            loss: h.loss,
        }),
    )?;
    Checkpoint::network(
        Provenance {
            command: "train-denoiser".into(),
            seed,
            epochs: dn_cfg.epochs,
            final_loss: history.last().map_or(f64::NAN, |h| h.loss),
        },
        &net,
    )
    .save(&dir.join("checkpoint.json"))?;
    write_psnr(dir, &mut net, &test, cfg.train.sigma, cfg.train.eval_seed)?;
    Ok(())
}

/// Classifier and denoiser configs are told apart by `[data]`: only
/// classifier datasets carry a `format` key.
fn is_classifier_config(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| OcuError::io(path, e))?;
    let value: toml::Table = config::parse(&text)?;
    Ok(value
        .get("data")
        .and_then(|d| d.get("format"))
        .is_some())
}

fn eval_cmd(common: &Common, checkpoint: Option<&Path>, image: Option<&Path>) -> CliResult<()> {
    let ck = checkpoint.map(Checkpoint::load).transpose().map_err(Failure::config)?;
    if let Some(ck @ Checkpoint { body: Body::Kernels { .. }, .. }) = &ck {
        return eval_kernels(common, ck, image);
    }
    let path = config_path(common)?;
    let classifier = match &ck {
        Some(Checkpoint {
            body: Body::Network { spec, .. },
            ..
        }) => matches!(spec.task, Task::Classification { .. }),
        _ => is_classifier_config(path).map_err(Failure::config)?,
    };
    if classifier {
        eval_classifier(common, ck.as_ref())
    } else {
        eval_denoiser(common, ck.as_ref())
    }
}

fn eval_kernels(common: &Common, ck: &Checkpoint, image: Option<&Path>) -> CliResult<()> {
    let Body::Kernels { stride, encoding, .. } = &ck.body else {
        unreachable!("caller matched kernels");
    };
    let image = image.ok_or_else(|| {
        Failure::config(OcuError::Config("--image is required to evaluate a kernel checkpoint".into()))
    })?;
    let img = load_test_image(image).map_err(Failure::config)?;
    let units = kernel_units(ck).map_err(Failure::config)?;
    let dir = out_dir(common)?;
    let mut rows = Vec::new();
    for (unit, model) in &units {
        rows.push((unit.name.clone(), kernel_mse(model, &unit.kernel, &img, *stride, *encoding)?));
    }
    #[derive(Serialize)]
    struct Row<'a> {
        kernel: &'a str,
        test_mse: f64,
    }
    write_csv(
        &dir.join("mse.csv"),
        rows.iter().map(|(k, m)| Row {
            kernel: k,
            test_mse: *m,
        }),
    )?;
    let text: Vec<Vec<String>> = rows.iter().map(|(k, m)| vec![k.clone(), format!("{m:.6}")]).collect();
    print!("{}", aligned(&["kernel", "test_mse"], &text));
    println!(
        "average test mse: {:.6}",
        rows.iter().map(|r| r.1).sum::<f64>() / rows.len().max(1) as f64
    );
    Ok(())
}

fn eval_classifier(common: &Common, ck: Option<&Checkpoint>) -> CliResult<()> {
    let (path, cfg): (PathBuf, ClassifierConfig) = load_config(common)?;
    let seed = common.seed.unwrap_or(cfg.train.seed);
    let mut net = match ck {
        Some(ck) => ck.build_network().map_err(Failure::config)?,
        None => Network::build(classifier_spec(&cfg).map_err(Failure::config)?, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(Failure::config)?,
    };
    let classes = match net.spec().task {
        Task::Classification { classes } => classes,
        Task::Denoising => {
            return Err(Failure::config(OcuError::Config("checkpoint is a denoiser".into())));
        }
    };
    let (train, test) = load_dataset(&path, &cfg.data, classes).map_err(Failure::config)?;
    let dir = out_dir(common)?;
    if !net.is_calibrated() {
        let n = cfg.train.batch_size.min(train.len());
        let first: Vec<FeatureMap> = train.images()[..n].iter().map(ImageTensor::to_feature_map).collect();
        net.calibrate(&first)?;
    }
    let (acc, matrix) = evaluate_classifier(&mut net, &test)?;
    #[derive(Serialize)]
    struct Row {
        samples: usize,
        accuracy: f64,
    }
    write_csv(
        &dir.join("metrics.csv"),
        [Row {
            samples: test.len(),
            accuracy: acc,
        }],
    )?;
    write_confusion(dir, test.class_names(), &matrix)?;
    println!("test accuracy: {acc:.4}");
    Ok(())
}

fn eval_denoiser(common: &Common, ck: Option<&Checkpoint>) -> CliResult<()> {
    let (path, cfg): (PathBuf, DenoiserConfig) = load_config(common)?;
    let seed = common.seed.unwrap_or(cfg.train.seed);
    let mut net = match ck {
        Some(ck) => ck.build_network().map_err(Failure::config)?,
        None => Network::build(denoiser_spec(&cfg).map_err(Failure::config)?, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(Failure::config)?,
    };
    if net.spec().task != Task::Denoising {
        return Err(Failure::config(OcuError::Config("checkpoint is a classifier".into())));
    }
    let (train, test) = load_denoise_images(&path, &cfg, seed).map_err(Failure::config)?;
    let dir = out_dir(common)?;
    if !net.is_calibrated() {
        let n = cfg.train.batch_size.min(train.len()).max(2);
        let first: Vec<FeatureMap> = train.iter().take(n).map(ImageTensor::to_feature_map).collect();
        net.calibrate(&first)?;
    }
    write_psnr(dir, &mut net, &test, cfg.train.sigma, cfg.train.eval_seed)?;
    Ok(())
}

fn perf_cmd(common: &Common) -> CliResult<()> {
    let (_, cfg): (PathBuf, PerfConfig) = load_config(common)?;
    let spec = cfg.spec().map_err(Failure::config)?;
    let dir = out_dir(common)?;
    let table = perf_table(&spec)?;
    write_csv(&dir.join("perf.csv"), &table)?;
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| vec![r.quantity.to_string(), r.value.to_string(), r.unit.to_string(), scaled(r.value, r.unit)])
        .collect();
    print!("{}", aligned(&["quantity", "value", "unit", "scaled"], &rows));
    Ok(())
}

/// `1.7e12 OPS` → `1.7 TOPS`. Printed with four significant digits.
fn scaled(value: f64, unit: &str) -> String {
    const PREFIXES: [(f64, &str); 8] = [
        (1e15, "P"),
        (1e12, "T"),
        (1e9, "G"),
        (1e6, "M"),
        (1e3, "k"),
        (1.0, ""),
        (1e-3, "m"),
        (1e-6, "µ"),
    ];
    let mag = value.abs();
    let (factor, prefix) = PREFIXES
        .iter()
        .copied()
        .find(|(f, _)| mag >= *f)
        .unwrap_or((1e-9, "n"));
    let digits = format!("{:.4}", value / factor);
    let digits = digits.trim_end_matches('0').trim_end_matches('.');
    format!("{digits} {prefix}{unit}")
}

fn write_geometry(ck: &Checkpoint, dir: &Path) -> Result<()> {
    let mut rows: Vec<GeometryRow> = Vec::new();
    match &ck.body {
        Body::Kernels { .. } => {
            for (unit, model) in ck.kernel_models()? {
                rows.extend(geometry_rows(&unit.name, &model)?);
            }
        }
        Body::Network { .. } => {
            let net = ck.build_network()?;
            for (i, layer) in net.layers().iter().enumerate() {
                if let Layer::Optical(l) = layer {
                    let c = l.shape().in_channels;
                    for (idx, model) in l.units().iter().enumerate() {
                        let name = format!("layer{i}_out{}_in{}", idx / c, idx % c);
                        rows.extend(geometry_rows(&name, model)?);
                    }
                }
            }
            if rows.is_empty() {
                return Err(OcuError::InvalidArgument("network has no optical layers".into()));
            }
        }
    }
    write_csv(&dir.join("geometry.csv"), &rows)
}

fn export_geometry_cmd(common: &Common, checkpoint: &Path) -> CliResult<()> {
    let ck = Checkpoint::load(checkpoint).map_err(Failure::config)?;
    let dir = out_dir(common)?;
    write_geometry(&ck, dir)?;
    println!("wrote {}", dir.join("geometry.csv").display());
    Ok(())
}

