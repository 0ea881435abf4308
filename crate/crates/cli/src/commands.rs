//! One function per subcommand. Stages talk only through files in the
//! output directory.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use spectral_codec::bench::{measure_throughput, BenchConfig};
use spectral_codec::fitting::{fit_bank, FitReport};
use spectral_codec::metrics::{dataset_rmse, segmentation_stats, RmseReport, SegReport};
use spectral_codec::nn::{
    classify_pixels, layer_stack, load_mlp, train_standardized, write_mlp, Activation, LayerSpec, LossKind, Mlp, Targets,
};
use spectral_codec::projector::{
    barcode_columns, design_pca, encode, load_barcode, remap_physical, write_barcode, Barcode, LinearDecoder,
    ProjectorBank,
};
use spectral_codec::readout::read_sensor;
use spectral_codec::spectra::{load_cube, load_mask, synth_scene, write_cube, write_mask, HsiCube, LabelMask, SpectraMatrix};
use spectral_codec::{Error, Result};

use crate::config::BankChoice;
use crate::run::{files_with_ext, require, stem, Run};

pub const TRAIN_DIR: &str = "scenes/train";
pub const VAL_DIR: &str = "scenes/val";
pub const BARCODE_DIR: &str = "barcodes";
pub const DECODED_DIR: &str = "decoded";
pub const MASK_DIR: &str = "masks";
pub const DECODER_FILE: &str = "decoder.mlp";
pub const CLASSIFIER_FILE: &str = "classifier.mlp";
pub const CLASSES_FILE: &str = "classes.txt";

fn bank_file(choice: BankChoice) -> &'static str {
    match choice {
        BankChoice::Pca => "bank_pca.toml",
        BankChoice::Physical => "bank_physical.toml",
        BankChoice::Realized => "bank_realized.toml",
    }
}

fn load_bank(run: &Run, path: Option<&Path>) -> Result<ProjectorBank> {
    let p = path.map(Path::to_path_buf).unwrap_or_else(|| run.path(bank_file(run.config.design.bank)));
    require(std::slice::from_ref(&p))?;
    ProjectorBank::load(p)
}

/// Explicit inputs, or every `ext` file in the default directory.
fn inputs(run: &Run, given: &[PathBuf], default_dir: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let files = if given.is_empty() {
        files_with_ext(&run.path(default_dir), ext)?
    } else {
        given.to_vec()
    };
    require(&files)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .{ext} inputs in {default_dir}")));
    }
    Ok(files)
}

fn scene_seed(seed: u64, split: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(split * 1_000_000 + i as u64)
}

pub fn synth(mut run: Run) -> Result<Run> {
    let desc = run.config.scene_descriptor()?;
    for (split, dir, n) in [(0, TRAIN_DIR, run.config.synth.train), (1, VAL_DIR, run.config.synth.val)] {
        for i in 0..n {
            let (cube, mask) = synth_scene(&desc, scene_seed(run.config.seed, split, i))?;
            run.write(&format!("{dir}/{i:03}.cube"), &write_cube(&cube)?)?;
            run.write(&format!("{dir}/{i:03}.mask"), &write_mask(&mask)?)?;
        }
    }
    Ok(run)
}

fn stack(cubes: &[HsiCube]) -> SpectraMatrix {
    let bands = cubes[0].bands();
    let data: Vec<f64> = cubes.iter().flat_map(|c| c.data().iter().copied()).collect();
    SpectraMatrix { matrix: DMatrix::from_column_slice(bands, data.len() / bands, &data) }
}

fn load_cubes(files: &[PathBuf]) -> Result<Vec<HsiCube>> {
    let cubes = files.iter().map(load_cube).collect::<Result<Vec<_>>>()?;
    if cubes.iter().any(|c| c.grid() != cubes[0].grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(cubes)
}

pub fn design(mut run: Run, given: &[PathBuf]) -> Result<Run> {
    let cubes = load_cubes(&inputs(&run, given, TRAIN_DIR, "cube")?)?;
    let grid = cubes[0].grid().clone();
    let bank = design_pca(&stack(&cubes), &grid, run.config.design.k, run.config.design.centered)?;
    run.write(bank_file(BankChoice::Pca), bank.to_toml().as_bytes())?;
    run.write(bank_file(BankChoice::Physical), remap_physical(&bank).to_toml().as_bytes())?;
    Ok(run)
}

#[derive(Serialize)]
struct FitSummary {
    mean_mse: f64,
    gram_condition: Option<f64>,
    reports: Vec<Option<FitReport>>,
    failures: Vec<(usize, String)>,
}

pub fn fit(mut run: Run, bank: Option<&Path>) -> Result<Run> {
    let path = bank.map(Path::to_path_buf).unwrap_or_else(|| run.path(bank_file(BankChoice::Physical)));
    require(std::slice::from_ref(&path))?;
    let targets = ProjectorBank::load(&path)?;
    let fit = fit_bank(&targets, &run.config.fit_config())?;
    for (i, m) in fit.models.iter().enumerate() {
        if let Some(m) = m {
            run.write(&format!("fit/projector_{i:02}.toml"), m.to_toml().as_bytes())?;
        }
    }
    let summary = FitSummary {
        mean_mse: fit.mean_mse(),
        gram_condition: fit.realized.as_ref().map(|b| b.gram_condition()),
        reports: fit.reports.clone(),
        failures: fit.failures.iter().map(|(i, e)| (*i, e.to_string())).collect(),
    };
    run.write("fit/report.json", serde_json::to_string_pretty(&summary).expect("report serializes").as_bytes())?;
    match fit.realized {
        Some(bank) => {
            run.write(bank_file(BankChoice::Realized), bank.to_toml().as_bytes())?;
            println!("fitted {} projectors, mean curve MSE {:.3e}", bank.k(), summary.mean_mse);
            Ok(run)
        }
        None => {
            let (i, e) = fit.failures.into_iter().next().expect("missing bank implies a failure");
            eprintln!("projector {i} failed to fit");
            Err(e)
        }
    }
}

/// Encodes through `bank` and, unless disabled, applies the sensor model;
/// the result is in the barcode's physical units.
fn sense(run: &Run, cube: &HsiCube, bank: &ProjectorBank) -> Result<Barcode> {
    let code = encode(cube, bank)?;
    match run.config.readout_config() {
        Some(r) => Ok(read_sensor(&code, &r)?.to_physical()),
        None => Ok(code),
    }
}

pub fn encode_cmd(mut run: Run, given: &[PathBuf], bank: Option<&Path>) -> Result<Run> {
    let bank = load_bank(&run, bank)?;
    for f in inputs(&run, given, VAL_DIR, "cube")? {
        let code = sense(&run, &load_cube(&f)?, &bank)?;
        run.write(&format!("{BARCODE_DIR}/{}.hxb", stem(&f)), &write_barcode(&code)?)?;
    }
    Ok(run)
}

pub fn decode(mut run: Run, given: &[PathBuf], bank: Option<&Path>, decoder: Option<&Path>, mlp: bool) -> Result<Run> {
    let bank = load_bank(&run, bank)?;
    let net = if mlp || decoder.is_some() {
        let p = decoder.map(Path::to_path_buf).unwrap_or_else(|| run.path(DECODER_FILE));
        require(std::slice::from_ref(&p))?;
        Some(load_mlp(p)?)
    } else {
        None
    };
    let linear = if net.is_none() { Some(LinearDecoder::new(&bank)?) } else { None };
    let grid = bank.grid().clone();
    for f in inputs(&run, given, BARCODE_DIR, "hxb")? {
        let code = load_barcode(&f)?;
        let cube = match (&net, &linear) {
            (Some(net), _) => {
                if net.output_dim() != grid.bands() {
                    return Err(Error::DimensionMismatch("decoder output differs from the bank's band count".into()));
                }
                let y = net.predict(&barcode_columns(std::slice::from_ref(&code))?)?;
                HsiCube::new(grid.clone(), code.height(), code.width(), y.as_slice().to_vec())?
            }
            (None, Some(lin)) => lin.decode(&code)?,
            (None, None) => unreachable!("one decoder is always built"),
        };
        run.write(&format!("{DECODED_DIR}/{}.cube", stem(&f)), &write_cube(&cube)?)?;
    }
    Ok(run)
}

/// Evenly spaced pixel indices (all of them when `samples` is 0 or larger than `n`).
fn sample_indices(n: usize, samples: usize) -> Vec<usize> {
    if samples == 0 || samples >= n {
        (0..n).collect()
    } else {
        (0..samples).map(|i| i * n / samples).collect()
    }
}

pub fn train_decoder(mut run: Run, classify: bool, given: &[PathBuf], bank: Option<&Path>) -> Result<Run> {
    let bank = load_bank(&run, bank)?;
    let files = inputs(&run, given, TRAIN_DIR, "cube")?;
    let cubes = load_cubes(&files)?;
    let codes = cubes.iter().map(|c| sense(&run, c, &bank)).collect::<Result<Vec<_>>>()?;
    let x_all = barcode_columns(&codes)?;
    let k = bank.k();
    if classify {
        let masks = files.iter().map(|f| load_mask(f.with_extension("mask"))).collect::<Result<Vec<_>>>()?;
        let names = masks[0].class_names().to_vec();
        if masks.iter().any(|m| m.class_names() != names) {
            return Err(Error::DimensionMismatch("training masks use different class tables".into()));
        }
        let labels: Vec<usize> = masks.iter().flat_map(|m| m.labels().iter().map(|&l| l as usize)).collect();
        let sec = run.config.classifier.clone();
        let idx = sample_indices(labels.len(), sec.samples);
        let x = x_all.select_columns(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let mut specs: Vec<LayerSpec> = sec.hidden.iter().map(|&h| LayerSpec::new(h, Activation::Relu)).collect();
        if let Some(first) = specs.first_mut() {
            *first = first.with_batch_norm();
        }
        specs.push(LayerSpec::new(names.len(), Activation::Softmax));
        let mut net = Mlp::new(k, &specs, run.config.seed)?;
        let cfg = run.config.train_config(&sec, LossKind::CrossEntropy);
        let report = train_standardized(&mut net, &x, &Targets::Classes(y), &cfg)?;
        println!("classifier final loss {:.4e}", report.epoch_loss.last().copied().unwrap_or(f64::NAN));
        run.write(CLASSIFIER_FILE, &write_mlp(&net)?)?;
        run.write(CLASSES_FILE, (names.join("\n") + "\n").as_bytes())?;
    } else {
        let y_all = stack(&cubes).matrix;
        let sec = run.config.decoder.clone();
        let idx = sample_indices(x_all.ncols(), sec.samples);
        let mut net = Mlp::new(k, &layer_stack(&sec.hidden, bank.grid().bands(), Activation::Identity), run.config.seed)?;
        let cfg = run.config.train_config(&sec, LossKind::Mse);
        let targets = Targets::Values(y_all.select_columns(&idx));
        let report = train_standardized(&mut net, &x_all.select_columns(&idx), &targets, &cfg)?;
        println!("decoder final loss {:.4e}", report.epoch_loss.last().copied().unwrap_or(f64::NAN));
        run.write(DECODER_FILE, &write_mlp(&net)?)?;
    }
    Ok(run)
}

pub fn classify(mut run: Run, given: &[PathBuf], net: Option<&Path>) -> Result<Run> {
    let net_path = net.map(Path::to_path_buf).unwrap_or_else(|| run.path(CLASSIFIER_FILE));
    let names_path = net_path.with_file_name(CLASSES_FILE);
    require(&[net_path.clone(), names_path.clone()])?;
    let net = load_mlp(&net_path)?;
    let names: Vec<String> = std::fs::read_to_string(&names_path)?.lines().map(str::to_string).collect();
    for f in inputs(&run, given, BARCODE_DIR, "hxb")? {
        let out = classify_pixels(&net, &load_barcode(&f)?, &names)?;
        run.write(&format!("{MASK_DIR}/{}.mask", stem(&f)), &write_mask(&out.mask)?)?;
    }
    Ok(run)
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    /// Predicted files, relative to the output directory when inside it.
    pub files: Vec<String>,
    pub rmse: Option<RmseReport>,
    pub segmentation: Option<SegReport>,
    pub miou: Option<f64>,
    pub miou_without_background: Option<f64>,
}

/// Pairs `ext` files of `pred` (file or directory) with same-named files in `truth`.
fn pairs(pred: &Path, truth: &Path, ext: &str) -> Result<Vec<(PathBuf, PathBuf)>> {
    if pred.is_dir() {
        let files = files_with_ext(pred, ext)?;
        let pairs: Vec<(PathBuf, PathBuf)> = files
            .into_iter()
            .map(|p| {
                let t = truth.join(p.file_name().expect("listed files have names"));
                (p, t)
            })
            .collect();
        require(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>())?;
        Ok(pairs)
    } else if pred.extension().is_some_and(|x| x == ext) {
        require(&[pred.to_path_buf(), truth.to_path_buf()])?;
        Ok(vec![(pred.to_path_buf(), truth.to_path_buf())])
    } else {
        Ok(Vec::new())
    }
}

fn concat_masks(masks: &[LabelMask]) -> Result<LabelMask> {
    let width = masks[0].width();
    if masks.iter().any(|m| m.width() != width) {
        return Err(Error::DimensionMismatch("masks differ in width".into()));
    }
    let labels: Vec<u16> = masks.iter().flat_map(|m| m.labels().iter().copied()).collect();
    let h = masks.iter().map(|m| m.height()).sum();
    LabelMask::new(h, width, labels, masks[0].class_names().to_vec())
}

pub fn eval(mut run: Run, pred: Option<&Path>, truth: Option<&Path>) -> Result<Run> {
    let truth = truth.map(Path::to_path_buf).unwrap_or_else(|| run.path(VAL_DIR));
    require(std::slice::from_ref(&truth))?;
    let (cube_pred, mask_pred) = match pred {
        Some(p) => (p.to_path_buf(), p.to_path_buf()),
        None => (run.path(DECODED_DIR), run.path(MASK_DIR)),
    };
    let cube_pairs = if cube_pred.exists() { pairs(&cube_pred, &truth, "cube")? } else { Vec::new() };
    let mask_pairs = if mask_pred.exists() { pairs(&mask_pred, &truth, "mask")? } else { Vec::new() };
    if cube_pairs.is_empty() && mask_pairs.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate: no predicted cubes or masks".into()));
    }
    let mut files: Vec<String> = cube_pairs
        .iter()
        .chain(&mask_pairs)
        .map(|p| p.0.strip_prefix(&run.out).unwrap_or(&p.0).display().to_string())
        .collect();
    files.sort();
    let rmse = if cube_pairs.is_empty() {
        None
    } else {
        let preds = cube_pairs.iter().map(|p| load_cube(&p.0)).collect::<Result<Vec<_>>>()?;
        let truths = cube_pairs.iter().map(|p| load_cube(&p.1)).collect::<Result<Vec<_>>>()?;
        Some(dataset_rmse(&preds, &truths)?)
    };
    let segmentation = if mask_pairs.is_empty() {
        None
    } else {
        let preds = mask_pairs.iter().map(|p| load_mask(&p.0)).collect::<Result<Vec<_>>>()?;
        let truths = mask_pairs.iter().map(|p| load_mask(&p.1)).collect::<Result<Vec<_>>>()?;
        Some(segmentation_stats(&concat_masks(&preds)?, &concat_masks(&truths)?)?)
    };
    let report = EvalReport {
        files,
        miou: segmentation.as_ref().map(|s| s.total.iou),
        miou_without_background: segmentation.as_ref().map(|s| s.total_without_background.iou),
        rmse,
        segmentation,
    };
    let mut text = String::new();
    if let Some(r) = &report.rmse {
        text.push_str(&format!("rmse255 {:.4} +- {:.4} over {} images\n", r.mean, r.std, r.per_image.len()));
    }
    if let Some(s) = &report.segmentation {
        text.push_str(&s.to_table());
    }
    print!("{text}");
    run.write("eval.txt", text.as_bytes())?;
    run.write("eval.json", serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    Ok(run)
}

pub fn bench(run: Run) -> Result<Run> {
    let b = &run.config.bench;
    let cfg = BenchConfig {
        height: b.height,
        width: b.width,
        bands: b.bands,
        k: b.k,
        repetitions: b.repetitions,
        seed: run.config.seed,
    };
    let r = measure_throughput(&cfg)?;
    println!(
        "{}x{}x{} k={} on {} thread(s): encode {:.1} FPS ({:.3e} px/s), decode {:.1} FPS",
        cfg.height, cfg.width, cfg.bands, cfg.k, r.threads, r.encode_fps, r.encode_pixels_per_s, r.decode_fps
    );
    // timings vary run to run, so the report is not part of the hashed outputs
    std::fs::write(run.path("bench.json"), serde_json::to_string_pretty(&r).expect("report serializes"))?;
    Ok(run)
}
