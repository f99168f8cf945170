use std::collections::BTreeMap;
use std::path::Path;

use dskd_core::data::{load_dataset, load_image, DatasetSpec, Sample, Split};
use dskd_core::report::{save_heatmap_png, write_metrics_csv, write_results_csv, RESULTS_HEADER};
use dskd_core::synth::{make_synthetic, SynthConfig};
use dskd_model::ablate::{AblationSetup, Arm, ABLATION_HEADER};
use dskd_model::train::{TrainOptions, DEFAULT_CHECKPOINT_EVERY};
use dskd_model::{
    evaluate, run_ablation, Checkpoint, Detector, Device, DskdModel, EpochRecord, MapSelection, Teacher,
    TeacherSource, TrainObserver, Variant,
};

use crate::config::{apply_overrides, RunConfig};
use crate::exit::{CliError, CliResult};
use crate::{AblateArgs, EvalArgs, InferArgs, RunArgs, SynthArgs, TrainArgs};

const METRICS_FILE: &str = "metrics.csv";
const RESULTS_FILE: &str = "results.csv";
const ABLATION_FILE: &str = "ablation.csv";
const HEATMAP_DIR: &str = "heatmaps";

fn run_overrides(a: &RunArgs) -> BTreeMap<&'static str, Option<String>> {
    fn text<T: ToString>(v: &Option<T>) -> Option<String> {
        v.as_ref().map(ToString::to_string)
    }
    let path = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| p.display().to_string());
    BTreeMap::from([
        ("data", path(&a.data)),
        ("category", a.category.clone()),
        ("size", text(&a.size)),
        ("epochs", text(&a.epochs)),
        ("lr", text(&a.lr)),
        ("lambda", text(&a.lambda)),
        ("seed", text(&a.seed)),
        ("width", text(&a.width)),
        ("batch_size", text(&a.batch_size)),
        ("teacher", path(&a.teacher)),
        ("teacher_seed", text(&a.teacher_seed)),
        ("out", path(&a.out)),
    ])
}

fn resolve(run: &RunArgs, extra: BTreeMap<&'static str, Option<String>>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &run.config {
        cfg.apply_file(path)?;
    }
    apply_overrides(&mut cfg, &run_overrides(run))?;
    apply_overrides(&mut cfg, &extra)?;
    cfg.validate()?;
    Ok(cfg)
}

fn teacher_for(cfg: &RunConfig, device: &Device) -> CliResult<Teacher> {
    let source = match &cfg.teacher {
        Some(path) => TeacherSource::File { path: path.clone() },
        None => TeacherSource::Random { seed: cfg.teacher_seed },
    };
    Ok(Teacher::load(&cfg.model_config(), &source, device)?)
}

fn load_split(root: &Path, category: &str, split: Split, size: usize) -> CliResult<Vec<Sample>> {
    let samples = load_dataset(&DatasetSpec {
        root: root.to_path_buf(),
        category: category.to_string(),
        split,
        input_size: size,
    })?;
    if samples.is_empty() {
        return Err(CliError::data(format!(
            "no images in the {} split of {}",
            split.dir_name(),
            root.join(category).display()
        )));
    }
    Ok(samples)
}

fn parse_maps(s: &str) -> CliResult<MapSelection> {
    s.parse::<MapSelection>()
        .map_err(|e| CliError::usage(e.to_string()))
}

struct Progress;

impl TrainObserver for Progress {
    fn on_epoch(&mut self, r: &EpochRecord) {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.5}")).unwrap_or_else(|| "-".into());
        eprintln!(
            "epoch {:>4}  loss_e {}  loss_d {}  {:>7.1}s",
            r.epoch,
            f(r.loss_e),
            f(r.loss_d),
            r.wall_seconds
        );
    }
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut extra = BTreeMap::new();
    extra.insert("variant", a.variant.clone());
    extra.insert("maps", a.maps.clone());
    extra.insert("dfe", a.no_dfe.then(|| "false".to_string()));
    let cfg = resolve(&a.run, extra)?;
    let device = Device::Cpu;
    let images: Vec<_> = load_split(cfg.data_root()?, &cfg.category, Split::Train, cfg.size)?
        .into_iter()
        .map(|s| s.image)
        .collect();
    let teacher = if cfg.variant.uses_teacher() { Some(teacher_for(&cfg, &device)?) } else { None };
    let model = DskdModel::new(&cfg.model_config(), teacher, cfg.seed, &device)?;
    let snapshot = cfg.write_snapshot(&cfg.out)?;
    eprintln!(
        "training {} on {} images ({}x{}), snapshot {}",
        cfg.variant,
        images.len(),
        cfg.size,
        cfg.size,
        snapshot.display()
    );
    let opts = TrainOptions {
        out_dir: Some(cfg.out.clone()),
        checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        sigma: cfg.sigma,
        maps: cfg.maps,
    };
    let outcome = dskd_model::train(model, &images, &cfg.train_config(), &opts, &mut Progress)?;
    println!(
        "checkpoint {} (calibration max score {:.6})",
        cfg.out.join(dskd_model::train::CHECKPOINT_FILE).display(),
        outcome.calibration.max_score()
    );
    Ok(())
}

fn load_detector(checkpoint: &Path, teacher: Option<&Path>, maps: Option<&str>, device: &Device) -> CliResult<Detector> {
    let ckpt = Checkpoint::load(checkpoint, device)?;
    let detector = ckpt.into_detector(teacher, device)?;
    Ok(match maps {
        Some(m) => detector.with_maps(parse_maps(m)?),
        None => detector,
    })
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let device = Device::Cpu;
    let detector = load_detector(&a.checkpoint, a.teacher.as_deref(), a.maps.as_deref(), &device)?;
    if let Some(size) = a.size {
        if size != detector.input_size() {
            return Err(CliError::usage(format!(
                "--size {size} does not match the checkpoint's input size {}",
                detector.input_size()
            )));
        }
    }
    let samples = load_split(&a.data, &a.category, Split::Test, detector.input_size())?;
    let evaluation = evaluate(&detector, &a.category, &samples)?;
    write_metrics_csv(&a.out.join(METRICS_FILE), std::slice::from_ref(&evaluation.metrics))?;
    write_results_csv(&a.out.join(RESULTS_FILE), &evaluation.results)?;
    let heatmaps = a.out.join(HEATMAP_DIR);
    for ((result, _), sample) in evaluation.results.iter().zip(&samples) {
        let base = a.overlay.then(|| sample.image.to_rgb8());
        save_heatmap_png(&heatmaps, &result.sample_id, &result.map, base.as_ref())?;
    }
    println!("{}", dskd_core::report::METRICS_HEADER);
    println!("{}", evaluation.metrics.to_csv_line());
    Ok(())
}

pub fn infer(a: InferArgs) -> CliResult<()> {
    let device = Device::Cpu;
    let detector = load_detector(&a.checkpoint, a.teacher.as_deref(), a.maps.as_deref(), &device)?;
    let header: Vec<&str> = RESULTS_HEADER.split(',').take(4).collect();
    println!("{}", header.join(","));
    for path in &a.images {
        let image = load_image(path, detector.input_size())?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let result = detector.infer(&id, &image)?;
        println!(
            "{},{:.6},{:.6},{}",
            result.sample_id,
            result.raw_score,
            result.normalized_score,
            u8::from(result.is_anomalous)
        );
        if let Some(dir) = &a.out {
            save_heatmap_png(dir, &result.sample_id, &result.map, None)?;
        }
    }
    Ok(())
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty())
}

pub fn ablate(a: AblateArgs) -> CliResult<()> {
    let cfg = resolve(&a.run, BTreeMap::new())?;
    let variants = split_list(&a.variants)
        .map(|v| v.parse::<Variant>().map_err(|e| CliError::usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let dfe_settings = split_list(&a.dfe)
        .map(|v| match v {
            "on" => Ok(true),
            "off" => Ok(false),
            other => Err(CliError::usage(format!("invalid `dfe` setting `{other}` (on, off)"))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let selections = split_list(&a.maps).map(parse_maps).collect::<CliResult<Vec<_>>>()?;
    if variants.is_empty() || dfe_settings.is_empty() || selections.is_empty() {
        return Err(CliError::usage("ablate needs at least one variant, dfe setting and map selection"));
    }
    let mut arms: Vec<Arm> = Vec::new();
    for &variant in &variants {
        for &dfe_enabled in &dfe_settings {
            // The embedding setting is meaningless without a decoder.
            let arm = Arm {
                variant,
                dfe_enabled: dfe_enabled || !variant.has_decoder(),
            };
            if !arms.contains(&arm) {
                arms.push(arm);
            }
        }
    }

    let device = Device::Cpu;
    let root = cfg.data_root()?;
    let setup = AblationSetup {
        model: cfg.model_config(),
        train: cfg.train_config(),
        sigma: cfg.sigma,
        category: cfg.category.clone(),
        teacher: teacher_for(&cfg, &device)?,
        train_images: load_split(root, &cfg.category, Split::Train, cfg.size)?
            .into_iter()
            .map(|s| s.image)
            .collect(),
        test: load_split(root, &cfg.category, Split::Test, cfg.size)?,
    };
    cfg.write_snapshot(&cfg.out)?;
    eprintln!("ablating {} arm(s) x {} map selection(s)", arms.len(), selections.len());
    let rows = run_ablation(&setup, &arms, &selections, a.parallel, &device)?;
    let mut text = format!("{ABLATION_HEADER}\n");
    for row in &rows {
        text.push_str(&row.to_csv_line());
        text.push('\n');
    }
    let path = cfg.out.join(ABLATION_FILE);
    std::fs::write(&path, &text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    print!("{text}");
    Ok(())
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        n_train: a.n_train,
        n_test: a.n_test,
        defect_rate: a.defect_rate,
        size: a.size,
    };
    let ds = make_synthetic(&cfg).map_err(|e| CliError::usage(e.to_string()))?;
    dskd_core::data::export_dataset(&a.out, &a.category, &ds.train, &ds.test)?;
    let defects = ds.test.iter().filter(|s| s.mask.is_some()).count();
    println!(
        "wrote {}: {} train, {} test ({} with defects)",
        a.out.join(&a.category).display(),
        ds.train.len(),
        ds.test.len(),
        defects
    );
    Ok(())
}
