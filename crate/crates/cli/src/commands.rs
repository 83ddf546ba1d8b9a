use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use partfuse::cluster::{cluster_instances, InstancePrediction, LevelOutputs};
use partfuse::data::{
    corpus_spec, derive_seed, generate_shape, read_plp, read_pls, write_plp, write_pls,
    LabeledShape, ShapeFamily, ShapeSpec,
};
use partfuse::metrics::{evaluate, MetricsReport};
use partfuse::model::{
    forward, fusion_leak_into_semantic, gradient_check, init_params, jitter_biases, level_outputs,
    load_checkpoint, mean_offset_error, predict, save_checkpoint, train_from, GradcheckParams,
    GradcheckReport, ModelConfig, ModelParams, Precision, TrainLog,
};
use partfuse::FusionMode;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::ply::write_ply;

const TEST_STREAM: u64 = 0x5445_5354;
const GRADCHECK_STREAM: u64 = 0x4752_4144;
const MIN_GENERATED_POINTS: usize = 64;
const MANIFEST: &str = "manifest.tsv";

/// Bandwidths and λ values swept by [`cmd_ablate`].
pub const ABLATE_BANDWIDTHS: [f64; 3] = [0.05, 0.10, 0.20];
pub const ABLATE_LAMBDAS: [f64; 3] = [0.025, 0.050, 0.075];

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn save(path: &Path, model: &ModelConfig, params: &ModelParams) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    save_checkpoint(path, model, params).map_err(|e| match e {
        partfuse::Error::Io(source) => CliError::io(path, source),
        e => e.into(),
    })
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Shapes of one split with their file stems.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub shapes: Vec<LabeledShape>,
}

fn split_seed(config: &RunConfig, split: &str) -> u64 {
    if split == "test" {
        derive_seed(config.data_seed, TEST_STREAM)
    } else {
        config.data_seed
    }
}

fn split_size(config: &RunConfig, split: &str) -> usize {
    if split == "test" {
        config.test_shapes
    } else {
        config.train_shapes
    }
}

fn split_specs(config: &RunConfig, split: &str) -> Vec<(ShapeSpec, u64)> {
    let seed = split_seed(config, split);
    (0..split_size(config, split))
        .map(|i| {
            let spec = corpus_spec(i, config.points, config.jitter, seed);
            (spec, derive_seed(seed, 2 * i as u64 + 1))
        })
        .collect()
}

fn family_label(f: &ShapeFamily) -> String {
    format!("{}{}", f.name(), f.part_count())
}

/// Generates one split in memory, exactly as [`cmd_gen_data`] writes it.
pub fn generate_split(config: &RunConfig, split: &str) -> CliResult<Dataset> {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    for (i, (spec, seed)) in split_specs(config, split).into_iter().enumerate() {
        names.push(format!("{split}_{i:04}"));
        shapes.push(generate_shape(&spec, seed)?);
    }
    Ok(Dataset { names, shapes })
}

/// Writes `train/*.pls`, `test/*.pls` and a manifest under `data_dir`.
pub fn cmd_gen_data(config: &RunConfig) -> CliResult<usize> {
    config.validate()?;
    let mut manifest = String::from("split\tfile\tfamily\tpoints\n");
    let mut count = 0;
    for split in ["train", "test"] {
        let specs = split_specs(config, split);
        let data = generate_split(config, split)?;
        for ((name, shape), (spec, _)) in data.names.iter().zip(&data.shapes).zip(&specs) {
            let file = format!("{split}/{name}.pls");
            write(&config.data_dir.join(&file), write_pls(shape))?;
            writeln!(
                manifest,
                "{split}\t{file}\t{}\t{}",
                family_label(&spec.family),
                shape.num_points()
            )
            .unwrap();
            count += 1;
        }
    }
    write(&config.data_dir.join(MANIFEST), manifest)?;
    Ok(count)
}

/// Reads the shapes of `split` listed in the manifest under `data_dir`.
pub fn load_split(data_dir: &Path, split: &str) -> CliResult<Dataset> {
    let manifest = read(&data_dir.join(MANIFEST))?;
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    for (i, line) in manifest.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(CliError::Failed(format!(
                "{MANIFEST} line {}: expected 4 columns",
                i + 1
            )));
        }
        if cols[0] != split {
            continue;
        }
        let path = data_dir.join(cols[1]);
        let shape = read_pls(&read(&path)?)
            .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        names.push(
            Path::new(cols[1])
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        shapes.push(shape);
    }
    if shapes.is_empty() {
        return Err(CliError::Failed(format!(
            "no {split} shapes in {}",
            data_dir.display()
        )));
    }
    Ok(Dataset { names, shapes })
}

/// Trains on the `train` split and writes `model.ckpt`, `train_log.tsv`
/// and `run.cfg` under `out_dir`.
pub fn cmd_train(config: &RunConfig) -> CliResult<TrainLog> {
    config.validate()?;
    let data = load_split(&config.data_dir, "train")?;
    let (params, log) = train_model(&data.shapes, &config.model)?;
    save(&config.checkpoint_path(), &config.model, &params)?;
    write(&config.out_dir.join("train_log.tsv"), log.to_tsv())?;
    write(&config.out_dir.join("run.cfg"), config.to_text())?;
    Ok(log)
}

fn train_model(shapes: &[LabeledShape], model: &ModelConfig) -> CliResult<(ModelParams, TrainLog)> {
    let init = init_params(model, model.seed)?;
    Ok(train_from(shapes, model, init, |e| {
        eprintln!(
            "iter {:>6}  lr {:<8}  loss {:.6}",
            e.iteration,
            e.learning_rate,
            e.loss.total()
        )
    })?)
}

/// Predicts every shape of `split` with the checkpoint under `out_dir` and
/// writes one `.plp` per shape into `out_dir/predictions`.
pub fn cmd_infer(config: &RunConfig) -> CliResult<usize> {
    config.validate()?;
    let path = config.checkpoint_path();
    let (model, params) = load_checkpoint(&path).map_err(|e| match e {
        partfuse::Error::Io(source) => CliError::io(&path, source),
        e => e.into(),
    })?;
    let data = load_split(&config.data_dir, &config.split)?;
    let dir = config.predictions_dir();
    for (name, shape) in data.names.iter().zip(&data.shapes) {
        let (_, pred) = predict(&params, &model, &shape.points, &config.cluster)?;
        let text = write_plp(&shape.points, &model.classes, &pred)?;
        write(&dir.join(format!("{name}.plp")), text)?;
    }
    Ok(data.shapes.len())
}

/// Scores the predictions of `split` and writes `metrics.tsv` and
/// `metrics.txt` under `out_dir`.
pub fn cmd_eval(config: &RunConfig) -> CliResult<MetricsReport> {
    config.validate()?;
    let data = load_split(&config.data_dir, &config.split)?;
    let dir = config.predictions_dir();
    let mut preds = Vec::with_capacity(data.shapes.len());
    for (name, shape) in data.names.iter().zip(&data.shapes) {
        let path = dir.join(format!("{name}.plp"));
        let file = read_plp(&read(&path)?)
            .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        if file.points.len() != shape.num_points() {
            return Err(CliError::Failed(format!(
                "{}: {} points, shape has {}",
                path.display(),
                file.points.len(),
                shape.num_points()
            )));
        }
        preds.push(file.prediction);
    }
    let report = evaluate(&data.shapes, &preds)?;
    write(&config.out_dir.join("metrics.tsv"), report.to_tsv())?;
    write(&config.out_dir.join("metrics.txt"), report.to_summary())?;
    Ok(report)
}

/// One cell of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub fusion: FusionMode,
    pub stop_grad: bool,
    pub one_hot: bool,
    pub bandwidth: f64,
    pub lambda: f64,
    /// Directory of the model that produced the row.
    pub model: String,
    pub offset_error: f64,
    pub report: MetricsReport,
}

/// The model variant that trains identically to `(mode, stop_grad,
/// one_hot)`: flags that cannot affect training are normalized.
pub fn canonical_variant(
    mode: FusionMode,
    stop_grad: bool,
    one_hot: bool,
) -> (FusionMode, bool, bool) {
    if mode == FusionMode::None {
        (mode, true, false)
    } else if one_hot {
        (mode, true, true)
    } else {
        (mode, stop_grad, false)
    }
}

fn variant_dir(mode: FusionMode, stop_grad: bool, one_hot: bool) -> String {
    format!("{mode}_sg{}_oh{}", u8::from(stop_grad), u8::from(one_hot))
}

/// Trains each distinct model of the fusion × stop_grad × one_hot grid on
/// the train split, then clusters the test split under every bandwidth
/// and λ. Writes `ablate/ablation.tsv` and one checkpoint per model.
pub fn cmd_ablate(config: &RunConfig) -> CliResult<Vec<AblationRow>> {
    config.validate()?;
    let train = load_split(&config.data_dir, "train")?;
    let test = load_split(&config.data_dir, "test")?;
    let root = config.out_dir.join("ablate");
    let mut models: BTreeMap<String, (f64, Vec<Vec<LevelOutputs>>)> = BTreeMap::new();
    let mut rows = Vec::new();
    for mode in FusionMode::ALL {
        for stop_grad in [true, false] {
            for one_hot in [false, true] {
                let (m, sg, oh) = canonical_variant(mode, stop_grad, one_hot);
                let dir = variant_dir(m, sg, oh);
                if !models.contains_key(&dir) {
                    let model = ModelConfig {
                        fusion: m,
                        stop_grad: sg,
                        one_hot: oh,
                        ..config.model.clone()
                    };
                    eprintln!("training {dir}");
                    let (params, log) = train_model(&train.shapes, &model)?;
                    save(&root.join(&dir).join("model.ckpt"), &model, &params)?;
                    write(&root.join(&dir).join("train_log.tsv"), log.to_tsv())?;
                    let outputs = test
                        .shapes
                        .iter()
                        .map(|s| Ok(level_outputs(&forward(&params, &model, &s.points)?)))
                        .collect::<CliResult<Vec<_>>>()?;
                    let err = mean_offset_error(&params, &model, &test.shapes)?;
                    models.insert(dir.clone(), (err, outputs));
                }
                let (offset_error, outputs) = &models[&dir];
                for &bandwidth in &ABLATE_BANDWIDTHS {
                    for &lambda in &ABLATE_LAMBDAS {
                        let cluster = partfuse::ClusterParams {
                            bandwidth,
                            lambda,
                            ..config.cluster
                        };
                        let preds = test
                            .shapes
                            .iter()
                            .zip(outputs)
                            .map(|(s, o)| Ok(cluster_instances(&s.points, o, &cluster)?))
                            .collect::<CliResult<Vec<InstancePrediction>>>()?;
                        rows.push(AblationRow {
                            fusion: mode,
                            stop_grad,
                            one_hot,
                            bandwidth,
                            lambda,
                            model: dir.clone(),
                            offset_error: *offset_error,
                            report: evaluate(&test.shapes, &preds)?,
                        });
                    }
                }
            }
        }
    }
    write(&root.join("ablation.tsv"), ablation_tsv(&rows))?;
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let levels = rows.first().map_or(0, |r| r.report.levels.len());
    let mut out = String::from(
        "fusion\tstop_grad\tone_hot\tbandwidth\tlambda\tmodel\toffset_error\tmean_AP50",
    );
    for k in 1..=levels {
        write!(out, "\tL{k}_mAP50\tL{k}_mIoU").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}",
            r.fusion,
            r.stop_grad,
            r.one_hot,
            r.bandwidth,
            r.lambda,
            r.model,
            r.offset_error,
            opt(r.report.mean_ap50())
        )
        .unwrap();
        for l in &r.report.levels {
            write!(out, "\t{}\t{}", opt(l.map[1]), opt(l.miou)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Finite-difference check of the `f64` gradient for every fusion mode on
/// a random subset of a freshly generated shape. Writes `gradcheck.tsv` under `out_dir`.
pub fn cmd_gradcheck(config: &RunConfig) -> CliResult<Vec<GradcheckOutcome>> {
    config.validate()?;
    let full_size = config.gradcheck_points.max(MIN_GENERATED_POINTS);
    let spec = corpus_spec(0, full_size, config.jitter, config.data_seed);
    let full = generate_shape(&spec, derive_seed(config.data_seed, 1))?;
    let mut idx: Vec<usize> = (0..full_size).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        config.data_seed,
        GRADCHECK_STREAM,
    )));
    idx.truncate(config.gradcheck_points);
    let shape = full.select(&idx)?;
    let check = GradcheckParams {
        fraction: config.gradcheck_fraction,
        tolerance: config.gradcheck_tolerance,
        seed: config.model.seed,
        ..GradcheckParams::default()
    };
    let mut out = Vec::new();
    let mut tsv =
        String::from("fusion\tchecked\tfailures\tmax_rel_error\tstop_grad_leak\tresult\n");
    for mode in FusionMode::ALL {
        let open = ModelConfig {
            fusion: mode,
            precision: Precision::F64,
            one_hot: false,
            stop_grad: false,
            ..config.model.clone()
        };
        let blocked = ModelConfig {
            stop_grad: true,
            ..open.clone()
        };
        let params = jitter_biases(
            &init_params(&open, open.seed)?,
            0.1,
            derive_seed(open.seed, 1),
        );
        let report = gradient_check(&params, &open, &shape, &check)?;
        let leak = fusion_leak_into_semantic(&params, &blocked, &shape)?;
        let outcome = GradcheckOutcome { mode, report, leak };
        writeln!(
            tsv,
            "{mode}\t{}\t{}\t{:e}\t{:e}\t{}",
            outcome.report.entries.len(),
            outcome.report.failures(),
            outcome.report.max_rel_error(),
            outcome.leak,
            if outcome.passed() { "pass" } else { "fail" }
        )
        .unwrap();
        out.push(outcome);
    }
    write(&config.out_dir.join("gradcheck.tsv"), &tsv)?;
    print!("{tsv}");
    if out.iter().any(|o| !o.passed()) {
        return Err(CliError::Failed("gradient check failed".into()));
    }
    Ok(out)
}

/// Gradient check of one fusion mode: finite differences with every
/// gradient path open, and the semantic-head gradient that reaches the
/// offset losses with `stop_grad` on.
#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub mode: FusionMode,
    pub report: GradcheckReport,
    pub leak: f64,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed() && self.leak == 0.0
    }
}

/// Writes an ASCII PLY of a `.pls` (ground truth) or `.plp` (prediction)
/// file, colored by instance id at `level` (1-based).
pub fn cmd_export_ply(input: &Path, level: usize, output: Option<&Path>) -> CliResult<PathBuf> {
    let text = read(input)?;
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let (points, inst) = match ext {
        "pls" => {
            let s = read_pls(&text)?;
            let l = level_index(level, s.num_levels())?;
            (s.points.clone(), s.levels[l].inst.clone())
        }
        "plp" => {
            let p = read_plp(&text)?;
            let l = level_index(level, p.prediction.levels.len())?;
            (p.points, p.prediction.levels[l].inst.clone())
        }
        _ => {
            return Err(CliError::Config(format!(
                "{}: expected a .pls or .plp file",
                input.display()
            )))
        }
    };
    let out = output.map_or_else(|| input.with_extension("ply"), Path::to_path_buf);
    write(&out, write_ply(&points, &inst))?;
    Ok(out)
}

fn level_index(level: usize, levels: usize) -> CliResult<usize> {
    if level == 0 || level > levels {
        return Err(CliError::Config(format!(
            "level {level} outside 1..={levels}"
        )));
    }
    Ok(level - 1)
}
