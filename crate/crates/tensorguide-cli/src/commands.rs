//! Subcommand implementations.

use crate::config::{build_adapter, ExperimentConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;
use tensorguide::adapters::Adapter;
use tensorguide::bounds::{
    approximation_bound, generalization_bound, optimization_bound, rademacher_bound, BoundInputs,
};
use tensorguide::ntk::{ntk_compare, SpectralReport};
use tensorguide::presets;
use tensorguide::tasks::{self, Dataset};
use tensorguide::train::{train, TrainReport};
use tensorguide::{Error, Result};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

/// `gen-data`: write `dataset.bin` plus a `dataset.json` sidecar.
pub fn cmd_gen_data(config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let dataset = config.build_dataset()?;
    ensure_dir(out_dir)?;
    let mut bytes = Vec::new();
    tasks::write_dataset(&dataset, &mut bytes)?;
    write_file(&out_dir.join("dataset.bin"), &bytes)?;

    #[derive(Serialize)]
    struct Sidecar<'a> {
        task: &'a str,
        n: usize,
        input_len: usize,
        num_classes: usize,
        seed: u64,
        noise_level: Option<f64>,
        class_counts: &'a [usize],
    }
    let sidecar = Sidecar {
        task: &config.task.name,
        n: dataset.len(),
        input_len: dataset.input_len(),
        num_classes: dataset.num_classes,
        seed: dataset.meta.seed,
        noise_level: dataset.meta.noise_level,
        class_counts: &dataset.meta.class_counts,
    };
    write_file(
        &out_dir.join("dataset.json"),
        to_json_pretty(&sidecar).as_bytes(),
    )?;
    println!(
        "wrote {} samples ({} per class) to {}",
        dataset.len(),
        dataset
            .meta
            .class_counts
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("/"),
        out_dir.display()
    );
    Ok(())
}

fn load_or_generate(config: &ExperimentConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            tasks::read_dataset(&mut std::io::Cursor::new(bytes))
        }
        None => config.build_dataset(),
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    adapter: &'a str,
    param_count: usize,
    seed: u64,
    final_metrics: &'a tensorguide::train::EpochMetrics,
    config: &'a ExperimentConfig,
}

/// One training run; returns the report for reuse by `compare`.
fn run_once(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<(Adapter, TrainReport)> {
    let backbone = config.build_backbone()?;
    let mut adapter = config.build_adapter()?;
    let (train_set, test_set) = tasks::split(dataset, config.task.train_fraction, config.task.seed)?;
    let mut train_config = config.train_config()?;
    train_config.seed = seed;
    let report = train(&mut adapter, &backbone, &train_set, &test_set, &train_config)?;
    Ok((adapter, report))
}

/// `train`: metrics CSV and summary JSON per seed.
pub fn cmd_train(
    config: &ExperimentConfig,
    out_dir: &Path,
    seeds: &[u64],
    data: Option<&Path>,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let dataset = load_or_generate(config, data)?;
    let many = seeds.len() > 1;
    for &seed in seeds {
        let (_, report) = run_once(config, &dataset, seed)?;
        let (csv_name, json_name) = if many {
            (format!("metrics-{seed}.csv"), format!("summary-{seed}.json"))
        } else {
            ("metrics.csv".to_string(), "summary.json".to_string())
        };
        write_file(&out_dir.join(csv_name), report.to_csv().as_bytes())?;
        let summary = TrainSummary {
            adapter: &config.adapter.kind,
            param_count: report.param_count,
            seed,
            final_metrics: report.final_metrics(),
            config,
        };
        write_file(
            &out_dir.join(json_name),
            to_json_pretty(&summary).as_bytes(),
        )?;
        let last = report.final_metrics();
        println!(
            "{} seed {seed}: {} trainable params, test_loss {:.6}, test_acc {:.4}, exp_loss {:.4}",
            config.adapter.kind, report.param_count, last.test_loss, last.test_acc, last.exp_loss
        );
    }
    Ok(())
}

/// Optional overrides merged onto placeholder bound constants.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsFile {
    pub l_ce: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub l_sigma: Option<f64>,
    pub eps_tt: Option<f64>,
    pub c0: Option<f64>,
    pub lambda_min: Option<f64>,
    pub t: Option<f64>,
    pub b: Option<f64>,
    pub l_ell: Option<f64>,
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
    pub n: Option<usize>,
    pub delta: Option<f64>,
    pub empirical_risk: Option<f64>,
    /// Hidden width for the approximation bound.
    pub m_width: Option<usize>,
}

impl ConstantsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))
    }

    pub fn merged(&self) -> (BoundInputs, usize) {
        let mut i = BoundInputs::placeholder();
        if let Some(v) = self.l_ce {
            i.l_ce = v;
        }
        if let Some(v) = self.c1 {
            i.c1 = v;
        }
        if let Some(v) = self.c2 {
            i.c2 = v;
        }
        if let Some(v) = self.l_sigma {
            i.l_sigma = v;
        }
        if let Some(v) = self.eps_tt {
            i.eps_tt = v;
        }
        if let Some(v) = self.c0 {
            i.c0 = v;
        }
        if let Some(v) = self.lambda_min {
            i.lambda_min = v;
        }
        if let Some(v) = self.t {
            i.t = v;
        }
        if let Some(v) = self.b {
            i.b = v;
        }
        if let Some(v) = self.l_ell {
            i.l_ell = v;
        }
        if let Some(v) = self.kappa {
            i.kappa = v;
        }
        if let Some(v) = self.gamma {
            i.gamma = v;
        }
        if let Some(v) = self.n {
            i.n = v;
        }
        if let Some(v) = self.delta {
            i.delta = v;
        }
        if let Some(v) = self.empirical_risk {
            i.empirical_risk = v;
        }
        (i, self.m_width.unwrap_or(16))
    }
}

#[derive(Serialize)]
struct BoundsReport {
    approximation: f64,
    optimization: f64,
    generalization: f64,
    rademacher: f64,
    constants: BoundInputs,
    m_width: usize,
}

fn evaluate_bounds(inputs: &BoundInputs, m_width: usize) -> Result<BoundsReport> {
    inputs.validate()?;
    Ok(BoundsReport {
        approximation: approximation_bound(inputs, m_width)?,
        optimization: optimization_bound(inputs.c0, inputs.lambda_min, inputs.t)?,
        generalization: generalization_bound(inputs)?,
        rademacher: rademacher_bound(inputs.b, inputs.kappa, inputs.n)?,
        constants: inputs.clone(),
        m_width,
    })
}

/// `bounds`: evaluate the three calculators on supplied constants.
pub fn cmd_bounds(constants: &Path, out_dir: &Path) -> Result<()> {
    let (inputs, m_width) = ConstantsFile::load(constants)?.merged();
    let report = evaluate_bounds(&inputs, m_width)?;
    ensure_dir(out_dir)?;
    let json = to_json_pretty(&report);
    write_file(&out_dir.join("bounds.json"), json.as_bytes())?;
    print!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct NtkReport {
    samples: usize,
    output_index: usize,
    adapters: Vec<SpectralReport>,
    bounds: BoundsReport,
}

/// `ntk`: spectral statistics plus bound evaluations.
///
/// With `budget_trio` the report covers the matched three-adapter set for the
/// configured task; otherwise just the configured adapter. Measured
/// `lambda_min` and `kappa` of the first row feed the bound calculators
/// unless the constants file pins them.
pub fn cmd_ntk(
    config: &ExperimentConfig,
    out_dir: &Path,
    sample_count: usize,
    output_index: usize,
    constants: Option<&Path>,
    budget_trio: bool,
) -> Result<()> {
    if sample_count == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let backbone = config.build_backbone()?;
    let dataset = config.build_dataset()?;
    if sample_count > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "sample_count {sample_count} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let indices: Vec<usize> = (0..sample_count).collect();
    let (samples, _) = dataset.gather(&indices);

    let adapters: Vec<(String, Adapter)> = if budget_trio {
        match config.task.name.as_str() {
            "quantum-dot" => presets::qd_trio(config.adapter.seed)?,
            "wide-output" => {
                let (lora, tg) = presets::wide_pair(config.adapter.seed)?;
                vec![("lora".to_string(), lora), ("tensor-guide".to_string(), tg)]
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "no budget trio for task {other:?}"
                )))
            }
        }
    } else {
        vec![(
            config.adapter.kind.clone(),
            build_adapter(&config.adapter, config.backbone.d, config.backbone.q)?,
        )]
    };

    let reports = ntk_compare(&adapters, &backbone, &samples, output_index)?;

    let overrides = match constants {
        Some(path) => ConstantsFile::load(path)?,
        None => ConstantsFile::default(),
    };
    let (mut inputs, m_width) = overrides.merged();
    if overrides.lambda_min.is_none() {
        inputs.lambda_min = reports[0].lambda_min.max(0.0);
    }
    if overrides.kappa.is_none() {
        inputs.kappa = reports[0].kappa;
    }
    if overrides.n.is_none() {
        inputs.n = sample_count;
    }
    let bounds = evaluate_bounds(&inputs, m_width)?;

    let report = NtkReport {
        samples: sample_count,
        output_index,
        adapters: reports,
        bounds,
    };
    ensure_dir(out_dir)?;
    let json = to_json_pretty(&report);
    write_file(&out_dir.join("ntk.json"), json.as_bytes())?;
    print!("{json}");
    Ok(())
}

/// `params`: counts and symbolic complexity classes.
pub fn cmd_params(
    config: Option<&ExperimentConfig>,
    shape_names: &[String],
    catalog: bool,
    lora_dims: Option<(usize, usize, usize)>,
) -> Result<()> {
    println!("{:<24} {:>12}  {}", "name", "params", "complexity");
    let mut printed = false;
    if let Some(cfg) = config {
        let adapter = cfg.build_adapter()?;
        let class = match adapter {
            Adapter::Lora(_) => "O(r(D+Q))",
            Adapter::TtLora(_) => "O(2K r_tt^2 H)",
            Adapter::TensorGuide(_) => "O(K r_tt^2 H)",
        };
        println!(
            "{:<24} {:>12}  {}",
            cfg.adapter.kind,
            adapter.param_count(),
            class
        );
        printed = true;
    }
    for name in shape_names {
        let preset = presets::find_shape_preset(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape preset {name:?}")))?;
        print_shape_row(&preset);
        printed = true;
    }
    if catalog {
        for preset in presets::shape_presets() {
            print_shape_row(&preset);
        }
        printed = true;
    }
    if let Some((d, q, r)) = lora_dims {
        println!("{:<24} {:>12}  O(r(D+Q))", format!("lora{d}x{q}-r{r}"), r * (d + q));
        printed = true;
    }
    if !printed {
        return Err(Error::InvalidArgument(
            "nothing to account: pass --config, --preset, --catalog, or --lora".into(),
        ));
    }
    Ok(())
}

fn print_shape_row(preset: &presets::ShapePreset) {
    let count = preset
        .core_param_count()
        .map(|c| c.to_string())
        .unwrap_or_else(|| "-".to_string());
    let status = if preset.enabled {
        String::new()
    } else {
        format!("  [disabled: {}]", preset.note.unwrap_or(""))
    };
    println!(
        "{:<24} {:>12}  O(K r_tt^2 H){status}",
        preset.name, count
    );
}

#[derive(Serialize)]
struct CompareRow {
    name: String,
    param_count: usize,
    mean_test_loss: f64,
    mean_test_acc: f64,
    mean_exp_loss: f64,
    per_seed: Vec<SeedOutcome>,
}

#[derive(Serialize)]
struct SeedOutcome {
    seed: u64,
    test_loss: f64,
    test_acc: f64,
    exp_loss: f64,
}

/// `compare`: run the budget-matched adapter set on one task and emit a
/// side-by-side summary.
pub fn cmd_compare(config: &ExperimentConfig, out_dir: &Path, seeds: &[u64]) -> Result<()> {
    let named: Vec<(String, ExperimentConfig)> = match config.task.name.as_str() {
        "quantum-dot" => ["qd-lora", "qd-tt-lora", "qd-tensor-guide"]
            .iter()
            .map(|p| {
                let mut c = ExperimentConfig::preset(p).expect("built-in preset");
                c.task = config.task.clone();
                c.backbone = config.backbone.clone();
                c.train = config.train.clone();
                (c.adapter.kind.clone(), c)
            })
            .collect(),
        "wide-output" => ["wide-lora", "wide-tensor-guide"]
            .iter()
            .map(|p| {
                let mut c = ExperimentConfig::preset(p).expect("built-in preset");
                c.task = config.task.clone();
                c.backbone = config.backbone.clone();
                c.train = config.train.clone();
                (c.adapter.kind.clone(), c)
            })
            .collect(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "no comparison set for task {other:?}"
            )))
        }
    };

    let dataset = config.build_dataset()?;
    let mut rows = Vec::new();
    for (name, cfg) in &named {
        let mut per_seed = Vec::new();
        let mut param_count = 0;
        for &seed in seeds {
            let (adapter, report) = run_once(cfg, &dataset, seed)?;
            param_count = adapter.param_count();
            let last = report.final_metrics();
            per_seed.push(SeedOutcome {
                seed,
                test_loss: last.test_loss,
                test_acc: last.test_acc,
                exp_loss: last.exp_loss,
            });
        }
        let k = per_seed.len() as f64;
        rows.push(CompareRow {
            name: name.clone(),
            param_count,
            mean_test_loss: per_seed.iter().map(|s| s.test_loss).sum::<f64>() / k,
            mean_test_acc: per_seed.iter().map(|s| s.test_acc).sum::<f64>() / k,
            mean_exp_loss: per_seed.iter().map(|s| s.exp_loss).sum::<f64>() / k,
            per_seed,
        });
    }

    println!(
        "{:<16} {:>8} {:>12} {:>12} {:>12}",
        "model", "params", "loss", "accuracy", "exp_loss"
    );
    for row in &rows {
        println!(
            "{:<16} {:>8} {:>12.6} {:>12.4} {:>12.4}",
            row.name, row.param_count, row.mean_test_loss, row.mean_test_acc, row.mean_exp_loss
        );
    }
    ensure_dir(out_dir)?;
    write_file(
        &out_dir.join("compare.json"),
        to_json_pretty(&rows).as_bytes(),
    )?;
    Ok(())
}

pub fn parse_seeds(raw: &str) -> Result<Vec<u64>> {
    let seeds: std::result::Result<Vec<u64>, _> =
        raw.split(',').map(|s| s.trim().parse::<u64>()).collect();
    let seeds = seeds.map_err(|_| Error::InvalidArgument(format!("bad seed list {raw:?}")))?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("empty seed list".into()));
    }
    Ok(seeds)
}

