//! Experiment configuration: JSON file, named presets, and flag overrides.

use serde::{Deserialize, Serialize};
use tensorguide::adapters::{Activation, Adapter, TensorGuideAdapter, TtLoraAdapter};
use tensorguide::adapters::LoraAdapter;
use tensorguide::presets;
use tensorguide::tasks::{self, Dataset};
use tensorguide::train::{Optimizer, TrainConfig};
use tensorguide::{Error, FrozenBackbone, Result, TTFormat};

/// Adapter section of a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub kind: String,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub tt_in_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub tt_out_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub tt_ranks: Option<Vec<usize>>,
    #[serde(default)]
    pub tt1_in_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub tt1_out_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub tt1_ranks: Option<Vec<usize>>,
    #[serde(default)]
    pub tt2_in_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub tt2_out_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub tt2_ranks: Option<Vec<usize>>,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default)]
    pub resample_per_batch: bool,
    #[serde(default)]
    pub replace_head: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_activation() -> String {
    "relu".to_string()
}

/// Backbone section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Task section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub n: usize,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Raw input width of the wide-output task.
    #[serde(default)]
    pub d_raw: Option<usize>,
    /// Output classes of the wide-output task.
    #[serde(default)]
    pub q: Option<usize>,
}

fn default_train_fraction() -> f64 {
    0.8
}

/// Training section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_optimizer() -> String {
    "adam".to_string()
}

fn default_true() -> bool {
    true
}

/// Output section.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
}

/// One experiment: adapter, backbone, task, training, output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub adapter: AdapterConfig,
    pub backbone: BackboneConfig,
    pub task: TaskConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))
    }

    /// Named full-experiment presets.
    pub fn preset(name: &str) -> Result<Self> {
        let qd_task = TaskConfig {
            name: "quantum-dot".into(),
            n: 1000,
            noise_level: 0.3,
            seed: 13,
            train_fraction: 0.8,
            d_raw: None,
            q: None,
        };
        let qd_backbone = BackboneConfig {
            p: presets::QD_INPUT_LEN,
            d: presets::QD_FEATURE_DIM,
            q: presets::QD_CLASSES,
            seed: 11,
        };
        let qd_train = TrainSection {
            optimizer: "adam".into(),
            lr: 3e-3,
            epochs: 15,
            batch: 16,
            seed: 17,
            shuffle: true,
        };
        let wide_task = TaskConfig {
            name: "wide-output".into(),
            n: 1000,
            noise_level: 0.3,
            seed: 13,
            train_fraction: 0.8,
            d_raw: Some(presets::WIDE_INPUT_LEN),
            q: Some(presets::WIDE_CLASSES),
        };
        let wide_backbone = BackboneConfig {
            p: presets::WIDE_INPUT_LEN,
            d: presets::WIDE_FEATURE_DIM,
            q: presets::WIDE_CLASSES,
            seed: 11,
        };
        let wide_train = TrainSection {
            optimizer: "adam".into(),
            lr: 3e-3,
            epochs: 30,
            batch: 16,
            seed: 17,
            shuffle: true,
        };
        let base = |adapter: AdapterConfig,
                    backbone: BackboneConfig,
                    task: TaskConfig,
                    train: TrainSection| ExperimentConfig {
            adapter,
            backbone,
            task,
            train,
            output: OutputConfig::default(),
        };
        match name {
            "qd-lora" => Ok(base(
                AdapterConfig {
                    r: Some(4),
                    ..lora_stub()
                },
                qd_backbone,
                qd_task,
                qd_train,
            )),
            "qd-tt-lora" => Ok(base(
                AdapterConfig {
                    tt1_in_dims: Some(vec![8, 8]),
                    tt1_out_dims: Some(vec![2, 2]),
                    tt1_ranks: Some(vec![1, 8, 1]),
                    tt2_in_dims: Some(vec![2, 2]),
                    tt2_out_dims: Some(vec![2, 1]),
                    tt2_ranks: Some(vec![1, 1, 1]),
                    ..tt_lora_stub()
                },
                qd_backbone,
                qd_task,
                qd_train,
            )),
            "qd-tensor-guide" => Ok(base(
                AdapterConfig {
                    m: Some(16),
                    tt_in_dims: Some(vec![1, 2, 2, 1]),
                    tt_out_dims: Some(vec![2, 4, 11, 12]),
                    tt_ranks: Some(vec![1, 2, 4, 2, 1]),
                    ..tg_stub()
                },
                qd_backbone,
                qd_task,
                qd_train,
            )),
            "qd-tg-m16" => Ok(base(
                AdapterConfig {
                    m: Some(16),
                    tt_in_dims: Some(vec![1, 2, 2, 1]),
                    tt_out_dims: Some(vec![8, 4, 11, 3]),
                    tt_ranks: Some(vec![1, 2, 4, 1, 1]),
                    ..tg_stub()
                },
                qd_backbone,
                qd_task,
                qd_train,
            )),
            "qd-tg-m64" => Ok(base(
                AdapterConfig {
                    m: Some(64),
                    tt_in_dims: Some(vec![1, 2, 2, 1]),
                    tt_out_dims: Some(vec![8, 4, 11, 12]),
                    tt_ranks: Some(vec![1, 2, 4, 1, 1]),
                    ..tg_stub()
                },
                qd_backbone,
                qd_task,
                qd_train,
            )),
            "wide-lora" => Ok(base(
                AdapterConfig {
                    r: Some(1),
                    ..lora_stub()
                },
                wide_backbone,
                wide_task,
                wide_train,
            )),
            "wide-tensor-guide" => Ok(base(
                AdapterConfig {
                    m: Some(4),
                    tt_in_dims: Some(vec![1, 2, 2, 1]),
                    tt_out_dims: Some(vec![29, 4, 4, 2]),
                    tt_ranks: Some(vec![1, 2, 2, 2, 1]),
                    // The wide-output regime swaps the frozen head for the
                    // generated MLP.
                    replace_head: true,
                    ..tg_stub()
                },
                wide_backbone,
                wide_task,
                wide_train,
            )),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset {other:?}; known presets: qd-lora, qd-tt-lora, qd-tensor-guide, qd-tg-m16, qd-tg-m64, wide-lora, wide-tensor-guide"
            ))),
        }
    }

    /// Build the frozen backbone.
    pub fn build_backbone(&self) -> Result<FrozenBackbone> {
        tasks::make_backbone(
            self.backbone.p,
            self.backbone.d,
            self.backbone.q,
            self.backbone.seed,
        )
    }

    /// Build the adapter against the configured backbone dims.
    pub fn build_adapter(&self) -> Result<Adapter> {
        build_adapter(&self.adapter, self.backbone.d, self.backbone.q)
    }

    /// Generate the configured dataset (unsplit).
    pub fn build_dataset(&self) -> Result<Dataset> {
        match self.task.name.as_str() {
            "quantum-dot" => {
                if self.backbone.p != tasks::IMAGE_PIXELS {
                    return Err(Error::InvalidArgument(format!(
                        "quantum-dot inputs are {} pixels but backbone.p = {}",
                        tasks::IMAGE_PIXELS,
                        self.backbone.p
                    )));
                }
                tasks::gen_quantum_dot(self.task.n, self.task.noise_level, self.task.seed)
            }
            "wide-output" => {
                let d_raw = self.task.d_raw.unwrap_or(self.backbone.p);
                let q = self.task.q.unwrap_or(self.backbone.q);
                if d_raw != self.backbone.p {
                    return Err(Error::InvalidArgument(format!(
                        "task d_raw {} must match backbone.p {}",
                        d_raw, self.backbone.p
                    )));
                }
                if q != self.backbone.q {
                    return Err(Error::InvalidArgument(format!(
                        "task q {} must match backbone.q {}",
                        q, self.backbone.q
                    )));
                }
                tasks::gen_wide_output(self.task.n, d_raw, q, self.task.noise_level, self.task.seed)
            }
            other => Err(Error::InvalidArgument(format!(
                "unknown task {other:?}; known tasks: quantum-dot, wide-output"
            ))),
        }
    }

    /// The trainer section as a [`TrainConfig`].
    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.train.optimizer.as_str() {
            "sgd" => Optimizer::Sgd,
            "adam" => Optimizer::Adam,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown optimizer {other:?}"
                )))
            }
        };
        let config = TrainConfig {
            optimizer,
            learning_rate: self.train.lr,
            epochs: self.train.epochs,
            batch_size: self.train.batch,
            seed: self.train.seed,
            shuffle: self.train.shuffle,
        };
        config.validate()?;
        Ok(config)
    }

    /// Resolve the output directory: flag > TTGUIDE_OUT > config > "out".
    pub fn output_dir(&self, flag: Option<&str>) -> std::path::PathBuf {
        if let Some(dir) = flag {
            return dir.into();
        }
        if let Ok(dir) = std::env::var("TTGUIDE_OUT") {
            if !dir.is_empty() {
                return dir.into();
            }
        }
        self.output.dir.clone().unwrap_or_else(|| "out".into()).into()
    }
}

fn lora_stub() -> AdapterConfig {
    AdapterConfig {
        kind: "lora".into(),
        r: None,
        m: None,
        tt_in_dims: None,
        tt_out_dims: None,
        tt_ranks: None,
        tt1_in_dims: None,
        tt1_out_dims: None,
        tt1_ranks: None,
        tt2_in_dims: None,
        tt2_out_dims: None,
        tt2_ranks: None,
        activation: "relu".into(),
        resample_per_batch: false,
        replace_head: false,
        seed: 7,
    }
}

fn tt_lora_stub() -> AdapterConfig {
    AdapterConfig {
        kind: "tt-lora".into(),
        ..lora_stub()
    }
}

fn tg_stub() -> AdapterConfig {
    AdapterConfig {
        kind: "tensor-guide".into(),
        ..lora_stub()
    }
}

/// Construct an adapter from its config section and the head dimensions.
pub fn build_adapter(cfg: &AdapterConfig, d: usize, q: usize) -> Result<Adapter> {
    match cfg.kind.as_str() {
        "lora" => {
            let r = cfg
                .r
                .ok_or_else(|| Error::InvalidArgument("lora requires r".into()))?;
            Ok(Adapter::Lora(LoraAdapter::init(d, q, r, cfg.seed)?))
        }
        "tt-lora" => {
            let f1 = TTFormat::new(
                need(&cfg.tt1_in_dims, "tt1_in_dims")?,
                need(&cfg.tt1_out_dims, "tt1_out_dims")?,
                need(&cfg.tt1_ranks, "tt1_ranks")?,
            )?;
            let f2 = TTFormat::new(
                need(&cfg.tt2_in_dims, "tt2_in_dims")?,
                need(&cfg.tt2_out_dims, "tt2_out_dims")?,
                need(&cfg.tt2_ranks, "tt2_ranks")?,
            )?;
            if f1.in_len() != d {
                return Err(Error::InvalidArgument(format!(
                    "tt1 consumes {} features but backbone provides {d}",
                    f1.in_len()
                )));
            }
            if f2.out_len() != q {
                return Err(Error::InvalidArgument(format!(
                    "tt2 emits {} classes but backbone expects {q}",
                    f2.out_len()
                )));
            }
            Ok(Adapter::TtLora(TtLoraAdapter::init(&f1, &f2, cfg.seed)?))
        }
        "tensor-guide" => {
            let format = TTFormat::new(
                need(&cfg.tt_in_dims, "tt_in_dims")?,
                need(&cfg.tt_out_dims, "tt_out_dims")?,
                need(&cfg.tt_ranks, "tt_ranks")?,
            )?;
            let m = cfg
                .m
                .ok_or_else(|| Error::InvalidArgument("tensor-guide requires m".into()))?;
            let activation = Activation::parse(&cfg.activation)?;
            let mut adapter =
                TensorGuideAdapter::init(&format, d, q, m, activation, cfg.seed)?;
            adapter.resample_per_batch = cfg.resample_per_batch;
            adapter.replace_head = cfg.replace_head;
            Ok(Adapter::TensorGuide(adapter))
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown adapter kind {other:?}; known kinds: lora, tt-lora, tensor-guide"
        ))),
    }
}

fn need(field: &Option<Vec<usize>>, name: &str) -> Result<Vec<usize>> {
    field
        .clone()
        .ok_or_else(|| Error::InvalidArgument(format!("missing {name}")))
}
