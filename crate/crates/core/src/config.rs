//! Run configuration: a flat `key = value` text format with sections.
//!
//! Lines are `key = value` pairs under `[section]` headers; `#` starts a
//! comment. Unknown sections or keys are configuration errors. Every key has
//! a default; the reference file produced by [`RunConfig::reference_text`]
//! documents all of them.

use crate::channel::ChannelKind;
use crate::codec::CodecDims;
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub seed: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub codec_train: usize,
    pub agent_train: usize,
    pub test: usize,
    /// Projection count of the perceptual score.
    pub feature_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    /// Semantic feature length K.
    pub feature_dim: usize,
    /// Check codeword length k.
    pub check_dim: usize,
    pub hidden_main: usize,
    pub hidden_aux: usize,
    pub hidden_est: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr_db_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub kl_weight: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub epochs: usize,
    pub hidden: usize,
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    /// Starting entropy bonus, decayed linearly to zero over training.
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub ppo_epochs: usize,
    pub minibatch: usize,
    pub threshold_percentile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub seed: u64,
    pub ratio: f64,
    pub ratio2: f64,
    pub threshold_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub codec: CodecConfig,
    pub channel: ChannelConfig,
    pub train: TrainConfig,
    pub agent: AgentConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig {
                seed: 7,
                channels: 1,
                height: 16,
                width: 16,
                codec_train: 4096,
                agent_train: 1024,
                test: 1024,
                feature_count: 128,
            },
            codec: CodecConfig {
                feature_dim: 64,
                check_dim: 16,
                hidden_main: 256,
                hidden_aux: 256,
                hidden_est: 512,
            },
            channel: ChannelConfig {
                kind: ChannelKind::Awgn,
                snr_db_grid: vec![0.0, 1.0, 4.0, 7.0, 10.0, 13.0],
            },
            train: TrainConfig {
                stage1_epochs: 200,
                stage2_epochs: 200,
                stage3_epochs: 200,
                batch: 64,
                lr: 1e-4,
                kl_weight: 1e-4,
                ratio_min: 0.1,
                ratio_max: 1.0,
            },
            agent: AgentConfig {
                epochs: 200,
                hidden: 64,
                lr: 1e-4,
                gamma: 0.99,
                lambda: 0.95,
                clip_eps: 0.2,
                entropy_coef: 0.01,
                value_coef: 0.5,
                ppo_epochs: 4,
                minibatch: 256,
                threshold_percentile: 0.90,
            },
            eval: EvalConfig { seed: 1234, ratio: 0.5, ratio2: 0.5, threshold_scale: 1.0 },
        }
    }
}

impl RunConfig {
    pub fn codec_dims(&self) -> CodecDims {
        CodecDims {
            channels: self.data.channels,
            height: self.data.height,
            width: self.data.width,
            feature_dim: self.codec.feature_dim,
            check_dim: self.codec.check_dim,
            hidden_main: self.codec.hidden_main,
            hidden_aux: self.codec.hidden_aux,
            hidden_est: self.codec.hidden_est,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(stripped) = line.strip_prefix('[') {
                let name = stripped
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: malformed section header", lineno + 1)))?;
                match name {
                    "data" | "codec" | "channel" | "train" | "agent" | "eval" => {
                        section = name.to_string();
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "line {}: unknown section [{}]",
                            lineno + 1,
                            other
                        )))
                    }
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value).map_err(|e| {
                Error::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
        }
        match (section, key) {
            ("data", "seed") => self.data.seed = num(key, value)?,
            ("data", "channels") => self.data.channels = num(key, value)?,
            ("data", "height") => self.data.height = num(key, value)?,
            ("data", "width") => self.data.width = num(key, value)?,
            ("data", "codec_train") => self.data.codec_train = num(key, value)?,
            ("data", "agent_train") => self.data.agent_train = num(key, value)?,
            ("data", "test") => self.data.test = num(key, value)?,
            ("data", "feature_count") => self.data.feature_count = num(key, value)?,
            ("codec", "feature_dim") => self.codec.feature_dim = num(key, value)?,
            ("codec", "check_dim") => self.codec.check_dim = num(key, value)?,
            ("codec", "hidden_main") => self.codec.hidden_main = num(key, value)?,
            ("codec", "hidden_aux") => self.codec.hidden_aux = num(key, value)?,
            ("codec", "hidden_est") => self.codec.hidden_est = num(key, value)?,
            ("channel", "kind") => self.channel.kind = value.parse()?,
            ("channel", "snr_db_grid") => {
                let grid: Result<Vec<f64>> = value
                    .split(',')
                    .map(|s| num::<f64>("snr_db_grid", s.trim()))
                    .collect();
                self.channel.snr_db_grid = grid?;
            }
            ("train", "stage1_epochs") => self.train.stage1_epochs = num(key, value)?,
            ("train", "stage2_epochs") => self.train.stage2_epochs = num(key, value)?,
            ("train", "stage3_epochs") => self.train.stage3_epochs = num(key, value)?,
            ("train", "batch") => self.train.batch = num(key, value)?,
            ("train", "lr") => self.train.lr = num(key, value)?,
            ("train", "kl_weight") => self.train.kl_weight = num(key, value)?,
            ("train", "ratio_min") => self.train.ratio_min = num(key, value)?,
            ("train", "ratio_max") => self.train.ratio_max = num(key, value)?,
            ("agent", "epochs") => self.agent.epochs = num(key, value)?,
            ("agent", "hidden") => self.agent.hidden = num(key, value)?,
            ("agent", "lr") => self.agent.lr = num(key, value)?,
            ("agent", "gamma") => self.agent.gamma = num(key, value)?,
            ("agent", "lambda") => self.agent.lambda = num(key, value)?,
            ("agent", "clip_eps") => self.agent.clip_eps = num(key, value)?,
            ("agent", "entropy_coef") => self.agent.entropy_coef = num(key, value)?,
            ("agent", "value_coef") => self.agent.value_coef = num(key, value)?,
            ("agent", "ppo_epochs") => self.agent.ppo_epochs = num(key, value)?,
            ("agent", "minibatch") => self.agent.minibatch = num(key, value)?,
            ("agent", "threshold_percentile") => {
                self.agent.threshold_percentile = num(key, value)?
            }
            ("eval", "seed") => self.eval.seed = num(key, value)?,
            ("eval", "ratio") => self.eval.ratio = num(key, value)?,
            ("eval", "ratio2") => self.eval.ratio2 = num(key, value)?,
            ("eval", "threshold_scale") => self.eval.threshold_scale = num(key, value)?,
            ("", k) => return Err(Error::Config(format!("key '{k}' appears before any section"))),
            (s, k) => return Err(Error::Config(format!("unknown key '{k}' in section [{s}]"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.data.channels == 0 || self.data.height == 0 || self.data.width == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if self.codec.feature_dim == 0 || self.codec.check_dim == 0 {
            return Err(Error::Config("feature_dim and check_dim must be positive".into()));
        }
        if self.channel.snr_db_grid.is_empty() {
            return Err(Error::Config("snr_db_grid must not be empty".into()));
        }
        if !(self.train.ratio_min > 0.0
            && self.train.ratio_min <= self.train.ratio_max
            && self.train.ratio_max <= 1.0)
        {
            return Err(Error::Config(format!(
                "ratio range [{}, {}] must satisfy 0 < min <= max <= 1",
                self.train.ratio_min, self.train.ratio_max
            )));
        }
        for (name, r) in [("eval.ratio", self.eval.ratio), ("eval.ratio2", self.eval.ratio2)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("{name} = {r} must be in (0, 1]")));
            }
        }
        if !(self.agent.threshold_percentile > 0.0 && self.agent.threshold_percentile < 1.0) {
            return Err(Error::Config("threshold_percentile must be in (0,1)".into()));
        }
        Ok(())
    }

    /// The documented defaults file. Parsing this text yields `Self::default`.
    pub fn reference_text() -> String {
        let d = RunConfig::default();
        format!(
            "\
# Reference configuration. Every key is listed with its default value.
# Lines starting with '#' are comments.

[data]
seed = {seed}                 # master seed for data generation and model init
channels = {channels}
height = {height}
width = {width}
codec_train = {codec_train}      # images in the codec training split
agent_train = {agent_train}      # separate split used only by agent training
test = {test}
feature_count = {feature_count}     # projections in the perceptual score

[codec]
feature_dim = {feature_dim}        # semantic feature length K
check_dim = {check_dim}           # check codeword length k
hidden_main = {hidden_main}       # encoder/decoder hidden width
hidden_aux = {hidden_aux}        # check encoder hidden width
hidden_est = {hidden_est}        # quality estimator hidden width

[channel]
kind = {kind}             # awgn | rayleigh
snr_db_grid = {grid}

[train]
stage1_epochs = {s1}
stage2_epochs = {s2}
stage3_epochs = {s3}
batch = {batch}
lr = {lr}
kl_weight = {klw}       # weight of the KL term in the bottleneck loss
ratio_min = {rmin}         # compression ratio sampled uniformly per batch
ratio_max = {rmax}

[agent]
epochs = {aepochs}
hidden = {ahidden}             # width of the state-group projection layers
lr = {alr}
gamma = {agamma}
lambda = {alambda}
clip_eps = {aclip}
entropy_coef = {aent}     # decayed linearly to zero over training
value_coef = {avc}
ppo_epochs = {appo}
minibatch = {amb}
threshold_percentile = {athp}   # of ground-truth scores on the agent split

[eval]
seed = {eseed}
ratio = {eratio}
ratio2 = {eratio2}
threshold_scale = {escale}   # multiplier on the threshold for the rule-based policy
",
            seed = d.data.seed,
            channels = d.data.channels,
            height = d.data.height,
            width = d.data.width,
            codec_train = d.data.codec_train,
            agent_train = d.data.agent_train,
            test = d.data.test,
            feature_count = d.data.feature_count,
            feature_dim = d.codec.feature_dim,
            check_dim = d.codec.check_dim,
            hidden_main = d.codec.hidden_main,
            hidden_aux = d.codec.hidden_aux,
            hidden_est = d.codec.hidden_est,
            kind = d.channel.kind.tag(),
            grid = d
                .channel
                .snr_db_grid
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(","),
            s1 = d.train.stage1_epochs,
            s2 = d.train.stage2_epochs,
            s3 = d.train.stage3_epochs,
            batch = d.train.batch,
            lr = d.train.lr,
            klw = d.train.kl_weight,
            rmin = d.train.ratio_min,
            rmax = d.train.ratio_max,
            aepochs = d.agent.epochs,
            ahidden = d.agent.hidden,
            alr = d.agent.lr,
            agamma = d.agent.gamma,
            alambda = d.agent.lambda,
            aclip = d.agent.clip_eps,
            aent = d.agent.entropy_coef,
            avc = d.agent.value_coef,
            appo = d.agent.ppo_epochs,
            amb = d.agent.minibatch,
            athp = d.agent.threshold_percentile,
            eseed = d.eval.seed,
            eratio = d.eval.ratio,
            eratio2 = d.eval.ratio2,
            escale = d.eval.threshold_scale,
        )
    }
}
