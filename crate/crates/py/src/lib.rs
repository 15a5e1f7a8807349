//! Python bindings for the semantic-HARQ link simulator.
//!
//! Exposes the deterministic building blocks (data generation, metrics,
//! masking, channel, reward, GAE, tail statistics, wire frames) plus a
//! checkpoint-backed link runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

use s3charq::agent;
use s3charq::channel::{ChannelKind, ChannelRealization};
use s3charq::codec;
use s3charq::config::RunConfig;
use s3charq::data;
use s3charq::error::Error;
use s3charq::eval;
use s3charq::frame::{Frame, FrameRole};
use s3charq::harq;
use s3charq::rng::{purpose, stream_rng};
use s3charq::training;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Dimension(_) | Error::Domain(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Deterministic synthetic image as a flat pixel list (channel-first).
#[pyfunction]
fn generate_image(seed: u64, index: u64, c: usize, h: usize, w: usize) -> Vec<f64> {
    data::generate_image(seed, index, c, h, w).pixels().to_vec()
}

/// PSNR in dB (peak 1.0, capped at 99).
#[pyfunction]
fn psnr(p: Vec<f64>, q: Vec<f64>, c: usize, h: usize, w: usize) -> PyResult<f64> {
    let a = data::Image::new(c, h, w, p).map_err(err)?;
    let b = data::Image::new(c, h, w, q).map_err(err)?;
    data::psnr(&a, &b).map_err(err)
}

/// Seeded random-projection perceptual score, bounded [0,1), lower is better.
#[pyclass]
struct PerceptualProjector {
    inner: data::PerceptualProjector,
    dims: (usize, usize, usize),
}

#[pymethods]
impl PerceptualProjector {
    #[new]
    fn new(seed: u64, feature_count: usize, c: usize, h: usize, w: usize) -> Self {
        PerceptualProjector {
            inner: data::PerceptualProjector::new(seed, feature_count, c, h, w),
            dims: (c, h, w),
        }
    }

    fn score(&self, p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
        let (c, h, w) = self.dims;
        let a = data::Image::new(c, h, w, p).map_err(err)?;
        let b = data::Image::new(c, h, w, q).map_err(err)?;
        self.inner.score(&a, &b).map_err(err)
    }
}

#[pyfunction]
fn snr_to_noise_std(snr_db: f64) -> f64 {
    s3charq::channel::snr_to_noise_std(snr_db)
}

/// One channel pass over the first `active` symbols (`kind`: awgn | rayleigh).
#[pyfunction]
fn transmit(symbols: Vec<f64>, active: usize, kind: &str, snr_db: f64, seed: u64) -> PyResult<Vec<f64>> {
    let kind: ChannelKind = kind.parse().map_err(err)?;
    let mut rng = stream_rng(seed, purpose::CHANNEL, 0);
    let ch = ChannelRealization::draw(kind, snr_db, &mut rng);
    Ok(ch.transmit(&symbols, active, &mut rng))
}

/// Keep the first ceil(K*ratio) features; returns (masked, active_count).
#[pyfunction]
fn adaptive_mask(x: Vec<f64>, ratio: f64) -> PyResult<(Vec<f64>, usize)> {
    let feature = codec::SemanticFeature { values: x };
    let m = codec::adaptive_mask(&feature, ratio).map_err(err)?;
    Ok((m.values, m.active_count))
}

/// Returns (normalized, scale) with unit mean square over the active prefix.
#[pyfunction]
fn power_normalize(values: Vec<f64>, active: usize) -> PyResult<(Vec<f64>, f64)> {
    codec::power_normalize(&values, active).map_err(err)
}

/// Closed-form KL of N(mu, diag(sigma^2)) from N(0, I).
#[pyfunction]
fn kl_to_standard_normal(mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<f64> {
    codec::kl_to_standard_normal(&mu, &sigma).map_err(err)
}

/// The sparse retransmission reward table.
#[pyfunction]
#[pyo3(signature = (score_r1, score_r2, action, threshold))]
fn reward(score_r1: f64, score_r2: Option<f64>, action: u8, threshold: f64) -> PyResult<f64> {
    agent::reward(score_r1, score_r2, action, threshold).map_err(err)
}

/// Generalized advantage estimation; returns (advantages, returns).
#[pyfunction]
fn gae(
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    gamma: f64,
    lambda: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(PyValueError::new_err("rewards, values and dones must have equal length"));
    }
    let mut buffer = agent::RolloutBuffer::new();
    for i in 0..rewards.len() {
        let state = agent::AgentState::from_round(0.0, 1.0, 0.0, 0.0, vec![]);
        buffer.push(state, 0, 0.0, rewards[i], values[i], dones[i]);
    }
    Ok(agent::gae(&buffer, gamma, lambda))
}

/// Tail PSNR: the value exceeded by a fraction q of samples.
#[pyfunction]
fn percentile_psnr(values: Vec<f64>, q: f64) -> PyResult<f64> {
    eval::percentile_psnr(&values, q).map_err(err)
}

/// The value a fraction q of samples do not exceed (for lower-is-better scores).
#[pyfunction]
fn percentile_upper(values: Vec<f64>, q: f64) -> PyResult<f64> {
    eval::percentile_upper(&values, q).map_err(err)
}

/// Fraction of scores strictly above the threshold.
#[pyfunction]
fn outage(scores: Vec<f64>, threshold: f64) -> PyResult<f64> {
    eval::outage(&scores, threshold).map_err(err)
}

/// Serialize a wire frame (round 1|2, role "jscc"|"check").
#[pyfunction]
fn frame_serialize(
    py: Python<'_>,
    round: u8,
    role: &str,
    ratio: f32,
    snr_db: f32,
    payload: Vec<f32>,
) -> PyResult<Py<PyBytes>> {
    let role = match role {
        "jscc" => FrameRole::Jscc,
        "check" => FrameRole::Check,
        other => return Err(PyValueError::new_err(format!("unknown frame role '{other}'"))),
    };
    let frame = Frame::new(round, role, ratio, snr_db, payload).map_err(err)?;
    Ok(PyBytes::new(py, &frame.serialize()).into())
}

/// Parse a wire frame into a dict.
#[pyfunction]
fn frame_parse(py: Python<'_>, bytes: Vec<u8>) -> PyResult<Py<PyDict>> {
    let frame = Frame::parse(&bytes).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("round", frame.round)?;
    d.set_item(
        "role",
        match frame.role {
            FrameRole::Jscc => "jscc",
            FrameRole::Check => "check",
        },
    )?;
    d.set_item("ratio", frame.ratio)?;
    d.set_item("snr_db", frame.snr_db)?;
    d.set_item("payload", frame.payload.clone())?;
    Ok(d.into())
}

/// A checkpoint-backed link: run single transmissions from Python.
#[pyclass]
struct LinkRunner {
    system: harq::LinkSystem,
    threshold: f64,
    agent: Option<agent::ActorCritic>,
    cfg: RunConfig,
}

#[pymethods]
impl LinkRunner {
    /// Load a trained system checkpoint (stage 2 or later).
    #[staticmethod]
    #[pyo3(signature = (ckpt_path, config_path=None))]
    fn load(ckpt_path: PathBuf, config_path: Option<PathBuf>) -> PyResult<Self> {
        let cfg = match config_path {
            Some(p) => RunConfig::load(&p).map_err(err)?,
            None => RunConfig::default(),
        };
        let loaded = training::load_system(&ckpt_path, &cfg).map_err(err)?;
        let projector = data::PerceptualProjector::new(
            cfg.data.seed,
            cfg.data.feature_count,
            cfg.data.channels,
            cfg.data.height,
            cfg.data.width,
        );
        let threshold = loaded.threshold.ok_or_else(|| {
            PyValueError::new_err("checkpoint has no stored threshold; train stage 4 first")
        })?;
        Ok(LinkRunner {
            system: harq::LinkSystem {
                codec: loaded.codec,
                retx: loaded.retx,
                projector,
                channel_kind: cfg.channel.kind,
            },
            threshold,
            agent: loaded.agent,
            cfg,
        })
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Transmit one image (flat pixel list) under the named policy; returns
    /// the record's scalar fields.
    #[pyo3(signature = (pixels, snr_db, policy="none", seed=0))]
    fn run(
        &self,
        py: Python<'_>,
        pixels: Vec<f64>,
        snr_db: f64,
        policy: &str,
        seed: u64,
    ) -> PyResult<Py<PyDict>> {
        let image = data::Image::new(
            self.cfg.data.channels,
            self.cfg.data.height,
            self.cfg.data.width,
            pixels,
        )
        .map_err(err)?;
        let policy = match policy {
            "none" => harq::Policy::Never,
            "always" => harq::Policy::Always,
            "oracle" => harq::Policy::Oracle,
            "threshold" => harq::Policy::Threshold {
                theta: self.threshold,
                scale: self.cfg.eval.threshold_scale,
            },
            "agent" => {
                let ac = self.agent.as_ref().ok_or_else(|| {
                    PyValueError::new_err("checkpoint has no agent; train stage 4 first")
                })?;
                harq::Policy::Agent { ac, greedy: true }
            }
            other => return Err(PyValueError::new_err(format!("unknown policy '{other}'"))),
        };
        let mut rng = stream_rng(seed, purpose::EVAL, 0);
        let rec = harq::run_transmission(
            &self.system,
            0,
            &image,
            snr_db,
            self.cfg.eval.ratio,
            self.cfg.eval.ratio2,
            &policy,
            self.threshold,
            &mut rng,
        )
        .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("psnr_r1", rec.psnr_r1)?;
        d.set_item("score_r1", rec.score_r1)?;
        d.set_item("estimate_r1", rec.estimate_r1)?;
        d.set_item("action", rec.action)?;
        d.set_item("final_psnr", rec.final_psnr)?;
        d.set_item("final_score", rec.final_score)?;
        d.set_item("symbols_sent", rec.symbols_sent)?;
        d.set_item("reward", rec.reward)?;
        Ok(d.into())
    }

    /// Encode-side inspection: semantic features of one image.
    fn encode(&self, pixels: Vec<f64>, ratio: f64, snr_db: f64) -> PyResult<Vec<f64>> {
        let image = data::Image::new(
            self.cfg.data.channels,
            self.cfg.data.height,
            self.cfg.data.width,
            pixels,
        )
        .map_err(err)?;
        let x = self.system.codec.encode(&image, ratio, snr_db).map_err(err)?;
        Ok(x.values)
    }

    /// Receiver-side quality estimate for given received codewords.
    fn estimate_quality(
        &self,
        z_recv: Vec<f64>,
        check_recv: Vec<f64>,
        snr_db: f64,
        ratio: f64,
    ) -> PyResult<f64> {
        let q = self
            .system
            .codec
            .estimate_quality(&z_recv, &check_recv, snr_db, ratio)
            .map_err(err)?;
        Ok(q.value)
    }
}

/// Check-encode a feature vector with a fresh bundle init (demonstration of
/// the reparameterized codeword; eval mode returns the mean).
#[pyfunction]
fn demo_check_encode(seed: u64, x: Vec<f64>, k: usize, ratio: f64, snr_db: f64) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let dims = codec::CodecDims {
        channels: 1,
        height: 1,
        width: x.len(),
        feature_dim: x.len(),
        check_dim: k,
        hidden_main: 32,
        hidden_aux: 32,
        hidden_est: 32,
    };
    let mut rng = stream_rng(seed, purpose::MODEL_INIT, 0);
    let bundle = codec::CodecBundle::new(dims, &mut rng).map_err(err)?;
    let cw = bundle
        .check_encode::<ChaCha8Rng>(&codec::SemanticFeature { values: x }, ratio, snr_db, None)
        .map_err(err)?;
    Ok((cw.mu, cw.sigma, cw.sample))
}

#[pymodule]
fn s3charq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_image, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(snr_to_noise_std, m)?)?;
    m.add_function(wrap_pyfunction!(transmit, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_mask, m)?)?;
    m.add_function(wrap_pyfunction!(power_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(kl_to_standard_normal, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(gae, m)?)?;
    m.add_function(wrap_pyfunction!(percentile_psnr, m)?)?;
    m.add_function(wrap_pyfunction!(percentile_upper, m)?)?;
    m.add_function(wrap_pyfunction!(outage, m)?)?;
    m.add_function(wrap_pyfunction!(frame_serialize, m)?)?;
    m.add_function(wrap_pyfunction!(frame_parse, m)?)?;
    m.add_function(wrap_pyfunction!(demo_check_encode, m)?)?;
    m.add_class::<PerceptualProjector>()?;
    m.add_class::<LinkRunner>()?;
    Ok(())
}
