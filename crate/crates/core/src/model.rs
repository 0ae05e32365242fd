//! Trained-model persistence plus the train and predict entry points.
//!
//! # File layout
//!
//! All integers and floats are little-endian.
//!
//! | field        | encoding                                              |
//! |--------------|-------------------------------------------------------|
//! | magic        | 8 bytes, `CGBOOST\0`                                  |
//! | version      | `u32`                                                 |
//! | header       | `u64` byte length, then UTF-8 JSON                    |
//! | tensor count | `u32`                                                 |
//! | tensors      | per tensor: `u32` rank, `u64` per dim, `f64` payload  |
//!
//! The JSON header holds the run configuration, provenance and the layer
//! structure of every network. Tensors follow in a fixed order: each
//! normalizer as `[columns, 4]` (index names in sorted order), the encoder
//! parameters, then the parameters of every base model in stage order.
//! Within a network parameters appear weight-then-bias, layer by layer.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boost::{price_from_rate, BoostEnsemble};
use crate::config::{Mode, RunConfig};
use crate::data::write_frame;
use crate::error::{Error, Result};
use crate::eval::to_canonical_json;
use crate::features::{compute_indicators, ColumnScale, FeatureMatrix, Normalizer, SeriesFrame};
use crate::nn::{Conv1d, Dense, Layer, Network};
use crate::pipeline::{fit_pipeline, FitStamp, FittedPipeline, FittedValue, TrainingLog};
use crate::sae::SaeModel;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CGBOOST\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    /// SHA-256 over the canonical CSV rendering of every training series.
    pub data_fingerprint: String,
    pub date_ranges: BTreeMap<String, (NaiveDate, NaiveDate)>,
    pub sample_counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineModel {
    pub config: RunConfig,
    /// Raw feature columns the model expects, in order.
    pub feature_columns: Vec<String>,
    pub macro_names: Vec<String>,
    pub pipeline: FittedPipeline,
    pub provenance: Provenance,
}

pub struct Trained {
    pub model: PipelineModel,
    pub log: TrainingLog,
    pub fitted: Vec<FittedValue>,
}

/// One row of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub date: NaiveDate,
    pub close_today: f64,
    pub predicted_rate: f64,
    pub predicted_next_close: f64,
}

pub fn data_fingerprint(frames: &[SeriesFrame]) -> Result<String> {
    let mut h = Sha256::new();
    for f in frames {
        h.update(f.index_name().as_bytes());
        h.update([0u8]);
        let mut buf = Vec::new();
        write_frame(f, &mut buf)?;
        h.update(&buf);
    }
    Ok(hex::encode(h.finalize()))
}

/// Trains on every row of `frames`. Per-index mode takes exactly one series.
pub fn train_model(frames: &[SeriesFrame], cfg: &RunConfig) -> Result<Trained> {
    cfg.validate()?;
    match (cfg.mode, frames.len()) {
        (_, 0) => return Err(Error::Data("no training series supplied".into())),
        (Mode::PerIndex, n) if n > 1 => {
            return Err(Error::Config(format!(
                "per-index mode trains on one series, got {n}; use mode = \"pooled\""
            )))
        }
        _ => {}
    }
    let macro_names = frames[0].macro_names().to_vec();
    for f in &frames[1..] {
        if f.macro_names() != macro_names.as_slice() {
            return Err(Error::Data(format!(
                "{}: macro columns {:?} differ from {}'s {:?}",
                f.index_name(),
                f.macro_names(),
                frames[0].index_name(),
                macro_names
            )));
        }
    }
    let matrices = frames
        .iter()
        .map(|f| {
            compute_indicators(f).map_err(|e| e.context(format!("features for {}", f.index_name())))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = fit_pipeline(&matrices, cfg, cfg.seed)?;
    let provenance = Provenance {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        data_fingerprint: data_fingerprint(frames)?,
        date_ranges: matrices
            .iter()
            .map(|m| (m.index_name.clone(), (m.dates[0], *m.dates.last().unwrap())))
            .collect(),
        sample_counts: out.log.sample_counts.clone(),
    };
    Ok(Trained {
        model: PipelineModel {
            config: cfg.clone(),
            feature_columns: matrices[0].columns.clone(),
            macro_names,
            pipeline: out.pipeline,
            provenance,
        },
        log: out.log,
        fitted: out.fitted,
    })
}

impl PipelineModel {
    fn check_schema(&self, frame: &SeriesFrame) -> Result<()> {
        let have = frame.macro_names();
        let missing: Vec<&str> = self
            .macro_names
            .iter()
            .filter(|m| !have.contains(m))
            .map(String::as_str)
            .collect();
        let extra: Vec<&str> = have
            .iter()
            .filter(|m| !self.macro_names.contains(m))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Data(format!(
                "{}: column schema differs from the model's (missing: [{}], extra: [{}])",
                frame.index_name(),
                missing.join(", "),
                extra.join(", ")
            )));
        }
        if have != self.macro_names.as_slice() {
            return Err(Error::Data(format!(
                "{}: macro columns must appear in the order {:?}",
                frame.index_name(),
                self.macro_names
            )));
        }
        Ok(())
    }

    /// Feature matrix for `frame` under the index name the model knows it by.
    fn features_for(&self, frame: &SeriesFrame) -> Result<FeatureMatrix> {
        self.check_schema(frame)?;
        let mut fm = compute_indicators(frame)?;
        if fm.columns != self.feature_columns {
            return Err(Error::Data(format!(
                "{}: feature columns differ from the model's",
                frame.index_name()
            )));
        }
        if !self.pipeline.normalizers.contains_key(&fm.index_name) {
            let known: Vec<&String> = self.pipeline.normalizers.keys().collect();
            if known.len() == 1 {
                log::warn!(
                    "model was trained on `{}`; applying its normalizer to `{}`",
                    known[0],
                    fm.index_name
                );
                fm.index_name = known[0].clone();
            } else {
                return Err(Error::Data(format!(
                    "model has no index `{}` (known: {known:?})",
                    fm.index_name
                )));
            }
        }
        Ok(fm)
    }

    /// One-step-ahead forecasts for every full window of `frame`, including
    /// the last row whose next close is not yet known.
    pub fn predict_frame(&self, frame: &SeriesFrame) -> Result<Vec<Prediction>> {
        let fm = self.features_for(frame)?;
        let windows = self.pipeline.windows(&fm)?;
        if windows.is_empty() {
            return Err(Error::Data(format!(
                "{}: series too short for any input window",
                frame.index_name()
            )));
        }
        windows
            .iter()
            .map(|w| {
                let rate = self.pipeline.predict_rate(w)?;
                Ok(Prediction {
                    date: w.date,
                    close_today: w.close_today,
                    predicted_rate: rate,
                    predicted_next_close: price_from_rate(w.close_today, rate)?,
                })
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<&Tensor> = Vec::new();
        let norm_tensors: Vec<Tensor> = self
            .pipeline
            .normalizers
            .values()
            .map(normalizer_tensor)
            .collect();
        tensors.extend(norm_tensors.iter());
        self.pipeline
            .sae
            .encoder
            .visit_params(&mut |_, t| tensors.push(t));
        for m in &self.pipeline.ensemble.base_models {
            m.visit_params(&mut |_, t| tensors.push(t));
        }
        let header = Header::from_model(self);
        let json = to_canonical_json(&header);

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PipelineModel> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a cgboost model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model file format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let len =
            usize::try_from(r.u64()?).map_err(|_| Error::Format("header too large".into()))?;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Format(format!("model header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| {
                    usize::try_from(r.u64()?)
                        .map_err(|_| Error::Format("dimension too large".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| {
                    Error::Format(format!("tensor shape {shape:?} exceeds the file size"))
                })?;
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors
                .push(Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor: {e}")))?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        header.into_model(tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::from(e).context(path.display()))
    }

    pub fn load(path: &Path) -> Result<PipelineModel> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::from(e).context(path.display()))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Format(format!("model file truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn normalizer_tensor(n: &Normalizer) -> Tensor {
    let data = n
        .columns
        .iter()
        .flat_map(|c| [c.clip_low, c.clip_high, c.shift, c.scale])
        .collect();
    Tensor::new(vec![n.columns.len(), 4], data).expect("normalizer tensor")
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    Sigmoid,
    Flatten,
    Residual {
        net: NetSpec,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

impl NetSpec {
    fn of(net: &Network) -> NetSpec {
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => LayerSpec::Dense {
                    in_dim: d.in_dim,
                    out_dim: d.out_dim,
                },
                Layer::Conv1d(c) => LayerSpec::Conv1d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                },
                Layer::Relu => LayerSpec::Relu,
                Layer::Sigmoid => LayerSpec::Sigmoid,
                Layer::Flatten => LayerSpec::Flatten,
                Layer::Residual(inner) => LayerSpec::Residual {
                    net: NetSpec::of(inner),
                },
            })
            .collect();
        NetSpec {
            input_shape: net.input_shape().to_vec(),
            layers,
        }
    }

    fn build(&self) -> Result<Network> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    LayerSpec::Dense { in_dim, out_dim } => {
                        Layer::Dense(Dense::new(*in_dim, *out_dim)?)
                    }
                    LayerSpec::Conv1d {
                        in_channels,
                        out_channels,
                        kernel,
                    } => Layer::Conv1d(Conv1d::new(*in_channels, *out_channels, *kernel)?),
                    LayerSpec::Relu => Layer::Relu,
                    LayerSpec::Sigmoid => Layer::Sigmoid,
                    LayerSpec::Flatten => Layer::Flatten,
                    LayerSpec::Residual { net } => Layer::residual(net.build()?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(self.input_shape.clone(), layers)
    }

    /// Builds the network and fills its parameters from `tensors`.
    fn load(&self, tensors: &mut std::vec::IntoIter<Tensor>) -> Result<Network> {
        let mut net = self
            .build()
            .map_err(|e| Error::Format(format!("network structure: {e}")))?;
        let mut err = None;
        net.visit_params_mut(&mut |_, p| {
            if err.is_some() {
                return;
            }
            match tensors.next() {
                Some(t) if t.shape() == p.shape() => *p = t,
                Some(t) => {
                    err = Some(format!(
                        "parameter shape {:?} where {:?} expected",
                        t.shape(),
                        p.shape()
                    ))
                }
                None => err = Some("too few tensors".to_string()),
            }
        });
        match err {
            Some(e) => Err(Error::Format(e)),
            None => Ok(net),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizerHeader {
    columns: usize,
    warnings: Vec<String>,
    fitted_range: Option<(NaiveDate, NaiveDate)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: RunConfig,
    feature_columns: Vec<String>,
    macro_names: Vec<String>,
    window_len: usize,
    normalizers: BTreeMap<String, NormalizerHeader>,
    sae_rho: f64,
    sae_beta: f64,
    sae_input_dim: usize,
    encoder: NetSpec,
    shrinkage: f64,
    base_score: f64,
    stage_mse: Vec<f64>,
    base_models: Vec<NetSpec>,
    stamps: Vec<FitStamp>,
    provenance: Provenance,
}

impl Header {
    fn from_model(m: &PipelineModel) -> Header {
        let p = &m.pipeline;
        Header {
            config: m.config.clone(),
            feature_columns: m.feature_columns.clone(),
            macro_names: m.macro_names.clone(),
            window_len: p.window_len,
            normalizers: p
                .normalizers
                .iter()
                .map(|(k, n)| {
                    let h = NormalizerHeader {
                        columns: n.columns.len(),
                        warnings: n.warnings.clone(),
                        fitted_range: n.fitted_range,
                    };
                    (k.clone(), h)
                })
                .collect(),
            sae_rho: p.sae.rho,
            sae_beta: p.sae.beta,
            sae_input_dim: p.sae.input_dim,
            encoder: NetSpec::of(&p.sae.encoder),
            shrinkage: p.ensemble.shrinkage,
            base_score: p.ensemble.base_score,
            stage_mse: p.ensemble.stage_mse.clone(),
            base_models: p.ensemble.base_models.iter().map(NetSpec::of).collect(),
            stamps: p.stamps.clone(),
            provenance: m.provenance.clone(),
        }
    }

    fn into_model(self, tensors: Vec<Tensor>) -> Result<PipelineModel> {
        let mut it = tensors.into_iter();
        let mut normalizers = BTreeMap::new();
        for (name, h) in self.normalizers {
            let t = it
                .next()
                .ok_or_else(|| Error::Format("missing normalizer tensor".into()))?;
            if t.shape() != [h.columns, 4] {
                return Err(Error::Format(format!(
                    "normalizer `{name}` has shape {:?}",
                    t.shape()
                )));
            }
            let columns = t
                .data()
                .chunks_exact(4)
                .map(|c| ColumnScale {
                    clip_low: c[0],
                    clip_high: c[1],
                    shift: c[2],
                    scale: c[3],
                })
                .collect();
            let n = Normalizer {
                columns,
                fitted: true,
                warnings: h.warnings,
                fitted_range: h.fitted_range,
            };
            normalizers.insert(name, n);
        }
        let encoder = self.encoder.load(&mut it)?;
        let base_models = self
            .base_models
            .iter()
            .map(|s| s.load(&mut it))
            .collect::<Result<Vec<_>>>()?;
        if it.next().is_some() {
            return Err(Error::Format(
                "more tensors than the header describes".into(),
            ));
        }
        self.config
            .validate()
            .map_err(|e| Error::Format(format!("embedded config: {e}")))?;
        let sae = SaeModel {
            encoder,
            decoder: None,
            rho: self.sae_rho,
            beta: self.sae_beta,
            input_dim: self.sae_input_dim,
        };
        let ensemble = BoostEnsemble {
            base_models,
            shrinkage: self.shrinkage,
            base_score: self.base_score,
            stage_mse: self.stage_mse,
        };
        Ok(PipelineModel {
            config: self.config,
            feature_columns: self.feature_columns,
            macro_names: self.macro_names,
            pipeline: FittedPipeline {
                window_len: self.window_len,
                normalizers,
                sae,
                ensemble,
                stamps: self.stamps,
            },
            provenance: self.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Regime, SyntheticSpec};
    use crate::sae::SaeArch;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.features.window_len = 4;
        cfg.sae.arch = SaeArch::Dense { hidden: 3 };
        cfg.sae.sgd.epochs = 2;
        cfg.boost.stages = 2;
        cfg.boost.channels = 2;
        cfg.boost.blocks = 1;
        cfg.boost.sgd.epochs = 1;
        cfg
    }

    fn frame(name: &str, days: usize) -> SeriesFrame {
        generate_synthetic(&SyntheticSpec::new(name, days, Regime::TrendNoise, 8)).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let t = train_model(&[frame("a", 300)], &tiny_cfg()).unwrap();
        let bytes = t.model.to_bytes();
        let back = PipelineModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.pipeline.sae, t.model.pipeline.sae.without_decoder());
        assert_eq!(back.pipeline.ensemble, t.model.pipeline.ensemble);
        assert_eq!(back.provenance.config_hash, tiny_cfg().hash());
    }

    #[test]
    fn rejects_bad_files() {
        let t = train_model(&[frame("a", 300)], &tiny_cfg()).unwrap();
        let bytes = t.model.to_bytes();
        let mut v2 = bytes.clone();
        v2[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = PipelineModel::from_bytes(&v2).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");
        assert!(PipelineModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(PipelineModel::from_bytes(b"nope").is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(PipelineModel::from_bytes(&extra).is_err());
    }

    #[test]
    fn predict_reproduces_fitted_values() {
        let data = frame("a", 300);
        let t = train_model(std::slice::from_ref(&data), &tiny_cfg()).unwrap();
        let preds = t.model.predict_frame(&data).unwrap();
        assert_eq!(preds.len(), t.fitted.len() + 1);
        for (p, f) in preds.iter().zip(&t.fitted) {
            assert_eq!(p.date, f.date);
            assert!((p.predicted_rate - f.rate).abs() <= 1e-12);
        }
    }

    #[test]
    fn schema_mismatch_lists_columns() {
        let t = train_model(&[frame("a", 300)], &tiny_cfg()).unwrap();
        let f = frame("a", 300);
        let rows = f
            .rows()
            .iter()
            .map(|b| crate::features::Bar {
                macros: vec![b.macros[0]],
                ..b.clone()
            })
            .collect();
        let cut = SeriesFrame::new("a", vec!["interbank_rate".into()], rows).unwrap();
        let err = t.model.predict_frame(&cut).unwrap_err();
        assert!(err.to_string().contains("missing: [dollar_index]"), "{err}");
    }

    #[test]
    fn per_index_mode_takes_one_series() {
        assert!(matches!(
            train_model(&[frame("a", 300), frame("b", 300)], &tiny_cfg()),
            Err(Error::Config(_))
        ));
        let mut cfg = tiny_cfg();
        cfg.mode = Mode::Pooled;
        let t = train_model(&[frame("a", 300), frame("b", 300)], &cfg).unwrap();
        assert_eq!(t.model.provenance.sample_counts.len(), 2);
    }
}
