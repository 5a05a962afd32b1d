//! Run configuration, merged from defaults, an optional flat key-value
//! config file and command-line overrides (in that order of precedence).
//!
//! The configuration hash covers the training-relevant keys only (data,
//! networks, losses, attention, optimizers, seeds), so evaluation settings
//! can change without invalidating checkpoints.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::attention::{AccumulationFn, AttentionSource};
use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::losses::{AwmPlacement, GanFormulation, LossWeights};
use crate::synthdata::{SceneSpec, StyleTransform};
use crate::tensor::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StyleKind {
    Fog,
    ColorShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AwadaConfig {
    // data
    pub image_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub object_count: (usize, usize),
    pub object_size: (usize, usize),
    pub noise_amplitude: f64,
    pub style: StyleKind,
    pub fog_beta: f64,
    pub fog_airlight: [f64; 3],
    pub colorshift_matrix: [[f64; 3]; 3],
    pub colorshift_bias: [f64; 3],
    pub data_seed: u64,
    // gan training
    pub patch_size: usize,
    pub batch_size: usize,
    pub gan_epochs: usize,
    pub gan_lr: f64,
    pub gan_beta1: f64,
    pub gan_beta2: f64,
    pub loss_weights: LossWeights,
    pub gan_formulation: GanFormulation,
    pub placement: AwmPlacement,
    pub instance_norm: bool,
    pub bidirectional_sem: bool,
    pub normalized_awm: bool,
    pub stage4_fresh_init: bool,
    pub gan_seed: u64,
    // attention
    pub attention_source_kind: String,
    pub attention_threshold: f64,
    pub inflate_factor: f64,
    pub random_fraction: f64,
    pub random_seed: u64,
    pub accumulation: AccumulationFn,
    pub max_proposals: usize,
    pub nms_iou: f64,
    pub rebuild_cache: bool,
    // detector / segmenter
    pub detector_epochs: usize,
    pub detector_batch: usize,
    pub detector_lr: f64,
    pub detector_seed: u64,
    pub segmenter_epochs: usize,
    pub segmenter_batch: usize,
    pub segmenter_lr: f64,
    // evaluation
    pub eval_seeds: Vec<u64>,
    pub eval_iou: f64,
    pub force_checkpoint: bool,
}

impl Default for AwadaConfig {
    fn default() -> Self {
        AwadaConfig {
            image_size: 64,
            n_train: 200,
            n_val: 50,
            object_count: (1, 4),
            object_size: (6, 20),
            noise_amplitude: 0.02,
            style: StyleKind::Fog,
            fog_beta: 1.6,
            fog_airlight: [0.78, 0.80, 0.85],
            colorshift_matrix: [[0.9, 0.1, 0.0], [0.0, 0.8, 0.2], [0.2, 0.0, 0.75]],
            colorshift_bias: [0.05, 0.0, 0.1],
            data_seed: 1,
            patch_size: 32,
            batch_size: 2,
            gan_epochs: 8,
            gan_lr: 2e-4,
            gan_beta1: 0.5,
            gan_beta2: 0.999,
            loss_weights: LossWeights::default(),
            gan_formulation: GanFormulation::LeastSquares,
            placement: AwmPlacement::default(),
            instance_norm: false,
            bidirectional_sem: false,
            normalized_awm: false,
            stage4_fresh_init: true,
            gan_seed: 11,
            attention_source_kind: "detector_proposals".into(),
            attention_threshold: 0.5,
            inflate_factor: 1.2,
            random_fraction: 0.3,
            random_seed: 7,
            accumulation: AccumulationFn::Hard,
            max_proposals: 64,
            nms_iou: 0.5,
            rebuild_cache: false,
            detector_epochs: 12,
            detector_batch: 4,
            detector_lr: 1e-3,
            detector_seed: 21,
            segmenter_epochs: 6,
            segmenter_batch: 4,
            segmenter_lr: 1e-3,
            eval_seeds: vec![101, 102, 103],
            eval_iou: 0.5,
            force_checkpoint: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for key `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{v}` for key `{key}`"))),
    }
}

fn parse_f64_list<const N: usize>(key: &str, v: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(Error::Config(format!("key `{key}` needs {N} comma-separated values")));
    }
    let mut out = [0.0; N];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = parse_num(key, p)?;
    }
    Ok(out)
}

impl AwadaConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "image_size" => self.image_size = parse_num(key, value)?,
            "n_train" => self.n_train = parse_num(key, value)?,
            "n_val" => self.n_val = parse_num(key, value)?,
            "object_count_min" => self.object_count.0 = parse_num(key, value)?,
            "object_count_max" => self.object_count.1 = parse_num(key, value)?,
            "object_size_min" => self.object_size.0 = parse_num(key, value)?,
            "object_size_max" => self.object_size.1 = parse_num(key, value)?,
            "noise_amplitude" => self.noise_amplitude = parse_num(key, value)?,
            "style" => {
                self.style = match value {
                    "fog" => StyleKind::Fog,
                    "colorshift" => StyleKind::ColorShift,
                    _ => return Err(Error::Config(format!("unknown style `{value}`"))),
                }
            }
            "fog_beta" => self.fog_beta = parse_num(key, value)?,
            "fog_airlight" => self.fog_airlight = parse_f64_list::<3>(key, value)?,
            "colorshift_matrix" => {
                let m = parse_f64_list::<9>(key, value)?;
                for r in 0..3 {
                    self.colorshift_matrix[r] = [m[3 * r], m[3 * r + 1], m[3 * r + 2]];
                }
            }
            "colorshift_bias" => self.colorshift_bias = parse_f64_list::<3>(key, value)?,
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "patch_size" => self.patch_size = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "gan_epochs" => self.gan_epochs = parse_num(key, value)?,
            "gan_lr" => self.gan_lr = parse_num(key, value)?,
            "gan_beta1" => self.gan_beta1 = parse_num(key, value)?,
            "gan_beta2" => self.gan_beta2 = parse_num(key, value)?,
            "a1" => self.loss_weights.a1 = parse_num(key, value)?,
            "a2" => self.loss_weights.a2 = parse_num(key, value)?,
            "a3" => self.loss_weights.a3 = parse_num(key, value)?,
            "a4" => self.loss_weights.a4 = parse_num(key, value)?,
            "gan_formulation" => self.gan_formulation = GanFormulation::parse(value)?,
            "awm_placement" => self.placement = AwmPlacement::parse(value)?,
            "instance_norm" => self.instance_norm = parse_bool(key, value)?,
            "bidirectional_sem" => self.bidirectional_sem = parse_bool(key, value)?,
            "normalized_awm" => self.normalized_awm = parse_bool(key, value)?,
            "stage4_fresh_init" => self.stage4_fresh_init = parse_bool(key, value)?,
            "gan_seed" => self.gan_seed = parse_num(key, value)?,
            "attention_source" => {
                let known = [
                    "detector_proposals",
                    "gt_boxes",
                    "gt_boxes_inflated",
                    "gt_masks",
                    "random",
                    "all_ones",
                ];
                if !known.contains(&value) {
                    return Err(Error::Config(format!("unknown attention source `{value}`")));
                }
                self.attention_source_kind = value.into();
            }
            "attention_threshold" => self.attention_threshold = parse_num(key, value)?,
            "inflate_factor" => self.inflate_factor = parse_num(key, value)?,
            "random_fraction" => self.random_fraction = parse_num(key, value)?,
            "random_seed" => self.random_seed = parse_num(key, value)?,
            "accumulation" => self.accumulation = AccumulationFn::parse(value)?,
            "max_proposals" => self.max_proposals = parse_num(key, value)?,
            "nms_iou" => self.nms_iou = parse_num(key, value)?,
            "rebuild_cache" => self.rebuild_cache = parse_bool(key, value)?,
            "detector_epochs" => self.detector_epochs = parse_num(key, value)?,
            "detector_batch" => self.detector_batch = parse_num(key, value)?,
            "detector_lr" => self.detector_lr = parse_num(key, value)?,
            "detector_seed" => self.detector_seed = parse_num(key, value)?,
            "segmenter_epochs" => self.segmenter_epochs = parse_num(key, value)?,
            "segmenter_batch" => self.segmenter_batch = parse_num(key, value)?,
            "segmenter_lr" => self.segmenter_lr = parse_num(key, value)?,
            "eval_seeds" => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    seeds.push(parse_num(key, part.trim())?);
                }
                if seeds.is_empty() {
                    return Err(Error::Config("eval_seeds must not be empty".into()));
                }
                self.eval_seeds = seeds;
            }
            "eval_iou" => self.eval_iou = parse_num(key, value)?,
            "force_checkpoint" => self.force_checkpoint = parse_bool(key, value)?,
            "seed" => {
                // Master seed: reseeds every per-stage stream at once.
                let master: u64 = parse_num(key, value)?;
                self.data_seed = master ^ fnv1a64(b"data");
                self.gan_seed = master ^ fnv1a64(b"gan");
                self.detector_seed = master ^ fnv1a64(b"detector");
                self.random_seed = master ^ fnv1a64(b"random-attn");
            }
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file with `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", path.display(), lineno + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "{}:{}: duplicate key `{key}`",
                    path.display(),
                    lineno + 1
                )));
            }
            self.set(key, value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size > self.image_size {
            return Err(Error::Config(format!(
                "patch size {} exceeds image size {}",
                self.patch_size, self.image_size
            )));
        }
        if self.batch_size == 0 || self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Config("counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.attention_threshold) {
            return Err(Error::Config("attention_threshold outside [0,1]".into()));
        }
        if self.inflate_factor <= 0.0 {
            return Err(Error::Config("inflate_factor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.random_fraction) {
            return Err(Error::Config("random_fraction outside [0,1]".into()));
        }
        self.loss_weights.validate()?;
        self.scene_spec().validate()
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            width: self.image_size,
            height: self.image_size,
            object_count: self.object_count,
            object_size: self.object_size,
            noise_amplitude: self.noise_amplitude,
        }
    }

    pub fn style_transform(&self) -> StyleTransform {
        match self.style {
            StyleKind::Fog => StyleTransform::Fog {
                beta: self.fog_beta,
                airlight: self.fog_airlight,
            },
            StyleKind::ColorShift => StyleTransform::ColorShift {
                matrix: self.colorshift_matrix,
                bias: self.colorshift_bias,
            },
        }
    }

    pub fn attention_source(&self) -> AttentionSource {
        match self.attention_source_kind.as_str() {
            "gt_boxes" => AttentionSource::GtBoxes,
            "gt_boxes_inflated" => AttentionSource::GtBoxesInflated {
                factor: self.inflate_factor,
            },
            "gt_masks" => AttentionSource::GtMasks,
            "random" => AttentionSource::Random {
                fraction: self.random_fraction,
                seed: self.random_seed,
            },
            "all_ones" => AttentionSource::AllOnes,
            _ => AttentionSource::DetectorProposals {
                threshold: self.attention_threshold,
            },
        }
    }

    pub fn adam_gan(&self) -> AdamConfig {
        AdamConfig {
            lr: self.gan_lr,
            beta1: self.gan_beta1,
            beta2: self.gan_beta2,
            eps: 1e-8,
        }
    }

    pub fn adam_detector(&self) -> AdamConfig {
        AdamConfig {
            lr: self.detector_lr,
            ..AdamConfig::task()
        }
    }

    pub fn adam_segmenter(&self) -> AdamConfig {
        AdamConfig {
            lr: self.segmenter_lr,
            ..AdamConfig::task()
        }
    }

    /// Canonical listing of the training-relevant keys.
    pub fn canonical_train_string(&self) -> String {
        let w = &self.loss_weights;
        format!(
            "image_size={} n_train={} n_val={} object_count={}-{} object_size={}-{} \
             noise={} style={} data_seed={} patch={} batch={} gan_epochs={} gan_lr={} \
             gan_beta1={} gan_beta2={} weights={},{},{},{} form={} placement={} inorm={} \
             bidir_sem={} norm_awm={} fresh4={} gan_seed={} attn={} thr={} inflate={} \
             rnd={}@{} accum={} max_prop={} nms={} det_epochs={} det_batch={} det_lr={} \
             det_seed={} seg_epochs={} seg_batch={} seg_lr={}",
            self.image_size,
            self.n_train,
            self.n_val,
            self.object_count.0,
            self.object_count.1,
            self.object_size.0,
            self.object_size.1,
            self.noise_amplitude,
            self.style_transform().descriptor(),
            self.data_seed,
            self.patch_size,
            self.batch_size,
            self.gan_epochs,
            self.gan_lr,
            self.gan_beta1,
            self.gan_beta2,
            w.a1,
            w.a2,
            w.a3,
            w.a4,
            self.gan_formulation.name(),
            self.placement.descriptor(),
            self.instance_norm,
            self.bidirectional_sem,
            self.normalized_awm,
            self.stage4_fresh_init,
            self.gan_seed,
            self.attention_source().descriptor(),
            self.attention_threshold,
            self.inflate_factor,
            self.random_fraction,
            self.random_seed,
            self.accumulation.name(),
            self.max_proposals,
            self.nms_iou,
            self.detector_epochs,
            self.detector_batch,
            self.detector_lr,
            self.detector_seed,
            self.segmenter_epochs,
            self.segmenter_batch,
            self.segmenter_lr,
        )
    }

    /// Hash over the training-relevant configuration.
    pub fn train_hash(&self) -> u64 {
        fnv1a64(self.canonical_train_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        AwadaConfig::default().validate().unwrap();
    }

    #[test]
    fn set_round_trips_into_hash() {
        let mut a = AwadaConfig::default();
        let b = AwadaConfig::default();
        assert_eq!(a.train_hash(), b.train_hash());
        a.set("gan_epochs", "3").unwrap();
        assert_ne!(a.train_hash(), b.train_hash());
    }

    #[test]
    fn eval_keys_do_not_change_train_hash() {
        let mut a = AwadaConfig::default();
        let b = AwadaConfig::default();
        a.set("eval_seeds", "7,8").unwrap();
        a.set("force_checkpoint", "true").unwrap();
        assert_eq!(a.train_hash(), b.train_hash());
    }

    #[test]
    fn unknown_key_rejected() {
        let mut a = AwadaConfig::default();
        assert!(a.set("no_such_key", "1").is_err());
    }

    #[test]
    fn master_seed_reseeds_stage_streams() {
        let mut a = AwadaConfig::default();
        let before = (a.data_seed, a.gan_seed, a.detector_seed);
        a.set("seed", "42").unwrap();
        assert_ne!(before.0, a.data_seed);
        assert_ne!(before.1, a.gan_seed);
        assert_ne!(before.2, a.detector_seed);
        let mut b = AwadaConfig::default();
        b.set("seed", "42").unwrap();
        assert_eq!(a.data_seed, b.data_seed);
    }

    #[test]
    fn config_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "# comment\n gan_epochs = 5\nawm_placement = 1,1,1,0\n").unwrap();
        let mut cfg = AwadaConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.gan_epochs, 5);
        assert!(cfg.placement.weight_cyc);
        assert!(!cfg.placement.weight_sem);
    }
}
