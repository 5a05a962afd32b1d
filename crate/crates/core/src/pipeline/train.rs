//! Training loops: the shared GAN loop used by the baseline and
//! attention-weighted stages, plus detector and segmenter training.
//!
//! The GAN loop draws its randomness in a fixed order (source indices,
//! source crops, target indices, target crops, one batch at a time) and the
//! attention provider consumes no randomness, so a run with all-ones
//! attention retraces an unweighted run bit-for-bit.

use std::path::Path;

use crate::attention::{crop_resize, AttentionMap, CropRect};
use crate::error::{Error, Result};
use crate::losses::{
    cycle_loss, gan_loss_discriminator, gan_loss_generator, semantic_loss, total_loss, Attn,
    AwmPlacement, GanFormulation, LossWeights,
};
use crate::nets::{
    detector_targets, DiscriminatorNet, GeneratorNet, ProposalDetector, SegmenterNet,
};
use crate::rng::Rng64;
use crate::synthdata::{DomainDataset, DomainTag, ImageU8};
use crate::tensor::{Adam, AdamConfig, Param, Tensor};

use super::checkpoint::Checkpoint;

/// Loss values above this abort training as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// The four adversarial networks.
pub struct GanNets {
    pub g_st: GeneratorNet,
    pub g_ts: GeneratorNet,
    pub d_s: DiscriminatorNet,
    pub d_t: DiscriminatorNet,
}

impl GanNets {
    /// Construction order (g_st, g_ts, d_s, d_t) fixes the init draws.
    pub fn fresh(seed: u64, instance_norm: bool) -> GanNets {
        let mut rng = Rng64::derive(seed, "gan-init");
        GanNets {
            g_st: GeneratorNet::new("g_st", instance_norm, &mut rng),
            g_ts: GeneratorNet::new("g_ts", instance_norm, &mut rng),
            d_s: DiscriminatorNet::new("d_s", &mut rng),
            d_t: DiscriminatorNet::new("d_t", &mut rng),
        }
    }

    pub fn generator_params(&self) -> Vec<&Param> {
        let mut p = self.g_st.params();
        p.extend(self.g_ts.params());
        p
    }

    pub fn discriminator_params(&self) -> Vec<&Param> {
        let mut p = self.d_s.params();
        p.extend(self.d_t.params());
        p
    }

    pub fn all_params(&self) -> Vec<&Param> {
        let mut p = self.generator_params();
        p.extend(self.discriminator_params());
        p
    }
}

/// Everything needed to continue a GAN training run.
pub struct GanTrainState {
    pub nets: GanNets,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub rng: Rng64,
    pub step: u64,
}

impl GanTrainState {
    pub fn fresh(seed: u64, instance_norm: bool, adam: AdamConfig) -> GanTrainState {
        let nets = GanNets::fresh(seed, instance_norm);
        let adam_g = Adam::new(adam, &nets.generator_params());
        let adam_d = Adam::new(adam, &nets.discriminator_params());
        GanTrainState {
            nets,
            adam_g,
            adam_d,
            rng: Rng64::derive(seed, "gan-train"),
            step: 0,
        }
    }

    /// Serialize nets, optimizers, RNG and step into a checkpoint, together
    /// with the frozen segmenter.
    pub fn to_checkpoint(
        &self,
        stage: &str,
        config_hash: u64,
        segmenter: &SegmenterNet,
    ) -> Checkpoint {
        let mut ck = Checkpoint::new(stage, config_hash, self.step);
        ck.put_scalar("rng.train", self.rng.state());
        ck.put_params(&self.nets.all_params());
        ck.put_params(&segmenter.params());
        ck.put_adam("adam_g", &self.adam_g, &self.nets.generator_params());
        ck.put_adam("adam_d", &self.adam_d, &self.nets.discriminator_params());
        ck
    }

    /// Rebuild a training state from a checkpoint written by `to_checkpoint`.
    pub fn from_checkpoint(
        path: &Path,
        ck: &Checkpoint,
        instance_norm: bool,
        adam: AdamConfig,
    ) -> Result<(GanTrainState, SegmenterNet)> {
        // Seed is irrelevant here; every value is overwritten.
        let nets = GanNets::fresh(0, instance_norm);
        ck.restore_params(path, &nets.all_params())?;
        let segmenter = SegmenterNet::new("segmenter", &mut Rng64::new(0));
        ck.restore_params(path, &segmenter.params())?;
        let mut adam_g = Adam::new(adam, &nets.generator_params());
        let mut adam_d = Adam::new(adam, &nets.discriminator_params());
        ck.restore_adam(path, "adam_g", &mut adam_g, &nets.generator_params())?;
        ck.restore_adam(path, "adam_d", &mut adam_d, &nets.discriminator_params())?;
        let mut rng = Rng64::new(0);
        rng.set_state(ck.scalar("rng.train").ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            details: "missing rng.train state".into(),
        })?);
        Ok((
            GanTrainState {
                nets,
                adam_g,
                adam_d,
                rng,
                step: ck.step,
            },
            segmenter,
        ))
    }
}

/// Supplies cropped, resized attention patches during training; consumes no
/// randomness.
pub trait AttentionProvider {
    fn patch_attention(
        &self,
        domain: DomainTag,
        index: usize,
        crop: CropRect,
        out_w: usize,
        out_h: usize,
    ) -> Result<AttentionMap>;
}

/// Maps preloaded from the on-disk caches, ordered like the datasets.
pub struct CachedAttention {
    source_maps: Vec<AttentionMap>,
    target_maps: Vec<AttentionMap>,
}

impl CachedAttention {
    pub fn new(source_maps: Vec<AttentionMap>, target_maps: Vec<AttentionMap>) -> CachedAttention {
        CachedAttention {
            source_maps,
            target_maps,
        }
    }

    /// Load both domains' caches, resolving maps by dataset image id.
    pub fn load(
        source_dir: &Path,
        target_dir: &Path,
        source: &DomainDataset,
        target: &DomainDataset,
    ) -> Result<CachedAttention> {
        let load_domain = |dir: &Path, ds: &DomainDataset| -> Result<Vec<AttentionMap>> {
            let index = crate::attention::cache::read_cache_index(dir)?;
            ds.ids.iter().map(|id| index.load(id)).collect()
        };
        Ok(CachedAttention {
            source_maps: load_domain(source_dir, source)?,
            target_maps: load_domain(target_dir, target)?,
        })
    }
}

impl AttentionProvider for CachedAttention {
    fn patch_attention(
        &self,
        domain: DomainTag,
        index: usize,
        crop: CropRect,
        out_w: usize,
        out_h: usize,
    ) -> Result<AttentionMap> {
        let maps = match domain {
            DomainTag::Target => &self.target_maps,
            _ => &self.source_maps,
        };
        let map = maps.get(index).ok_or_else(|| {
            Error::invalid("attention_provider", format!("image index {index} outside cache"))
        })?;
        crop_resize(map, crop, out_w, out_h)
    }
}

/// Knobs of one GAN training run.
#[derive(Debug, Clone)]
pub struct GanTrainSettings {
    pub patch_size: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub formulation: GanFormulation,
    pub weights: LossWeights,
    pub placement: AwmPlacement,
    pub adam: AdamConfig,
    pub instance_norm: bool,
    pub bidirectional_sem: bool,
    pub normalized_awm: bool,
}

/// Per-step record passed to the step hook.
pub struct StepInfo<'a> {
    pub step: u64,
    pub src_indices: &'a [usize],
    pub tgt_indices: &'a [usize],
    pub src_crops: &'a [CropRect],
    pub tgt_crops: &'a [CropRect],
    /// Crop rectangles handed to the attention provider this step, in call
    /// order; equal to the image crops by construction.
    pub attn_crops: &'a [CropRect],
    pub d_loss: f64,
    pub g_loss: f64,
    pub gan_st: f64,
    pub gan_ts: f64,
    pub cyc: f64,
    pub sem: f64,
}

fn batch_tensor(ds: &DomainDataset, indices: &[usize], crops: &[CropRect], patch: usize) -> Tensor {
    let mut values = Vec::with_capacity(indices.len() * 3 * patch * patch);
    for (&i, c) in indices.iter().zip(crops) {
        values.extend(ds.images[i].crop_chw_unit(c.x, c.y, c.w, c.h));
    }
    Tensor::from_vec(&[indices.len(), 3, patch, patch], values, false)
        .expect("consistent batch dims")
}

struct PatchAttention {
    src_disc: Option<Vec<AttentionMap>>,
    tgt_disc: Option<Vec<AttentionMap>>,
    src_patch: Option<Vec<AttentionMap>>,
    tgt_patch: Option<Vec<AttentionMap>>,
}

/// Train the style-transfer networks. `attention` is None for the baseline;
/// the placement flags choose which loss groups are weighted when it is
/// present. Starts from `state` and runs until `settings.steps`.
pub fn train_gan(
    source: &DomainDataset,
    target: &DomainDataset,
    segmenter: &SegmenterNet,
    attention: Option<&dyn AttentionProvider>,
    settings: &GanTrainSettings,
    mut state: GanTrainState,
    mut hook: Option<&mut dyn FnMut(&StepInfo, &GanNets)>,
) -> Result<GanTrainState> {
    let patch = settings.patch_size;
    let batch = settings.batch_size;
    let n_src = source.len();
    let n_tgt = target.len();
    if n_src == 0 || n_tgt == 0 {
        return Err(Error::invalid("train_gan", "empty dataset"));
    }
    let img = &source.images[0];
    if patch > img.width || patch > img.height {
        return Err(Error::invalid(
            "train_gan",
            format!("patch {} exceeds image {}x{}", patch, img.width, img.height),
        ));
    }
    let (disc_h, disc_w) = DiscriminatorNet::output_size(patch, patch)?;
    settings.weights.validate()?;

    let abort = |step: u64, e: Error| Error::Training {
        step,
        details: e.to_string(),
    };

    while state.step < settings.steps {
        let step = state.step;
        let rng = &mut state.rng;

        // Fixed draw order: source indices, source crops (x then y), target
        // indices, target crops.
        let src_indices: Vec<usize> = (0..batch).map(|_| rng.below(n_src)).collect();
        let src_crops: Vec<CropRect> = (0..batch)
            .map(|_| {
                let x = rng.below(img.width - patch + 1);
                let y = rng.below(img.height - patch + 1);
                CropRect { x, y, w: patch, h: patch }
            })
            .collect();
        let tgt_indices: Vec<usize> = (0..batch).map(|_| rng.below(n_tgt)).collect();
        let tgt_crops: Vec<CropRect> = (0..batch)
            .map(|_| {
                let x = rng.below(img.width - patch + 1);
                let y = rng.below(img.height - patch + 1);
                CropRect { x, y, w: patch, h: patch }
            })
            .collect();

        let x_s = batch_tensor(source, &src_indices, &src_crops, patch);
        let x_t = batch_tensor(target, &tgt_indices, &tgt_crops, patch);

        // Attention patches for this step, cropped with the identical
        // rectangles used for the image patches.
        let mut attn_crops: Vec<CropRect> = Vec::new();
        let patches = if let Some(provider) = attention {
            let p = &settings.placement;
            let mut gather = |domain: DomainTag,
                              indices: &[usize],
                              crops: &[CropRect],
                              w: usize,
                              h: usize,
                              needed: bool|
             -> Result<Option<Vec<AttentionMap>>> {
                if !needed {
                    return Ok(None);
                }
                let mut maps = Vec::with_capacity(indices.len());
                for (&i, &c) in indices.iter().zip(crops) {
                    attn_crops.push(c);
                    maps.push(provider.patch_attention(domain, i, c, w, h)?);
                }
                Ok(Some(maps))
            };
            let need_disc = p.weight_disc || p.weight_gen;
            PatchAttention {
                src_disc: gather(DomainTag::Source, &src_indices, &src_crops, disc_w, disc_h, need_disc)?,
                tgt_disc: gather(DomainTag::Target, &tgt_indices, &tgt_crops, disc_w, disc_h, need_disc)?,
                src_patch: gather(
                    DomainTag::Source,
                    &src_indices,
                    &src_crops,
                    patch,
                    patch,
                    p.weight_cyc || p.weight_sem,
                )?,
                tgt_patch: gather(
                    DomainTag::Target,
                    &tgt_indices,
                    &tgt_crops,
                    patch,
                    patch,
                    p.weight_cyc || (p.weight_sem && settings.bidirectional_sem),
                )?,
            }
        } else {
            PatchAttention {
                src_disc: None,
                tgt_disc: None,
                src_patch: None,
                tgt_patch: None,
            }
        };
        let attn = |maps: &Option<Vec<AttentionMap>>, on: bool| -> Option<Attn<'_>> {
            match maps {
                Some(m) if on => Some(Attn {
                    maps: m,
                    normalized: settings.normalized_awm,
                }),
                _ => None,
            }
        };

        // Shared forward passes.
        let fake_t = state.nets.g_st.forward(&x_s, false).map_err(|e| abort(step, e))?;
        let fake_s = state.nets.g_ts.forward(&x_t, false).map_err(|e| abort(step, e))?;
        let recon_s = state.nets.g_ts.forward(&fake_t, false).map_err(|e| abort(step, e))?;
        let recon_t = state.nets.g_st.forward(&fake_s, false).map_err(|e| abort(step, e))?;

        // Discriminator step. Real target scores pair with target-domain
        // maps; fakes pair with the maps of the images they were made from.
        for p in state.nets.discriminator_params() {
            p.zero_grad();
        }
        let weight_disc = settings.placement.weight_disc;
        let d_loss = (|| -> Result<f64> {
            let d_real_t = state.nets.d_t.forward(&x_t, false)?;
            let d_fake_t = state.nets.d_t.forward(&fake_t.detach(), false)?;
            let d_real_s = state.nets.d_s.forward(&x_s, false)?;
            let d_fake_s = state.nets.d_s.forward(&fake_s.detach(), false)?;
            let l_d_t = gan_loss_discriminator(
                &d_real_t,
                &d_fake_t,
                settings.formulation,
                attn(&patches.tgt_disc, weight_disc),
                attn(&patches.src_disc, weight_disc),
            )?;
            let l_d_s = gan_loss_discriminator(
                &d_real_s,
                &d_fake_s,
                settings.formulation,
                attn(&patches.src_disc, weight_disc),
                attn(&patches.tgt_disc, weight_disc),
            )?;
            let d_loss = l_d_t
                .mul_scalar(settings.weights.a1)
                .add(&l_d_s.mul_scalar(settings.weights.a2))?;
            let value = d_loss.item();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: "discriminator loss".into(),
                });
            }
            if value.abs() > DIVERGENCE_LIMIT {
                return Err(Error::invalid("train_gan", format!("discriminator loss diverged: {value}")));
            }
            d_loss.backward()?;
            state.adam_d.step(&state.nets.discriminator_params())?;
            Ok(value)
        })()
        .map_err(|e| abort(step, e))?;

        // Generator step, against the just-updated discriminators.
        for p in state.nets.generator_params() {
            p.zero_grad();
        }
        let weight_gen = settings.placement.weight_gen;
        let (g_loss, l_gan_st, l_gan_ts, l_cyc_v, l_sem_v) = (|| -> Result<(f64, f64, f64, f64, f64)> {
            let d_fake_t = state.nets.d_t.forward(&fake_t, false)?;
            let d_fake_s = state.nets.d_s.forward(&fake_s, false)?;
            let l_gan_st = gan_loss_generator(
                &d_fake_t,
                settings.formulation,
                attn(&patches.src_disc, weight_gen),
            )?;
            let l_gan_ts = gan_loss_generator(
                &d_fake_s,
                settings.formulation,
                attn(&patches.tgt_disc, weight_gen),
            )?;
            let l_cyc = cycle_loss(
                &x_s,
                &recon_s,
                &x_t,
                &recon_t,
                attn(&patches.src_patch, settings.placement.weight_cyc),
                attn(&patches.tgt_patch, settings.placement.weight_cyc),
            )?;
            let seg_orig = segmenter.forward(&x_s, true)?;
            let seg_sty = segmenter.forward(&fake_t, true)?;
            let mut l_sem = semantic_loss(
                &seg_orig,
                &seg_sty,
                attn(&patches.src_patch, settings.placement.weight_sem),
            )?;
            if settings.bidirectional_sem {
                let seg_orig_t = segmenter.forward(&x_t, true)?;
                let seg_sty_t = segmenter.forward(&fake_s, true)?;
                l_sem = l_sem.add(&semantic_loss(
                    &seg_orig_t,
                    &seg_sty_t,
                    attn(&patches.tgt_patch, settings.placement.weight_sem),
                )?)?;
            }
            let g_loss = total_loss(&l_gan_st, &l_gan_ts, &l_cyc, &l_sem, &settings.weights)?;
            let value = g_loss.item();
            if value.abs() > DIVERGENCE_LIMIT {
                return Err(Error::invalid("train_gan", format!("generator loss diverged: {value}")));
            }
            g_loss.backward()?;
            state.adam_g.step(&state.nets.generator_params())?;
            Ok((value, l_gan_st.item(), l_gan_ts.item(), l_cyc.item(), l_sem.item()))
        })()
        .map_err(|e| abort(step, e))?;

        state.step += 1;
        if let Some(hook) = hook.as_deref_mut() {
            hook(
                &StepInfo {
                    step: state.step,
                    src_indices: &src_indices,
                    tgt_indices: &tgt_indices,
                    src_crops: &src_crops,
                    tgt_crops: &tgt_crops,
                    attn_crops: &attn_crops,
                    d_loss,
                    g_loss,
                    gan_st: l_gan_st,
                    gan_ts: l_gan_ts,
                    cyc: l_cyc_v,
                    sem: l_sem_v,
                },
                &state.nets,
            );
        }
    }
    Ok(state)
}

/// Loss components evaluated on a deterministic probe batch with no
/// attention weighting; used to compare trained networks across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeLosses {
    pub d_loss: f64,
    pub g_loss: f64,
    pub gan_st: f64,
    pub gan_ts: f64,
    pub cyc: f64,
    pub sem: f64,
}

pub fn probe_losses(
    nets: &GanNets,
    segmenter: &SegmenterNet,
    source: &DomainDataset,
    target: &DomainDataset,
    settings: &GanTrainSettings,
    probe_seed: u64,
) -> Result<ProbeLosses> {
    let patch = settings.patch_size;
    let img = &source.images[0];
    let mut rng = Rng64::derive(probe_seed, "probe-batch");
    let n = 8;
    let draw = |rng: &mut Rng64, len: usize| -> (Vec<usize>, Vec<CropRect>) {
        let indices: Vec<usize> = (0..n).map(|_| rng.below(len)).collect();
        let crops: Vec<CropRect> = (0..n)
            .map(|_| CropRect {
                x: rng.below(img.width - patch + 1),
                y: rng.below(img.height - patch + 1),
                w: patch,
                h: patch,
            })
            .collect();
        (indices, crops)
    };
    let (src_idx, src_crops) = draw(&mut rng, source.len());
    let (tgt_idx, tgt_crops) = draw(&mut rng, target.len());
    let x_s = batch_tensor(source, &src_idx, &src_crops, patch);
    let x_t = batch_tensor(target, &tgt_idx, &tgt_crops, patch);

    let fake_t = nets.g_st.forward(&x_s, true)?;
    let fake_s = nets.g_ts.forward(&x_t, true)?;
    let recon_s = nets.g_ts.forward(&fake_t, true)?;
    let recon_t = nets.g_st.forward(&fake_s, true)?;

    let d_real_t = nets.d_t.forward(&x_t, true)?;
    let d_fake_t = nets.d_t.forward(&fake_t, true)?;
    let d_real_s = nets.d_s.forward(&x_s, true)?;
    let d_fake_s = nets.d_s.forward(&fake_s, true)?;
    let l_d_t = gan_loss_discriminator(&d_real_t, &d_fake_t, settings.formulation, None, None)?;
    let l_d_s = gan_loss_discriminator(&d_real_s, &d_fake_s, settings.formulation, None, None)?;
    let d_loss = l_d_t
        .mul_scalar(settings.weights.a1)
        .add(&l_d_s.mul_scalar(settings.weights.a2))?
        .item();

    let l_gan_st = gan_loss_generator(&d_fake_t, settings.formulation, None)?;
    let l_gan_ts = gan_loss_generator(&d_fake_s, settings.formulation, None)?;
    let l_cyc = cycle_loss(&x_s, &recon_s, &x_t, &recon_t, None, None)?;
    let seg_orig = segmenter.forward(&x_s, true)?;
    let seg_sty = segmenter.forward(&fake_t, true)?;
    let l_sem = semantic_loss(&seg_orig, &seg_sty, None)?;
    let g_loss = total_loss(&l_gan_st, &l_gan_ts, &l_cyc, &l_sem, &settings.weights)?.item();

    Ok(ProbeLosses {
        d_loss,
        g_loss,
        gan_st: l_gan_st.item(),
        gan_ts: l_gan_ts.item(),
        cyc: l_cyc.item(),
        sem: l_sem.item(),
    })
}

/// Detector training settings.
#[derive(Debug, Clone)]
pub struct DetectorTrainSettings {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub box_weight: f64,
}

/// Train the one-stage detector on full images with ground-truth boxes:
/// binary cross-entropy on the objectness grid plus squared corner-offset
/// error on positive cells.
pub fn train_detector(
    images: &[ImageU8],
    labels: &[Vec<crate::attention::BoxF>],
    settings: &DetectorTrainSettings,
    seed: u64,
) -> Result<ProposalDetector> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::invalid("train_detector", "image/label count mismatch"));
    }
    let net = ProposalDetector::new("detector", &mut Rng64::derive(seed, "det-init"));
    let mut rng = Rng64::derive(seed, "det-train");
    let adam_params = net.params();
    let mut adam = Adam::new(settings.adam, &adam_params);

    let (w, h) = (images[0].width, images[0].height);
    let targets: Vec<_> = labels.iter().map(|l| detector_targets(l, w, h)).collect();
    let cells = targets[0].grid_h * targets[0].grid_w;

    let steps = settings.epochs * (images.len() / settings.batch).max(1);
    for step in 0..steps {
        let indices: Vec<usize> = (0..settings.batch).map(|_| rng.below(images.len())).collect();
        let b = indices.len();

        let mut img_values = Vec::with_capacity(b * 3 * h * w);
        let mut obj_t = Vec::with_capacity(b * cells);
        let mut box_t = Vec::with_capacity(b * 4 * cells);
        let mut mask4 = Vec::with_capacity(b * 4 * cells);
        let mut n_pos = 0usize;
        for &i in &indices {
            img_values.extend(images[i].to_chw_unit());
            obj_t.extend_from_slice(&targets[i].objectness);
            box_t.extend_from_slice(&targets[i].offsets);
            for _ in 0..4 {
                mask4.extend_from_slice(&targets[i].objectness);
            }
            n_pos += targets[i].positive_count;
        }
        let (gh, gw) = (targets[0].grid_h, targets[0].grid_w);
        let x = Tensor::from_vec(&[b, 3, h, w], img_values, false)?;
        let obj_target = Tensor::from_vec(&[b, 1, gh, gw], obj_t, false)?;
        let box_target = Tensor::from_vec(&[b, 4, gh, gw], box_t, false)?;
        let pos_mask = Tensor::from_vec(&[b, 4, gh, gw], mask4, false)?;

        for p in &adam_params {
            p.zero_grad();
        }
        let raw = net.forward_raw(&x, false)?;
        let prob = raw.slice_channels(0, 1)?.sigmoid();
        let bce = obj_target
            .mul(&prob.log_clamped())?
            .add(&obj_target.one_minus().mul(&prob.one_minus().log_clamped())?)?
            .mean_all()?
            .mul_scalar(-1.0);
        let diff = raw.slice_channels(1, 5)?.sub(&box_target)?;
        let box_term = diff
            .mul(&diff)?
            .mul(&pos_mask)?
            .sum_all()?
            .mul_scalar(1.0 / (4.0 * n_pos.max(1) as f64));
        let loss = bce.add(&box_term.mul_scalar(settings.box_weight))?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Training {
                step: step as u64,
                details: "non-finite detector loss".into(),
            });
        }
        loss.backward()?;
        adam.step(&adam_params).map_err(|e| Error::Training {
            step: step as u64,
            details: e.to_string(),
        })?;
    }
    Ok(net)
}

/// Segmenter training settings.
#[derive(Debug, Clone)]
pub struct SegmenterTrainSettings {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
}

/// Train the two-class segmenter on full images against ground-truth masks
/// with per-pixel cross-entropy.
pub fn train_segmenter(
    images: &[ImageU8],
    masks: &[Vec<bool>],
    settings: &SegmenterTrainSettings,
    seed: u64,
) -> Result<SegmenterNet> {
    if images.is_empty() || images.len() != masks.len() {
        return Err(Error::invalid("train_segmenter", "image/mask count mismatch"));
    }
    let net = SegmenterNet::new("segmenter", &mut Rng64::derive(seed, "seg-init"));
    let mut rng = Rng64::derive(seed, "seg-train");
    let params = net.params();
    let mut adam = Adam::new(settings.adam, &params);
    let (w, h) = (images[0].width, images[0].height);

    let steps = settings.epochs * (images.len() / settings.batch).max(1);
    for step in 0..steps {
        let indices: Vec<usize> = (0..settings.batch).map(|_| rng.below(images.len())).collect();
        let b = indices.len();
        let mut img_values = Vec::with_capacity(b * 3 * h * w);
        let mut onehot = Vec::with_capacity(b * 2 * h * w);
        for &i in &indices {
            img_values.extend(images[i].to_chw_unit());
            onehot.extend(masks[i].iter().map(|&m| if m { 0.0 } else { 1.0 }));
            onehot.extend(masks[i].iter().map(|&m| if m { 1.0 } else { 0.0 }));
        }
        let x = Tensor::from_vec(&[b, 3, h, w], img_values, false)?;
        let target = Tensor::from_vec(&[b, 2, h, w], onehot, false)?;

        for p in &params {
            p.zero_grad();
        }
        let probs = net.forward(&x, false)?;
        let loss = target
            .mul(&probs.log_clamped())?
            .sum_axes(&[1])?
            .mean_all()?
            .mul_scalar(-1.0);
        if !loss.item().is_finite() {
            return Err(Error::Training {
                step: step as u64,
                details: "non-finite segmenter loss".into(),
            });
        }
        loss.backward()?;
        adam.step(&params).map_err(|e| Error::Training {
            step: step as u64,
            details: e.to_string(),
        })?;
    }
    Ok(net)
}

/// Fraction of pixels where the argmax class matches the mask.
pub fn segmenter_accuracy(net: &SegmenterNet, images: &[ImageU8], masks: &[Vec<bool>]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (img, mask) in images.iter().zip(masks) {
        let probs = net.forward(&img.to_tensor(), true)?;
        let v = probs.to_vec();
        let hw = img.width * img.height;
        for p in 0..hw {
            let fg = v[hw + p] > v[p];
            if fg == mask[p] {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}
