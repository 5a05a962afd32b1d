//! Foreground attention: maps built by accumulating object proposals per
//! pixel, ground-truth and random variants, crop/resize alignment with
//! training patches, and the attention-weighted mean that replaces plain
//! spatial averaging in the loss functions.

pub mod cache;

pub use cache::{load_cached_map, precompute_attention_cache, CachePolicy};

use crate::error::{Error, Result};
use crate::rng::Rng64;
use crate::tensor::Tensor;

/// Axis-aligned box in pixel coordinates, x1 < x2 and y1 < y2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxF {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxF {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<BoxF> {
        if !(x1 < x2 && y1 < y2) || !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::invalid(
                "box",
                format!("degenerate box ({x1},{y1})-({x2},{y2})"),
            ));
        }
        Ok(BoxF { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Clip to an image of the given size; None when nothing remains.
    pub fn clip(&self, img_w: usize, img_h: usize) -> Option<BoxF> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(img_w as f64);
        let y2 = self.y2.min(img_h as f64);
        if x1 < x2 && y1 < y2 {
            Some(BoxF { x1, y1, x2, y2 })
        } else {
            None
        }
    }

    /// Intersection over union; symmetric, in [0,1], 1 iff identical.
    pub fn iou(&self, other: &BoxF) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Detector output: a box plus a confidence score in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub rect: BoxF,
    pub confidence: f64,
}

impl Proposal {
    pub fn new(rect: BoxF, confidence: f64) -> Result<Proposal> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(
                "proposal",
                format!("confidence {confidence} outside [0,1]"),
            ));
        }
        Ok(Proposal { rect, confidence })
    }
}

/// How the confidences covering a pixel collapse into one attention value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccumulationFn {
    /// 1 wherever at least one above-threshold proposal covers the pixel.
    Hard,
    Mean,
    Median,
    Max,
}

impl AccumulationFn {
    pub fn parse(s: &str) -> Result<AccumulationFn> {
        match s {
            "hard" => Ok(AccumulationFn::Hard),
            "mean" => Ok(AccumulationFn::Mean),
            "median" => Ok(AccumulationFn::Median),
            "max" => Ok(AccumulationFn::Max),
            _ => Err(Error::Config(format!("unknown accumulation function `{s}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AccumulationFn::Hard => "hard",
            AccumulationFn::Mean => "mean",
            AccumulationFn::Median => "median",
            AccumulationFn::Max => "max",
        }
    }

    /// True when every produced value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        matches!(self, AccumulationFn::Hard)
    }
}

/// Where attention maps come from.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionSource {
    /// Proposals from a trained detector, filtered at a confidence threshold.
    DetectorProposals { threshold: f64 },
    GtBoxes,
    GtBoxesInflated { factor: f64 },
    GtMasks,
    /// Each pixel independently foreground with probability `fraction`.
    Random { fraction: f64, seed: u64 },
    AllOnes,
}

impl AttentionSource {
    pub fn descriptor(&self) -> String {
        match self {
            AttentionSource::DetectorProposals { threshold } => {
                format!("detector_proposals(c={threshold})")
            }
            AttentionSource::GtBoxes => "gt_boxes".into(),
            AttentionSource::GtBoxesInflated { factor } => format!("gt_boxes_inflated({factor})"),
            AttentionSource::GtMasks => "gt_masks".into(),
            AttentionSource::Random { fraction, seed } => format!("random(p={fraction},seed={seed})"),
            AttentionSource::AllOnes => "all_ones".into(),
        }
    }

    /// True when maps from this source only contain 0 or 1 (given hard
    /// accumulation for the detector variant).
    pub fn is_binary(&self, accumulation: AccumulationFn) -> bool {
        match self {
            AttentionSource::DetectorProposals { .. } => accumulation.is_binary(),
            _ => true,
        }
    }
}

/// Per-pixel foreground weights in [0,1] at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<AttentionMap> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("attention_map", "dimensions must be positive"));
        }
        if values.len() != width * height {
            return Err(Error::invalid(
                "attention_map",
                format!("{}x{} map needs {} values, got {}", width, height, width * height, values.len()),
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("attention_map", "values must lie in [0,1]"));
        }
        Ok(AttentionMap { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> AttentionMap {
        AttentionMap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> AttentionMap {
        AttentionMap {
            width,
            height,
            values: vec![1.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Integer pixel range [lo, hi) covered by a half-open interval [a, b).
fn pixel_span(a: f64, b: f64, limit: usize) -> (usize, usize) {
    let lo = a.ceil().max(0.0) as usize;
    let hi = (b.ceil() as isize).clamp(0, limit as isize) as usize;
    (lo.min(limit), hi)
}

/// Accumulate proposals into an attention map. A pixel (u,v) collects the
/// confidences of proposals with confidence >= c whose box contains it under
/// half-open membership [x1,x2) x [y1,y2); the accumulation function
/// collapses that set, with empty sets mapping to 0.
pub fn build_attention_map(
    proposals: &[Proposal],
    c: f64,
    width: usize,
    height: usize,
    f: AccumulationFn,
) -> AttentionMap {
    let kept: Vec<&Proposal> = proposals.iter().filter(|p| p.confidence >= c).collect();
    let mut values = vec![0.0; width * height];
    match f {
        AccumulationFn::Hard => {
            for p in &kept {
                let (x_lo, x_hi) = pixel_span(p.rect.x1, p.rect.x2, width);
                let (y_lo, y_hi) = pixel_span(p.rect.y1, p.rect.y2, height);
                for v in y_lo..y_hi {
                    values[v * width + x_lo..v * width + x_hi].fill(1.0);
                }
            }
        }
        AccumulationFn::Max => {
            for p in &kept {
                let (x_lo, x_hi) = pixel_span(p.rect.x1, p.rect.x2, width);
                let (y_lo, y_hi) = pixel_span(p.rect.y1, p.rect.y2, height);
                for v in y_lo..y_hi {
                    for slot in &mut values[v * width + x_lo..v * width + x_hi] {
                        *slot = f64::max(*slot, p.confidence);
                    }
                }
            }
        }
        AccumulationFn::Mean => {
            let mut counts = vec![0u32; width * height];
            for p in &kept {
                let (x_lo, x_hi) = pixel_span(p.rect.x1, p.rect.x2, width);
                let (y_lo, y_hi) = pixel_span(p.rect.y1, p.rect.y2, height);
                for v in y_lo..y_hi {
                    for u in x_lo..x_hi {
                        values[v * width + u] += p.confidence;
                        counts[v * width + u] += 1;
                    }
                }
            }
            for (slot, &n) in values.iter_mut().zip(&counts) {
                if n > 0 {
                    *slot /= n as f64;
                }
            }
        }
        AccumulationFn::Median => {
            let mut lists: Vec<Vec<f64>> = vec![Vec::new(); width * height];
            for p in &kept {
                let (x_lo, x_hi) = pixel_span(p.rect.x1, p.rect.x2, width);
                let (y_lo, y_hi) = pixel_span(p.rect.y1, p.rect.y2, height);
                for v in y_lo..y_hi {
                    for u in x_lo..x_hi {
                        lists[v * width + u].push(p.confidence);
                    }
                }
            }
            for (slot, list) in values.iter_mut().zip(&mut lists) {
                if !list.is_empty() {
                    list.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let n = list.len();
                    *slot = if n % 2 == 1 {
                        list[n / 2]
                    } else {
                        0.5 * (list[n / 2 - 1] + list[n / 2])
                    };
                }
            }
        }
    }
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    AttentionMap {
        width,
        height,
        values,
    }
}

/// Scale each box about its center so width and height multiply by `factor`,
/// then clip to the image. Boxes that vanish after clipping are dropped; the
/// second return value counts them.
pub fn inflate_boxes(
    boxes: &[BoxF],
    factor: f64,
    img_w: usize,
    img_h: usize,
) -> Result<(Vec<BoxF>, usize)> {
    if factor <= 0.0 {
        return Err(Error::invalid("inflate_boxes", "factor must be positive"));
    }
    let mut out = Vec::with_capacity(boxes.len());
    let mut dropped = 0;
    for b in boxes {
        let cx = 0.5 * (b.x1 + b.x2);
        let cy = 0.5 * (b.y1 + b.y2);
        let hw = 0.5 * b.width() * factor;
        let hh = 0.5 * b.height() * factor;
        let scaled = BoxF {
            x1: cx - hw,
            y1: cy - hh,
            x2: cx + hw,
            y2: cy + hh,
        };
        match scaled.clip(img_w, img_h) {
            Some(clipped) => out.push(clipped),
            None => dropped += 1,
        }
    }
    Ok((out, dropped))
}

/// Each pixel independently 1 with probability p, deterministic per seed.
pub fn random_mask(p: f64, width: usize, height: usize, seed: u64) -> Result<AttentionMap> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("random_mask", format!("p={p} outside [0,1]")));
    }
    let mut rng = Rng64::derive(seed, "attn-random");
    let values = (0..width * height)
        .map(|_| if rng.chance(p) { 1.0 } else { 0.0 })
        .collect();
    AttentionMap::new(width, height, values)
}

/// Ground-truth labels an attention map can be rasterized from.
pub enum GtLabels<'a> {
    Boxes(&'a [BoxF]),
    /// Row-major foreground flags at map resolution.
    Mask(&'a [bool]),
}

/// Rasterize ground truth into a binary map: boxes as filled rectangles
/// (half-open membership, matching proposal accumulation), masks copied.
pub fn mask_from_gt(labels: &GtLabels, width: usize, height: usize) -> Result<AttentionMap> {
    match labels {
        GtLabels::Boxes(boxes) => {
            for b in boxes.iter() {
                if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > width as f64 || b.y2 > height as f64 {
                    return Err(Error::invalid(
                        "mask_from_gt",
                        format!(
                            "box ({},{})-({},{}) outside {}x{} image",
                            b.x1, b.y1, b.x2, b.y2, width, height
                        ),
                    ));
                }
            }
            let mut values = vec![0.0; width * height];
            for b in boxes.iter() {
                let (x_lo, x_hi) = pixel_span(b.x1, b.x2, width);
                let (y_lo, y_hi) = pixel_span(b.y1, b.y2, height);
                for v in y_lo..y_hi {
                    values[v * width + x_lo..v * width + x_hi].fill(1.0);
                }
            }
            AttentionMap::new(width, height, values)
        }
        GtLabels::Mask(fg) => {
            if fg.len() != width * height {
                return Err(Error::invalid(
                    "mask_from_gt",
                    format!("mask has {} pixels, expected {}", fg.len(), width * height),
                ));
            }
            AttentionMap::new(
                width,
                height,
                fg.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            )
        }
    }
}

/// A crop window in map/image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Crop a window out of a map and resample it to (out_w, out_h) with
/// center-aligned nearest neighbor: output pixel i reads source index
/// floor((i + 0.5) * crop / out), evaluated in exact integer arithmetic.
pub fn crop_resize(
    map: &AttentionMap,
    crop: CropRect,
    out_w: usize,
    out_h: usize,
) -> Result<AttentionMap> {
    if crop.w == 0 || crop.h == 0 || crop.x + crop.w > map.width || crop.y + crop.h > map.height {
        return Err(Error::invalid(
            "crop_resize",
            format!(
                "crop {}x{}+{}+{} outside {}x{} map",
                crop.w, crop.h, crop.x, crop.y, map.width, map.height
            ),
        ));
    }
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid("crop_resize", "output dims must be positive"));
    }
    let mut values = vec![0.0; out_w * out_h];
    for dy in 0..out_h {
        let sy = crop.y + ((2 * dy + 1) * crop.h) / (2 * out_h);
        for dx in 0..out_w {
            let sx = crop.x + ((2 * dx + 1) * crop.w) / (2 * out_w);
            values[dy * out_w + dx] = map.values[sy * map.width + sx];
        }
    }
    Ok(AttentionMap {
        width: out_w,
        height: out_h,
        values,
    })
}

/// The weighted mean loss: multiply a per-pixel loss map elementwise by the
/// attention map and average over all W*H positions. Differentiable in the
/// loss map; the gradient at (u,v) is attn(u,v)/(W*H).
pub fn awm_weight(loss_map: &Tensor, attn: &AttentionMap) -> Result<Tensor> {
    let weights = attention_tensor_like(loss_map, std::slice::from_ref(attn))?;
    loss_map.mul(&weights)?.mean_all()
}

/// Batched variant: one attention map per leading-axis entry of the loss map.
pub fn awm_weight_batch(loss_map: &Tensor, attns: &[AttentionMap]) -> Result<Tensor> {
    let weights = attention_tensor_like(loss_map, attns)?;
    loss_map.mul(&weights)?.mean_all()
}

/// Normalized variant dividing by the attention mass instead of W*H.
/// Degrades results in practice and is off by default; an all-zero map
/// yields a zero loss.
pub fn awm_weight_normalized(loss_map: &Tensor, attn: &AttentionMap) -> Result<Tensor> {
    awm_weight_batch_normalized(loss_map, std::slice::from_ref(attn))
}

/// Batched normalized variant: sum(L*a) / sum(a) over the whole batch.
pub fn awm_weight_batch_normalized(loss_map: &Tensor, attns: &[AttentionMap]) -> Result<Tensor> {
    let weights = attention_tensor_like(loss_map, attns)?;
    let mass: f64 = weights.to_vec().iter().sum();
    let denom = if mass == 0.0 { 1.0 } else { mass };
    Ok(loss_map.mul(&weights)?.sum_all()?.mul_scalar(1.0 / denom))
}

/// Build a constant tensor shaped like `loss_map` from per-batch attention
/// maps. The loss map's trailing two axes must equal the map size and its
/// leading axes must multiply to the number of maps.
fn attention_tensor_like(loss_map: &Tensor, attns: &[AttentionMap]) -> Result<Tensor> {
    let shape = loss_map.shape();
    if shape.len() < 2 {
        return Err(Error::shape(
            "awm_weight",
            format!("loss map must have spatial axes, got {:?}", shape),
        ));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let lead: usize = shape[..shape.len() - 2].iter().product::<usize>().max(1);
    if attns.is_empty() || lead % attns.len() != 0 {
        return Err(Error::shape(
            "awm_weight",
            format!("{} attention maps cannot tile {} loss planes", attns.len(), lead),
        ));
    }
    let per = lead / attns.len();
    for a in attns {
        if a.width != w || a.height != h {
            return Err(Error::shape(
                "awm_weight",
                format!("attention {}x{} vs loss map {}x{}", a.width, a.height, w, h),
            ));
        }
    }
    let mut values = Vec::with_capacity(lead * h * w);
    for a in attns {
        for _ in 0..per {
            values.extend_from_slice(&a.values);
        }
    }
    Tensor::from_vec(shape, values, false)
}
