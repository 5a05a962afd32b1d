//! Procedural two-domain benchmark with a known style oracle.
//!
//! Source scenes are smooth gradient backgrounds with vividly colored,
//! non-overlapping rectangles as foreground objects, labeled with exact
//! boxes and masks. The target domain is the same scene distribution (from
//! disjoint seeds) pushed through a deterministic pixel-local style
//! transform, so the ground-truth stylization of any source image is
//! available for evaluation.

pub mod io;

pub use io::{read_dataset, read_eval_labels, write_dataset, write_eval_labels};

use crate::attention::{BoxF, Proposal};
use crate::error::{Error, Result};
use crate::hash::Fnv1a64;
use crate::rng::Rng64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Source,
    Target,
    StylizedSource,
}

impl DomainTag {
    pub fn name(&self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
            DomainTag::StylizedSource => "stylized_source",
        }
    }

    pub fn parse(s: &str) -> Result<DomainTag> {
        match s {
            "source" => Ok(DomainTag::Source),
            "target" => Ok(DomainTag::Target),
            "stylized_source" => Ok(DomainTag::StylizedSource),
            _ => Err(Error::Config(format!("unknown domain tag `{s}`"))),
        }
    }
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize) -> ImageU8 {
        ImageU8 {
            width,
            height,
            rgb: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&px);
    }

    /// CHW values mapped from [0,255] to [-1,1].
    pub fn to_chw_unit(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                out[c * n + p] = self.rgb[p * 3 + c] as f64 / 255.0 * 2.0 - 1.0;
            }
        }
        out
    }

    /// Quantize CHW values in [-1,1] back to 8-bit RGB.
    pub fn from_chw_unit(width: usize, height: usize, chw: &[f64]) -> ImageU8 {
        let n = width * height;
        debug_assert_eq!(chw.len(), 3 * n);
        let mut rgb = vec![0u8; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                let v = (chw[c * n + p].clamp(-1.0, 1.0) + 1.0) / 2.0;
                rgb[p * 3 + c] = (v * 255.0).round() as u8;
            }
        }
        ImageU8 { width, height, rgb }
    }

    /// [1,3,H,W] tensor in [-1,1].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, 3, self.height, self.width], self.to_chw_unit(), false)
            .expect("consistent image dims")
    }

    /// Patch crop as CHW values in [-1,1].
    pub fn crop_chw_unit(&self, x0: usize, y0: usize, w: usize, h: usize) -> Vec<f64> {
        debug_assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut out = vec![0.0; 3 * w * h];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let src = ((y0 + y) * self.width + x0 + x) * 3 + c;
                    out[c * w * h + y * w + x] = self.rgb[src] as f64 / 255.0 * 2.0 - 1.0;
                }
            }
        }
        out
    }
}

/// What a generated scene looks like.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive object count range per scene.
    pub object_count: (usize, usize),
    /// Inclusive side-length range of object rectangles, pixels.
    pub object_size: (usize, usize),
    /// Uniform background noise amplitude on the [0,1] intensity scale.
    pub noise_amplitude: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            object_count: (1, 4),
            object_size: (6, 20),
            noise_amplitude: 0.02,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene_spec", "image dims must be positive"));
        }
        if self.object_count.0 > self.object_count.1 {
            return Err(Error::invalid("scene_spec", "object count range inverted"));
        }
        if self.object_size.0 > self.object_size.1 || self.object_size.0 < 3 {
            return Err(Error::invalid(
                "scene_spec",
                "object sides must span at least 3 pixels (area >= 9)",
            ));
        }
        if self.object_size.1 > self.width.min(self.height) {
            return Err(Error::invalid(
                "scene_spec",
                format!(
                    "objects up to {} px cannot fit a {}x{} image",
                    self.object_size.1, self.width, self.height
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_amplitude) {
            return Err(Error::invalid("scene_spec", "noise amplitude outside [0,1]"));
        }
        Ok(())
    }

    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv1a64::new();
        h.update(
            format!(
                "scene:{}x{}:count={}-{}:size={}-{}:noise={}",
                self.width,
                self.height,
                self.object_count.0,
                self.object_count.1,
                self.object_size.0,
                self.object_size.1,
                self.noise_amplitude
            )
            .as_bytes(),
        );
        h.finish()
    }
}

/// Deterministic pixel-local appearance change defining the domain gap.
#[derive(Debug, Clone, PartialEq)]
pub enum StyleTransform {
    /// I' = I*exp(-beta*d) + airlight*(1 - exp(-beta*d)) with depth proxy
    /// d = (row+1)/H, so fog thickens toward the bottom of the image.
    Fog { beta: f64, airlight: [f64; 3] },
    /// Per-pixel channel affine map, clipped to the valid range.
    ColorShift { matrix: [[f64; 3]; 3], bias: [f64; 3] },
}

impl StyleTransform {
    pub fn default_fog() -> StyleTransform {
        StyleTransform::Fog {
            beta: 1.6,
            airlight: [0.78, 0.80, 0.85],
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            StyleTransform::Fog { beta, airlight } => {
                format!("fog(beta={},airlight={},{},{})", beta, airlight[0], airlight[1], airlight[2])
            }
            StyleTransform::ColorShift { matrix, bias } => {
                let m: Vec<String> = matrix.iter().flatten().map(|v| v.to_string()).collect();
                let b: Vec<String> = bias.iter().map(|v| v.to_string()).collect();
                format!("colorshift(matrix={};bias={})", m.join(","), b.join(","))
            }
        }
    }

    /// Transform one pixel given its [0,1] RGB and the depth proxy of its row.
    pub fn apply_pixel(&self, rgb: [f64; 3], depth: f64) -> [f64; 3] {
        match self {
            StyleTransform::Fog { beta, airlight } => {
                let t = (-beta * depth).exp();
                [
                    (rgb[0] * t + airlight[0] * (1.0 - t)).clamp(0.0, 1.0),
                    (rgb[1] * t + airlight[1] * (1.0 - t)).clamp(0.0, 1.0),
                    (rgb[2] * t + airlight[2] * (1.0 - t)).clamp(0.0, 1.0),
                ]
            }
            StyleTransform::ColorShift { matrix, bias } => {
                let mut out = [0.0; 3];
                for (c, slot) in out.iter_mut().enumerate() {
                    *slot = (matrix[c][0] * rgb[0] + matrix[c][1] * rgb[1] + matrix[c][2] * rgb[2]
                        + bias[c])
                        .clamp(0.0, 1.0);
                }
                out
            }
        }
    }

    pub fn apply_image(&self, img: &ImageU8) -> ImageU8 {
        let mut out = ImageU8::new(img.width, img.height);
        for y in 0..img.height {
            let depth = (y + 1) as f64 / img.height as f64;
            for x in 0..img.width {
                let px = img.get(x, y);
                let rgb = [
                    px[0] as f64 / 255.0,
                    px[1] as f64 / 255.0,
                    px[2] as f64 / 255.0,
                ];
                let t = self.apply_pixel(rgb, depth);
                out.set(
                    x,
                    y,
                    [
                        (t[0] * 255.0).round() as u8,
                        (t[1] * 255.0).round() as u8,
                        (t[2] * 255.0).round() as u8,
                    ],
                );
            }
        }
        out
    }
}

/// An ordered image collection with optional exact labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain: DomainTag,
    pub ids: Vec<String>,
    pub images: Vec<ImageU8>,
    pub labels: Option<Vec<Vec<BoxF>>>,
    /// Row-major foreground flags per image.
    pub masks: Option<Vec<Vec<bool>>>,
    pub seed: u64,
    pub spec_hash: u64,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Labels are carried by source-side datasets only; the target domain is
    /// unlabeled by construction.
    pub fn validate(&self) -> Result<()> {
        match self.domain {
            DomainTag::Source | DomainTag::StylizedSource => {
                if self.labels.is_none() {
                    return Err(Error::invalid("dataset", "source-side dataset missing labels"));
                }
            }
            DomainTag::Target => {
                if self.labels.is_some() || self.masks.is_some() {
                    return Err(Error::invalid("dataset", "target dataset must be unlabeled"));
                }
            }
        }
        if self.ids.len() != self.images.len() {
            return Err(Error::invalid("dataset", "id/image count mismatch"));
        }
        Ok(())
    }

    /// Copy with labels and masks removed, re-tagged as target.
    pub fn into_unlabeled_target(mut self) -> DomainDataset {
        self.domain = DomainTag::Target;
        self.labels = None;
        self.masks = None;
        self
    }
}

fn paint_scene(spec: &SceneSpec, rng: &mut Rng64) -> (ImageU8, Vec<BoxF>, Vec<bool>) {
    let (w, h) = (spec.width, spec.height);
    let mut img = ImageU8::new(w, h);

    // Muted gradient background between two colors along a random direction.
    let c0: [f64; 3] = [rng.uniform(0.16, 0.55), rng.uniform(0.16, 0.55), rng.uniform(0.16, 0.55)];
    let c1: [f64; 3] = [rng.uniform(0.16, 0.55), rng.uniform(0.16, 0.55), rng.uniform(0.16, 0.55)];
    let (ax, ay) = loop {
        let ax = rng.uniform(-1.0, 1.0);
        let ay = rng.uniform(-1.0, 1.0);
        if ax.abs() + ay.abs() > 0.1 {
            break (ax, ay);
        }
    };
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for y in 0..h {
        for x in 0..w {
            let t = ax * x as f64 + ay * y as f64;
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    let span = (hi - lo).max(1e-9);
    for y in 0..h {
        for x in 0..w {
            let t = (ax * x as f64 + ay * y as f64 - lo) / span;
            let mut px = [0u8; 3];
            for c in 0..3 {
                let noise = rng.uniform(-spec.noise_amplitude, spec.noise_amplitude);
                let v = (c0[c] + t * (c1[c] - c0[c]) + noise).clamp(0.0, 1.0);
                px[c] = (v * 255.0).round() as u8;
            }
            img.set(x, y, px);
        }
    }

    // Vivid non-overlapping rectangles; rejection sampling keeps boxes tight
    // around their own mask pixels.
    let target_count = rng.range_inclusive(spec.object_count.0, spec.object_count.1);
    let mut boxes: Vec<BoxF> = Vec::new();
    let mut mask = vec![false; w * h];
    for _ in 0..target_count {
        let mut placed = None;
        for _try in 0..50 {
            let ow = rng.range_inclusive(spec.object_size.0, spec.object_size.1);
            let oh = rng.range_inclusive(spec.object_size.0, spec.object_size.1);
            if ow > w || oh > h {
                continue;
            }
            let x0 = rng.below(w - ow + 1);
            let y0 = rng.below(h - oh + 1);
            let candidate = BoxF {
                x1: x0 as f64,
                y1: y0 as f64,
                x2: (x0 + ow) as f64,
                y2: (y0 + oh) as f64,
            };
            if boxes.iter().all(|b| candidate.iou(b) == 0.0) {
                placed = Some((x0, y0, ow, oh, candidate));
                break;
            }
        }
        let Some((x0, y0, ow, oh, rect)) = placed else {
            continue;
        };
        let dominant = rng.below(3);
        let mut color = [0u8; 3];
        for (c, slot) in color.iter_mut().enumerate() {
            let v = if c == dominant {
                rng.uniform(0.80, 1.0)
            } else {
                rng.uniform(0.0, 0.45)
            };
            *slot = (v * 255.0).round() as u8;
        }
        for y in y0..y0 + oh {
            for x in x0..x0 + ow {
                img.set(x, y, color);
                mask[y * w + x] = true;
            }
        }
        boxes.push(rect);
    }

    (img, boxes, mask)
}

/// Generate a labeled source dataset: n scenes, exact boxes and masks,
/// deterministic per seed (each image draws from its own derived stream).
pub fn generate_source(n: usize, spec: &SceneSpec, seed: u64) -> Result<DomainDataset> {
    if n == 0 {
        return Err(Error::invalid("generate_source", "need at least one image"));
    }
    spec.validate()?;
    let mut ids = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{i:05}");
        let mut rng = Rng64::derive(seed, &format!("scene/{id}"));
        let (img, boxes, mask) = paint_scene(spec, &mut rng);
        ids.push(id);
        images.push(img);
        labels.push(boxes);
        masks.push(mask);
    }
    Ok(DomainDataset {
        domain: DomainTag::Source,
        ids,
        images,
        labels: Some(labels),
        masks: Some(masks),
        seed,
        spec_hash: spec.content_hash(),
    })
}

/// Pixelwise-transformed copies; ids, geometry and labels are unchanged.
pub fn apply_style(dataset: &DomainDataset, t: &StyleTransform, domain: DomainTag) -> DomainDataset {
    let images = dataset.images.iter().map(|img| t.apply_image(img)).collect();
    let mut out = DomainDataset {
        domain,
        ids: dataset.ids.clone(),
        images,
        labels: dataset.labels.clone(),
        masks: dataset.masks.clone(),
        seed: dataset.seed,
        spec_hash: dataset.spec_hash,
    };
    if domain == DomainTag::Target {
        out.labels = None;
        out.masks = None;
    }
    out
}

/// Simulate imperfect detector output from ground truth: each box survives
/// with probability 1-miss_rate and is perturbed by uniform offsets up to
/// jitter times its size, with confidence in [0.5, 1.0]; per surviving or
/// missed slot a false positive appears with probability false_rate, with
/// confidence in [0.3, 0.7]. Everything is clipped to the image.
pub fn jittered_proposals(
    labels: &[BoxF],
    img_w: usize,
    img_h: usize,
    jitter: f64,
    miss_rate: f64,
    false_rate: f64,
    seed: u64,
) -> Result<Vec<Proposal>> {
    for (name, rate) in [("jitter", jitter), ("miss_rate", miss_rate), ("false_rate", false_rate)] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::invalid(
                "jittered_proposals",
                format!("{name}={rate} outside [0,1]"),
            ));
        }
    }
    let mut rng = Rng64::derive(seed, "jitter-proposals");
    let mut out = Vec::new();
    for b in labels {
        if !rng.chance(miss_rate) {
            let dx = jitter * b.width();
            let dy = jitter * b.height();
            let x1 = b.x1 + rng.uniform(-dx, dx);
            let y1 = b.y1 + rng.uniform(-dy, dy);
            let x2 = (b.x2 + rng.uniform(-dx, dx)).max(x1 + 1.0);
            let y2 = (b.y2 + rng.uniform(-dy, dy)).max(y1 + 1.0);
            let conf = rng.uniform(0.5, 1.0);
            if let Some(clipped) = (BoxF { x1, y1, x2, y2 }).clip(img_w, img_h) {
                out.push(Proposal {
                    rect: clipped,
                    confidence: conf,
                });
            }
        }
        if rng.chance(false_rate) {
            let fw = rng.uniform(4.0, 24.0);
            let fh = rng.uniform(4.0, 24.0);
            let x1 = rng.uniform(0.0, (img_w as f64 - fw).max(1.0));
            let y1 = rng.uniform(0.0, (img_h as f64 - fh).max(1.0));
            let conf = rng.uniform(0.3, 0.7);
            if let Some(clipped) = (BoxF {
                x1,
                y1,
                x2: x1 + fw,
                y2: y1 + fh,
            })
            .clip(img_w, img_h)
            {
                out.push(Proposal {
                    rect: clipped,
                    confidence: conf,
                });
            }
        }
    }
    Ok(out)
}
