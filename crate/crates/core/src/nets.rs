//! The concrete networks: resolution-preserving encoder–decoder generators,
//! patch discriminators emitting spatial score maps, a per-pixel two-class
//! segmenter, and a one-stage objectness-grid proposal detector.
//!
//! All weights initialize uniformly in [-0.05, 0.05] from a seeded stream;
//! layer construction order fixes the draw order, so identical seeds give
//! identical networks.

use crate::attention::{BoxF, Proposal};
use crate::error::{Error, Result};
use crate::rng::Rng64;
use crate::tensor::{Param, Tensor};

pub const WEIGHT_INIT_BOUND: f64 = 0.05;
const LEAKY_SLOPE: f64 = 0.2;

struct ConvLayer {
    kernel: Param,
    bias: Param,
    stride: usize,
    pad: usize,
}

impl ConvLayer {
    fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng64,
    ) -> ConvLayer {
        ConvLayer {
            kernel: Param::init_uniform(
                format!("{name}.kernel"),
                &[cout, cin, k, k],
                WEIGHT_INIT_BOUND,
                rng,
            ),
            bias: Param::init_uniform(format!("{name}.bias"), &[cout], WEIGHT_INIT_BOUND, rng),
            stride,
            pad,
        }
    }

    fn forward(&self, x: &Tensor, frozen: bool) -> Result<Tensor> {
        x.conv2d(&self.kernel.input(frozen), &self.bias.input(frozen), self.stride, self.pad)
    }

    fn params(&self) -> [&Param; 2] {
        [&self.kernel, &self.bias]
    }
}

fn check_rgb_input(op: &'static str, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::shape(
            op,
            format!("expected [N,3,H,W] image, got {:?}", s),
        ));
    }
    Ok(())
}

/// Encoder–decoder image-to-image generator, 3->16->32->16->3: two stride-2
/// downsamples mirrored by two nearest-neighbor upsamples, tanh output in
/// [-1,1]. Inputs are padded to a multiple of 4 and the output cropped back,
/// so any input size is resolution-preserving.
pub struct GeneratorNet {
    enc1: ConvLayer,
    enc2: ConvLayer,
    dec1: ConvLayer,
    dec2: ConvLayer,
    use_instance_norm: bool,
}

impl GeneratorNet {
    pub fn new(name: &str, use_instance_norm: bool, rng: &mut Rng64) -> GeneratorNet {
        GeneratorNet {
            enc1: ConvLayer::new(&format!("{name}.enc1"), 3, 16, 4, 2, 1, rng),
            enc2: ConvLayer::new(&format!("{name}.enc2"), 16, 32, 4, 2, 1, rng),
            dec1: ConvLayer::new(&format!("{name}.dec1"), 32, 16, 3, 1, 1, rng),
            dec2: ConvLayer::new(&format!("{name}.dec2"), 16, 3, 3, 1, 1, rng),
            use_instance_norm,
        }
    }

    pub fn forward(&self, image: &Tensor, frozen: bool) -> Result<Tensor> {
        check_rgb_input("generate", image)?;
        let (h, w) = (image.shape()[2], image.shape()[3]);
        let extra_h = (4 - h % 4) % 4;
        let extra_w = (4 - w % 4) % 4;
        let x = if extra_h > 0 || extra_w > 0 {
            image.pad2d(extra_h, extra_w)?
        } else {
            image.clone()
        };
        let mut x = self.enc1.forward(&x, frozen)?;
        if self.use_instance_norm {
            x = x.instance_norm(1e-5)?;
        }
        let mut x = x.leaky_relu(LEAKY_SLOPE);
        x = self.enc2.forward(&x, frozen)?;
        if self.use_instance_norm {
            x = x.instance_norm(1e-5)?;
        }
        let x = x.leaky_relu(LEAKY_SLOPE);
        let x = x.upsample2x()?;
        let x = self.dec1.forward(&x, frozen)?.leaky_relu(LEAKY_SLOPE);
        let x = x.upsample2x()?;
        let out = self.dec2.forward(&x, frozen)?.tanh();
        if extra_h > 0 || extra_w > 0 {
            out.crop2d(0, 0, h, w)
        } else {
            Ok(out)
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        for layer in [&self.enc1, &self.enc2, &self.dec1, &self.dec2] {
            p.extend(layer.params());
        }
        p
    }
}

/// Patch discriminator: three stride-2 convolutions and a sigmoid, mapping
/// [N,3,H,W] to a spatial grid of domain scores in (0,1). 64x64 inputs give
/// an 8x8 map.
pub struct DiscriminatorNet {
    c1: ConvLayer,
    c2: ConvLayer,
    c3: ConvLayer,
}

impl DiscriminatorNet {
    pub fn new(name: &str, rng: &mut Rng64) -> DiscriminatorNet {
        DiscriminatorNet {
            c1: ConvLayer::new(&format!("{name}.c1"), 3, 16, 4, 2, 1, rng),
            c2: ConvLayer::new(&format!("{name}.c2"), 16, 32, 4, 2, 1, rng),
            c3: ConvLayer::new(&format!("{name}.c3"), 32, 1, 4, 2, 1, rng),
        }
    }

    /// Pure size function: the score-map dimensions for a given input, or an
    /// error naming the layer that would underflow.
    pub fn output_size(h: usize, w: usize) -> Result<(usize, usize)> {
        let mut dh = h;
        let mut dw = w;
        for layer in 1..=3 {
            if dh + 2 < 4 || dw + 2 < 4 {
                return Err(Error::shape(
                    "discriminate",
                    format!("input {h}x{w} too small: layer {layer} sees {dh}x{dw}, needs >= 2"),
                ));
            }
            dh = (dh + 2 - 4) / 2 + 1;
            dw = (dw + 2 - 4) / 2 + 1;
        }
        Ok((dh, dw))
    }

    pub fn forward(&self, image: &Tensor, frozen: bool) -> Result<Tensor> {
        check_rgb_input("discriminate", image)?;
        Self::output_size(image.shape()[2], image.shape()[3])?;
        let x = self.c1.forward(image, frozen)?.leaky_relu(LEAKY_SLOPE);
        let x = self.c2.forward(&x, frozen)?.leaky_relu(LEAKY_SLOPE);
        Ok(self.c3.forward(&x, frozen)?.sigmoid())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        for layer in [&self.c1, &self.c2, &self.c3] {
            p.extend(layer.params());
        }
        p
    }
}

/// Per-pixel two-class (background/foreground) classifier with
/// channel-softmax output at input resolution.
pub struct SegmenterNet {
    c1: ConvLayer,
    c2: ConvLayer,
    c3: ConvLayer,
}

impl SegmenterNet {
    pub fn new(name: &str, rng: &mut Rng64) -> SegmenterNet {
        SegmenterNet {
            c1: ConvLayer::new(&format!("{name}.c1"), 3, 8, 3, 1, 1, rng),
            c2: ConvLayer::new(&format!("{name}.c2"), 8, 8, 3, 1, 1, rng),
            c3: ConvLayer::new(&format!("{name}.c3"), 8, 2, 3, 1, 1, rng),
        }
    }

    /// [N,3,H,W] -> [N,2,H,W] class probabilities; channel 1 is foreground.
    pub fn forward(&self, image: &Tensor, frozen: bool) -> Result<Tensor> {
        check_rgb_input("segment", image)?;
        let x = self.c1.forward(image, frozen)?.leaky_relu(LEAKY_SLOPE);
        let x = self.c2.forward(&x, frozen)?.leaky_relu(LEAKY_SLOPE);
        self.c3.forward(&x, frozen)?.softmax_channels()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        for layer in [&self.c1, &self.c2, &self.c3] {
            p.extend(layer.params());
        }
        p
    }
}

/// One-stage proposal detector: an objectness grid at stride 8 with per-cell
/// box offsets. Head channels are [objectness logit, tx1, ty1, tx2, ty2];
/// a cell at grid (gy,gx) has center ((gx+0.5)*8, (gy+0.5)*8) and decodes
/// corners as center +- 8 plus 8*offset.
pub struct ProposalDetector {
    c1: ConvLayer,
    c2: ConvLayer,
    c3: ConvLayer,
    head: ConvLayer,
}

/// Grid stride of the detector in pixels.
pub const DETECTOR_STRIDE: usize = 8;
const CELL_RADIUS: f64 = DETECTOR_STRIDE as f64;

impl ProposalDetector {
    pub fn new(name: &str, rng: &mut Rng64) -> ProposalDetector {
        ProposalDetector {
            c1: ConvLayer::new(&format!("{name}.c1"), 3, 16, 4, 2, 1, rng),
            c2: ConvLayer::new(&format!("{name}.c2"), 16, 32, 4, 2, 1, rng),
            c3: ConvLayer::new(&format!("{name}.c3"), 32, 32, 4, 2, 1, rng),
            head: ConvLayer::new(&format!("{name}.head"), 32, 5, 3, 1, 1, rng),
        }
    }

    /// Raw head map [N,5,H/8,W/8]; training losses attach here.
    pub fn forward_raw(&self, image: &Tensor, frozen: bool) -> Result<Tensor> {
        check_rgb_input("detect", image)?;
        let x = self.c1.forward(image, frozen)?.leaky_relu(LEAKY_SLOPE);
        let x = self.c2.forward(&x, frozen)?.leaky_relu(LEAKY_SLOPE);
        let x = self.c3.forward(&x, frozen)?.leaky_relu(LEAKY_SLOPE);
        self.head.forward(&x, frozen)
    }

    /// Proposals for a single [1,3,H,W] image: decoded boxes clipped to the
    /// image, greedy IoU suppression, sorted by descending confidence and
    /// truncated to `max_out`. An untrained detector is allowed; the
    /// proposals are then noise.
    pub fn detect(&self, image: &Tensor, max_out: usize, nms_iou: f64) -> Result<Vec<Proposal>> {
        if max_out == 0 {
            return Err(Error::invalid("detect", "max_out must be >= 1"));
        }
        let raw = self.forward_raw(image, true)?;
        let (img_h, img_w) = (image.shape()[2], image.shape()[3]);
        let (gh, gw) = (raw.shape()[2], raw.shape()[3]);
        let cells = gh * gw;
        let v = raw.to_vec();

        let mut candidates: Vec<Proposal> = Vec::with_capacity(cells);
        for gy in 0..gh {
            for gx in 0..gw {
                let cell = gy * gw + gx;
                let logit = v[cell];
                let conf = 1.0 / (1.0 + (-logit).exp());
                let cx = (gx as f64 + 0.5) * DETECTOR_STRIDE as f64;
                let cy = (gy as f64 + 0.5) * DETECTOR_STRIDE as f64;
                let x1 = cx - CELL_RADIUS + CELL_RADIUS * v[cells + cell];
                let y1 = cy - CELL_RADIUS + CELL_RADIUS * v[2 * cells + cell];
                let x2 = cx + CELL_RADIUS + CELL_RADIUS * v[3 * cells + cell];
                let y2 = cy + CELL_RADIUS + CELL_RADIUS * v[4 * cells + cell];
                if x1 < x2 && y1 < y2 {
                    if let Some(rect) = (BoxF { x1, y1, x2, y2 }).clip(img_w, img_h) {
                        candidates.push(Proposal {
                            rect,
                            confidence: conf,
                        });
                    }
                }
            }
        }
        // Stable sort keeps cell order on (measure-zero) confidence ties.
        candidates.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
        let mut kept: Vec<Proposal> = Vec::new();
        for p in candidates {
            if kept.len() >= max_out {
                break;
            }
            if kept.iter().all(|k| k.rect.iou(&p.rect) <= nms_iou) {
                kept.push(p);
            }
        }
        Ok(kept)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        for layer in [&self.c1, &self.c2, &self.c3, &self.head] {
            p.extend(layer.params());
        }
        p
    }
}

/// Regression/objectness targets for one image: a cell is positive when its
/// center falls inside a ground-truth box (first such box in label order
/// wins) and regresses the corner offsets of that box.
pub struct DetectorTargets {
    pub grid_h: usize,
    pub grid_w: usize,
    /// 1.0 on positive cells.
    pub objectness: Vec<f64>,
    /// [4, grid] corner offset targets, zero on negative cells.
    pub offsets: Vec<f64>,
    pub positive_count: usize,
}

pub fn detector_targets(labels: &[BoxF], img_w: usize, img_h: usize) -> DetectorTargets {
    let gh = img_h / DETECTOR_STRIDE;
    let gw = img_w / DETECTOR_STRIDE;
    let cells = gh * gw;
    let mut objectness = vec![0.0; cells];
    let mut offsets = vec![0.0; 4 * cells];
    let mut positive_count = 0;
    for gy in 0..gh {
        for gx in 0..gw {
            let cell = gy * gw + gx;
            let cx = (gx as f64 + 0.5) * DETECTOR_STRIDE as f64;
            let cy = (gy as f64 + 0.5) * DETECTOR_STRIDE as f64;
            let hit = labels
                .iter()
                .find(|b| cx >= b.x1 && cx < b.x2 && cy >= b.y1 && cy < b.y2);
            if let Some(b) = hit {
                objectness[cell] = 1.0;
                offsets[cell] = (b.x1 - cx + CELL_RADIUS) / CELL_RADIUS;
                offsets[cells + cell] = (b.y1 - cy + CELL_RADIUS) / CELL_RADIUS;
                offsets[2 * cells + cell] = (b.x2 - cx - CELL_RADIUS) / CELL_RADIUS;
                offsets[3 * cells + cell] = (b.y2 - cy - CELL_RADIUS) / CELL_RADIUS;
                positive_count += 1;
            }
        }
    }
    DetectorTargets {
        grid_h: gh,
        grid_w: gw,
        objectness,
        offsets,
        positive_count,
    }
}
