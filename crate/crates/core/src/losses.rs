//! Training objectives: adversarial losses in log and least-squares form,
//! L1 cycle consistency, KL semantic consistency against a frozen segmenter,
//! and the weighted total. Each loss optionally runs its spatial mean
//! through attention weighting; with all-ones attention every loss equals
//! its unweighted counterpart.

use crate::attention::{awm_weight_batch, awm_weight_batch_normalized, AttentionMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights a1..a4 for the source->target GAN, target->source GAN, cycle and
/// semantic terms of the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            a1: 1.0,
            a2: 1.0,
            a3: 10.0,
            a4: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a1", self.a1), ("a2", self.a2), ("a3", self.a3), ("a4", self.a4)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss weight {name}={v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Which loss groups run through attention weighting. The default weights
/// only the adversarial groups and leaves the regularizers unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AwmPlacement {
    pub weight_disc: bool,
    pub weight_gen: bool,
    pub weight_cyc: bool,
    pub weight_sem: bool,
}

impl Default for AwmPlacement {
    fn default() -> Self {
        AwmPlacement {
            weight_disc: true,
            weight_gen: true,
            weight_cyc: false,
            weight_sem: false,
        }
    }
}

impl AwmPlacement {
    pub fn none() -> Self {
        AwmPlacement {
            weight_disc: false,
            weight_gen: false,
            weight_cyc: false,
            weight_sem: false,
        }
    }

    pub fn descriptor(&self) -> String {
        let mark = |b: bool| if b { 'x' } else { '-' };
        format!(
            "disc{}_gen{}_cyc{}_sem{}",
            mark(self.weight_disc),
            mark(self.weight_gen),
            mark(self.weight_cyc),
            mark(self.weight_sem)
        )
    }

    pub fn parse(s: &str) -> Result<AwmPlacement> {
        let flags: Vec<&str> = s.split(',').collect();
        if flags.len() != 4 {
            return Err(Error::Config(format!(
                "placement `{s}` must be four comma-separated 0/1 flags (disc,gen,cyc,sem)"
            )));
        }
        let parse_flag = |f: &str| match f.trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(Error::Config(format!("bad placement flag `{other}`"))),
        };
        Ok(AwmPlacement {
            weight_disc: parse_flag(flags[0])?,
            weight_gen: parse_flag(flags[1])?,
            weight_cyc: parse_flag(flags[2])?,
            weight_sem: parse_flag(flags[3])?,
        })
    }
}

/// Adversarial objective shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GanFormulation {
    /// -[mean log D(real) + mean log(1 - D(fake))] for the discriminator.
    Log,
    /// mean (D(real)-1)^2 + mean D(fake)^2 for the discriminator.
    LeastSquares,
}

impl GanFormulation {
    pub fn parse(s: &str) -> Result<GanFormulation> {
        match s {
            "log" => Ok(GanFormulation::Log),
            "least_squares" => Ok(GanFormulation::LeastSquares),
            _ => Err(Error::Config(format!("unknown gan formulation `{s}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GanFormulation::Log => "log",
            GanFormulation::LeastSquares => "least_squares",
        }
    }
}

/// Per-batch attention maps plus the weighting mode.
#[derive(Clone, Copy)]
pub struct Attn<'a> {
    pub maps: &'a [AttentionMap],
    /// Divide by the attention mass instead of W*H. Off everywhere by
    /// default; kept selectable because it measurably changes training.
    pub normalized: bool,
}

impl<'a> Attn<'a> {
    pub fn mean(maps: &'a [AttentionMap]) -> Attn<'a> {
        Attn {
            maps,
            normalized: false,
        }
    }
}

/// Spatial mean, attention-weighted when maps are supplied.
fn weighted_mean(map: &Tensor, attn: Option<Attn>) -> Result<Tensor> {
    match attn {
        Some(a) if a.normalized => awm_weight_batch_normalized(map, a.maps),
        Some(a) => awm_weight_batch(map, a.maps),
        None => map.mean_all(),
    }
}

/// Discriminator loss over spatial score maps. The discriminator pushes real
/// scores toward 1 and fake scores toward 0; attention maps, when given,
/// weight the per-pixel loss maps (real scores pair with the real images'
/// maps, fake scores with the maps of the images the fakes were made from).
pub fn gan_loss_discriminator(
    d_real: &Tensor,
    d_fake: &Tensor,
    form: GanFormulation,
    attn_real: Option<Attn>,
    attn_fake: Option<Attn>,
) -> Result<Tensor> {
    match form {
        GanFormulation::Log => {
            let real_term = weighted_mean(&d_real.log_clamped(), attn_real)?;
            let fake_term = weighted_mean(&d_fake.one_minus().log_clamped(), attn_fake)?;
            Ok(real_term.add(&fake_term)?.mul_scalar(-1.0))
        }
        GanFormulation::LeastSquares => {
            let real_err = d_real.add_scalar(-1.0);
            let real_term = weighted_mean(&real_err.mul(&real_err)?, attn_real)?;
            let fake_term = weighted_mean(&d_fake.mul(d_fake)?, attn_fake)?;
            real_term.add(&fake_term)
        }
    }
}

/// Generator-side adversarial loss: the generator pushes the fake scores
/// toward 1.
pub fn gan_loss_generator(
    d_fake: &Tensor,
    form: GanFormulation,
    attn: Option<Attn>,
) -> Result<Tensor> {
    match form {
        GanFormulation::Log => Ok(weighted_mean(&d_fake.log_clamped(), attn)?.mul_scalar(-1.0)),
        GanFormulation::LeastSquares => {
            let err = d_fake.add_scalar(-1.0);
            weighted_mean(&err.mul(&err)?, attn)
        }
    }
}

/// L1 reconstruction loss for both transformation directions. The per-pixel
/// map is the channel mean of |recon - original|; attention maps, when
/// given, weight each direction with its own domain's maps.
pub fn cycle_loss(
    x_s: &Tensor,
    recon_s: &Tensor,
    x_t: &Tensor,
    recon_t: &Tensor,
    attn_s: Option<Attn>,
    attn_t: Option<Attn>,
) -> Result<Tensor> {
    if x_s.shape() != recon_s.shape() || x_t.shape() != recon_t.shape() {
        return Err(Error::shape(
            "cycle_loss",
            format!(
                "reconstruction shapes {:?}/{:?} vs originals {:?}/{:?}",
                recon_s.shape(),
                recon_t.shape(),
                x_s.shape(),
                x_t.shape()
            ),
        ));
    }
    let forward = weighted_mean(&recon_s.sub(x_s)?.abs().mean_axes(&[1])?, attn_s)?;
    let backward = weighted_mean(&recon_t.sub(x_t)?.abs().mean_axes(&[1])?, attn_t)?;
    forward.add(&backward)
}

/// Per-pixel Kullback-Leibler divergence KL(P || Q) between class
/// distributions, averaged spatially. P is the prediction on the stylized
/// image (gradients flow through it); Q is the prediction on the original,
/// always treated as a constant target.
pub fn semantic_loss(
    seg_orig: &Tensor,
    seg_stylized: &Tensor,
    attn: Option<Attn>,
) -> Result<Tensor> {
    if seg_orig.shape() != seg_stylized.shape() {
        return Err(Error::shape(
            "semantic_loss",
            format!("{:?} vs {:?}", seg_orig.shape(), seg_stylized.shape()),
        ));
    }
    let s = seg_orig.shape();
    if s.len() != 4 {
        return Err(Error::shape(
            "semantic_loss",
            format!("expected [N,C,H,W] distributions, got {:?}", s),
        ));
    }
    for (name, t) in [("original", seg_orig), ("stylized", seg_stylized)] {
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let ok = t.with_values(|v| {
            let hw = h * w;
            for ni in 0..n {
                for p in 0..hw {
                    let mut total = 0.0;
                    for ci in 0..c {
                        let x = v[ni * c * hw + ci * hw + p];
                        if !(-(1e-9)..=1.0 + 1e-9).contains(&x) {
                            return false;
                        }
                        total += x;
                    }
                    if (total - 1.0).abs() > 1e-6 {
                        return false;
                    }
                }
            }
            true
        });
        if !ok {
            return Err(Error::invalid(
                "semantic_loss",
                format!("{name} predictions are not per-pixel distributions"),
            ));
        }
    }
    let q = seg_orig.detach();
    let log_ratio = seg_stylized.log_clamped().sub(&q.log_clamped())?;
    let kl_map = seg_stylized.mul(&log_ratio)?.sum_axes(&[1])?;
    weighted_mean(&kl_map, attn)
}

/// a1*gan_st + a2*gan_ts + a3*cyc + a4*sem. Components must be finite
/// scalars; a NaN aborts with the component name.
pub fn total_loss(
    gan_st: &Tensor,
    gan_ts: &Tensor,
    cyc: &Tensor,
    sem: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    for (name, t) in [("gan_st", gan_st), ("gan_ts", gan_ts), ("cyc", cyc), ("sem", sem)] {
        if t.len() != 1 {
            return Err(Error::shape("total_loss", format!("component {name} is not scalar")));
        }
        if !t.item().is_finite() {
            return Err(Error::NonFinite {
                what: format!("loss component {name}"),
            });
        }
    }
    gan_st
        .mul_scalar(w.a1)
        .add(&gan_ts.mul_scalar(w.a2))?
        .add(&cyc.mul_scalar(w.a3))?
        .add(&sem.mul_scalar(w.a4))
}
