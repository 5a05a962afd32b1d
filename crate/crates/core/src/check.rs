//! Independent reference implementations used by the test suites to
//! cross-check the main code paths: central finite differences for
//! gradients, a per-pixel membership scan for attention maps, and a
//! prefix-rescan precision/recall computation for average precision.
//!
//! Everything here is a direct transcription of the definitions and must
//! stay decoupled from the optimized implementations it checks.

/// Central finite differences: df/dx_i ~= (f(x+h e_i) - f(x-h e_i)) / 2h.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Componentwise relative error, falling back to absolute difference when
/// both values are tiny.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        let err = if scale < 1e-6 {
            (a - n).abs()
        } else {
            (a - n).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}

/// One proposal as plain numbers: (x1, y1, x2, y2, confidence).
pub type RawProposal = (f64, f64, f64, f64, f64);

/// How confidences gathered at a pixel collapse to an attention value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    Hard,
    Mean,
    Median,
    Max,
}

/// Literal per-pixel transcription of attention-map construction: for every
/// pixel, collect the confidences of covering proposals (confidence >= c,
/// half-open box membership), then collapse them.
pub fn attention_by_scan(
    proposals: &[RawProposal],
    c: f64,
    width: usize,
    height: usize,
    mode: ScanMode,
) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    for v in 0..height {
        for u in 0..width {
            let mut confs: Vec<f64> = Vec::new();
            for &(x1, y1, x2, y2, conf) in proposals {
                if conf >= c
                    && (u as f64) >= x1
                    && (u as f64) < x2
                    && (v as f64) >= y1
                    && (v as f64) < y2
                {
                    confs.push(conf);
                }
            }
            let value = if confs.is_empty() {
                0.0
            } else {
                match mode {
                    ScanMode::Hard => 1.0,
                    ScanMode::Max => confs.iter().cloned().fold(f64::MIN, f64::max),
                    ScanMode::Mean => confs.iter().sum::<f64>() / confs.len() as f64,
                    ScanMode::Median => {
                        confs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let n = confs.len();
                        if n % 2 == 1 {
                            confs[n / 2]
                        } else {
                            0.5 * (confs[n / 2 - 1] + confs[n / 2])
                        }
                    }
                }
            };
            out[v * width + u] = value.clamp(0.0, 1.0);
        }
    }
    out
}

/// Predictions and ground truth for one image, as plain boxes.
pub struct RawScene {
    /// (x1, y1, x2, y2, confidence)
    pub predictions: Vec<RawProposal>,
    /// (x1, y1, x2, y2)
    pub ground_truth: Vec<(f64, f64, f64, f64)>,
}

fn raw_iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let ix = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let iy = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    let inter = ix * iy;
    let union = (a.2 - a.0) * (a.3 - a.1) + (b.2 - b.0) * (b.3 - b.1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Brute-force average precision: re-runs greedy confidence-ordered matching
/// from scratch for every prefix of the globally sorted prediction list and
/// integrates the all-points-interpolated envelope over the resulting
/// precision/recall pairs.
pub fn ap_by_prefix_rescan(scenes: &[RawScene], iou_thresh: f64) -> f64 {
    let total_gt: usize = scenes.iter().map(|s| s.ground_truth.len()).sum();
    // Global order: confidence desc, then scene index, then insertion order.
    let mut order: Vec<(usize, usize, f64)> = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for (pi, p) in s.predictions.iter().enumerate() {
            order.push((si, pi, p.4));
        }
    }
    order.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    if total_gt == 0 {
        return if order.is_empty() { 1.0 } else { 0.0 };
    }
    if order.is_empty() {
        return 0.0;
    }

    let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    for k in 1..=order.len() {
        // Re-run matching on the first k predictions only.
        let mut matched: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.ground_truth.len()]).collect();
        let mut tp = 0usize;
        for &(si, pi, _) in &order[..k] {
            let pred = scenes[si].predictions[pi];
            let pbox = (pred.0, pred.1, pred.2, pred.3);
            let mut best = -1.0;
            let mut best_gt = None;
            for (gi, &g) in scenes[si].ground_truth.iter().enumerate() {
                if matched[si][gi] {
                    continue;
                }
                let iou = raw_iou(pbox, g);
                if iou > best {
                    best = iou;
                    best_gt = Some(gi);
                }
            }
            if let Some(gi) = best_gt {
                if best >= iou_thresh {
                    matched[si][gi] = true;
                    tp += 1;
                }
            }
        }
        let recall = tp as f64 / total_gt as f64;
        let precision = tp as f64 / k as f64;
        points.push((recall, precision));
    }

    // All-points interpolation: integrate max precision at recall >= r.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let (r, _) = points[i];
        if r > prev_recall {
            let envelope = points[i..]
                .iter()
                .map(|&(_, p)| p)
                .fold(f64::MIN, f64::max);
            ap += (r - prev_recall) * envelope;
            prev_recall = r;
        }
    }
    ap
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_square() {
        let g = numeric_gradient(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn scan_empty_proposals_gives_zeros() {
        let m = attention_by_scan(&[], 0.5, 4, 4, ScanMode::Hard);
        assert!(m.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rescan_perfect_predictions_have_ap_one() {
        let scenes = vec![RawScene {
            predictions: vec![(0.0, 0.0, 10.0, 10.0, 1.0)],
            ground_truth: vec![(0.0, 0.0, 10.0, 10.0)],
        }];
        assert_eq!(ap_by_prefix_rescan(&scenes, 0.5), 1.0);
    }
}
