//! Precomputed per-image attention maps on disk.
//!
//! Layout: `<dir>/<image_id>.<ext>` plus `<dir>/index`. Binary maps (hard
//! accumulation, ground-truth, random, all-ones) are stored as 8-bit
//! grayscale PNGs; fractional maps (mean/median/max accumulation) as raw
//! 32-bit float planes, and map values are canonicalized to f32 precision at
//! build time so cached and freshly built maps agree exactly.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat};

use super::{
    build_attention_map, inflate_boxes, mask_from_gt, random_mask, AccumulationFn, AttentionMap,
    AttentionSource, GtLabels,
};
use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::nets::ProposalDetector;
use crate::synthdata::DomainDataset;

const FLOAT_MAGIC: &[u8; 4] = b"AWAT";

/// How to treat an existing partial cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachePolicy {
    /// Keep map files already on disk and only compute the missing ones.
    Resume,
    /// Drop everything and recompute.
    Rebuild,
}

fn file_ext(source: &AttentionSource, accumulation: AccumulationFn) -> &'static str {
    if source.is_binary(accumulation) {
        "png"
    } else {
        "f32"
    }
}

fn encode_png(map: &AttentionMap) -> Result<Vec<u8>> {
    let raw: Vec<u8> = map
        .values()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    let buf = GrayImage::from_raw(map.width() as u32, map.height() as u32, raw)
        .expect("consistent map buffer");
    let mut bytes = Vec::new();
    DynamicImage::ImageLuma8(buf)
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: PathBuf::from("<memory>"),
            source: e,
        })?;
    Ok(bytes)
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<AttentionMap> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_luma8();
    AttentionMap::new(
        img.width() as usize,
        img.height() as usize,
        img.into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
    )
}

fn encode_f32(map: &AttentionMap) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(12 + map.values().len() * 4);
    bytes.extend_from_slice(FLOAT_MAGIC);
    bytes.extend_from_slice(&(map.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for &v in map.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

fn decode_f32(path: &Path, bytes: &[u8]) -> Result<AttentionMap> {
    if bytes.len() < 12 || &bytes[..4] != FLOAT_MAGIC {
        return Err(Error::data(path, "not a float attention plane"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + w * h * 4 {
        return Err(Error::data(path, "truncated float attention plane"));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    AttentionMap::new(w, h, values)
}

/// Round values to the precision the chosen storage format keeps.
fn canonicalize(map: AttentionMap, binary: bool) -> AttentionMap {
    let values = map
        .values()
        .iter()
        .map(|&v| {
            if binary {
                (v * 255.0).round() / 255.0
            } else {
                v as f32 as f64
            }
        })
        .collect();
    AttentionMap::new(map.width(), map.height(), values).expect("values stay in range")
}

/// Build the attention map for one image of a dataset.
pub fn build_for_image(
    dataset: &DomainDataset,
    index: usize,
    source: &AttentionSource,
    accumulation: AccumulationFn,
    detector: Option<&ProposalDetector>,
    max_proposals: usize,
    nms_iou: f64,
) -> Result<AttentionMap> {
    let img = &dataset.images[index];
    let (w, h) = (img.width, img.height);
    let need_labels = || {
        dataset
            .labels
            .as_ref()
            .map(|l| l[index].as_slice())
            .ok_or_else(|| {
                Error::invalid(
                    "attention_cache",
                    format!("source {} needs labels, dataset has none", source.descriptor()),
                )
            })
    };
    let map = match source {
        AttentionSource::DetectorProposals { threshold } => {
            let det = detector.ok_or_else(|| {
                Error::invalid("attention_cache", "detector_proposals source needs a detector")
            })?;
            let proposals = det.detect(&img.to_tensor(), max_proposals, nms_iou)?;
            build_attention_map(&proposals, *threshold, w, h, accumulation)
        }
        AttentionSource::GtBoxes => mask_from_gt(&GtLabels::Boxes(need_labels()?), w, h)?,
        AttentionSource::GtBoxesInflated { factor } => {
            let (inflated, _dropped) = inflate_boxes(need_labels()?, *factor, w, h)?;
            mask_from_gt(&GtLabels::Boxes(&inflated), w, h)?
        }
        AttentionSource::GtMasks => {
            let masks = dataset.masks.as_ref().ok_or_else(|| {
                Error::invalid("attention_cache", "gt_masks source needs masks, dataset has none")
            })?;
            mask_from_gt(&GtLabels::Mask(&masks[index]), w, h)?
        }
        AttentionSource::Random { fraction, seed } => {
            let per_image = seed ^ fnv1a64(dataset.ids[index].as_bytes());
            random_mask(*fraction, w, h, per_image)?
        }
        AttentionSource::AllOnes => AttentionMap::ones(w, h),
    };
    Ok(canonicalize(map, source.is_binary(accumulation)))
}

/// Precompute one attention file per image plus an index with checksums.
/// Idempotent: identical inputs and seeds produce identical bytes. Returns
/// the number of maps computed (as opposed to kept from a resumed cache).
pub fn precompute_attention_cache(
    dataset: &DomainDataset,
    source: &AttentionSource,
    accumulation: AccumulationFn,
    detector: Option<&ProposalDetector>,
    max_proposals: usize,
    nms_iou: f64,
    dir: &Path,
    policy: CachePolicy,
) -> Result<usize> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if policy == CachePolicy::Rebuild {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        }
    }

    let ext = file_ext(source, accumulation);
    let binary = source.is_binary(accumulation);
    let mut computed = 0;
    let mut lines = Vec::with_capacity(dataset.len());
    for (i, id) in dataset.ids.iter().enumerate() {
        let filename = format!("{id}.{ext}");
        let path = dir.join(&filename);
        let bytes = if policy == CachePolicy::Resume && path.exists() {
            fs::read(&path).map_err(|e| Error::io(&path, e))?
        } else {
            let map = build_for_image(dataset, i, source, accumulation, detector, max_proposals, nms_iou)?;
            let bytes = if binary { encode_png(&map)? } else { encode_f32(&map) };
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            computed += 1;
            bytes
        };
        lines.push(format!("map {id} {filename} {:016x}", fnv1a64(&bytes)));
    }

    let threshold = match source {
        AttentionSource::DetectorProposals { threshold } => threshold.to_string(),
        _ => "none".to_string(),
    };
    let mut index = String::new();
    index.push_str("# awada attention cache v1\n");
    index.push_str(&format!("source = {}\n", source.descriptor()));
    index.push_str(&format!("accumulation = {}\n", accumulation.name()));
    index.push_str(&format!("threshold = {threshold}\n"));
    index.push_str(&format!("count = {}\n", dataset.len()));
    for line in &lines {
        index.push_str(line);
        index.push('\n');
    }
    let index_path = dir.join("index");
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;
    Ok(computed)
}

/// A parsed cache index.
pub struct CacheIndex {
    pub dir: PathBuf,
    pub source: String,
    pub accumulation: String,
    pub entries: Vec<(String, String, u64)>,
}

pub fn read_cache_index(dir: &Path) -> Result<CacheIndex> {
    let index_path = dir.join("index");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut source = String::new();
    let mut accumulation = String::new();
    let mut entries = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("map ") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::data(&index_path, format!("bad map line `{line}`")));
            }
            let hash = u64::from_str_radix(fields[2], 16)
                .map_err(|_| Error::data(&index_path, format!("bad checksum `{}`", fields[2])))?;
            entries.push((fields[0].to_string(), fields[1].to_string(), hash));
        } else if let Some((key, val)) = line.split_once(" = ") {
            match key {
                "source" => source = val.to_string(),
                "accumulation" => accumulation = val.to_string(),
                "threshold" | "count" => {}
                _ => return Err(Error::data(&index_path, format!("unknown key `{key}`"))),
            }
        }
    }
    Ok(CacheIndex {
        dir: dir.to_path_buf(),
        source,
        accumulation,
        entries,
    })
}

impl CacheIndex {
    /// Load one map, verifying its checksum.
    pub fn load(&self, id: &str) -> Result<AttentionMap> {
        let (_, filename, expected) = self
            .entries
            .iter()
            .find(|(eid, _, _)| eid == id)
            .ok_or_else(|| Error::MissingArtifact {
                what: format!("attention map for image {id} in {}", self.dir.display()),
                stage: "build-attn".into(),
            })?;
        let path = self.dir.join(filename);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let got = fnv1a64(&bytes);
        if got != *expected {
            return Err(Error::data(
                &path,
                format!("checksum mismatch: index says {expected:016x}, file is {got:016x}"),
            ));
        }
        if filename.ends_with(".png") {
            decode_png(&path, &bytes)
        } else {
            decode_f32(&path, &bytes)
        }
    }

    /// Load every map in index order.
    pub fn load_all(&self) -> Result<Vec<(String, AttentionMap)>> {
        self.entries
            .iter()
            .map(|(id, _, _)| Ok((id.clone(), self.load(id)?)))
            .collect()
    }
}

/// Convenience loader used by training and tests.
pub fn load_cached_map(dir: &Path, id: &str) -> Result<AttentionMap> {
    read_cache_index(dir)?.load(id)
}
