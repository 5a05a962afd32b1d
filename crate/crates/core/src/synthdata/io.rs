//! Dataset directory layout:
//!
//! ```text
//! <dir>/images/<id>.png    lossless 8-bit RGB
//! <dir>/labels/<id>.txt    one `x1 y1 x2 y2` integer line per object
//! <dir>/masks/<id>.png     8-bit binary (0/255)
//! <dir>/manifest           ids, seed, spec hash and per-file checksums
//! ```
//!
//! Round trips are byte-exact; every file is checksummed in the manifest and
//! verified on read.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use super::{DomainDataset, DomainTag, ImageU8};
use crate::attention::BoxF;
use crate::error::{Error, Result};
use crate::hash::fnv1a64;

fn encode_rgb(img: &ImageU8) -> Result<Vec<u8>> {
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, img.rgb.clone())
        .expect("consistent image buffer");
    let mut bytes = Vec::new();
    DynamicImage::ImageRgb8(buf)
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: PathBuf::from("<memory>"),
            source: e,
        })?;
    Ok(bytes)
}

fn decode_rgb(path: &Path, bytes: &[u8]) -> Result<ImageU8> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    Ok(ImageU8 {
        width: img.width() as usize,
        height: img.height() as usize,
        rgb: img.into_raw(),
    })
}

fn encode_mask(width: usize, height: usize, mask: &[bool]) -> Result<Vec<u8>> {
    let raw: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(width as u32, height as u32, raw).expect("consistent mask buffer");
    let mut bytes = Vec::new();
    DynamicImage::ImageLuma8(buf)
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: PathBuf::from("<memory>"),
            source: e,
        })?;
    Ok(bytes)
}

fn decode_mask(path: &Path, bytes: &[u8]) -> Result<Vec<bool>> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_luma8();
    Ok(img.into_raw().iter().map(|&v| v > 127).collect())
}

fn format_labels(boxes: &[BoxF]) -> String {
    let mut s = String::new();
    for b in boxes {
        s.push_str(&format!(
            "{} {} {} {}\n",
            b.x1 as i64, b.y1 as i64, b.x2 as i64, b.y2 as i64
        ));
    }
    s
}

fn parse_labels(path: &Path, text: &str) -> Result<Vec<BoxF>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::data(
                path,
                format!("line {}: expected `x1 y1 x2 y2`, got `{line}`", lineno + 1),
            ));
        }
        let mut vals = [0i64; 4];
        for (slot, f) in vals.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| Error::data(path, format!("line {}: bad integer `{f}`", lineno + 1)))?;
        }
        out.push(BoxF::new(vals[0] as f64, vals[1] as f64, vals[2] as f64, vals[3] as f64)?);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<u64> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(fnv1a64(bytes))
}

fn read_checked(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let got = fnv1a64(&bytes);
    if got != expected {
        return Err(Error::data(
            path,
            format!("checksum mismatch: manifest says {expected:016x}, file is {got:016x}"),
        ));
    }
    Ok(bytes)
}

/// Write a dataset; idempotent given identical content.
pub fn write_dataset(dataset: &DomainDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let labeled = dataset.labels.is_some();
    if labeled {
        for sub in ["labels", "masks"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }

    let mut manifest = String::new();
    manifest.push_str("# awada dataset v1\n");
    manifest.push_str(&format!("domain = {}\n", dataset.domain.name()));
    manifest.push_str(&format!("seed = {}\n", dataset.seed));
    manifest.push_str(&format!("spec_hash = {:016x}\n", dataset.spec_hash));
    manifest.push_str(&format!("count = {}\n", dataset.len()));

    for (i, id) in dataset.ids.iter().enumerate() {
        let img_hash = write_file(&images_dir.join(format!("{id}.png")), &encode_rgb(&dataset.images[i])?)?;
        let mut line = format!("id {id} image={img_hash:016x}");
        if let Some(labels) = &dataset.labels {
            let path = dir.join("labels").join(format!("{id}.txt"));
            let h = write_file(&path, format_labels(&labels[i]).as_bytes())?;
            line.push_str(&format!(" labels={h:016x}"));
        }
        if let Some(masks) = &dataset.masks {
            let img = &dataset.images[i];
            let path = dir.join("masks").join(format!("{id}.png"));
            let h = write_file(&path, &encode_mask(img.width, img.height, &masks[i])?)?;
            line.push_str(&format!(" mask={h:016x}"));
        }
        manifest.push_str(&line);
        manifest.push('\n');
    }
    let manifest_path = dir.join("manifest");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

/// Read a dataset back, verifying every checksum. Missing or corrupt files
/// fail with the offending path in the error.
pub fn read_dataset(dir: &Path) -> Result<DomainDataset> {
    let manifest_path = dir.join("manifest");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;

    let mut domain = None;
    let mut seed = 0u64;
    let mut spec_hash = 0u64;
    let mut entries: Vec<(String, u64, Option<u64>, Option<u64>)> = Vec::new();

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("id ") {
            let mut fields = rest.split_whitespace();
            let id = fields
                .next()
                .ok_or_else(|| Error::data(&manifest_path, "id line without id"))?
                .to_string();
            let mut image = None;
            let mut labels = None;
            let mut mask = None;
            for f in fields {
                let (key, val) = f
                    .split_once('=')
                    .ok_or_else(|| Error::data(&manifest_path, format!("bad field `{f}`")))?;
                let h = u64::from_str_radix(val, 16)
                    .map_err(|_| Error::data(&manifest_path, format!("bad checksum `{val}`")))?;
                match key {
                    "image" => image = Some(h),
                    "labels" => labels = Some(h),
                    "mask" => mask = Some(h),
                    _ => return Err(Error::data(&manifest_path, format!("unknown field `{key}`"))),
                }
            }
            let image =
                image.ok_or_else(|| Error::data(&manifest_path, format!("id {id} missing image hash")))?;
            entries.push((id, image, labels, mask));
        } else if let Some((key, val)) = line.split_once(" = ") {
            match key {
                "domain" => domain = Some(DomainTag::parse(val)?),
                "seed" => {
                    seed = val
                        .parse()
                        .map_err(|_| Error::data(&manifest_path, format!("bad seed `{val}`")))?
                }
                "spec_hash" => {
                    spec_hash = u64::from_str_radix(val, 16)
                        .map_err(|_| Error::data(&manifest_path, format!("bad spec hash `{val}`")))?
                }
                "count" => {}
                _ => return Err(Error::data(&manifest_path, format!("unknown key `{key}`"))),
            }
        } else {
            return Err(Error::data(&manifest_path, format!("unparseable line `{line}`")));
        }
    }
    let domain = domain.ok_or_else(|| Error::data(&manifest_path, "manifest missing domain"))?;

    let labeled = entries.iter().any(|(_, _, l, _)| l.is_some());
    let mut ids = Vec::new();
    let mut images = Vec::new();
    let mut labels = if labeled { Some(Vec::new()) } else { None };
    let mut masks = if labeled { Some(Vec::new()) } else { None };

    for (id, img_hash, label_hash, mask_hash) in entries {
        let img_path = dir.join("images").join(format!("{id}.png"));
        let img = decode_rgb(&img_path, &read_checked(&img_path, img_hash)?)?;
        if let (Some(labels), Some(h)) = (labels.as_mut(), label_hash) {
            let path = dir.join("labels").join(format!("{id}.txt"));
            let bytes = read_checked(&path, h)?;
            let text = String::from_utf8(bytes).map_err(|_| Error::data(&path, "not utf-8"))?;
            let boxes = parse_labels(&path, &text)?;
            for b in &boxes {
                if b.x2 > img.width as f64 || b.y2 > img.height as f64 || b.x1 < 0.0 || b.y1 < 0.0 {
                    return Err(Error::data(&path, "label box outside image"));
                }
            }
            labels.push(boxes);
        }
        if let (Some(masks), Some(h)) = (masks.as_mut(), mask_hash) {
            let path = dir.join("masks").join(format!("{id}.png"));
            masks.push(decode_mask(&path, &read_checked(&path, h)?)?);
        }
        ids.push(id);
        images.push(img);
    }

    let ds = DomainDataset {
        domain,
        ids,
        images,
        labels,
        masks,
        seed,
        spec_hash,
    };
    ds.validate()?;
    Ok(ds)
}

/// Evaluation-only labels for an otherwise unlabeled target split, stored
/// beside the dataset so training loaders never see them.
pub fn write_eval_labels(dir: &Path, ids: &[String], labels: &[Vec<BoxF>]) -> Result<()> {
    let d = dir.join("eval_labels");
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    for (id, boxes) in ids.iter().zip(labels) {
        let path = d.join(format!("{id}.txt"));
        fs::write(&path, format_labels(boxes)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_eval_labels(dir: &Path, ids: &[String]) -> Result<Vec<Vec<BoxF>>> {
    let d = dir.join("eval_labels");
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let path = d.join(format!("{id}.txt"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        out.push(parse_labels(&path, &text)?);
    }
    Ok(out)
}
