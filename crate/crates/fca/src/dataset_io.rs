//! Dataset discovery, PNG decoding and `FMP1` files.
//!
//! Two layouts are understood:
//!
//! * `MVTec`: `<class>/test/<defect>/<id>.png`, masks at
//!   `<class>/ground_truth/<defect>/<id>_mask.png`. The `good` defect type
//!   has no masks.
//! * `Flat`: one directory of `<id>.png` files; an image is defective iff a
//!   sibling `<id>_mask.png` exists.
//!
//! Everything is listed in lexicographic order of the path bytes.

use std::fs;
use std::path::{Path, PathBuf};

use fca_core::{fmap, AnomalyMap, FeatureMap, Mask, RgbImage};
use image::imageops::FilterType;
use image::{GrayImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GOOD: &str = "good";
const MASK_SUFFIX: &str = "_mask";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    MVTec,
    Flat,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::MVTec => "mvtec",
            Layout::Flat => "flat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Layout::MVTec, Layout::Flat]
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub image: PathBuf,
    /// `None` for defect-free images, scored against an all-zero mask.
    pub mask: Option<PathBuf>,
    pub defect: String,
}

impl Sample {
    pub fn is_anomalous(&self) -> bool {
        self.mask.is_some()
    }

    /// `<defect>/<file stem>`, unique within a class.
    pub fn key(&self) -> String {
        format!("{}/{}", self.defect, file_stem(&self.image))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassIndex {
    pub name: String,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub layout: Layout,
    pub classes: Vec<ClassIndex>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_png(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn path_bytes(p: &Path) -> &[u8] {
    p.as_os_str().as_encoded_bytes()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        out.push(entry.map_err(Error::io(dir))?.path());
    }
    out.sort_by(|a, b| path_bytes(a).cmp(path_bytes(b)));
    Ok(out)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect())
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && is_png(p))
        .collect())
}

fn is_mask_file(p: &Path) -> bool {
    file_stem(p).ends_with(MASK_SUFFIX)
}

fn mask_path(dir: &Path, image: &Path) -> PathBuf {
    dir.join(format!("{}{MASK_SUFFIX}.png", file_stem(image)))
}

pub fn discover_dataset(root: &Path, layout: Layout) -> Result<DatasetIndex> {
    fs::metadata(root).map_err(Error::io(root))?;
    let classes = match layout {
        Layout::MVTec => discover_mvtec(root)?,
        Layout::Flat => discover_flat(root)?,
    };
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        layout,
        classes,
    })
}

fn discover_mvtec(root: &Path) -> Result<Vec<ClassIndex>> {
    let mut classes = Vec::new();
    for class_dir in sorted_dirs(root)? {
        let test = class_dir.join("test");
        if !test.is_dir() {
            continue;
        }
        let mut samples = Vec::new();
        for defect_dir in sorted_dirs(&test)? {
            let defect = defect_dir.file_name().unwrap().to_string_lossy().into_owned();
            let gt_dir = class_dir.join("ground_truth").join(&defect);
            for image in sorted_pngs(&defect_dir)? {
                let mask = if defect == GOOD {
                    None
                } else {
                    let m = mask_path(&gt_dir, &image);
                    if !m.is_file() {
                        return Err(Error::Index(format!(
                            "defective image {} has no mask at {}",
                            image.display(),
                            m.display()
                        )));
                    }
                    Some(m)
                };
                samples.push(Sample { image, mask, defect: defect.clone() });
            }
        }
        classes.push(ClassIndex {
            name: class_dir.file_name().unwrap().to_string_lossy().into_owned(),
            samples,
        });
    }
    Ok(classes)
}

fn discover_flat(root: &Path) -> Result<Vec<ClassIndex>> {
    let pngs = sorted_pngs(root)?;
    let (masks, images): (Vec<PathBuf>, Vec<PathBuf>) = pngs.into_iter().partition(|p| is_mask_file(p));
    for m in &masks {
        let stem = file_stem(m);
        let image = root.join(format!("{}.png", &stem[..stem.len() - MASK_SUFFIX.len()]));
        if !image.is_file() {
            return Err(Error::Index(format!("mask {} has no image", m.display())));
        }
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let samples = images
        .into_iter()
        .map(|image| {
            let m = mask_path(root, &image);
            let mask = m.is_file().then_some(m);
            let defect = if mask.is_some() { "defect" } else { GOOD };
            Sample { image, mask, defect: defect.into() }
        })
        .collect();
    let name = root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "flat".into());
    Ok(vec![ClassIndex { name, samples }])
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    ImageReader::open(path)
        .map_err(Error::io(path))?
        .with_guessed_format()
        .map_err(Error::io(path))?
        .decode()
        .map_err(Error::image(path))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_u8(h as usize, w as usize, img.as_raw())?)
}

/// Any nonzero color channel marks the pixel anomalous; alpha is ignored.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = open_image(path)?.to_rgb16();
    let (w, h) = img.dimensions();
    let data = img.as_raw().chunks_exact(3).map(|p| p.iter().any(|&v| v != 0)).collect();
    Ok(Mask::new(h as usize, w as usize, data)?)
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let data = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data).unwrap();
    img.save(path).map_err(Error::image(path))
}

/// Nearest-neighbour resampling with pixel-center alignment.
pub fn resize_mask_nearest(mask: &Mask, height: usize, width: usize) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    if (h, w) == (height, width) {
        return mask.clone();
    }
    let src = |dst: usize, n_dst: usize, n_src: usize| (((2 * dst + 1) * n_src) / (2 * n_dst)).min(n_src - 1);
    Mask::from_fn(height, width, |y, x| mask.at(src(y, height, h), src(x, width, w)))
}

pub fn read_fmap(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(fmap::decode(&bytes)?)
}

pub fn write_fmap(fm: &FeatureMap, path: &Path) -> Result<()> {
    fs::write(path, fmap::encode(fm)?).map_err(Error::io(path))
}

/// Precomputed deep features; values are used as stored.
pub fn load_external_features(path: &Path) -> Result<FeatureMap> {
    read_fmap(path)
}

pub fn read_scores(path: &Path) -> Result<AnomalyMap> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(fmap::decode_scores(&bytes)?)
}

pub fn write_scores(am: &AnomalyMap, path: &Path) -> Result<()> {
    fs::write(path, fmap::encode_scores(am)?).map_err(Error::io(path))
}

/// 8-bit grayscale rendering of `am`, mapping `lo` to black and `hi` to
/// white. A degenerate range renders black.
pub fn write_heatmap(am: &AnomalyMap, lo: f64, hi: f64, path: &Path) -> Result<()> {
    let span = hi - lo;
    let data = am
        .scores()
        .iter()
        .map(|&s| {
            if span > 0.0 {
                (255.0 * ((s - lo) / span).clamp(0.0, 1.0)).round() as u8
            } else {
                0
            }
        })
        .collect();
    let img = GrayImage::from_raw(am.width() as u32, am.height() as u32, data).unwrap();
    img.save(path).map_err(Error::image(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

/// Parameters of the one-shot Aitex conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct AitexSpec {
    /// Columns at both ends of a strip not covered by fabric.
    pub margin: usize,
    /// Output side of each square frame.
    pub size: u32,
}

/// Cuts Aitex strips into square frames and writes the defective ones in
/// the Flat layout. `images` holds the strips and `masks` their
/// `<id>_mask.png` annotations; strips without a mask are defect-free and
/// yield nothing. Frames reaching into the margin are discarded. Returns the
/// number of frames written.
pub fn prepare_aitex(images: &Path, masks: &Path, out: &Path, spec: &AitexSpec) -> Result<usize> {
    if spec.size == 0 {
        return Err(Error::config("frame size must be positive"));
    }
    create_dir(out)?;
    let mut written = 0;
    for strip_path in sorted_pngs(images)? {
        if is_mask_file(&strip_path) {
            continue;
        }
        let mask_file = mask_path(masks, &strip_path);
        if !mask_file.is_file() {
            continue;
        }
        let strip = open_image(&strip_path)?.to_rgb8();
        let mask = load_mask(&mask_file)?;
        let (w, h) = (strip.width() as usize, strip.height() as usize);
        if (mask.height(), mask.width()) != (h, w) {
            return Err(Error::Index(format!(
                "mask {} does not match its strip size",
                mask_file.display()
            )));
        }
        let stem = file_stem(&strip_path);
        for k in 0..w / h {
            let left = k * h;
            if left < spec.margin || left + h > w.saturating_sub(spec.margin) {
                continue;
            }
            let frame_mask = mask.crop(0, left, h, h)?;
            if !frame_mask.any() {
                continue;
            }
            let frame = image::imageops::crop_imm(&strip, left as u32, 0, h as u32, h as u32).to_image();
            let frame = image::imageops::resize(&frame, spec.size, spec.size, FilterType::Triangle);
            let frame_mask = resize_mask_nearest(&frame_mask, spec.size as usize, spec.size as usize);
            let name = format!("{stem}_{k:02}");
            let image_out = out.join(format!("{name}.png"));
            frame.save(&image_out).map_err(Error::image(&image_out))?;
            save_mask(&frame_mask, &out.join(format!("{name}{MASK_SUFFIX}.png")))?;
            written += 1;
        }
    }
    Ok(written)
}
