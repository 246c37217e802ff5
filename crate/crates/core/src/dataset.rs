//! YOLO-style annotated datasets: loading, statistics, splitting and
//! box-aware augmentation.
//!
//! A dataset directory holds images plus one sibling `<stem>.txt` per image
//! with lines `class_id cx cy w h` (normalized center form). Instead of image
//! files, a `manifest.txt` with lines `<image-name> <width> <height>` may list
//! the images; this lets annotation-only corpora be evaluated without pixels.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBoxNorm;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CLASSES_FILE: &str = "classes.txt";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

/// Boxes whose clamped width or height falls below this are dropped after a
/// geometric augmentation.
pub const MIN_BOX_SIDE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: usize,
    pub bbox: BBoxNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<Annotation>,
}

impl AnnotatedImage {
    /// File stem of the image path; used as the image id by the evaluator.
    pub fn id(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub images: Vec<AnnotatedImage>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, images: Vec<AnnotatedImage>) -> Result<Self> {
        validate_class_names(&class_names)?;
        let d = Dataset { class_names, images };
        for img in &d.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::Validation(format!(
                    "{}: zero image dimension",
                    img.image_path.display()
                )));
            }
            for a in &img.annotations {
                if a.class_id >= d.class_names.len() {
                    return Err(Error::Validation(format!(
                        "{}: class id {} out of range for {} classes",
                        img.image_path.display(),
                        a.class_id,
                        d.class_names.len()
                    )));
                }
                a.bbox.validate()?;
            }
        }
        Ok(d)
    }

    pub fn annotation_count(&self) -> usize {
        self.images.iter().map(|i| i.annotations.len()).sum()
    }
}

fn validate_class_names(names: &[String]) -> Result<()> {
    if names.is_empty() {
        return Err(Error::Validation("class list is empty".into()));
    }
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::Validation(format!("duplicate class name '{n}'")));
        }
    }
    Ok(())
}

/// Reads one class name per non-empty line.
pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Parses one `class_id cx cy w h` line.
pub fn parse_annotation_line(line: &str, n_classes: usize, file: &Path, lineno: usize) -> Result<Annotation> {
    let parse_err = |msg: String| Error::Parse {
        file: file.to_path_buf(),
        line: lineno,
        msg,
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(parse_err(format!("expected 5 fields, found {}", fields.len())));
    }
    let class_id: usize = fields[0]
        .parse()
        .map_err(|_| parse_err(format!("bad class id '{}'", fields[0])))?;
    let mut v = [0.0; 4];
    for (slot, f) in v.iter_mut().zip(&fields[1..]) {
        *slot = f.parse().map_err(|_| parse_err(format!("bad number '{f}'")))?;
    }
    if class_id >= n_classes {
        return Err(Error::Validation(format!(
            "{}:{lineno}: class id {class_id} out of range for {n_classes} classes",
            file.display()
        )));
    }
    let bbox = BBoxNorm::new(v[0], v[1], v[2], v[3])
        .map_err(|e| Error::Validation(format!("{}:{lineno}: {e}", file.display())))?;
    Ok(Annotation { class_id, bbox })
}

/// Reads an annotation file; a missing file means no objects.
pub fn read_annotations(path: &Path, n_classes: usize) -> Result<Vec<Annotation>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_annotation_line(l, n_classes, path, i + 1))
        .collect()
}

pub fn write_annotations(path: &Path, anns: &[Annotation]) -> Result<()> {
    let mut s = String::new();
    for a in anns {
        s.push_str(&format!(
            "{} {} {} {} {}\n",
            a.class_id, a.bbox.cx, a.bbox.cy, a.bbox.w, a.bbox.h
        ));
    }
    fs::write(path, s)?;
    Ok(())
}

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

struct Entry {
    image_path: PathBuf,
    size: Option<(u32, u32)>,
}

fn manifest_entries(root: &Path, manifest: &Path) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(manifest)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            file: manifest.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err("expected '<image> <width> <height>'"));
        }
        let w: u32 = f[1].parse().map_err(|_| err("bad width"))?;
        let h: u32 = f[2].parse().map_err(|_| err("bad height"))?;
        if w == 0 || h == 0 {
            return Err(Error::Validation(format!(
                "{}:{}: zero image dimension",
                manifest.display(),
                i + 1
            )));
        }
        out.push(Entry {
            image_path: root.join(f[0]),
            size: Some((w, h)),
        });
    }
    Ok(out)
}

/// Loads every image of `root` with its annotations.
///
/// Images come from `manifest.txt` when present, otherwise from the PNG/PPM
/// files in the directory (sorted by name). Parsing runs in parallel; the
/// result is ordered exactly as a sequential load would be.
pub fn load_dataset(root: &Path, class_names: &[String]) -> Result<Dataset> {
    validate_class_names(class_names)?;
    let manifest = root.join(MANIFEST_FILE);
    let entries = if manifest.is_file() {
        manifest_entries(root, &manifest)?
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(root)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.is_file() && is_image_file(p));
        files.sort();
        files
            .into_iter()
            .map(|p| Entry {
                image_path: p,
                size: None,
            })
            .collect()
    };

    let n_classes = class_names.len();
    let images = entries
        .into_par_iter()
        .map(|e| {
            let (width, height) = match e.size {
                Some(s) => s,
                None => image::image_dimensions(&e.image_path)?,
            };
            let annotations = read_annotations(&e.image_path.with_extension("txt"), n_classes)?;
            Ok(AnnotatedImage {
                image_path: e.image_path,
                width,
                height,
                annotations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(class_names.to_vec(), images)
}

/// Writes `manifest.txt` plus one annotation file per image into `dir`,
/// using each image's file name.
pub fn write_dataset_annotations(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for img in &d.images {
        let name = img
            .image_path
            .file_name()
            .ok_or_else(|| Error::invalid("image path has no file name"))?;
        let name = name.to_string_lossy();
        manifest.push_str(&format!("{name} {} {}\n", img.width, img.height));
        write_annotations(&dir.join(&*name).with_extension("txt"), &img.annotations)?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(CLASSES_FILE), d.class_names.join("\n") + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// statistics

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub class: String,
    pub count: usize,
    /// Mean normalized width; `None` for classes without instances.
    pub mean_w: Option<f64>,
    pub mean_h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub n_images: usize,
    pub total_annotations: usize,
    pub classes: Vec<ClassStats>,
    pub bins: usize,
    /// `histogram[i][j]` counts boxes with normalized width in bin `i` and
    /// height in bin `j`; bins split `[0, 1]` evenly.
    pub histogram: Vec<Vec<usize>>,
}

impl StatsReport {
    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.count).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,count,mean_w,mean_h\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.classes {
            s.push_str(&format!(
                "{},{},{},{}\n",
                c.class,
                c.count,
                fmt(c.mean_w),
                fmt(c.mean_h)
            ));
        }
        s
    }

    /// Histogram grid; rows are width bins, columns height bins, both
    /// labelled by their lower edge.
    pub fn histogram_csv(&self) -> String {
        let edge = |i: usize| format!("{:.4}", i as f64 / self.bins as f64);
        let mut s = String::from("w\\h");
        for j in 0..self.bins {
            s.push(',');
            s.push_str(&edge(j));
        }
        s.push('\n');
        for (i, row) in self.histogram.iter().enumerate() {
            s.push_str(&edge(i));
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

pub fn dataset_stats(d: &Dataset, bins: usize) -> Result<StatsReport> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let k = d.class_names.len();
    let mut count = vec![0usize; k];
    let mut sw = vec![0.0; k];
    let mut sh = vec![0.0; k];
    let mut histogram = vec![vec![0usize; bins]; bins];
    for a in d.images.iter().flat_map(|i| &i.annotations) {
        count[a.class_id] += 1;
        sw[a.class_id] += a.bbox.w;
        sh[a.class_id] += a.bbox.h;
        histogram[bin_of(a.bbox.w, bins)][bin_of(a.bbox.h, bins)] += 1;
    }
    let classes = (0..k)
        .map(|c| {
            let n = count[c] as f64;
            ClassStats {
                class: d.class_names[c].clone(),
                count: count[c],
                mean_w: (count[c] > 0).then(|| sw[c] / n),
                mean_h: (count[c] > 0).then(|| sh[c] / n),
            }
        })
        .collect();
    Ok(StatsReport {
        n_images: d.images.len(),
        total_annotations: count.iter().sum(),
        classes,
        bins,
        histogram,
    })
}

// ---------------------------------------------------------------------------
// splitting

/// Part sizes for `n` items. Validation and test sizes are `n * r / sum`
/// rounded half away from zero; training takes the rest. With `n >= 3` every
/// part gets at least one item.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::invalid(format!("split ratios must be positive, got {ratios:?}")));
    }
    if n < 3 {
        return Err(Error::invalid(format!("cannot split {n} images three ways")));
    }
    let sum: f64 = ratios.iter().sum();
    let part = |r: f64| (((n as f64 * r) / sum).round() as usize).max(1);
    let mut val = part(ratios[1]);
    let mut test = part(ratios[2]);
    while val + test > n - 1 {
        if val >= test {
            val -= 1;
        } else {
            test -= 1;
        }
    }
    Ok([n - val - test, val, test])
}

/// Seeded shuffle followed by contiguous train/val/test slices.
pub fn split_dataset(d: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [n_train, n_val, _] = split_sizes(d.images.len(), ratios)?;
    let mut idx: Vec<usize> = (0..d.images.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: &[usize]| Dataset {
        class_names: d.class_names.clone(),
        images: range.iter().map(|&i| d.images[i].clone()).collect(),
    };
    Ok((
        take(&idx[..n_train]),
        take(&idx[n_train..n_train + n_val]),
        take(&idx[n_train + n_val..]),
    ))
}

// ---------------------------------------------------------------------------
// images

/// 8-bit interleaved pixel buffer with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::Format(format!("unsupported channel count {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Format("zero-sized image".into()));
        }
        if data.len() != width as usize * height as usize * channels as usize {
            return Err(Error::Format("pixel buffer length does not match dimensions".into()));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn blank(width: u32, height: u32, channels: u8) -> Result<Self> {
        Image::new(
            width,
            height,
            channels,
            vec![0; width as usize * height as usize * channels as usize],
        )
    }

    fn stride(&self) -> usize {
        self.width as usize * self.channels as usize
    }

    fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let c = self.channels as usize;
        let o = y * self.stride() + x * c;
        &self.data[o..o + c]
    }

    fn map_values(&self, f: impl Fn(u8) -> u8) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Decodes a PNG (8-bit gray or RGB) or binary PPM/PGM file.
pub fn read_image(path: &Path) -> Result<Image> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let format = match ext.as_str() {
        "png" => image::ImageFormat::Png,
        "ppm" | "pgm" | "pnm" => image::ImageFormat::Pnm,
        other => return Err(Error::Format(format!("unsupported image extension '{other}'"))),
    };
    let bytes = fs::read(path)?;
    let img = image::load_from_memory_with_format(&bytes, format)?;
    Ok(match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Image::new(w, h, 1, g.into_raw())?
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Image::new(w, h, 3, rgb.into_raw())?
        }
    })
}

/// Encodes by extension: `.ppm`/`.pgm`/`.pnm` as binary PNM, anything else as PNG.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let format = match ext.as_str() {
        "ppm" | "pgm" | "pnm" => image::ImageFormat::Pnm,
        _ => image::ImageFormat::Png,
    };
    image::save_buffer_with_format(path, &img.data, img.width, img.height, color, format)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// augmentation

/// A scalar augmentation parameter: fixed when `lo == hi`, otherwise drawn
/// uniformly from `[lo, hi]` with the augmentation seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpanRepr", into = "SpanRepr")]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpanRepr {
    Fixed(f64),
    Range([f64; 2]),
}

impl From<SpanRepr> for Span {
    fn from(r: SpanRepr) -> Self {
        match r {
            SpanRepr::Fixed(v) => Span::fixed(v),
            SpanRepr::Range([lo, hi]) => Span { lo, hi },
        }
    }
}

impl From<Span> for SpanRepr {
    fn from(s: Span) -> Self {
        if s.lo == s.hi {
            SpanRepr::Fixed(s.lo)
        } else {
            SpanRepr::Range([s.lo, s.hi])
        }
    }
}

impl Span {
    pub const fn fixed(v: f64) -> Self {
        Span { lo: v, hi: v }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * rng.random::<f64>()
        }
    }

    fn all(&self, pred: impl Fn(f64) -> bool) -> bool {
        self.lo <= self.hi && pred(self.lo) && pred(self.hi)
    }
}

impl FromStr for Span {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number '{t}'")))
        };
        match s.split_once("..") {
            Some((a, b)) => Ok(Span {
                lo: num(a)?,
                hi: num(b)?,
            }),
            None => Ok(Span::fixed(num(s)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    Hflip,
    Vflip,
    /// Rotation (degrees, clockwise on screen) and scaling about the image
    /// center, then translation by fractions of the image size.
    Affine {
        rotation: Span,
        scale: Span,
        translate_x: Span,
        translate_y: Span,
    },
    GaussianBlur {
        sigma: Span,
    },
    Invert,
    /// Adds `delta` to every channel value.
    Brightness {
        delta: Span,
    },
    /// Scales distance from mid-gray (128) by `factor`.
    Contrast {
        factor: Span,
    },
}

impl AugmentOp {
    pub fn rotation(degrees: f64) -> Self {
        AugmentOp::Affine {
            rotation: Span::fixed(degrees),
            scale: Span::fixed(1.0),
            translate_x: Span::fixed(0.0),
            translate_y: Span::fixed(0.0),
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self, AugmentOp::Hflip | AugmentOp::Vflip | AugmentOp::Affine { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            AugmentOp::Affine {
                rotation,
                scale,
                translate_x,
                translate_y,
            } => {
                rotation.all(f64::is_finite)
                    && scale.all(|s| s.is_finite() && s > 0.0)
                    && translate_x.all(f64::is_finite)
                    && translate_y.all(f64::is_finite)
            }
            AugmentOp::GaussianBlur { sigma } => sigma.all(|s| s.is_finite() && s >= 0.0),
            AugmentOp::Brightness { delta } => delta.all(f64::is_finite),
            AugmentOp::Contrast { factor } => factor.all(|f| f.is_finite() && f >= 0.0),
            AugmentOp::Hflip | AugmentOp::Vflip | AugmentOp::Invert => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid augmentation parameters: {self:?}")))
        }
    }

    fn resolve(&self, seed: u64) -> Resolved {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match *self {
            AugmentOp::Hflip => Resolved::Hflip,
            AugmentOp::Vflip => Resolved::Vflip,
            AugmentOp::Affine {
                rotation,
                scale,
                translate_x,
                translate_y,
            } => Resolved::Affine(Affine::new(
                rotation.sample(&mut rng),
                scale.sample(&mut rng),
                translate_x.sample(&mut rng),
                translate_y.sample(&mut rng),
            )),
            AugmentOp::GaussianBlur { sigma } => Resolved::Blur(sigma.sample(&mut rng)),
            AugmentOp::Invert => Resolved::Invert,
            AugmentOp::Brightness { delta } => Resolved::Brightness(delta.sample(&mut rng)),
            AugmentOp::Contrast { factor } => Resolved::Contrast(factor.sample(&mut rng)),
        }
    }
}

/// Text form: `hflip`, `vflip`, `invert`, `blur:sigma=1.5`,
/// `brightness:delta=-20..20`, `contrast:factor=0.8..1.2`,
/// `affine:rot=-10..10,scale=0.9..1.1,tx=0,ty=0` (omitted affine keys are identity).
impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let mut kv = Vec::new();
        for part in args.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value in '{part}'")))?;
            kv.push((k.trim().to_ascii_lowercase(), v.parse::<Span>()?));
        }
        let get = |key: &str, default: Option<f64>| -> Result<Span> {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .or(default.map(Span::fixed))
                .ok_or_else(|| Error::invalid(format!("'{name}' needs '{key}='")))
        };
        let op = match name.to_ascii_lowercase().as_str() {
            "hflip" => AugmentOp::Hflip,
            "vflip" => AugmentOp::Vflip,
            "invert" => AugmentOp::Invert,
            "blur" | "gaussian_blur" => AugmentOp::GaussianBlur {
                sigma: get("sigma", None)?,
            },
            "brightness" => AugmentOp::Brightness {
                delta: get("delta", None)?,
            },
            "contrast" => AugmentOp::Contrast {
                factor: get("factor", None)?,
            },
            "affine" | "rotate" => AugmentOp::Affine {
                rotation: get("rot", Some(0.0))?,
                scale: get("scale", Some(1.0))?,
                translate_x: get("tx", Some(0.0))?,
                translate_y: get("ty", Some(0.0))?,
            },
            other => return Err(Error::invalid(format!("unknown augmentation '{other}'"))),
        };
        op.validate()?;
        Ok(op)
    }
}

/// Parses a `;`-separated list of ops.
pub fn parse_ops(s: &str) -> Result<Vec<AugmentOp>> {
    s.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Resolved {
    Hflip,
    Vflip,
    Affine(Affine),
    Blur(f64),
    Invert,
    Brightness(f64),
    Contrast(f64),
}

/// Rotation-scale about the image center followed by a translation, in
/// continuous pixel coordinates with y pointing down.
#[derive(Debug, Clone, Copy)]
struct Affine {
    cos: f64,
    sin: f64,
    scale: f64,
    tx: f64,
    ty: f64,
}

impl Affine {
    fn new(degrees: f64, scale: f64, tx: f64, ty: f64) -> Self {
        let (sin, cos) = exact_sin_cos(degrees);
        Affine {
            cos,
            sin,
            scale,
            tx,
            ty,
        }
    }

    /// Maps a point given in pixels on a `w` x `h` image.
    fn forward(&self, x: f64, y: f64, w: f64, h: f64) -> (f64, f64) {
        let (dx, dy) = (x - w / 2.0, y - h / 2.0);
        (
            w / 2.0 + self.scale * (self.cos * dx - self.sin * dy) + self.tx * w,
            h / 2.0 + self.scale * (self.sin * dx + self.cos * dy) + self.ty * h,
        )
    }

    fn inverse(&self, x: f64, y: f64, w: f64, h: f64) -> (f64, f64) {
        let (dx, dy) = (
            (x - w / 2.0 - self.tx * w) / self.scale,
            (y - h / 2.0 - self.ty * h) / self.scale,
        );
        (
            w / 2.0 + self.cos * dx + self.sin * dy,
            h / 2.0 - self.sin * dx + self.cos * dy,
        )
    }
}

/// sin/cos of an angle in degrees, exact at multiples of 90.
fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let r = degrees.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

fn transform_boxes(anns: &[Annotation], op: &Resolved, width: u32, height: u32) -> Vec<Annotation> {
    let (w, h) = (width as f64, height as f64);
    match op {
        Resolved::Hflip => anns
            .iter()
            .map(|a| Annotation {
                bbox: BBoxNorm {
                    cx: 1.0 - a.bbox.cx,
                    ..a.bbox
                },
                ..*a
            })
            .collect(),
        Resolved::Vflip => anns
            .iter()
            .map(|a| Annotation {
                bbox: BBoxNorm {
                    cy: 1.0 - a.bbox.cy,
                    ..a.bbox
                },
                ..*a
            })
            .collect(),
        Resolved::Affine(t) => anns
            .iter()
            .filter_map(|a| {
                let p = a.bbox.to_pixels(w, h);
                let corners = [(p.x1, p.y1), (p.x2, p.y1), (p.x1, p.y2), (p.x2, p.y2)];
                let mapped = corners.map(|(x, y)| t.forward(x, y, w, h));
                let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| {
                    mapped.iter().map(pick).fold(init, f)
                };
                let x1 = (fold(f64::min, f64::INFINITY, |p| p.0) / w).clamp(0.0, 1.0);
                let x2 = (fold(f64::max, f64::NEG_INFINITY, |p| p.0) / w).clamp(0.0, 1.0);
                let y1 = (fold(f64::min, f64::INFINITY, |p| p.1) / h).clamp(0.0, 1.0);
                let y2 = (fold(f64::max, f64::NEG_INFINITY, |p| p.1) / h).clamp(0.0, 1.0);
                let (bw, bh) = (x2 - x1, y2 - y1);
                if bw < MIN_BOX_SIDE || bh < MIN_BOX_SIDE {
                    return None;
                }
                Some(Annotation {
                    class_id: a.class_id,
                    bbox: BBoxNorm {
                        cx: (x1 + x2) / 2.0,
                        cy: (y1 + y2) / 2.0,
                        w: bw,
                        h: bh,
                    },
                })
            })
            .collect(),
        Resolved::Blur(_) | Resolved::Invert | Resolved::Brightness(_) | Resolved::Contrast(_) => anns.to_vec(),
    }
}

fn saturate(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h, c) = (img.width as isize, img.height as isize, img.channels as usize);
    let clampi = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let stride = img.stride();
    let mut tmp = vec![0.0; img.data.len()];
    for y in 0..h as usize {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, k) in kernel.iter().enumerate() {
                    let sx = clampi(x + ki as isize - radius, w);
                    acc += k * img.data[y * stride + sx * c + ch] as f64;
                }
                tmp[y * stride + x as usize * c + ch] = acc;
            }
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w as usize {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, k) in kernel.iter().enumerate() {
                    let sy = clampi(y + ki as isize - radius, h);
                    acc += k * tmp[sy * stride + x * c + ch];
                }
                out.data[y as usize * stride + x * c + ch] = saturate(acc);
            }
        }
    }
    out
}

fn warp(img: &Image, t: &Affine) -> Image {
    let (w, h) = (img.width as f64, img.height as f64);
    let c = img.channels as usize;
    let stride = img.stride();
    let mut out = vec![0u8; img.data.len()];
    for y in 0..img.height as usize {
        for x in 0..img.width as usize {
            let (sx, sy) = t.inverse(x as f64 + 0.5, y as f64 + 0.5, w, h);
            let (fx, fy) = (sx.floor(), sy.floor());
            if fx >= 0.0 && fy >= 0.0 && fx < w && fy < h {
                let src = img.pixel(fx as usize, fy as usize);
                out[y * stride + x * c..y * stride + (x + 1) * c].copy_from_slice(src);
            }
        }
    }
    Image {
        data: out,
        ..img.clone()
    }
}

fn transform_pixels(img: &Image, op: &Resolved) -> Image {
    match *op {
        Resolved::Hflip => {
            let c = img.channels as usize;
            let mut out = img.clone();
            for row in out.data.chunks_exact_mut(img.stride()) {
                let px: Vec<&[u8]> = row.chunks_exact(c).rev().collect();
                let flipped: Vec<u8> = px.concat();
                row.copy_from_slice(&flipped);
            }
            out
        }
        Resolved::Vflip => {
            let rows: Vec<&[u8]> = img.data.chunks_exact(img.stride()).rev().collect();
            Image {
                data: rows.concat(),
                ..img.clone()
            }
        }
        Resolved::Affine(ref t) => warp(img, t),
        Resolved::Blur(sigma) => gaussian_blur(img, sigma),
        Resolved::Invert => img.map_values(|v| 255 - v),
        Resolved::Brightness(delta) => img.map_values(|v| saturate(v as f64 + delta)),
        Resolved::Contrast(f) => img.map_values(|v| saturate((v as f64 - 128.0) * f + 128.0)),
    }
}

/// Applies one op to an image and its boxes.
///
/// Geometric ops move boxes with the pixels (affine boxes become the clamped
/// hull of their mapped corners; slivers under [`MIN_BOX_SIDE`] are dropped).
/// Photometric ops leave boxes untouched.
pub fn augment(img: &Image, anns: &[Annotation], op: &AugmentOp, seed: u64) -> Result<(Image, Vec<Annotation>)> {
    Image::new(img.width, img.height, img.channels, img.data.clone())?;
    op.validate()?;
    let r = op.resolve(seed);
    Ok((
        transform_pixels(img, &r),
        transform_boxes(anns, &r, img.width, img.height),
    ))
}

/// The box half of [`augment`], for datasets whose pixels are not at hand.
pub fn augment_annotations(
    anns: &[Annotation],
    op: &AugmentOp,
    width: u32,
    height: u32,
    seed: u64,
) -> Result<Vec<Annotation>> {
    op.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::invalid("zero image dimension"));
    }
    Ok(transform_boxes(anns, &op.resolve(seed), width, height))
}

/// Seed for the `op`-th augmentation of the `image`-th image. Independent of
/// processing order, so parallel and sequential runs agree.
pub fn derive_seed(seed: u64, image: usize, op: usize) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ ((image as u64) << 20 ^ op as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn augmented_path(path: &Path, op: usize, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_aug{op}.{ext}"))
}

/// Originals followed, per image, by one augmented copy per op. Annotations
/// only; see [`augment_dataset_to_dir`] for pixels.
pub fn augment_dataset(d: &Dataset, ops: &[AugmentOp], seed: u64) -> Result<Dataset> {
    for op in ops {
        op.validate()?;
    }
    let images = d
        .images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut out = vec![img.clone()];
            for (j, op) in ops.iter().enumerate() {
                let ext = img
                    .image_path
                    .extension()
                    .map(|e| e.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "png".into());
                out.push(AnnotatedImage {
                    image_path: augmented_path(&img.image_path, j, &ext),
                    width: img.width,
                    height: img.height,
                    annotations: augment_annotations(
                        &img.annotations,
                        op,
                        img.width,
                        img.height,
                        derive_seed(seed, i, j),
                    )?,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        class_names: d.class_names.clone(),
        images: images.into_iter().flatten().collect(),
    })
}

/// Like [`augment_dataset`] but reads every image, writes originals and
/// augmented copies as PNG into `out_dir` together with their annotation
/// files, a manifest and the class list.
pub fn augment_dataset_to_dir(d: &Dataset, ops: &[AugmentOp], seed: u64, out_dir: &Path) -> Result<Dataset> {
    for op in ops {
        op.validate()?;
    }
    fs::create_dir_all(out_dir)?;
    let images = d
        .images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let pixels = read_image(&img.image_path)?;
            let base = out_dir.join(img.image_path.file_name().unwrap_or_default());
            let orig_path = base.with_extension("png");
            write_image(&orig_path, &pixels)?;
            let mut out = vec![AnnotatedImage {
                image_path: orig_path,
                ..img.clone()
            }];
            for (j, op) in ops.iter().enumerate() {
                let (px, anns) = augment(&pixels, &img.annotations, op, derive_seed(seed, i, j))?;
                let path = augmented_path(&base, j, "png");
                write_image(&path, &px)?;
                out.push(AnnotatedImage {
                    image_path: path,
                    width: px.width,
                    height: px.height,
                    annotations: anns,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let result = Dataset {
        class_names: d.class_names.clone(),
        images: images.into_iter().flatten().collect(),
    };
    write_dataset_annotations(&result, out_dir)?;
    Ok(result)
}
