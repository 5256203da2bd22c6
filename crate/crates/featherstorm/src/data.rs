//! Dataset ingestion and donor sampling.
//!
//! Pixels live in `[0,1]` everywhere in the crate; 8-bit sources are scaled
//! by 1/255 on load. Supported inputs: IDX image/label pairs (optionally
//! gzipped) and class-per-subdirectory trees of PNG or binary PPM files.
//! Loading is order-deterministic: labels follow lexicographic subdirectory
//! order and files are visited in sorted name order, so identical trees get
//! identical ids.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// One `[H, W, C]` image in `[0,1]` with its class label and a stable id.
#[derive(Debug, Clone)]
pub struct ImageTensor {
    pub pixels: Tensor,
    pub label: usize,
    pub id: usize,
}

impl ImageTensor {
    /// Validates rank 3 and the `[0,1]` pixel range.
    pub fn new(pixels: Tensor, label: usize, id: usize) -> Result<ImageTensor> {
        if pixels.shape().len() != 3 {
            return Err(Error::Dataset(format!(
                "image {id}: need [H, W, C] pixels, got {:?}",
                pixels.shape()
            )));
        }
        if !pixels.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Dataset(format!(
                "image {id}: pixel outside [0, 1]"
            )));
        }
        Ok(ImageTensor { pixels, label, id })
    }
}

/// Immutable image collection with a label → image-position index.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    images: Vec<ImageTensor>,
    num_classes: usize,
    by_class: Vec<Vec<usize>>,
}

impl DatasetHandle {
    pub fn new(images: Vec<ImageTensor>, num_classes: usize) -> Result<DatasetHandle> {
        if images.is_empty() {
            return Err(Error::Dataset("empty dataset".into()));
        }
        let mut by_class = vec![Vec::new(); num_classes];
        for (pos, img) in images.iter().enumerate() {
            if img.label >= num_classes {
                return Err(Error::Dataset(format!(
                    "image {}: label {} >= num_classes {num_classes}",
                    img.id, img.label
                )));
            }
            by_class[img.label].push(pos);
        }
        Ok(DatasetHandle {
            images,
            num_classes,
            by_class,
        })
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Image positions (indices into [`DatasetHandle::images`]) for a label.
    pub fn class_members(&self, label: usize) -> &[usize] {
        &self.by_class[label]
    }

    /// Uniform draw over every image whose label differs from
    /// `exclude_label`; errors when no such image exists.
    pub fn sample_donor(
        &self,
        exclude_label: usize,
        rng: &mut RandomStream,
    ) -> Result<&ImageTensor> {
        let excluded = if exclude_label < self.num_classes {
            self.by_class[exclude_label].len()
        } else {
            0
        };
        let eligible = self.images.len() - excluded;
        if eligible == 0 {
            return Err(Error::Dataset(format!(
                "no donor image outside class {exclude_label}"
            )));
        }
        let mut k = rng.index(eligible);
        for (label, members) in self.by_class.iter().enumerate() {
            if label == exclude_label {
                continue;
            }
            if k < members.len() {
                return Ok(&self.images[members[k]]);
            }
            k -= members.len();
        }
        unreachable!("donor index {k} not covered by class index");
    }

    /// New handle keeping the first `per_class` images of every class (in
    /// position order) with their original ids.
    pub fn subset_per_class(&self, per_class: usize) -> Result<DatasetHandle> {
        let mut images = Vec::new();
        for members in &self.by_class {
            for &pos in members.iter().take(per_class) {
                images.push(self.images[pos].clone());
            }
        }
        images.sort_by_key(|img| img.id);
        DatasetHandle::new(images, self.num_classes)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a file, transparently gunzipping when the gzip magic is present.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = read_file(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.display().to_string(),
                detail: format!("gzip decode failed: {e}"),
            })?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], off: usize, path: &Path) -> Result<u32> {
    let end = off + 4;
    if bytes.len() < end {
        return Err(Error::Format {
            path: path.display().to_string(),
            detail: format!("truncated: need {end} bytes, have {}", bytes.len()),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[off],
        bytes[off + 1],
        bytes[off + 2],
        bytes[off + 3],
    ]))
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image/label file pair (gzipped or raw). Grayscale images come
/// back as `[rows, cols, 1]` with pixels scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DatasetHandle> {
    let img_bytes = read_maybe_gz(images_path)?;
    let magic = be_u32(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            path: images_path.display().to_string(),
            detail: format!("bad magic {magic:#010x}, want {IDX_IMAGE_MAGIC:#010x}"),
        });
    }
    let count = be_u32(&img_bytes, 4, images_path)? as usize;
    let rows = be_u32(&img_bytes, 8, images_path)? as usize;
    let cols = be_u32(&img_bytes, 12, images_path)? as usize;
    let need = 16 + count * rows * cols;
    if img_bytes.len() < need {
        return Err(Error::Format {
            path: images_path.display().to_string(),
            detail: format!("truncated: need {need} bytes, have {}", img_bytes.len()),
        });
    }

    let lbl_bytes = read_maybe_gz(labels_path)?;
    let magic = be_u32(&lbl_bytes, 0, labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format {
            path: labels_path.display().to_string(),
            detail: format!("bad magic {magic:#010x}, want {IDX_LABEL_MAGIC:#010x}"),
        });
    }
    let lbl_count = be_u32(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_count != count {
        return Err(Error::Format {
            path: labels_path.display().to_string(),
            detail: format!("label count {lbl_count} != image count {count}"),
        });
    }
    if lbl_bytes.len() < 8 + count {
        return Err(Error::Format {
            path: labels_path.display().to_string(),
            detail: format!(
                "truncated: need {} bytes, have {}",
                8 + count,
                lbl_bytes.len()
            ),
        });
    }

    let mut images = Vec::with_capacity(count);
    let mut max_label = 0usize;
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let pixels: Vec<f64> = img_bytes[start..start + rows * cols]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        let label = lbl_bytes[8 + i] as usize;
        max_label = max_label.max(label);
        images.push(ImageTensor::new(
            Tensor::new(&[rows, cols, 1], pixels),
            label,
            i,
        )?);
    }
    DatasetHandle::new(images, max_label + 1)
}

/// Write a dataset as a raw (non-gzipped) IDX pair. Requires uniform
/// single-channel shapes; pixels quantized to `round(v·255)`.
pub fn save_idx(images_path: &Path, labels_path: &Path, data: &DatasetHandle) -> Result<()> {
    let shape = data.images()[0].pixels.shape().to_vec();
    if shape[2] != 1 {
        return Err(Error::InvalidArgument(format!(
            "IDX export needs single-channel images, got C={}",
            shape[2]
        )));
    }
    let (rows, cols) = (shape[0], shape[1]);
    let mut img_bytes = Vec::with_capacity(16 + data.len() * rows * cols);
    img_bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img_bytes.extend_from_slice(&(data.len() as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut lbl_bytes = Vec::with_capacity(8 + data.len());
    lbl_bytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lbl_bytes.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for img in data.images() {
        if img.pixels.shape() != shape {
            return Err(Error::InvalidArgument(format!(
                "IDX export needs uniform shapes: {:?} vs {:?}",
                img.pixels.shape(),
                shape
            )));
        }
        img_bytes.extend(img.pixels.data().iter().map(|&v| quantize(v)));
        lbl_bytes.push(img.label as u8);
    }
    fs::write(images_path, img_bytes).map_err(|e| Error::io(images_path.display().to_string(), e))?;
    fs::write(labels_path, lbl_bytes).map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    Ok(())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn sorted_entries(dir: &Path, dirs_only: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| {
        // Pointing at a path that is not there is a usage error, not a
        // runtime fault; keep the path in the message.
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Config(format!("dataset directory {} does not exist", dir.display()))
        } else {
            Error::io(dir.display().to_string(), e)
        }
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = entry.path();
        if path.is_dir() == dirs_only {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Decode one PNG/PPM file to `[H, W, 3]` pixels in `[0,1]`.
pub fn load_image_file(path: &Path) -> Result<Tensor> {
    let decoded = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels: Vec<f64> = rgb.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::new(&[h as usize, w as usize, 3], pixels))
}

/// Load a class-per-subdirectory tree: labels follow lexicographic
/// subdirectory order, ids follow (class, sorted file name) order.
pub fn load_image_dir(root: &Path) -> Result<DatasetHandle> {
    let class_dirs = sorted_entries(root, true)?;
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!(
            "no class subdirectories under {}",
            root.display()
        )));
    }
    let mut images = Vec::new();
    let mut id = 0usize;
    for (label, class_dir) in class_dirs.iter().enumerate() {
        let files = sorted_entries(class_dir, false)?;
        if files.is_empty() {
            return Err(Error::Dataset(format!(
                "class directory {} is empty",
                class_dir.display()
            )));
        }
        for file in files {
            let pixels = load_image_file(&file)?;
            images.push(ImageTensor::new(pixels, label, id)?);
            id += 1;
        }
    }
    DatasetHandle::new(images, class_dirs.len())
}

/// Dump pixels as an 8-bit PNG (`round(v·255)` after clamping to `[0,1]`).
/// Accepts `C = 3` (RGB) or `C = 1` (grayscale).
pub fn save_png(path: &Path, pixels: &Tensor) -> Result<()> {
    let s = pixels.shape();
    if s.len() != 3 || !(s[2] == 1 || s[2] == 3) {
        return Err(Error::InvalidArgument(format!(
            "PNG dump needs [H, W, 1|3] pixels, got {s:?}"
        )));
    }
    let (h, w) = (s[0] as u32, s[1] as u32);
    let bytes: Vec<u8> = pixels.data().iter().map(|&v| quantize(v)).collect();
    let result = if s[2] == 3 {
        image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer length matches dimensions")
            .save_with_format(path, image::ImageFormat::Png)
    } else {
        image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer length matches dimensions")
            .save_with_format(path, image::ImageFormat::Png)
    };
    result.map_err(|e| Error::Format {
        path: path.display().to_string(),
        detail: format!("PNG encode failed: {e}"),
    })
}

/// Write a dataset as a class-per-subdirectory PNG tree (the inverse of
/// [`load_image_dir`], up to 8-bit quantization).
pub fn save_image_dir(root: &Path, data: &DatasetHandle) -> Result<()> {
    for img in data.images() {
        let class_dir = root.join(format!("{:03}", img.label));
        fs::create_dir_all(&class_dir)
            .map_err(|e| Error::io(class_dir.display().to_string(), e))?;
        let path = class_dir.join(format!("img_{:05}.png", img.id));
        save_png(&path, &img.pixels)?;
    }
    Ok(())
}
