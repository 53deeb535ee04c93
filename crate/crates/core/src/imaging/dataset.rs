use std::path::{Path, PathBuf};

use rand::Rng;

use super::{bicubic_resize, read_png, Image};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// An HR image and its bicubic-degraded LR counterpart.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePair {
    pub hr: Image,
    pub lr: Image,
    pub scale: usize,
}

impl ImagePair {
    pub fn new(hr: Image, lr: Image, scale: usize) -> Result<Self> {
        if hr.width() != lr.width() * scale || hr.height() != lr.height() * scale || hr.channels() != lr.channels() {
            return Err(Error::Image(format!(
                "HR {}x{} is not LR {}x{} times {scale}",
                hr.width(),
                hr.height(),
                lr.width(),
                lr.height()
            )));
        }
        Ok(ImagePair { hr, lr, scale })
    }
}

/// Modcrops `hr` and derives the LR image by bicubic downscaling.
pub fn make_pair(hr: &Image, scale: usize) -> Result<ImagePair> {
    let hr = hr.modcrop(scale)?;
    let lr = bicubic_resize(&hr, hr.width() / scale, hr.height() / scale)?;
    ImagePair::new(hr, lr, scale)
}

/// Random aligned crop: an `lr_size`-square LR patch and the HR patch
/// covering the same area.
pub fn extract_patch<R: Rng + ?Sized>(pair: &ImagePair, lr_size: usize, rng: &mut R) -> Result<(Image, Image)> {
    if pair.lr.width() < lr_size || pair.lr.height() < lr_size {
        return Err(Error::Image(format!(
            "LR image {}x{} is smaller than the {lr_size}px patch",
            pair.lr.width(),
            pair.lr.height()
        )));
    }
    let x = rng.random_range(0..=pair.lr.width() - lr_size);
    let y = rng.random_range(0..=pair.lr.height() - lr_size);
    let s = pair.scale;
    Ok((
        pair.lr.crop(x, y, lr_size, lr_size)?,
        pair.hr.crop(x * s, y * s, lr_size * s, lr_size * s)?,
    ))
}

/// One of the eight flip/rotation symmetries of the square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Symmetry {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Symmetry {
    pub fn all() -> impl Iterator<Item = Symmetry> {
        (0..8u8).map(|k| Symmetry {
            flip: k >= 4,
            quarter_turns: k % 4,
        })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Symmetry {
        let k: u8 = rng.random_range(0..8);
        Symmetry {
            flip: k >= 4,
            quarter_turns: k % 4,
        }
    }

    /// Horizontal flip (if any) followed by clockwise quarter turns.
    pub fn apply(&self, img: &Image) -> Image {
        let mut out = if self.flip { img.flip_horizontal() } else { img.clone() };
        for _ in 0..self.quarter_turns {
            out = out.rot90();
        }
        out
    }
}

/// Applies one uniformly drawn symmetry to both patches.
pub fn augment<R: Rng + ?Sized>(lr: &Image, hr: &Image, rng: &mut R) -> (Image, Image) {
    let sym = Symmetry::random(rng);
    (sym.apply(lr), sym.apply(hr))
}

/// A set of training or evaluation pairs at one scale.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub names: Vec<String>,
    pub pairs: Vec<ImagePair>,
    pub scale: usize,
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

impl Dataset {
    pub fn from_pairs(names: Vec<String>, pairs: Vec<ImagePair>, scale: usize) -> Self {
        Dataset { names, pairs, scale }
    }

    /// Loads every PNG of `dir` as an HR image and degrades it on the fly.
    pub fn from_hr_dir(dir: &Path, scale: usize) -> Result<Self> {
        let mut ds = Dataset {
            scale,
            ..Default::default()
        };
        for path in png_files(dir)? {
            let hr = read_png(&path)?;
            ds.pairs.push(make_pair(&hr, scale)?);
            ds.names.push(file_name(&path));
        }
        if ds.pairs.is_empty() {
            return Err(Error::Dataset(format!("no PNG files in {}", dir.display())));
        }
        Ok(ds)
    }

    /// Loads `<root>/HR/*.png`. When `<root>/LR_x{scale}/<name>` exists it is
    /// used as the LR image, otherwise the LR image is generated.
    pub fn from_root(root: &Path, scale: usize) -> Result<Self> {
        let hr_dir = root.join("HR");
        let lr_dir = root.join(format!("LR_x{scale}"));
        let mut ds = Dataset {
            scale,
            ..Default::default()
        };
        for path in png_files(&hr_dir)? {
            let name = file_name(&path);
            let hr = read_png(&path)?;
            let lr_path = lr_dir.join(&name);
            let pair = if lr_path.is_file() {
                ImagePair::new(hr.modcrop(scale)?, read_png(&lr_path)?, scale)?
            } else {
                make_pair(&hr, scale)?
            };
            ds.pairs.push(pair);
            ds.names.push(name);
        }
        if ds.pairs.is_empty() {
            return Err(Error::Dataset(format!("no PNG files in {}", hr_dir.display())));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Draws `batch` augmented patch pairs (images chosen with replacement)
    /// and stacks them into `[0, 1]`-scaled LR and HR tensors.
    pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(
        &self,
        batch: usize,
        lr_size: usize,
        augment_patches: bool,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let first = self
            .pairs
            .first()
            .ok_or_else(|| Error::Dataset("empty dataset".into()))?;
        let c = first.hr.channels();
        let s = self.scale;
        let mut lr_data = Vec::with_capacity(batch * c * lr_size * lr_size);
        let mut hr_data = Vec::with_capacity(batch * c * lr_size * lr_size * s * s);
        for _ in 0..batch {
            let pair = &self.pairs[rng.random_range(0..self.pairs.len())];
            if pair.hr.channels() != c {
                return Err(Error::Dataset("images differ in channel count".into()));
            }
            let (lr, hr) = extract_patch(pair, lr_size, rng)?;
            let (lr, hr) = if augment_patches {
                augment(&lr, &hr, rng)
            } else {
                (lr, hr)
            };
            lr_data.extend(lr.to_tensor::<T>().into_data());
            hr_data.extend(hr.to_tensor::<T>().into_data());
        }
        Ok((
            Tensor::from_vec(Shape::new(batch, c, lr_size, lr_size), lr_data)?,
            Tensor::from_vec(Shape::new(batch, c, lr_size * s, lr_size * s), hr_data)?,
        ))
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}
