//! IDX container parsing (the MNIST family's big-endian binary format).

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

/// Environment variable that overrides the dataset root directory.
pub const DATA_DIR_ENV: &str = "DSCFL_DATA_DIR";

/// Reads a whole file, gunzipping it when it starts with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Cursor<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.offset + 4;
        let b = self.bytes.get(self.offset..end).ok_or_else(|| Error::Parse {
            offset: self.offset as u64,
            message: format!("truncated file while reading {what}"),
        })?;
        self.offset = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parsed image file: `count` images of `rows x cols` bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut c = Cursor { bytes, offset: 0 };
    let magic = c.u32("magic number")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Parse { offset: 0, message: format!("bad image magic {magic}, expected {IMAGE_MAGIC}") });
    }
    let count = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let need = count * rows * cols;
    let body = &bytes[c.offset..];
    if body.len() < need {
        return Err(Error::Parse {
            offset: (c.offset + body.len()) as u64,
            message: format!("truncated image data: {need} bytes declared, {} present", body.len()),
        });
    }
    Ok(IdxImages { count, rows, cols, pixels: body[..need].to_vec() })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor { bytes, offset: 0 };
    let magic = c.u32("magic number")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Parse { offset: 0, message: format!("bad label magic {magic}, expected {LABEL_MAGIC}") });
    }
    let count = c.u32("label count")? as usize;
    let body = &bytes[c.offset..];
    if body.len() < count {
        return Err(Error::Parse {
            offset: (c.offset + body.len()) as u64,
            message: format!("truncated label data: {count} labels declared, {} present", body.len()),
        });
    }
    Ok(body[..count].to_vec())
}

/// A validated image/label file pair kept as raw bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxSplit {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl IdxSplit {
    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = parse_images(&read_maybe_gz(images_path)?)?;
        let labels = parse_labels(&read_maybe_gz(labels_path)?)?;
        if images.count != labels.len() {
            return Err(Error::Parse {
                offset: 4,
                message: format!("{} images but {} labels", images.count, labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
            return Err(invalid(format!("label {bad} outside 0..=9")));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.rows * self.images.cols
    }

    /// Labels only, with a single dummy feature per row; enough for
    /// label-based partitioning.
    pub fn label_view(&self) -> Result<Dataset> {
        Dataset::classification(1, vec![0.0; self.len()], self.labels.iter().map(|&l| usize::from(l)).collect(), 10)
    }

    /// The given rows as a 10-class dataset with pixels scaled to `[0, 1]`.
    pub fn to_dataset(&self, rows: &[usize]) -> Result<Dataset> {
        let dim = self.dim();
        let mut features = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            features.extend(self.images.pixels[r * dim..(r + 1) * dim].iter().map(|&p| f64::from(p) / 255.0));
        }
        Dataset::classification(dim, features, rows.iter().map(|&r| usize::from(self.labels[r])).collect(), 10)
    }

    pub fn to_full_dataset(&self) -> Result<Dataset> {
        self.to_dataset(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// Loads an image/label file pair as a 10-class dataset with pixels in `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    IdxSplit::load(images_path, labels_path)?.to_full_dataset()
}

/// Dataset root: `$DSCFL_DATA_DIR` if set, else the repository's `data/`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn find_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    [format!("{stem}.gz"), stem.to_string()].into_iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

/// Loads the `train-*` and `t10k-*` pairs of a directory.
pub fn load_split_dir(dir: &Path) -> Result<(IdxSplit, IdxSplit)> {
    let pair = |prefix: &str| -> Result<IdxSplit> {
        let img = find_file(dir, &format!("{prefix}-images-idx3-ubyte"));
        let lab = find_file(dir, &format!("{prefix}-labels-idx1-ubyte"));
        match (img, lab) {
            (Some(i), Some(l)) => IdxSplit::load(&i, &l),
            _ => Err(invalid(format!("no {prefix} IDX files in {}", dir.display()))),
        }
    };
    Ok((pair("train")?, pair("t10k")?))
}

/// First directory under `root` among `candidates` that holds a training image file.
pub fn locate(root: &Path, candidates: &[&str]) -> Result<PathBuf> {
    candidates
        .iter()
        .map(|c| root.join(c))
        .find(|d| find_file(d, "train-images-idx3-ubyte").is_some())
        .ok_or_else(|| invalid(format!("none of {candidates:?} found under {}", root.display())))
}
