//! IDX image/label ingestion (big-endian, standard magic numbers).

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A labeled dataset read from an IDX pair: features normalized to [0,1],
/// one row per image.
#[derive(Debug, Clone)]
pub struct LabeledData {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<LabeledData> {
    let images = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if images.rows() != labels.len() {
        return Err(Error::FileFormat {
            path: labels_path.display().to_string(),
            detail: format!("{} labels for {} images", labels.len(), images.rows()),
        });
    }
    Ok(LabeledData {
        features: images,
        labels,
    })
}

fn read_images(path: &Path) -> Result<Tensor> {
    let fmt = |detail: &str| Error::FileFormat {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut r).map_err(|_| fmt("truncated magic"))?;
    if magic != IMAGES_MAGIC {
        return Err(fmt(&format!("bad image magic {magic:#010x}")));
    }
    let n = read_u32_be(&mut r).map_err(|_| fmt("truncated count"))? as usize;
    let rows = read_u32_be(&mut r).map_err(|_| fmt("truncated rows"))? as usize;
    let cols = read_u32_be(&mut r).map_err(|_| fmt("truncated cols"))? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    r.read_exact(&mut pixels).map_err(|_| fmt("truncated pixel data"))?;
    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Tensor::matrix(n, rows * cols, data)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let fmt = |detail: &str| Error::FileFormat {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut r).map_err(|_| fmt("truncated magic"))?;
    if magic != LABELS_MAGIC {
        return Err(fmt(&format!("bad label magic {magic:#010x}")));
    }
    let n = read_u32_be(&mut r).map_err(|_| fmt("truncated count"))? as usize;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels).map_err(|_| fmt("truncated label data"))?;
    Ok(labels.into_iter().map(|l| l as usize).collect())
}

fn read_u32_be<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}
