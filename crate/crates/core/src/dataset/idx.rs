//! IDX reader for the MNIST files (optionally gzip-compressed).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, DatasetError, Sample, Schema};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, `rows * cols` bytes per image.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = File::open(path).map_err(io_err)?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DatasetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DatasetError::Idx("truncated header".into()))
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages, DatasetError> {
    let bytes = read_all(path.as_ref())?;
    let magic = be_u32(&bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(DatasetError::Idx(format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(&bytes, 4)? as usize;
    let rows = be_u32(&bytes, 8)? as usize;
    let cols = be_u32(&bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(DatasetError::Idx(format!(
            "expected {} pixel bytes, found {}",
            n * rows * cols,
            body.len()
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>, DatasetError> {
    let bytes = read_all(path.as_ref())?;
    let magic = be_u32(&bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DatasetError::Idx(format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(&bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(DatasetError::Idx(format!("expected {n} labels, found {}", body.len())));
    }
    Ok(body.to_vec())
}

/// Loads MNIST-style image/label files as a pixel-valued dataset with
/// classes `"0"`..`"9"`. `limit` keeps only the first images.
pub fn load_mnist(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<(Dataset, IdxImages), DatasetError> {
    let mut imgs = read_idx_images(images)?;
    let mut labs = read_idx_labels(labels)?;
    if imgs.len() != labs.len() {
        return Err(DatasetError::Idx(format!(
            "{} images but {} labels",
            imgs.len(),
            labs.len()
        )));
    }
    if let Some(limit) = limit {
        let keep = limit.min(labs.len());
        labs.truncate(keep);
        imgs.pixels.truncate(keep * imgs.rows * imgs.cols);
    }
    let pixel_names: Vec<String> = (0..imgs.rows * imgs.cols).map(|i| format!("px{i}")).collect();
    let name_refs: Vec<&str> = pixel_names.iter().map(String::as_str).collect();
    let classes: Vec<String> = (0..10).map(|c| c.to_string()).collect();
    let class_refs: Vec<&str> = classes.iter().map(String::as_str).collect();
    let schema = Schema::continuous(&name_refs, "digit", &class_refs);
    let samples = labs
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            Sample::new(
                i,
                imgs.image(i).iter().map(|&p| p as f64).collect(),
                Some(label as usize),
            )
        })
        .collect();
    let dataset = Dataset::from_samples("mnist", schema, samples)?;
    Ok((dataset, imgs))
}
