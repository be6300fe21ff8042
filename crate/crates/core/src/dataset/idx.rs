use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;

use super::LabeledDataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<(Vec<usize>, usize)> {
    let mut cur = Cursor::new(bytes);
    let truncated = |_| format_err(path, "truncated header");
    let found = cur.read_u32::<BigEndian>().map_err(truncated)?;
    if found != magic {
        return Err(format_err(
            path,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let sizes = (0..dims)
        .map(|_| cur.read_u32::<BigEndian>().map(|v| v as usize).map_err(truncated))
        .collect::<Result<Vec<_>>>()?;
    Ok((sizes, cur.position() as usize))
}

/// Loads an IDX image/label pair, keeping only the listed digit classes.
///
/// Pixels are scaled to `[0, 1]`. Kept labels are re-indexed densely in
/// ascending order, e.g. digits `{3, 7}` become classes `0, 1`.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    keep_classes: &[u8],
) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let (img_dims, img_offset) = read_header(images_path, &images, IMAGES_MAGIC, 3)?;
    let (lbl_dims, lbl_offset) = read_header(labels_path, &labels, LABELS_MAGIC, 1)?;
    let (count, rows, cols) = (img_dims[0], img_dims[1], img_dims[2]);
    if lbl_dims[0] != count {
        return Err(format_err(
            labels_path,
            format!("{} labels for {count} images", lbl_dims[0]),
        ));
    }
    let pixels = rows * cols;
    let mut body = Cursor::new(&images[img_offset..]);
    let mut raw = vec![0u8; count * pixels];
    body.read_exact(&mut raw)
        .map_err(|_| format_err(images_path, "truncated image data"))?;
    let label_bytes = labels
        .get(lbl_offset..lbl_offset + count)
        .ok_or_else(|| format_err(labels_path, "truncated label data"))?;

    let mut keep: Vec<u8> = keep_classes.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.is_empty() {
        return Err(Error::Config("no classes selected".into()));
    }

    let selected: Vec<(usize, usize)> = label_bytes
        .iter()
        .enumerate()
        .filter_map(|(i, digit)| keep.binary_search(digit).ok().map(|class| (i, class)))
        .collect();
    let mut features = Array2::zeros((selected.len(), pixels));
    for (row, &(i, _)) in selected.iter().enumerate() {
        let src = &raw[i * pixels..(i + 1) * pixels];
        features
            .row_mut(row)
            .iter_mut()
            .zip(src)
            .for_each(|(dst, &px)| *dst = px as f64 / 255.0);
    }
    let labels = selected.iter().map(|&(_, c)| c).collect();
    let ids = selected.iter().map(|&(i, _)| i).collect();
    LabeledDataset::with_ids(features, labels, keep.len(), ids)
}
