//! Labeled image sets: IDX (MNIST) parsing, rotated MNIST and a small
//! synthetic shape set for quick end-to-end runs.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::autodiff::Rng64;
use crate::error::{Error, Result};
use crate::group::{FiniteGroup, GroupName};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        })
    }
}

/// Images `[N, C, Y, X]` in `[0, 1]` with one class id per image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: Tensor<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl LabeledImageSet {
    pub fn new(images: Tensor<f64>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside {classes} classes")));
        }
        Ok(LabeledImageSet { images, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Copies the listed samples into a batch converted to `T`.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let per: usize = self.image_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(self.images.data()[i * per..(i + 1) * per].iter().map(|&v| T::from_f64(v)));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.image_shape());
        let images = Tensor::new(&shape, data).expect("batch shape");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Self {
        let (images, labels) = self.batch::<f64>(indices);
        LabeledImageSet { images, labels, classes: self.classes, split }
    }

    /// Splits off the last `n` samples as a new set.
    pub fn split_off(&mut self, n: usize, split: Split) -> Result<Self> {
        let len = self.len();
        if n > len {
            return Err(Error::invalid(format!("cannot split {n} samples off {len}")));
        }
        let tail: Vec<usize> = (len - n..len).collect();
        let head: Vec<usize> = (0..len - n).collect();
        let out = self.subset(&tail, split);
        *self = self.subset(&head, self.split);
        Ok(out)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Parses a big-endian IDX file. Image files (`0x803`) become `[N, Y, X]`
/// scaled to `[0, 1]`; label files (`0x801`) become `[N]` raw values.
pub fn read_idx(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes).map_err(|msg| Error::format(path, msg))
}

fn parse_idx(bytes: &[u8]) -> std::result::Result<Tensor<f64>, String> {
    let word = |i: usize| -> std::result::Result<u32, String> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| "truncated header".to_string())
    };
    let magic = word(0)?;
    let (rank, scale) = match magic {
        IDX_IMAGES => (3, 1.0 / 255.0),
        IDX_LABELS => (1, 1.0),
        other => return Err(format!("bad magic 0x{other:08x}")),
    };
    let dims: Vec<usize> = (1..=rank).map(|i| word(i).map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format!("dimensions {dims:?} overflow"))?;
    let start = 4 * (rank + 1);
    let body = bytes.get(start..).unwrap_or(&[]);
    if body.len() < count {
        return Err(format!("truncated body: expected {count} bytes, found {}", body.len()));
    }
    let data = body[..count].iter().map(|&b| b as f64 * scale).collect();
    Tensor::new(&dims, data).map_err(|e| e.to_string())
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    Ok(read_idx(path)?.data().iter().map(|&v| v as usize).collect())
}

/// Counter-clockwise rotation of the trailing square plane(s) about the
/// center, bilinear with zeros outside. Multiples of 90° are exact pixel
/// permutations.
pub fn rotate_bilinear<T: Element>(img: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    let r = img.rank();
    if r < 2 || img.shape()[r - 1] != img.shape()[r - 2] {
        return Err(Error::shape(format!("rotation needs square planes, got {:?}", img.shape())));
    }
    let n = img.shape()[r - 1];
    let turns = degrees / 90.0;
    if (turns - turns.round()).abs() < 1e-9 {
        let k = (turns.round() as i64).rem_euclid(4) as usize;
        let idx = FiniteGroup::new(GroupName::C4).plane_index(k, n, n)?;
        let planes = img.len() / (n * n);
        let map: Vec<usize> = (0..planes).flat_map(|p| idx.iter().map(move |&i| p * n * n + i)).collect();
        return img.gather(&map, img.shape());
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let mid = (n as f64 - 1.0) / 2.0;
    let mut out = Tensor::zeros(img.shape());
    let src = img.data();
    for (p, plane) in out.data_mut().chunks_mut(n * n).enumerate() {
        let base = p * n * n;
        for i in 0..n {
            for j in 0..n {
                let (u, v) = (j as f64 - mid, mid - i as f64);
                // inverse rotation finds the source point
                let (us, vs) = (c * u + s * v, -s * u + c * v);
                let (fi, fj) = (mid - vs, us + mid);
                let (i0, j0) = (fi.floor(), fj.floor());
                let (di, dj) = (fi - i0, fj - j0);
                let mut acc = 0.0;
                for (oi, wi) in [(0, 1.0 - di), (1, di)] {
                    for (oj, wj) in [(0, 1.0 - dj), (1, dj)] {
                        let (ii, jj) = (i0 as i64 + oi, j0 as i64 + oj);
                        if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n && wi * wj > 0.0 {
                            acc += wi * wj * src[base + ii as usize * n + jj as usize].to_f64();
                        }
                    }
                }
                plane[i * n + j] = T::from_f64(acc);
            }
        }
    }
    Ok(out)
}

/// Locates the four MNIST IDX files under `dir`, or under `GATT_DATA_DIR`
/// when `dir` is `None`.
pub fn mnist_files(dir: Option<&Path>) -> Result<[PathBuf; 4]> {
    let root = match dir {
        Some(d) => d.to_path_buf(),
        None => std::env::var_os("GATT_DATA_DIR")
            .map(PathBuf::from)
            .ok_or_else(|| Error::invalid("no MNIST directory given and GATT_DATA_DIR is unset"))?,
    };
    let names = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];
    let files = names.map(|n| root.join(n));
    for f in &files {
        if !f.exists() {
            return Err(Error::io(f, std::io::Error::new(std::io::ErrorKind::NotFound, "missing MNIST file")));
        }
    }
    Ok(files)
}

pub const ROTMNIST_TRAIN: usize = 10_000;
pub const ROTMNIST_VAL: usize = 2_000;
pub const ROTMNIST_TEST: usize = 50_000;

/// Pools the MNIST train and test images, draws `n_train + n_test` of them
/// under `seed` and rotates each by an angle uniform in `[0, 360)`.
pub fn make_rotmnist(dir: Option<&Path>, n_train: usize, n_test: usize, seed: u64) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let [ti, tl, ei, el] = mnist_files(dir)?;
    let (a, b) = (read_idx(&ti)?, read_idx(&ei)?);
    let mut labels = read_idx_labels(&tl)?;
    labels.extend(read_idx_labels(&el)?);
    if a.shape()[1..] != b.shape()[1..] || a.shape()[0] + b.shape()[0] != labels.len() {
        return Err(Error::format(&ti, "image and label files disagree"));
    }
    let images = Tensor::concat(&[&a, &b], 0)?;
    let (y, x) = (images.shape()[1], images.shape()[2]);
    if n_train + n_test > labels.len() {
        return Err(Error::invalid(format!("{} samples requested from {}", n_train + n_test, labels.len())));
    }
    let mut rng = Rng64::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let mut build = |picks: &[usize], split: Split| -> Result<LabeledImageSet> {
        let mut data = Vec::with_capacity(picks.len() * y * x);
        for &i in picks {
            let plane = Tensor::new(&[y, x], images.data()[i * y * x..(i + 1) * y * x].to_vec())?;
            let angle = rng.random_range(0.0..360.0);
            data.extend(rotate_bilinear(&plane, angle)?.into_data());
        }
        let lab = picks.iter().map(|&i| labels[i]).collect();
        LabeledImageSet::new(Tensor::new(&[picks.len(), 1, y, x], data)?, lab, 10, split)
    };
    let train = build(&order[..n_train], Split::Train)?;
    let test = build(&order[n_train..n_train + n_test], Split::Test)?;
    Ok((train, test))
}

pub const SHAPE_SIZE: usize = 16;
pub const SHAPE_NAMES: [&str; 4] = ["bar", "corner", "tee", "ell"];

fn shape_template(class: usize) -> Vec<(i64, i64)> {
    let mut p = Vec::new();
    match class {
        0 => p.extend((0..7).map(|c| (3, c))),
        1 => {
            p.extend((0..5).map(|r| (r, 1)));
            p.extend((2..6).map(|c| (4, c)));
        }
        2 => {
            p.extend((0..7).map(|c| (0, c)));
            p.extend((1..6).map(|r| (r, 3)));
        }
        _ => {
            p.extend((0..6).map(|r| (r, 1)));
            p.extend((2..4).map(|c| (5, c)));
        }
    }
    p
}

/// Four classes (bar, corner with equal arms, T, L with arms 6 and 3) drawn
/// as unit-intensity strokes on a 16x16 canvas, each under a random element
/// of D4 and a random translation. Classes cycle so counts differ by at
/// most one.
pub fn synth_shapes(n: usize, seed: u64) -> LabeledImageSet {
    let d4 = FiniteGroup::new(GroupName::D4);
    let mut rng = Rng64::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    labels.shuffle(&mut rng);
    let mut data = vec![0.0; n * SHAPE_SIZE * SHAPE_SIZE];
    for (i, &class) in labels.iter().enumerate() {
        let h = rng.random_range(0..d4.order());
        let pts: Vec<(i64, i64)> = shape_template(class)
            .into_iter()
            .map(|(r, c)| {
                // rotate about the template's center pixel (3, 3)
                let [u, v] = d4.act(h, [c - 3, 3 - r]);
                (3 - v, u + 3)
            })
            .collect();
        let oy = rng.random_range(0..=(SHAPE_SIZE as i64 - 7));
        let ox = rng.random_range(0..=(SHAPE_SIZE as i64 - 7));
        let plane = &mut data[i * SHAPE_SIZE * SHAPE_SIZE..(i + 1) * SHAPE_SIZE * SHAPE_SIZE];
        for (r, c) in pts {
            plane[((r + oy) * SHAPE_SIZE as i64 + c + ox) as usize] = 1.0;
        }
    }
    let images = Tensor::new(&[n, 1, SHAPE_SIZE, SHAPE_SIZE], data).expect("shape set");
    LabeledImageSet { images, labels, classes: 4, split: Split::Train }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_images_parse_exactly() {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend([0, 255, 51, 102, 204, 153, 1, 254]);
        let t = parse_idx(&b).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2]);
        let expect: Vec<f64> = [0u8, 255, 51, 102, 204, 153, 1, 254].iter().map(|&v| v as f64 / 255.0).collect();
        assert_eq!(t.data(), expect.as_slice());
        assert_eq!(t.get(&[0, 0, 1]), 1.0);
        assert_eq!(t.get(&[0, 1, 0]), 0.2);
    }

    #[test]
    fn idx_labels_and_errors() {
        let t = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 2, 3, 7]).unwrap();
        assert_eq!(t.data(), &[3.0, 7.0]);
        assert!(parse_idx(&[0, 0, 8, 2, 0, 0, 0, 2, 3, 7]).unwrap_err().contains("magic"));
        assert!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 3, 7]).unwrap_err().contains("truncated"));
        assert!(parse_idx(&[0, 0, 8]).is_err());
        let huge = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        assert!(parse_idx(&huge).is_err());
    }

    #[test]
    fn shapes_are_binary_and_balanced() {
        let set = synth_shapes(400, 3);
        assert_eq!(set.class_counts(), vec![100; 4]);
        for (i, &l) in set.labels.iter().enumerate() {
            let plane = &set.images.data()[i * 256..(i + 1) * 256];
            assert!(plane.iter().all(|&v| v == 0.0 || v == 1.0));
            let lit = plane.iter().filter(|&&v| v == 1.0).count();
            assert_eq!(lit, shape_template(l).len());
        }
        assert_eq!(synth_shapes(50, 9), synth_shapes(50, 9));
        assert_ne!(synth_shapes(50, 9), synth_shapes(50, 10));
    }

    #[test]
    fn templates_have_distinct_footprints() {
        let sizes: Vec<usize> = (0..4).map(|c| shape_template(c).len()).collect();
        assert_eq!(sizes, vec![7, 9, 12, 8]);
    }

    #[test]
    fn split_off_takes_the_tail() {
        let mut set = synth_shapes(10, 1);
        let labels = set.labels.clone();
        let tail = set.split_off(3, Split::Validation).unwrap();
        assert_eq!(set.len(), 7);
        assert_eq!(tail.labels, labels[7..]);
        assert_eq!(tail.split, Split::Validation);
        assert!(set.split_off(8, Split::Test).is_err());
    }
}
