//! Finite point groups acting on the pixel grid, the affine groups
//! `Z^2 ⋊ H` built from them, and their left-regular action on arrays.
//!
//! Element order is fixed: C4 is `e, r90, r180, r270` (counterclockwise),
//! C2 is `e, r180`, and D4 is the four rotations followed by `m·r^k` for
//! `k = 0..4`, where `m` mirrors the horizontal axis (`(u, v) -> (-u, v)`).
//!
//! Grid coordinates: pixel `(row i, col j)` sits at `u = j`, `v = -i` so that
//! `r90` is the usual counterclockwise rotation on screen. Arrays rotate about
//! their geometric center, which is an exact pixel permutation for square
//! planes of either parity.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupName {
    C1,
    C2,
    C4,
    D4,
}

impl GroupName {
    /// Name of the affine group `Z^2 ⋊ H` in the wallpaper-group convention.
    pub fn affine_name(self) -> &'static str {
        match self {
            GroupName::C1 => "z2",
            GroupName::C2 => "p2",
            GroupName::C4 => "p4",
            GroupName::D4 => "p4m",
        }
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GroupName::C1 => "C1",
            GroupName::C2 => "C2",
            GroupName::C4 => "C4",
            GroupName::D4 => "D4",
        };
        f.write_str(s)
    }
}

impl FromStr for GroupName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" | "z2" => Ok(GroupName::C1),
            "c2" | "p2" => Ok(GroupName::C2),
            "c4" | "p4" => Ok(GroupName::C4),
            "d4" | "p4m" => Ok(GroupName::D4),
            _ => Err(Error::UnsupportedGroup(s.to_string())),
        }
    }
}

/// Integer 2x2 matrix acting on `(u, v)` column vectors.
pub type Mat2 = [[i64; 2]; 2];

const IDENTITY: Mat2 = [[1, 0], [0, 1]];
const R90: Mat2 = [[0, -1], [1, 0]];
const MIRROR: Mat2 = [[-1, 0], [0, 1]];

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut m = [[0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    m
}

fn det(m: &Mat2) -> i64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn apply(m: &Mat2, v: [i64; 2]) -> [i64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// A point group `H` given by its Cayley table and grid action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteGroup {
    name: GroupName,
    cayley: Vec<usize>,
    inverse: Vec<usize>,
    action: Vec<Mat2>,
    is_reflection: Vec<bool>,
}

pub fn make_group(name: GroupName) -> FiniteGroup {
    FiniteGroup::new(name)
}

impl FiniteGroup {
    pub fn new(name: GroupName) -> Self {
        let pow = |m: &Mat2, k: usize| (0..k).fold(IDENTITY, |acc, _| matmul(&acc, m));
        let action: Vec<Mat2> = match name {
            GroupName::C1 => vec![IDENTITY],
            GroupName::C2 => vec![IDENTITY, pow(&R90, 2)],
            GroupName::C4 => (0..4).map(|k| pow(&R90, k)).collect(),
            GroupName::D4 => (0..4)
                .map(|k| pow(&R90, k))
                .chain((0..4).map(|k| matmul(&MIRROR, &pow(&R90, k))))
                .collect(),
        };
        let n = action.len();
        let find = |m: &Mat2| action.iter().position(|a| a == m).expect("closed under products");
        let mut cayley = vec![0; n * n];
        for a in 0..n {
            for b in 0..n {
                cayley[a * n + b] = find(&matmul(&action[a], &action[b]));
            }
        }
        let inverse = (0..n).map(|a| (0..n).find(|&b| cayley[a * n + b] == 0).expect("inverse exists")).collect();
        let is_reflection = action.iter().map(|m| det(m) < 0).collect();
        FiniteGroup { name, cayley, inverse, action, is_reflection }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn name(&self) -> GroupName {
        self.name
    }

    pub fn order(&self) -> usize {
        self.action.len()
    }

    pub fn identity(&self) -> usize {
        0
    }

    pub fn elements(&self) -> std::ops::Range<usize> {
        0..self.order()
    }

    /// Index of `a·b`.
    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.cayley[a * self.order() + b]
    }

    pub fn inv(&self, a: usize) -> usize {
        self.inverse[a]
    }

    pub fn matrix(&self, h: usize) -> &Mat2 {
        &self.action[h]
    }

    pub fn is_reflection(&self, h: usize) -> bool {
        self.is_reflection[h]
    }

    /// Short name such as `e`, `r90` or `m·r270`.
    pub fn label(&self, h: usize) -> String {
        let angle = match self.name {
            GroupName::C1 => 0,
            GroupName::C2 => h * 180,
            GroupName::C4 | GroupName::D4 => (h % 4) * 90,
        };
        match (self.is_reflection(h), angle) {
            (false, 0) => "e".to_string(),
            (false, a) => format!("r{a}"),
            (true, 0) => "m".to_string(),
            (true, a) => format!("m·r{a}"),
        }
    }

    pub fn act(&self, h: usize, v: [i64; 2]) -> [i64; 2] {
        apply(&self.action[h], v)
    }

    /// Offset of the pixel that lands on each output pixel under `h`, i.e.
    /// `out[p] = in[index[p]]` realizes `L_h[f](p) = f(h⁻¹ p)` on one plane.
    pub fn plane_index(&self, h: usize, rows: usize, cols: usize) -> Result<Vec<usize>> {
        if h >= self.order() {
            return Err(Error::invalid(format!("element {h} not in {}", self.name)));
        }
        if h != 0 && rows != cols {
            return Err(Error::shape(format!("{rows}x{cols} plane is not square; cannot apply {}", self.name)));
        }
        let m = self.action[self.inverse[h]];
        let (ry, rx) = (rows as i64 - 1, cols as i64 - 1);
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows as i64 {
            for j in 0..cols as i64 {
                // doubled centered coordinates keep even-sized planes integral
                let [u, v] = apply(&m, [2 * j - rx, ry - 2 * i]);
                let (si, sj) = ((ry - v) / 2, (u + rx) / 2);
                out.push((si * cols as i64 + sj) as usize);
            }
        }
        Ok(out)
    }

    /// Gather index realizing `L_h` on an array whose trailing two axes are
    /// spatial (when `spatial`) and whose `group_axes` each have extent 1 or
    /// `|H|`; each full group axis is relabeled by `h̃ -> h⁻¹h̃`.
    pub fn action_index(&self, h: usize, shape: &[usize], group_axes: &[usize], spatial: bool) -> Result<Vec<usize>> {
        let r = shape.len();
        for &a in group_axes {
            if a >= r || (shape[a] != 1 && shape[a] != self.order()) {
                return Err(Error::shape(format!(
                    "axis {a} of {shape:?} must have extent 1 or |H| = {}",
                    self.order()
                )));
            }
        }
        let plane = if spatial {
            if r < 2 {
                return Err(Error::shape("spatial action needs two trailing axes"));
            }
            self.plane_index(h, shape[r - 2], shape[r - 1])?
        } else {
            vec![0]
        };
        let plane_len = plane.len();
        let outer_shape = if spatial { &shape[..r - 2] } else { shape };
        let outer_strides = crate::tensor::strides(outer_shape);
        let hinv = self.inverse[h];
        let n_outer: usize = outer_shape.iter().product();
        let mut idx = vec![0usize; outer_shape.len()];
        let mut out = Vec::with_capacity(n_outer * plane_len);
        for _ in 0..n_outer {
            let src: usize = idx
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let i = if group_axes.contains(&k) && outer_shape[k] > 1 { self.mul(hinv, i) } else { i };
                    i * outer_strides[k]
                })
                .sum();
            out.extend(plane.iter().map(|&p| src * plane_len + p));
            crate::tensor::increment(&mut idx, outer_shape);
        }
        Ok(out)
    }
}

/// `g = (x, h)` in `Z^2 ⋊ H`; `x` is in `(u, v)` grid coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AffineElement {
    pub x: [i64; 2],
    pub h: usize,
}

impl AffineElement {
    pub fn new(x: [i64; 2], h: usize) -> Self {
        AffineElement { x, h }
    }

    pub fn identity() -> Self {
        AffineElement { x: [0, 0], h: 0 }
    }
}

/// `(x1, h1)(x2, h2) = (x1 + h1 x2, h1 h2)`.
pub fn compose_affine(grp: &FiniteGroup, g1: AffineElement, g2: AffineElement) -> AffineElement {
    let hx = grp.act(g1.h, g2.x);
    AffineElement { x: [g1.x[0] + hx[0], g1.x[1] + hx[1]], h: grp.mul(g1.h, g2.h) }
}

/// `(x, h)⁻¹ = (-h⁻¹x, h⁻¹)`.
pub fn invert_affine(grp: &FiniteGroup, g: AffineElement) -> AffineElement {
    let hi = grp.inv(g.h);
    let x = grp.act(hi, g.x);
    AffineElement { x: [-x[0], -x[1]], h: hi }
}

/// `L_h[f](x, h̃) = f(h⁻¹x, h⁻¹h̃)` on `[N, C, G, Y, X]` with `G ∈ {1, |H|}`.
pub fn transform_feature<T: Element>(grp: &FiniteGroup, h: usize, f: &Tensor<T>) -> Result<Tensor<T>> {
    if f.rank() != 5 {
        return Err(Error::shape(format!("feature map must be [N,C,G,Y,X], got {:?}", f.shape())));
    }
    let idx = grp.action_index(h, f.shape(), &[2], true)?;
    f.gather(&idx, f.shape())
}

/// The same action on a `[C_out, C_in, G, k, k]` filter bank; `k` must be odd
/// so the rotation center is a pixel.
pub fn transform_filter<T: Element>(grp: &FiniteGroup, h: usize, psi: &Tensor<T>) -> Result<Tensor<T>> {
    if psi.rank() != 5 {
        return Err(Error::shape(format!("filter must be [O,C,G,k,k], got {:?}", psi.shape())));
    }
    let (ky, kx) = (psi.shape()[3], psi.shape()[4]);
    if ky != kx || ky % 2 == 0 {
        return Err(Error::shape(format!("filter must be odd and square, got {ky}x{kx}")));
    }
    let idx = grp.action_index(h, psi.shape(), &[2], true)?;
    psi.gather(&idx, psi.shape())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> Vec<FiniteGroup> {
        [GroupName::C1, GroupName::C2, GroupName::C4, GroupName::D4].into_iter().map(make_group).collect()
    }

    #[test]
    fn group_axioms() {
        for g in all() {
            let n = g.order();
            for a in 0..n {
                assert_eq!(g.mul(0, a), a);
                assert_eq!(g.mul(a, 0), a);
                assert_eq!(g.mul(a, g.inv(a)), 0);
                assert_eq!(g.mul(g.inv(a), a), 0);
                assert_eq!(det(g.matrix(a)).abs(), 1);
                assert_eq!(det(g.matrix(a)) < 0, g.is_reflection(a));
                for b in 0..n {
                    assert_eq!(g.matrix(g.mul(a, b)), &matmul(g.matrix(a), g.matrix(b)));
                    for c in 0..n {
                        assert_eq!(g.mul(g.mul(a, b), c), g.mul(a, g.mul(b, c)));
                    }
                }
            }
        }
    }

    #[test]
    fn known_tables() {
        let c1 = make_group(GroupName::C1);
        assert_eq!(c1.order(), 1);
        assert_eq!(c1.mul(0, 0), 0);
        let c4 = make_group(GroupName::C4);
        assert_eq!(c4.mul(1, 1), 2);
        assert_eq!(c4.matrix(1), &[[0, -1], [1, 0]]);
        let d4 = make_group(GroupName::D4);
        assert_eq!(d4.order(), 8);
        for a in 4..8 {
            assert!(d4.is_reflection(a));
            assert_eq!(d4.mul(a, a), 0, "mirrors are involutions");
            for b in 4..8 {
                assert!(!d4.is_reflection(d4.mul(a, b)));
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("p4m".parse::<GroupName>().unwrap(), GroupName::D4);
        assert_eq!("P4".parse::<GroupName>().unwrap(), GroupName::C4);
        assert!(matches!("c8".parse::<GroupName>(), Err(Error::UnsupportedGroup(_))));
    }

    #[test]
    fn affine_product_and_inverse() {
        let c4 = make_group(GroupName::C4);
        let g1 = AffineElement::new([1, 0], 1);
        let g2 = AffineElement::new([0, 1], 1);
        assert_eq!(compose_affine(&c4, g1, g2), AffineElement::new([0, 0], 2));
        assert_eq!(compose_affine(&c4, AffineElement::identity(), g2), g2);
        assert_eq!(invert_affine(&c4, g1), AffineElement::new([0, 1], 3));
        assert_eq!(compose_affine(&c4, g1, invert_affine(&c4, g1)), AffineElement::identity());
        assert_eq!(invert_affine(&c4, AffineElement::identity()), AffineElement::identity());
    }

    #[test]
    fn rotate_two_by_two() {
        let c4 = make_group(GroupName::C4);
        let f = Tensor::<f64>::from_f64_slice(&[1, 1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let r = transform_feature(&c4, 1, &f).unwrap();
        assert_eq!(r.data(), &[2., 4., 1., 3.]);
        assert_eq!(transform_feature(&c4, 0, &f).unwrap(), f);
        assert_eq!(transform_feature(&c4, 3, &r).unwrap(), f);
    }

    #[test]
    fn filter_corner_moves_to_bottom_left() {
        let c4 = make_group(GroupName::C4);
        let mut psi = Tensor::<f64>::zeros(&[1, 1, 1, 3, 3]);
        psi.set(&[0, 0, 0, 0, 0], 1.0);
        let r = transform_filter(&c4, 1, &psi).unwrap();
        assert_eq!(r.get(&[0, 0, 0, 2, 0]), 1.0);
        assert_eq!(r.sum_all(), 1.0);
        assert!(transform_filter(&c4, 1, &Tensor::<f64>::zeros(&[1, 1, 1, 2, 2])).is_err());
    }

    #[test]
    fn orbit_sum_is_symmetric() {
        let c4 = make_group(GroupName::C4);
        let psi = Tensor::<f64>::from_fn(&[1, 1, 1, 3, 3], |i| (i[3] * 3 + i[4]) as f64 + 0.5);
        let mut sym = Tensor::<f64>::zeros(psi.shape());
        for h in c4.elements() {
            sym = sym.add(&transform_filter(&c4, h, &psi).unwrap()).unwrap();
        }
        for h in c4.elements() {
            assert_eq!(transform_filter(&c4, h, &sym).unwrap(), sym);
        }
    }

    #[test]
    fn non_square_rejected() {
        let c4 = make_group(GroupName::C4);
        let f = Tensor::<f64>::zeros(&[1, 1, 1, 2, 3]);
        assert!(transform_feature(&c4, 1, &f).is_err());
        assert!(transform_feature(&c4, 0, &f).is_ok());
    }
}
