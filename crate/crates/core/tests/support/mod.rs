#![allow(dead_code)]

use gatt_core::autodiff::Rng64;
use gatt_core::group::{compose_affine, invert_affine, AffineElement, FiniteGroup};
use gatt_core::Tensor;
use rand::{Rng, SeedableRng};

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng64::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Gather `t` through `index`, keeping its shape.
pub fn relabel(t: &Tensor<f64>, index: &[usize]) -> Tensor<f64> {
    t.gather(index, t.shape()).unwrap()
}

pub fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.max_abs_diff(b).unwrap()
}

/// Literal double sum over `G`:
/// `out(g) = Σ_{g̃} Σ_c f_c(g̃) ψ_c(g⁻¹ g̃)` with `g = (x, h)` and pixel
/// `(i, j)` at `x = (j, -i)`. The filter pixel `(a, b)` sits at offset
/// `(b - p, p - a)`. `f` is `[1, C, G, Y, X]`, `ψ` is `[O, C, G, k, k]`.
pub fn direct_group_correlation(grp: &FiniteGroup, f: &Tensor<f64>, psi: &Tensor<f64>) -> Tensor<f64> {
    let (c_n, g_n, ny, nx) = (f.shape()[1], f.shape()[2], f.shape()[3], f.shape()[4]);
    let (o_n, k) = (psi.shape()[0], psi.shape()[3]);
    let p = (k / 2) as i64;
    let h_n = grp.order();
    let mut out = Tensor::zeros(&[1, o_n, h_n, ny, nx]);
    for o in 0..o_n {
        for h in 0..h_n {
            for i in 0..ny {
                for j in 0..nx {
                    let g = AffineElement::new([j as i64, -(i as i64)], h);
                    let gi = invert_affine(grp, g);
                    let mut acc = 0.0;
                    for c in 0..c_n {
                        for ht in 0..g_n {
                            for it in 0..ny {
                                for jt in 0..nx {
                                    let gt = AffineElement::new([jt as i64, -(it as i64)], ht);
                                    let rel = compose_affine(grp, gi, gt);
                                    let pose = if g_n == 1 { 0 } else { rel.h };
                                    let (a, b) = (p - rel.x[1], rel.x[0] + p);
                                    if (0..k as i64).contains(&a) && (0..k as i64).contains(&b) {
                                        acc += f.get(&[0, c, ht, it, jt])
                                            * psi.get(&[o, c, pose, a as usize, b as usize]);
                                    }
                                }
                            }
                        }
                    }
                    out.set(&[0, o, h, i, j], acc);
                }
            }
        }
    }
    out
}
