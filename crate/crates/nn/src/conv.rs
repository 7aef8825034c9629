//! im2col/col2im convolution kernels shared by `Conv2d` and `ConvTranspose2d`.
//!
//! Batched entry points split the batch into a fixed number of chunks and
//! process chunks with rayon; within a chunk all images merge into one GEMM.
//! Each output element is written by exactly one task and cross-chunk
//! reductions are summed in chunk order, so results are bit-identical
//! regardless of thread count.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use crate::scalar::Scalar;

/// Number of batch chunks used for data-parallel dispatch. Fixed (not derived
/// from the thread count) to keep chunk boundaries deterministic.
const PAR_CHUNKS: usize = 4;

fn images_per_chunk(n: usize) -> usize {
    n.div_ceil(PAR_CHUNKS).max(1)
}

/// Spatial geometry of one conv: gathers `k`x`k` patches from a `src` grid at
/// stride `s` with zero padding `p`, producing a `dst` grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PatchGeom {
    pub channels: usize,
    pub src_h: usize,
    pub src_w: usize,
    pub dst_h: usize,
    pub dst_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PatchGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn dst_hw(&self) -> usize {
        self.dst_h * self.dst_w
    }

    pub fn src_len(&self) -> usize {
        self.channels * self.src_h * self.src_w
    }
}

/// Output side length of a strided convolution, if representable.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|d| d / stride + 1)
}

/// Output side length of a strided transposed convolution.
pub fn conv_transpose_out_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Option<usize> {
    ((input - 1) * stride + kernel + out_pad).checked_sub(2 * pad)
}

/// Gathers patches of `m` images (each `[C, src_h, src_w]`) into
/// `col[(c*k+ki)*k+kj, img*dst_hw + oy*dst_w + ox]`.
fn im2col_block<S: Scalar>(images: &[S], m: usize, g: &PatchGeom, col: &mut [S]) {
    let hw = g.dst_hw();
    let cols = m * hw;
    debug_assert_eq!(images.len(), m * g.src_len());
    debug_assert_eq!(col.len(), g.col_rows() * cols);
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let out_row = &mut col[row * cols..(row + 1) * cols];
                for img in 0..m {
                    let plane = &images[img * g.src_len() + c * g.src_h * g.src_w..];
                    let out_img = &mut out_row[img * hw..(img + 1) * hw];
                    for oy in 0..g.dst_h {
                        let sy = (oy * g.stride + ki) as isize - g.pad as isize;
                        let dst_line = &mut out_img[oy * g.dst_w..(oy + 1) * g.dst_w];
                        if sy < 0 || sy >= g.src_h as isize {
                            dst_line.fill(S::zero());
                            continue;
                        }
                        let src_line =
                            &plane[sy as usize * g.src_w..(sy as usize + 1) * g.src_w];
                        for (ox, slot) in dst_line.iter_mut().enumerate() {
                            let sx = (ox * g.stride + kj) as isize - g.pad as isize;
                            *slot = if sx < 0 || sx >= g.src_w as isize {
                                S::zero()
                            } else {
                                src_line[sx as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `col` back onto `m` images (inverse gather of
/// [`im2col_block`]). Destination is accumulated into, not cleared.
fn col2im_block<S: Scalar>(col: &[S], m: usize, g: &PatchGeom, images: &mut [S]) {
    let hw = g.dst_hw();
    let cols = m * hw;
    debug_assert_eq!(images.len(), m * g.src_len());
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let col_row = &col[row * cols..(row + 1) * cols];
                for img in 0..m {
                    let plane = &mut images
                        [img * g.src_len() + c * g.src_h * g.src_w..][..g.src_h * g.src_w];
                    let col_img = &col_row[img * hw..(img + 1) * hw];
                    for oy in 0..g.dst_h {
                        let sy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if sy < 0 || sy >= g.src_h as isize {
                            continue;
                        }
                        let plane_line =
                            &mut plane[sy as usize * g.src_w..(sy as usize + 1) * g.src_w];
                        let col_line = &col_img[oy * g.dst_w..(oy + 1) * g.dst_w];
                        for (ox, &v) in col_line.iter().enumerate() {
                            let sx = (ox * g.stride + kj) as isize - g.pad as isize;
                            if sx >= 0 && sx < g.src_w as isize {
                                plane_line[sx as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[img][chan][hw]` -> `[chan][img*hw]` copy (and back), so a whole chunk can
/// share one GEMM.
fn gather_to_cm<S: Scalar>(images: &[S], m: usize, channels: usize, hw: usize, mat: &mut [S]) {
    for img in 0..m {
        for c in 0..channels {
            let src = &images[(img * channels + c) * hw..][..hw];
            mat[c * m * hw + img * hw..][..hw].copy_from_slice(src);
        }
    }
}

fn scatter_from_cm<S: Scalar>(mat: &[S], m: usize, channels: usize, hw: usize, images: &mut [S]) {
    for img in 0..m {
        for c in 0..channels {
            let dst = &mut images[(img * channels + c) * hw..][..hw];
            dst.copy_from_slice(&mat[c * m * hw + img * hw..][..hw]);
        }
    }
}

fn mat<'a, S: Scalar>(data: &'a [S], rows: usize, cols: usize) -> ArrayView2<'a, S> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix view")
}

fn mat_mut<'a, S: Scalar>(data: &'a mut [S], rows: usize, cols: usize) -> ArrayViewMut2<'a, S> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix view")
}

fn add_bias_cm<S: Scalar>(mat: &mut [S], bias: &[S], cols: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut mat[c * cols..(c + 1) * cols] {
            *v += b;
        }
    }
}

/// Forward conv: `weight` is `[out_c, in_c*k*k]` row-major, batch layout
/// `[N, C, H, W]` flattened.
pub(crate) fn conv2d_forward<S: Scalar>(
    input: &[S],
    weight: &[S],
    bias: &[S],
    g: &PatchGeom,
    out_c: usize,
    n: usize,
    output: &mut [S],
) {
    let in_stride = g.src_len();
    let hw = g.dst_hw();
    let out_stride = out_c * hw;
    let per = images_per_chunk(n);
    let run = |xs: &[S], ys: &mut [S]| {
        let m = xs.len() / in_stride;
        let mut col = vec![S::zero(); g.col_rows() * m * hw];
        let mut out_cm = vec![S::zero(); out_c * m * hw];
        im2col_block(xs, m, g, &mut col);
        general_mat_mul(
            S::one(),
            &mat(weight, out_c, g.col_rows()),
            &mat(&col, g.col_rows(), m * hw),
            S::zero(),
            &mut mat_mut(&mut out_cm, out_c, m * hw),
        );
        add_bias_cm(&mut out_cm, bias, m * hw);
        scatter_from_cm(&out_cm, m, out_c, hw, ys);
    };
    if n <= per {
        run(input, output);
    } else {
        input
            .par_chunks(per * in_stride)
            .zip(output.par_chunks_mut(per * out_stride))
            .for_each(|(xs, ys)| run(xs, ys));
    }
}

/// Backward conv. Accumulates `d_weight`/`d_bias`; `d_input` must be zeroed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<S: Scalar>(
    input: &[S],
    weight: &[S],
    d_output: &[S],
    g: &PatchGeom,
    out_c: usize,
    n: usize,
    d_input: Option<&mut [S]>,
    d_weight: &mut [S],
    d_bias: &mut [S],
) {
    let in_stride = g.src_len();
    let hw = g.dst_hw();
    let out_stride = out_c * hw;
    let per = images_per_chunk(n);

    let run = |xs: &[S], dys: &[S], dxs: Option<&mut [S]>| -> (Vec<S>, Vec<S>) {
        let m = xs.len() / in_stride;
        let mut dy_cm = vec![S::zero(); out_c * m * hw];
        gather_to_cm(dys, m, out_c, hw, &mut dy_cm);

        let mut col = vec![S::zero(); g.col_rows() * m * hw];
        if let Some(dxs) = dxs {
            // d_input = col2im(W^T . dy)
            general_mat_mul(
                S::one(),
                &mat(weight, out_c, g.col_rows()).reversed_axes(),
                &mat(&dy_cm, out_c, m * hw),
                S::zero(),
                &mut mat_mut(&mut col, g.col_rows(), m * hw),
            );
            col2im_block(&col, m, g, dxs);
        }

        // d_weight += dy . im2col(x)^T ; d_bias += row sums of dy
        let mut dw = vec![S::zero(); weight.len()];
        im2col_block(xs, m, g, &mut col);
        general_mat_mul(
            S::one(),
            &mat(&dy_cm, out_c, m * hw),
            &mat(&col, g.col_rows(), m * hw).reversed_axes(),
            S::one(),
            &mut mat_mut(&mut dw, out_c, g.col_rows()),
        );
        let mut db = vec![S::zero(); out_c];
        for (c, slot) in db.iter_mut().enumerate() {
            *slot += dy_cm[c * m * hw..(c + 1) * m * hw].iter().copied().sum::<S>();
        }
        (dw, db)
    };

    let partials: Vec<(Vec<S>, Vec<S>)> = if n <= per {
        vec![run(input, d_output, d_input.map(|d| &mut d[..]))]
    } else {
        match d_input {
            Some(d_input) => input
                .par_chunks(per * in_stride)
                .zip(d_output.par_chunks(per * out_stride))
                .zip(d_input.par_chunks_mut(per * in_stride))
                .map(|((xs, dys), dxs)| run(xs, dys, Some(dxs)))
                .collect(),
            None => input
                .par_chunks(per * in_stride)
                .zip(d_output.par_chunks(per * out_stride))
                .map(|(xs, dys)| run(xs, dys, None))
                .collect(),
        }
    };
    for (dw, db) in partials {
        for (acc, v) in d_weight.iter_mut().zip(dw) {
            *acc += v;
        }
        for (acc, v) in d_bias.iter_mut().zip(db) {
            *acc += v;
        }
    }
}

/// Forward transposed conv: `weight` is `[in_c, out_c*k*k]` row-major; `g`
/// describes the *output* grid as `src` and the input grid as `dst`.
pub(crate) fn conv_transpose2d_forward<S: Scalar>(
    input: &[S],
    weight: &[S],
    bias: &[S],
    g: &PatchGeom,
    in_c: usize,
    n: usize,
    output: &mut [S],
) {
    let hw = g.dst_hw();
    let in_stride = in_c * hw;
    let out_stride = g.src_len();
    let per = images_per_chunk(n);
    let run = |xs: &[S], ys: &mut [S]| {
        let m = xs.len() / in_stride;
        let mut x_cm = vec![S::zero(); in_c * m * hw];
        gather_to_cm(xs, m, in_c, hw, &mut x_cm);
        let mut col = vec![S::zero(); g.col_rows() * m * hw];
        general_mat_mul(
            S::one(),
            &mat(weight, in_c, g.col_rows()).reversed_axes(),
            &mat(&x_cm, in_c, m * hw),
            S::zero(),
            &mut mat_mut(&mut col, g.col_rows(), m * hw),
        );
        ys.fill(S::zero());
        col2im_block(&col, m, g, ys);
        let img_hw = g.src_h * g.src_w;
        for y in ys.chunks_exact_mut(out_stride) {
            add_bias_cm(y, bias, img_hw);
        }
    };
    if n <= per {
        run(input, output);
    } else {
        input
            .par_chunks(per * in_stride)
            .zip(output.par_chunks_mut(per * out_stride))
            .for_each(|(xs, ys)| run(xs, ys));
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward<S: Scalar>(
    input: &[S],
    weight: &[S],
    d_output: &[S],
    g: &PatchGeom,
    in_c: usize,
    n: usize,
    d_input: &mut [S],
    d_weight: &mut [S],
    d_bias: &mut [S],
) {
    let hw = g.dst_hw();
    let in_stride = in_c * hw;
    let out_stride = g.src_len();
    let per = images_per_chunk(n);

    let run = |xs: &[S], dys: &[S], dxs: &mut [S]| -> (Vec<S>, Vec<S>) {
        let m = xs.len() / in_stride;
        // d_input = W . im2col(d_output) — a plain conv forward on d_output
        let mut col = vec![S::zero(); g.col_rows() * m * hw];
        im2col_block(dys, m, g, &mut col);
        let mut dx_cm = vec![S::zero(); in_c * m * hw];
        general_mat_mul(
            S::one(),
            &mat(weight, in_c, g.col_rows()),
            &mat(&col, g.col_rows(), m * hw),
            S::zero(),
            &mut mat_mut(&mut dx_cm, in_c, m * hw),
        );
        scatter_from_cm(&dx_cm, m, in_c, hw, dxs);

        // d_weight += x . im2col(d_output)^T
        let mut x_cm = vec![S::zero(); in_c * m * hw];
        gather_to_cm(xs, m, in_c, hw, &mut x_cm);
        let mut dw = vec![S::zero(); weight.len()];
        general_mat_mul(
            S::one(),
            &mat(&x_cm, in_c, m * hw),
            &mat(&col, g.col_rows(), m * hw).reversed_axes(),
            S::one(),
            &mut mat_mut(&mut dw, in_c, g.col_rows()),
        );
        let mut db = vec![S::zero(); g.channels];
        let img_hw = g.src_h * g.src_w;
        for dy in dys.chunks_exact(out_stride) {
            for (c, slot) in db.iter_mut().enumerate() {
                *slot += dy[c * img_hw..(c + 1) * img_hw].iter().copied().sum::<S>();
            }
        }
        (dw, db)
    };

    let partials: Vec<(Vec<S>, Vec<S>)> = if n <= per {
        vec![run(input, d_output, d_input)]
    } else {
        input
            .par_chunks(per * in_stride)
            .zip(d_output.par_chunks(per * out_stride))
            .zip(d_input.par_chunks_mut(per * in_stride))
            .map(|((xs, dys), dxs)| run(xs, dys, dxs))
            .collect()
    };
    for (dw, db) in partials {
        for (acc, v) in d_weight.iter_mut().zip(dw) {
            *acc += v;
        }
        for (acc, v) in d_bias.iter_mut().zip(db) {
            *acc += v;
        }
    }
}
