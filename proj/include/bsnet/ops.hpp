#pragma once

#include <array>
#include <vector>

#include "bsnet/tensor.hpp"

namespace bsnet::ops {

// All primitives run on a Tape<T>; when the tape has gradients enabled and at
// least one input requires grad, a backward closure is recorded. Layouts:
// images/features are NCHW, kernels OIKK, dense weights [in, out], grids
// [N, H, W, 2] with (x, y) in [-1, 1] pixel-center-normalized coordinates.

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int padding);

template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> swish(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& x, T s);

// x: [N,C,H,W] times mask [N,1,H,W], mask broadcast over channels.
template <typename T>
Tensor<T> mask_mul(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& m);

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const std::vector<Tensor<T>>& xs);

template <typename T>
Tensor<T> max_pool2x2(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> avg_pool2x2(Tape<T>& tape, const Tensor<T>& x);

// [N,C,H,W] -> [N,C]
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x);

// Bilinear x2, half-pixel centers, edge-clamped taps.
template <typename T>
Tensor<T> upsample_x2(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> crop2d(Tape<T>& tape, const Tensor<T>& x, int r0, int c0, int h, int w);

template <typename T>
Tensor<T> adaptive_avg_pool(Tape<T>& tape, const Tensor<T>& x, int oh, int ow);

template <typename T>
Tensor<T> slice_channels(Tape<T>& tape, const Tensor<T>& x, int c0, int c1);

// theta: [N,6] rows (a, b, tx, c, d, ty); grid[n,i,j] = (a*xn + b*yn + tx,
// c*xn + d*yn + ty) with xn, yn the pixel-center-normalized output coords.
template <typename T>
Tensor<T> affine_grid(Tape<T>& tape, const Tensor<T>& theta, int h, int w);

// Bilinear sampling with zeros padding applied per tap: a tap that falls
// outside the input contributes zero. Interpolation is nested lerp, so
// sampling an all-ones image at fully in-range coordinates returns exactly 1.
template <typename T>
Tensor<T> grid_sample(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& grid);

// Six [N,4] class-score rows -> [N,3,2,4]; region order A..F maps to
// (row, col) = A(0,0) B(1,0) C(2,0) D(0,1) E(1,1) F(2,1).
template <typename T>
Tensor<T> stack_score_grid(Tape<T>& tape, const std::array<Tensor<T>, 6>& regions);

// Replaces the rows of theta whose source mask is degenerate (mean below
// mask_eps) or whose linear part has |det| < det_eps with the identity
// transform. Gradients flow only through untouched rows. replaced reports
// which batch items fell back.
template <typename T>
Tensor<T> theta_fixup(Tape<T>& tape, const Tensor<T>& theta, const Tensor<T>& mask,
                      T mask_eps, T det_eps, std::vector<bool>* replaced = nullptr);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);

}  // namespace bsnet::ops
