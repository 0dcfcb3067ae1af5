#pragma once

#include <cstddef>

// Layer kernels in two flavours:
//   reference::  direct nested loops, single threaded. Kept as the test oracle.
//   parallel::   im2col + register-blocked GEMM, OpenMP across samples or
//                output rows. Every output element is owned by exactly one
//                thread and summed in a fixed order, so results do not depend
//                on the thread count.
//
// Layouts: activations are [batch, channels, height, width] row-major, conv
// weights [out_c, in_c, k, k], dense weights [out, in]. Backward weight
// kernels accumulate into dw/db.

namespace gearlab::nn {

struct ConvGeom {
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, kernel = 0, stride = 1;

    int out_h() const { return (in_h - kernel) / stride + 1; }
    int out_w() const { return (in_w - kernel) / stride + 1; }
    int in_size() const { return in_c * in_h * in_w; }
    int out_size() const { return out_c * out_h() * out_w(); }
    int col_rows() const { return in_c * kernel * kernel; }
    int col_cols() const { return out_h() * out_w(); }
    int weight_size() const { return out_c * col_rows(); }
};

namespace reference {

template <class T>
void conv2d_forward(const ConvGeom& g, int batch, const T* in, const T* w, const T* b, T* out);
template <class T>
void conv2d_backward_input(const ConvGeom& g, int batch, const T* dout, const T* w, T* din);
template <class T>
void conv2d_backward_weight(const ConvGeom& g, int batch, const T* in, const T* dout, T* dw, T* db);

template <class T>
void dense_forward(int batch, int n_in, int n_out, const T* x, const T* w, const T* b, T* y);
template <class T>
void dense_backward_input(int batch, int n_in, int n_out, const T* dy, const T* w, T* dx);
template <class T>
void dense_backward_weight(int batch, int n_in, int n_out, const T* x, const T* dy, T* dw, T* db);

}  // namespace reference

namespace parallel {

template <class T>
void conv2d_forward(const ConvGeom& g, int batch, const T* in, const T* w, const T* b, T* out);
template <class T>
void conv2d_backward_input(const ConvGeom& g, int batch, const T* dout, const T* w, T* din);
template <class T>
void conv2d_backward_weight(const ConvGeom& g, int batch, const T* in, const T* dout, T* dw, T* db);

template <class T>
void dense_forward(int batch, int n_in, int n_out, const T* x, const T* w, const T* b, T* y);
template <class T>
void dense_backward_input(int batch, int n_in, int n_out, const T* dy, const T* w, T* dx);
template <class T>
void dense_backward_weight(int batch, int n_in, int n_out, const T* x, const T* dy, T* dw, T* db);

// Exposed for the benchmark and tests.
template <class T>
void im2col(const ConvGeom& g, const T* in, T* col);
template <class T>
void col2im_add(const ConvGeom& g, const T* col, T* in);

}  // namespace parallel

}  // namespace gearlab::nn
