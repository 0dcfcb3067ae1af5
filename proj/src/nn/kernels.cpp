#include "gearlab/nn/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace gearlab::nn {

namespace reference {

template <class T>
void conv2d_forward(const ConvGeom& g, int batch, const T* in, const T* w, const T* b, T* out) {
    const int oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
    for (int n = 0; n < batch; ++n) {
        const T* x = in + static_cast<std::ptrdiff_t>(n) * g.in_size();
        T* y = out + static_cast<std::ptrdiff_t>(n) * g.out_size();
        for (int oc = 0; oc < g.out_c; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = b[oc];
                    for (int ic = 0; ic < g.in_c; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx)
                                acc += x[(ic * g.in_h + oy * s + ky) * g.in_w + ox * s + kx] *
                                       w[((oc * g.in_c + ic) * k + ky) * k + kx];
                    y[(oc * oh + oy) * ow + ox] = acc;
                }
    }
}

template <class T>
void conv2d_backward_input(const ConvGeom& g, int batch, const T* dout, const T* w, T* din) {
    const int oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
    std::fill(din, din + static_cast<std::ptrdiff_t>(batch) * g.in_size(), T(0));
    for (int n = 0; n < batch; ++n) {
        const T* dy = dout + static_cast<std::ptrdiff_t>(n) * g.out_size();
        T* dx = din + static_cast<std::ptrdiff_t>(n) * g.in_size();
        for (int oc = 0; oc < g.out_c; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const T d = dy[(oc * oh + oy) * ow + ox];
                    for (int ic = 0; ic < g.in_c; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx)
                                dx[(ic * g.in_h + oy * s + ky) * g.in_w + ox * s + kx] +=
                                    d * w[((oc * g.in_c + ic) * k + ky) * k + kx];
                }
    }
}

template <class T>
void conv2d_backward_weight(const ConvGeom& g, int batch, const T* in, const T* dout, T* dw, T* db) {
    const int oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
    for (int n = 0; n < batch; ++n) {
        const T* x = in + static_cast<std::ptrdiff_t>(n) * g.in_size();
        const T* dy = dout + static_cast<std::ptrdiff_t>(n) * g.out_size();
        for (int oc = 0; oc < g.out_c; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const T d = dy[(oc * oh + oy) * ow + ox];
                    db[oc] += d;
                    for (int ic = 0; ic < g.in_c; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx)
                                dw[((oc * g.in_c + ic) * k + ky) * k + kx] +=
                                    d * x[(ic * g.in_h + oy * s + ky) * g.in_w + ox * s + kx];
                }
    }
}

template <class T>
void dense_forward(int batch, int n_in, int n_out, const T* x, const T* w, const T* b, T* y) {
    for (int n = 0; n < batch; ++n)
        for (int o = 0; o < n_out; ++o) {
            T acc = b[o];
            for (int i = 0; i < n_in; ++i) acc += w[o * n_in + i] * x[n * n_in + i];
            y[n * n_out + o] = acc;
        }
}

template <class T>
void dense_backward_input(int batch, int n_in, int n_out, const T* dy, const T* w, T* dx) {
    for (int n = 0; n < batch; ++n)
        for (int i = 0; i < n_in; ++i) {
            T acc = 0;
            for (int o = 0; o < n_out; ++o) acc += dy[n * n_out + o] * w[o * n_in + i];
            dx[n * n_in + i] = acc;
        }
}

template <class T>
void dense_backward_weight(int batch, int n_in, int n_out, const T* x, const T* dy, T* dw, T* db) {
    for (int n = 0; n < batch; ++n)
        for (int o = 0; o < n_out; ++o) {
            const T d = dy[n * n_out + o];
            db[o] += d;
            for (int i = 0; i < n_in; ++i) dw[o * n_in + i] += d * x[n * n_in + i];
        }
}

}  // namespace reference

namespace parallel {

namespace {

template <class T>
constexpr int kColBlock = sizeof(T) == 4 ? 64 : 32;
constexpr int kRowBlock = 4;
constexpr int kLanes = 16;

// C[i, :] += sum_k A(i, k) * B[k, :] for rows i in [r0, r1).
// A(i, k) = A[i * ars + k * acs]; B is K x N row-major; C is M x N row-major.
template <class T, int NB>
inline void gemm_tile_rows4(int N, int K, int i0, int j0, const T* A, std::ptrdiff_t ars,
                            std::ptrdiff_t acs, const T* B, T* C) {
    T acc[kRowBlock][NB];
    for (int r = 0; r < kRowBlock; ++r)
        for (int j = 0; j < NB; ++j) acc[r][j] = C[static_cast<std::ptrdiff_t>(i0 + r) * N + j0 + j];
    for (int k = 0; k < K; ++k) {
        const T* brow = B + static_cast<std::ptrdiff_t>(k) * N + j0;
        const T a0 = A[(i0 + 0) * ars + k * acs];
        const T a1 = A[(i0 + 1) * ars + k * acs];
        const T a2 = A[(i0 + 2) * ars + k * acs];
        const T a3 = A[(i0 + 3) * ars + k * acs];
        for (int j = 0; j < NB; ++j) {
            const T bv = brow[j];
            acc[0][j] += a0 * bv;
            acc[1][j] += a1 * bv;
            acc[2][j] += a2 * bv;
            acc[3][j] += a3 * bv;
        }
    }
    for (int r = 0; r < kRowBlock; ++r)
        for (int j = 0; j < NB; ++j) C[static_cast<std::ptrdiff_t>(i0 + r) * N + j0 + j] = acc[r][j];
}

template <class T>
void gemm_acc_rows(int r0, int r1, int N, int K, const T* A, std::ptrdiff_t ars, std::ptrdiff_t acs,
                   const T* B, T* C) {
    constexpr int NB = kColBlock<T>;
    int j0 = 0;
    for (; j0 + NB <= N; j0 += NB) {
        int i0 = r0;
        for (; i0 + kRowBlock <= r1; i0 += kRowBlock) gemm_tile_rows4<T, NB>(N, K, i0, j0, A, ars, acs, B, C);
        for (; i0 < r1; ++i0) {
            T acc[NB];
            T* crow = C + static_cast<std::ptrdiff_t>(i0) * N + j0;
            for (int j = 0; j < NB; ++j) acc[j] = crow[j];
            for (int k = 0; k < K; ++k) {
                const T a = A[i0 * ars + k * acs];
                const T* brow = B + static_cast<std::ptrdiff_t>(k) * N + j0;
                for (int j = 0; j < NB; ++j) acc[j] += a * brow[j];
            }
            for (int j = 0; j < NB; ++j) crow[j] = acc[j];
        }
    }
    if (j0 < N) {
        const int nb = N - j0;
        for (int i = r0; i < r1; ++i) {
            T acc[NB];
            T* crow = C + static_cast<std::ptrdiff_t>(i) * N + j0;
            for (int j = 0; j < nb; ++j) acc[j] = crow[j];
            for (int k = 0; k < K; ++k) {
                const T a = A[i * ars + k * acs];
                const T* brow = B + static_cast<std::ptrdiff_t>(k) * N + j0;
                for (int j = 0; j < nb; ++j) acc[j] += a * brow[j];
            }
            for (int j = 0; j < nb; ++j) crow[j] = acc[j];
        }
    }
}

// C[i, n] += sum_p A[i, p] * B[n, p] for rows i in [r0, r1). Fixed lane-wise
// summation order, then lanes reduced left to right.
template <class T>
void gemm_nt_acc_rows(int r0, int r1, int N, int P, const T* A, const T* B, T* C) {
    const int p_main = P - P % kLanes;
    int i0 = r0;
    for (; i0 + kRowBlock <= r1; i0 += kRowBlock) {
        const T* a0 = A + static_cast<std::ptrdiff_t>(i0) * P;
        const T* a1 = a0 + P;
        const T* a2 = a1 + P;
        const T* a3 = a2 + P;
        for (int n = 0; n < N; ++n) {
            const T* bv = B + static_cast<std::ptrdiff_t>(n) * P;
            T acc[kRowBlock][kLanes] = {};
            for (int p = 0; p < p_main; p += kLanes)
                for (int l = 0; l < kLanes; ++l) {
                    const T bb = bv[p + l];
                    acc[0][l] += a0[p + l] * bb;
                    acc[1][l] += a1[p + l] * bb;
                    acc[2][l] += a2[p + l] * bb;
                    acc[3][l] += a3[p + l] * bb;
                }
            for (int p = p_main; p < P; ++p) {
                const T bb = bv[p];
                acc[0][p - p_main] += a0[p] * bb;
                acc[1][p - p_main] += a1[p] * bb;
                acc[2][p - p_main] += a2[p] * bb;
                acc[3][p - p_main] += a3[p] * bb;
            }
            for (int r = 0; r < kRowBlock; ++r) {
                T s = 0;
                for (int l = 0; l < kLanes; ++l) s += acc[r][l];
                C[static_cast<std::ptrdiff_t>(i0 + r) * N + n] += s;
            }
        }
    }
    for (; i0 < r1; ++i0) {
        const T* a = A + static_cast<std::ptrdiff_t>(i0) * P;
        for (int n = 0; n < N; ++n) {
            const T* bv = B + static_cast<std::ptrdiff_t>(n) * P;
            T acc[kLanes] = {};
            for (int p = 0; p < p_main; p += kLanes)
                for (int l = 0; l < kLanes; ++l) acc[l] += a[p + l] * bv[p + l];
            for (int p = p_main; p < P; ++p) acc[p - p_main] += a[p] * bv[p];
            T s = 0;
            for (int l = 0; l < kLanes; ++l) s += acc[l];
            C[static_cast<std::ptrdiff_t>(i0) * N + n] += s;
        }
    }
}

// Row blocks of kRowBlock handed out to threads; block boundaries are fixed,
// so per-element arithmetic is identical for any thread count.
template <class F>
void for_row_blocks(int M, F&& body) {
    const int blocks = (M + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
    for (int blk = 0; blk < blocks; ++blk) {
        const int r0 = blk * kRowBlock;
        body(r0, std::min(M, r0 + kRowBlock));
    }
}

}  // namespace

template <class T>
void im2col(const ConvGeom& g, const T* in, T* col) {
    const int oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
    if (s == 2) {
        // Split each channel into four stride phases so every im2col row is a
        // contiguous copy: phase (py, px) holds in[2y + py][2x + px].
        const int ph = (g.in_h + 1) / 2, pw = (g.in_w + 1) / 2;
        thread_local std::vector<T> phases;

        phases.assign(static_cast<std::size_t>(g.in_c) * 4 * ph * pw, T(0));
        for (int ic = 0; ic < g.in_c; ++ic)
            for (int y = 0; y < g.in_h; ++y) {
                const T* __restrict src = in + (ic * g.in_h + y) * g.in_w;
                T* __restrict even = phases.data() + ((ic * 4 + (y & 1) * 2) * ph + y / 2) * pw;
                T* __restrict odd = even + static_cast<std::ptrdiff_t>(ph) * pw;
                for (int x = 0; x + 1 < g.in_w; x += 2) {
                    even[x / 2] = src[x];
                    odd[x / 2] = src[x + 1];
                }
                if (g.in_w & 1) even[g.in_w / 2] = src[g.in_w - 1];
            }
        for (int ic = 0; ic < g.in_c; ++ic)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    T* dst = col + static_cast<std::ptrdiff_t>((ic * k + ky) * k + kx) * oh * ow;
                    const T* plane = phases.data() + static_cast<std::ptrdiff_t>(ic * 4 + (ky & 1) * 2 + (kx & 1)) * ph * pw;
                    for (int oy = 0; oy < oh; ++oy) {
                        const T* __restrict src = plane + (oy + ky / 2) * pw + kx / 2;
                        T* __restrict d = dst + oy * ow;
                        for (int ox = 0; ox < ow; ++ox) d[ox] = src[ox];
                    }
                }
        return;
    }
    for (int ic = 0; ic < g.in_c; ++ic)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + static_cast<std::ptrdiff_t>((ic * k + ky) * k + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const T* __restrict src = in + (ic * g.in_h + oy * s + ky) * g.in_w + kx;
                    T* __restrict d = dst + oy * ow;
                    for (int ox = 0; ox < ow; ++ox) d[ox] = src[ox * s];
                }
            }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* col, T* in) {
    const int oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
    for (int ic = 0; ic < g.in_c; ++ic)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + static_cast<std::ptrdiff_t>((ic * k + ky) * k + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    T* d = in + (ic * g.in_h + oy * s + ky) * g.in_w + kx;
                    const T* sr = src + oy * ow;
                    for (int ox = 0; ox < ow; ++ox) d[ox * s] += sr[ox];
                }
            }
}

namespace {

template <class T>
void conv2d_forward_im2col(const ConvGeom& g, int batch, const T* in, const T* w, const T* b, T* out) {
    const int rows = g.col_rows(), cols = g.col_cols();
#pragma omp parallel
    {
        std::vector<T> col(static_cast<std::size_t>(rows) * cols);
#pragma omp for schedule(static)
        for (int n = 0; n < batch; ++n) {
            im2col(g, in + static_cast<std::ptrdiff_t>(n) * g.in_size(), col.data());
            T* y = out + static_cast<std::ptrdiff_t>(n) * g.out_size();
            for (int oc = 0; oc < g.out_c; ++oc) std::fill(y + oc * cols, y + (oc + 1) * cols, b[oc]);
            gemm_acc_rows<T>(0, g.out_c, cols, rows, w, rows, 1, col.data(), y);
        }
    }
}

template <class T>
void conv2d_backward_input_im2col(const ConvGeom& g, int batch, const T* dout, const T* w, T* din) {
    const int rows = g.col_rows(), cols = g.col_cols();
#pragma omp parallel
    {
        std::vector<T> dcol(static_cast<std::size_t>(rows) * cols);
#pragma omp for schedule(static)
        for (int n = 0; n < batch; ++n) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            // dcol = W^T dout_n; W is [out_c, rows] so A(i, k) = W[k * rows + i].
            gemm_acc_rows<T>(0, rows, cols, g.out_c, w, 1, rows,
                             dout + static_cast<std::ptrdiff_t>(n) * g.out_size(), dcol.data());
            T* dx = din + static_cast<std::ptrdiff_t>(n) * g.in_size();
            std::fill(dx, dx + g.in_size(), T(0));
            col2im_add(g, dcol.data(), dx);
        }
    }
}

template <class T>
void conv2d_backward_weight_im2col(const ConvGeom& g, int batch, const T* in, const T* dout, T* dw, T* db) {
    const int rows = g.col_rows(), cols = g.col_cols();
    std::vector<T> col(static_cast<std::size_t>(rows) * cols);
    for (int n = 0; n < batch; ++n) {
        im2col(g, in + static_cast<std::ptrdiff_t>(n) * g.in_size(), col.data());
        const T* dy = dout + static_cast<std::ptrdiff_t>(n) * g.out_size();
        for_row_blocks(g.out_c, [&](int r0, int r1) {
            gemm_nt_acc_rows<T>(r0, r1, rows, cols, dy, col.data(), dw);
            for (int oc = r0; oc < r1; ++oc) {
                T s = 0;
                for (int p = 0; p < cols; ++p) s += dy[oc * cols + p];
                db[oc] += s;
            }
        });
    }
}

// ---- Direct stride-2 convolution over phase planes -------------------------
//
// Each input channel is split into four planes, plane (py, px) holding
// in[2y + py][2x + px]. Output row oy with tap (ky, kx) then reads a
// contiguous run of plane (ky & 1, kx & 1) starting at row oy + ky / 2,
// column kx / 2. Output rows are computed kLanes * NV wide; lanes past out_w
// are padding and never stored (their gradients are zero).

struct PhaseGeom {
    int vec_w;  // padded output row width, multiple of kLanes
    int ph;     // rows per plane
    int pw;     // padded plane row width
    int plane() const { return ph * pw; }
};

PhaseGeom phase_geom(const ConvGeom& g) {
    PhaseGeom p;
    p.vec_w = (g.out_w() + kLanes - 1) / kLanes * kLanes;
    const int halo = (g.kernel - 1) / 2;
    p.ph = std::max(g.out_h() + halo, (g.in_h + 1) / 2);
    p.pw = (std::max(p.vec_w + halo, (g.in_w + 1) / 2) + kLanes - 1) / kLanes * kLanes;
    return p;
}

bool direct_applicable(const ConvGeom& g) {
    return g.stride == 2 && g.out_c % 4 == 0 && g.out_w() <= 2 * kLanes;
}

template <class T>
void split_phases(const ConvGeom& g, const PhaseGeom& p, const T* in, T* planes) {
    std::fill(planes, planes + static_cast<std::ptrdiff_t>(g.in_c) * 4 * p.plane(), T(0));
    const int half = g.in_w / 2;
    for (int ic = 0; ic < g.in_c; ++ic)
        for (int y = 0; y < g.in_h; ++y) {
            const T* __restrict src = in + (ic * g.in_h + y) * g.in_w;
            T* __restrict even = planes + static_cast<std::ptrdiff_t>(ic * 4 + (y & 1) * 2) * p.plane() + (y / 2) * p.pw;
            T* __restrict odd = even + p.plane();
            for (int x = 0; x < half; ++x) {
                even[x] = src[2 * x];
                odd[x] = src[2 * x + 1];
            }
            if (g.in_w & 1) even[half] = src[g.in_w - 1];
        }
}

template <class T>
void merge_phases(const ConvGeom& g, const PhaseGeom& p, const T* planes, T* in) {
    for (int ic = 0; ic < g.in_c; ++ic)
        for (int y = 0; y < g.in_h; ++y) {
            T* dst = in + (ic * g.in_h + y) * g.in_w;
            const T* even = planes + static_cast<std::ptrdiff_t>(ic * 4 + (y & 1) * 2) * p.plane() + (y / 2) * p.pw;
            const T* odd = even + p.plane();
            for (int x = 0; x < g.in_w; ++x) dst[x] = (x & 1 ? odd : even)[x / 2];
        }
}

// dout rows padded to vec_w with zeros.
template <class T>
void pad_rows(const ConvGeom& g, const PhaseGeom& p, const T* dout, T* padded) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int oc = 0; oc < g.out_c; ++oc)
        for (int oy = 0; oy < oh; ++oy) {
            const T* src = dout + (oc * oh + oy) * ow;
            T* dst = padded + (static_cast<std::ptrdiff_t>(oc) * oh + oy) * p.vec_w;
            for (int x = 0; x < ow; ++x) dst[x] = src[x];
            for (int x = ow; x < p.vec_w; ++x) dst[x] = T(0);
        }
}

template <class T>
const T* tap_row(const ConvGeom& g, const PhaseGeom& p, const T* planes, int ic, int ky, int kx, int oy) {
    (void)g;
    return planes + static_cast<std::ptrdiff_t>(ic * 4 + (ky & 1) * 2 + (kx & 1)) * p.plane() +
           (oy + ky / 2) * p.pw + kx / 2;
}

// 64-byte GCC vector types; locals of these stay in registers where plain
// arrays of scalars get spilled.
typedef float simd_f __attribute__((vector_size(64)));
typedef double simd_d __attribute__((vector_size(64)));
template <class T>
struct SimdOf;
template <>
struct SimdOf<float> {
    using type = simd_f;
};
template <>
struct SimdOf<double> {
    using type = simd_d;
};
template <class T>
using Simd = typename SimdOf<T>::type;
template <class T>
constexpr int kSimdWidth = 64 / sizeof(T);

template <class T>
inline Simd<T> load(const T* p) {
    Simd<T> v;
    std::memcpy(&v, p, sizeof v);
    return v;
}
template <class T>
inline void store(T* p, Simd<T> v) {
    std::memcpy(p, &v, sizeof v);
}
template <class T>
inline Simd<T> splat(T x) {
    Simd<T> v = {};
    return v + x;
}

template <class T, int OCB, int NV>
void direct_forward_sample(const ConvGeom& g, const PhaseGeom& p, const T* planes, const T* w, const T* b,
                           T* out) {
    using V = Simd<T>;
    constexpr int NVEC = NV * kLanes / kSimdWidth<T>;
    const int oh = g.out_h(), ow = g.out_w(), k = g.kernel, kk = k * k;
    const std::ptrdiff_t wstride = static_cast<std::ptrdiff_t>(g.in_c) * kk;
    const int taps = g.in_c * kk;
    thread_local std::vector<std::ptrdiff_t> tap_off;
    tap_off.resize(taps);
    for (int ic = 0; ic < g.in_c; ++ic)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
                tap_off[ic * kk + ky * k + kx] = tap_row(g, p, planes, ic, ky, kx, 0) - planes;
    for (int oc0 = 0; oc0 < g.out_c; oc0 += OCB)
        for (int oy = 0; oy < oh; ++oy) {
            V acc[OCB][NVEC];
#pragma GCC unroll 16
            for (int r = 0; r < OCB; ++r)
#pragma GCC unroll 4
                for (int v = 0; v < NVEC; ++v) acc[r][v] = splat(b[oc0 + r]);
            const T* row_base = planes + static_cast<std::ptrdiff_t>(oy) * p.pw;
            const T* wbase = w + oc0 * wstride;
            for (int t = 0; t < taps; ++t) {
                const T* src = row_base + tap_off[t];
                const T* wp = wbase + t;
                V sv[NVEC];
#pragma GCC unroll 4
                for (int v = 0; v < NVEC; ++v) sv[v] = load(src + v * kSimdWidth<T>);
#pragma GCC unroll 16
                for (int r = 0; r < OCB; ++r) {
                    const T wv = wp[r * wstride];
#pragma GCC unroll 4
                    for (int v = 0; v < NVEC; ++v) acc[r][v] += wv * sv[v];
                }
            }
#pragma GCC unroll 16
            for (int r = 0; r < OCB; ++r) {
                alignas(64) T row[NVEC * kSimdWidth<T>];
#pragma GCC unroll 4
                for (int v = 0; v < NVEC; ++v) store(row + v * kSimdWidth<T>, acc[r][v]);
                T* dst = out + (static_cast<std::ptrdiff_t>(oc0 + r) * oh + oy) * ow;
                for (int x = 0; x < ow; ++x) dst[x] = row[x];
            }
        }
}

// Accumulates per-lane partial sums into lanes[(oc * taps + tap) * kLanes + l];
// the caller reduces lanes once after the whole batch.
template <class T, int OCB, int NV>
void direct_backward_weight_sample(const ConvGeom& g, const PhaseGeom& p, const T* planes, const T* dpad,
                                   int oc0, int ic, T* lanes) {
    using V = Simd<T>;
    constexpr int LV = kLanes / kSimdWidth<T>;  // vectors per lane group
    const int oh = g.out_h(), k = g.kernel, kk = k * k;
    const int taps = g.in_c * kk;
    const std::ptrdiff_t rstride = static_cast<std::ptrdiff_t>(oh) * p.vec_w;
    for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
            const int tap = ic * kk + ky * k + kx;
            V acc[OCB][LV];
#pragma GCC unroll 16
            for (int r = 0; r < OCB; ++r)
#pragma GCC unroll 4
                for (int u = 0; u < LV; ++u)
                    acc[r][u] = load(lanes + (static_cast<std::ptrdiff_t>(oc0 + r) * taps + tap) * kLanes +
                                     u * kSimdWidth<T>);
            const T* src0 = tap_row(g, p, planes, ic, ky, kx, 0);
            const T* d0 = dpad + static_cast<std::ptrdiff_t>(oc0) * rstride;
            for (int oy = 0; oy < oh; ++oy) {
                const T* src = src0 + static_cast<std::ptrdiff_t>(oy) * p.pw;
                const T* d = d0 + static_cast<std::ptrdiff_t>(oy) * p.vec_w;
#pragma GCC unroll 4
                for (int v = 0; v < NV; ++v)
#pragma GCC unroll 4
                    for (int u = 0; u < LV; ++u) {
                        const int off = v * kLanes + u * kSimdWidth<T>;
                        const V sv = load(src + off);
#pragma GCC unroll 16
                        for (int r = 0; r < OCB; ++r) acc[r][u] += load(d + r * rstride + off) * sv;
                    }
            }
#pragma GCC unroll 16
            for (int r = 0; r < OCB; ++r)
#pragma GCC unroll 4
                for (int u = 0; u < LV; ++u)
                    store(lanes + (static_cast<std::ptrdiff_t>(oc0 + r) * taps + tap) * kLanes + u * kSimdWidth<T>,
                          acc[r][u]);
        }
}

// Fixed pairwise tree over kLanes values.
template <class T>
T reduce_lanes(const T* src) {
    T buf[kLanes];
    for (int l = 0; l < kLanes; ++l) buf[l] = src[l];
    for (int w = kLanes / 2; w >= 1; w /= 2)
        for (int l = 0; l < w; ++l) buf[l] += buf[l + w];
    return buf[0];
}

template <class T, int NV>
void direct_backward_input_sample(const ConvGeom& g, const PhaseGeom& p, const T* dpad, const T* w,
                                  T* dplanes) {
    using V = Simd<T>;
    constexpr int NVEC = NV * kLanes / kSimdWidth<T>;
    constexpr int RB = 4;  // output rows per register block
    const int oh = g.out_h(), k = g.kernel, kk = k * k;
    const std::ptrdiff_t wstride = static_cast<std::ptrdiff_t>(g.in_c) * kk;
    const std::ptrdiff_t rstride = static_cast<std::ptrdiff_t>(oh) * p.vec_w;
    for (int ic = 0; ic < g.in_c; ++ic)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* base = dplanes + static_cast<std::ptrdiff_t>(ic * 4 + (ky & 1) * 2 + (kx & 1)) * p.plane() +
                          (ky / 2) * p.pw + kx / 2;
                const T* wp = w + ic * kk + ky * k + kx;
                int oy = 0;
                for (; oy + RB <= oh; oy += RB) {
                    V acc[RB][NVEC];
#pragma GCC unroll 4
                    for (int r = 0; r < RB; ++r)
#pragma GCC unroll 4
                        for (int v = 0; v < NVEC; ++v) acc[r][v] = load(base + (oy + r) * p.pw + v * kSimdWidth<T>);
                    for (int oc = 0; oc < g.out_c; ++oc) {
                        const T wv = wp[oc * wstride];
                        const T* d = dpad + oc * rstride + static_cast<std::ptrdiff_t>(oy) * p.vec_w;
#pragma GCC unroll 4
                        for (int r = 0; r < RB; ++r)
#pragma GCC unroll 4
                            for (int v = 0; v < NVEC; ++v)
                                acc[r][v] += wv * load(d + r * p.vec_w + v * kSimdWidth<T>);
                    }
#pragma GCC unroll 4
                    for (int r = 0; r < RB; ++r)
#pragma GCC unroll 4
                        for (int v = 0; v < NVEC; ++v) store(base + (oy + r) * p.pw + v * kSimdWidth<T>, acc[r][v]);
                }
                for (; oy < oh; ++oy) {
                    V acc[NVEC];
                    for (int v = 0; v < NVEC; ++v) acc[v] = load(base + oy * p.pw + v * kSimdWidth<T>);
                    for (int oc = 0; oc < g.out_c; ++oc) {
                        const T wv = wp[oc * wstride];
                        const T* d = dpad + oc * rstride + static_cast<std::ptrdiff_t>(oy) * p.vec_w;
                        for (int v = 0; v < NVEC; ++v) acc[v] += wv * load(d + v * kSimdWidth<T>);
                    }
                    for (int v = 0; v < NVEC; ++v) store(base + oy * p.pw + v * kSimdWidth<T>, acc[v]);
                }
            }
}

template <class T, int OCB, int NV>
void conv2d_forward_direct(const ConvGeom& g, int batch, const T* in, const T* w, const T* b, T* out) {
    const PhaseGeom p = phase_geom(g);
#pragma omp parallel
    {
        std::vector<T> planes(static_cast<std::size_t>(g.in_c) * 4 * p.plane() + 2 * kLanes);
#pragma omp for schedule(static)
        for (int n = 0; n < batch; ++n) {
            split_phases(g, p, in + static_cast<std::ptrdiff_t>(n) * g.in_size(), planes.data());
            direct_forward_sample<T, OCB, NV>(g, p, planes.data(), w, b,
                                              out + static_cast<std::ptrdiff_t>(n) * g.out_size());
        }
    }
}

template <class T, int NV>
void conv2d_backward_input_direct(const ConvGeom& g, int batch, const T* dout, const T* w, T* din) {
    const PhaseGeom p = phase_geom(g);
#pragma omp parallel
    {
        std::vector<T> dplanes(static_cast<std::size_t>(g.in_c) * 4 * p.plane() + 2 * kLanes);
        std::vector<T> dpad(static_cast<std::size_t>(g.out_c) * g.out_h() * p.vec_w);
#pragma omp for schedule(static)
        for (int n = 0; n < batch; ++n) {
            pad_rows(g, p, dout + static_cast<std::ptrdiff_t>(n) * g.out_size(), dpad.data());
            std::fill(dplanes.begin(), dplanes.end(), T(0));
            direct_backward_input_sample<T, NV>(g, p, dpad.data(), w, dplanes.data());
            merge_phases(g, p, dplanes.data(), din + static_cast<std::ptrdiff_t>(n) * g.in_size());
        }
    }
}

template <class T, int OCB, int NV>
void conv2d_backward_weight_direct(const ConvGeom& g, int batch, const T* in, const T* dout, T* dw, T* db) {
    const PhaseGeom p = phase_geom(g);
    const int blocks = g.out_c / OCB;
    const int cols = g.col_cols();
    const int taps = g.col_rows();
    std::vector<T> planes(static_cast<std::size_t>(g.in_c) * 4 * p.plane() + 2 * kLanes);
    std::vector<T> dpad(static_cast<std::size_t>(g.out_c) * g.out_h() * p.vec_w);
    std::vector<T> lanes(static_cast<std::size_t>(g.out_c) * taps * kLanes, T(0));
    for (int n = 0; n < batch; ++n) {
        split_phases(g, p, in + static_cast<std::ptrdiff_t>(n) * g.in_size(), planes.data());
        const T* dy = dout + static_cast<std::ptrdiff_t>(n) * g.out_size();
        pad_rows(g, p, dy, dpad.data());
#pragma omp parallel for schedule(static)
        for (int item = 0; item < blocks * g.in_c; ++item)
            direct_backward_weight_sample<T, OCB, NV>(g, p, planes.data(), dpad.data(), (item / g.in_c) * OCB,
                                                      item % g.in_c, lanes.data());
        for (int oc = 0; oc < g.out_c; ++oc) {
            T s = 0;
            for (int q = 0; q < cols; ++q) s += dy[oc * cols + q];
            db[oc] += s;
        }
    }
    for (int i = 0; i < g.out_c * taps; ++i) dw[i] += reduce_lanes(lanes.data() + static_cast<std::ptrdiff_t>(i) * kLanes);
}

}  // namespace

template <class T>
void conv2d_forward(const ConvGeom& g, int batch, const T* in, const T* w, const T* b, T* out) {
    if (!direct_applicable(g)) return conv2d_forward_im2col(g, batch, in, w, b, out);
    const bool wide = g.out_w() > kLanes;
    if (g.out_c % 8 == 0) {
        if (wide) return conv2d_forward_direct<T, 8, 2>(g, batch, in, w, b, out);
        return conv2d_forward_direct<T, 8, 1>(g, batch, in, w, b, out);
    }
    if (wide) return conv2d_forward_direct<T, 4, 2>(g, batch, in, w, b, out);
    return conv2d_forward_direct<T, 4, 1>(g, batch, in, w, b, out);
}

template <class T>
void conv2d_backward_input(const ConvGeom& g, int batch, const T* dout, const T* w, T* din) {
    if (!direct_applicable(g)) return conv2d_backward_input_im2col(g, batch, dout, w, din);
    if (g.out_w() > kLanes) return conv2d_backward_input_direct<T, 2>(g, batch, dout, w, din);
    return conv2d_backward_input_direct<T, 1>(g, batch, dout, w, din);
}

template <class T>
void conv2d_backward_weight(const ConvGeom& g, int batch, const T* in, const T* dout, T* dw, T* db) {
    if (!direct_applicable(g)) return conv2d_backward_weight_im2col(g, batch, in, dout, dw, db);
    const bool wide = g.out_w() > kLanes;
    if (g.out_c % 8 == 0) {
        if (wide) return conv2d_backward_weight_direct<T, 8, 2>(g, batch, in, dout, dw, db);
        return conv2d_backward_weight_direct<T, 8, 1>(g, batch, in, dout, dw, db);
    }
    if (wide) return conv2d_backward_weight_direct<T, 4, 2>(g, batch, in, dout, dw, db);
    return conv2d_backward_weight_direct<T, 4, 1>(g, batch, in, dout, dw, db);
}

template <class T>
void dense_forward(int batch, int n_in, int n_out, const T* x, const T* w, const T* b, T* y) {
    for (int n = 0; n < batch; ++n) std::copy(b, b + n_out, y + static_cast<std::ptrdiff_t>(n) * n_out);
    for_row_blocks(batch, [&](int r0, int r1) { gemm_nt_acc_rows<T>(r0, r1, n_out, n_in, x, w, y); });
}

template <class T>
void dense_backward_input(int batch, int n_in, int n_out, const T* dy, const T* w, T* dx) {
    std::fill(dx, dx + static_cast<std::ptrdiff_t>(batch) * n_in, T(0));
    for_row_blocks(batch, [&](int r0, int r1) { gemm_acc_rows<T>(r0, r1, n_in, n_out, dy, n_out, 1, w, dx); });
}

template <class T>
void dense_backward_weight(int batch, int n_in, int n_out, const T* x, const T* dy, T* dw, T* db) {
    // dW[o, :] += sum_n dy[n, o] * x[n, :]; A(o, n) = dy[n * n_out + o].
    for_row_blocks(n_out, [&](int r0, int r1) {
        gemm_acc_rows<T>(r0, r1, n_in, batch, dy, 1, n_out, x, dw);
        for (int o = r0; o < r1; ++o) {
            T s = 0;
            for (int n = 0; n < batch; ++n) s += dy[n * n_out + o];
            db[o] += s;
        }
    });
}

}  // namespace parallel

#define GEARLAB_INSTANTIATE_KERNELS(NS, T)                                                          \
    template void NS::conv2d_forward<T>(const ConvGeom&, int, const T*, const T*, const T*, T*);   \
    template void NS::conv2d_backward_input<T>(const ConvGeom&, int, const T*, const T*, T*);      \
    template void NS::conv2d_backward_weight<T>(const ConvGeom&, int, const T*, const T*, T*, T*); \
    template void NS::dense_forward<T>(int, int, int, const T*, const T*, const T*, T*);           \
    template void NS::dense_backward_input<T>(int, int, int, const T*, const T*, T*);              \
    template void NS::dense_backward_weight<T>(int, int, int, const T*, const T*, T*, T*);

GEARLAB_INSTANTIATE_KERNELS(reference, float)
GEARLAB_INSTANTIATE_KERNELS(reference, double)
GEARLAB_INSTANTIATE_KERNELS(parallel, float)
GEARLAB_INSTANTIATE_KERNELS(parallel, double)
template void parallel::im2col<float>(const ConvGeom&, const float*, float*);
template void parallel::im2col<double>(const ConvGeom&, const double*, double*);
template void parallel::col2im_add<float>(const ConvGeom&, const float*, float*);
template void parallel::col2im_add<double>(const ConvGeom&, const double*, double*);

#undef GEARLAB_INSTANTIATE_KERNELS

}  // namespace gearlab::nn
