#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "cstl/gemm.hpp"
#include "cstl/parallel.hpp"
#include "cstl/tensor.hpp"

// Forward kernels plus their analytic adjoints. Backward functions
// accumulate (+=) into caller-provided gradient tensors; pass nullptr to
// skip a gradient. Every kernel is a pure function of its arguments.

namespace cstl {

namespace detail {

template <typename T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, int pad,
            int stride, int ho, int wo, T* cols) {
  // cols is (cin*kh*kw) x (ho*wo), row-major.
  std::int64_t row = 0;
  for (int c = 0; c < cin; ++c) {
    const T* plane = x + static_cast<std::int64_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++row) {
        T* dst = cols + row * ho * wo;
        for (int i = 0; i < ho; ++i) {
          const int si = i * stride + ki - pad;
          if (si < 0 || si >= h) {
            for (int j = 0; j < wo; ++j) dst[i * wo + j] = T(0);
            continue;
          }
          const T* srow = plane + static_cast<std::int64_t>(si) * w;
          for (int j = 0; j < wo; ++j) {
            const int sj = j * stride + kj - pad;
            dst[i * wo + j] = (sj >= 0 && sj < w) ? srow[sj] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int cin, int h, int w, int kh, int kw, int pad,
                int stride, int ho, int wo, T* dx) {
  std::int64_t row = 0;
  for (int c = 0; c < cin; ++c) {
    T* plane = dx + static_cast<std::int64_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++row) {
        const T* src = cols + row * ho * wo;
        for (int i = 0; i < ho; ++i) {
          const int si = i * stride + ki - pad;
          if (si < 0 || si >= h) continue;
          T* drow = plane + static_cast<std::int64_t>(si) * w;
          for (int j = 0; j < wo; ++j) {
            const int sj = j * stride + kj - pad;
            if (sj >= 0 && sj < w) drow[sj] += src[i * wo + j];
          }
        }
      }
    }
  }
}

// One row of a 3x3 stencil: dst[j] += tl*src[j-1] + tc*src[j] + tr*src[j+1]
// with zero padding at both ends. Requires wd >= 2.
template <typename T>
void stencil_row(T* dst, const T* src, int wd, T tl, T tc, T tr) {
  dst[0] += tc * src[0] + tr * src[1];
  for (int j = 1; j + 1 < wd; ++j) {
    dst[j] += tl * src[j - 1] + tc * src[j] + tr * src[j + 1];
  }
  dst[wd - 1] += tl * src[wd - 2] + tc * src[wd - 1];
}

// dst plane += 3x3 stencil of src plane (pad 1, stride 1).
template <typename T>
void stencil_plane(T* dst, const T* src, int h, int wd, const T* taps) {
  for (int i = 0; i < h; ++i) {
    T* out = dst + static_cast<std::int64_t>(i) * wd;
    if (i > 0) {
      stencil_row(out, src + static_cast<std::int64_t>(i - 1) * wd, wd,
                  taps[0], taps[1], taps[2]);
    }
    stencil_row(out, src + static_cast<std::int64_t>(i) * wd, wd, taps[3],
                taps[4], taps[5]);
    if (i + 1 < h) {
      stencil_row(out, src + static_cast<std::int64_t>(i + 1) * wd, wd,
                  taps[6], taps[7], taps[8]);
    }
  }
}

// Direct 3x3 pad-1 stride-1 convolution of one sample; planes stay cache
// resident and the row loops vectorize.
template <typename T>
void conv3x3_sample(const T* x, const T* w, const T* b, int cin, int h,
                    int wd, int cout, T* y) {
  for (int co = 0; co < cout; ++co) {
    T* out = y + static_cast<std::int64_t>(co) * h * wd;
    const T bias = b ? b[co] : T(0);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * wd; ++i) {
      out[i] = bias;
    }
    for (int ci = 0; ci < cin; ++ci) {
      stencil_plane(out, x + static_cast<std::int64_t>(ci) * h * wd, h, wd,
                    w + (static_cast<std::int64_t>(co) * cin + ci) * 9);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: x[B,Cin,H,W] * w[Cout,Cin,kh,kw] + b[Cout] -> y[B,Cout,H',W']
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int pad, int stride) {
  if (x.rank() != 4) {
    throw std::invalid_argument("conv2d: input must be rank 4, got " +
                                shape_str(x.shape()));
  }
  if (w.rank() != 4) {
    throw std::invalid_argument("conv2d: weight must be rank 4, got " +
                                shape_str(w.shape()));
  }
  if (x.extent(1) != w.extent(1)) {
    throw std::invalid_argument(
        "conv2d: input channel axis 1 (" + std::to_string(x.extent(1)) +
        ") does not match weight Cin (" + std::to_string(w.extent(1)) + ")");
  }
  if (w.extent(2) != w.extent(3)) {
    throw std::invalid_argument("conv2d: kernel must be square, got " +
                                shape_str(w.shape()));
  }
  if (pad < 0 || stride < 1) {
    throw std::invalid_argument("conv2d: pad must be >= 0 and stride >= 1");
  }
  const int batch = x.extent(0), cin = x.extent(1), h = x.extent(2),
            w_in = x.extent(3);
  const int cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  if (h + 2 * pad < kh || w_in + 2 * pad < kw) {
    throw std::invalid_argument("conv2d: spatial axes " +
                                std::to_string(h) + "x" +
                                std::to_string(w_in) +
                                " too small for kernel with pad " +
                                std::to_string(pad));
  }
  if (!b.empty() && (b.rank() != 1 || b.extent(0) != cout)) {
    throw std::invalid_argument("conv2d: bias axis 0 must equal Cout");
  }
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w_in + 2 * pad - kw) / stride + 1;

  Tensor<T> y({batch, cout, ho, wo});
  if (kh == 3 && pad == 1 && stride == 1 && w_in >= 2 && h >= 2) {
    parallel_for(0, batch, [&](std::int64_t bi) {
      detail::conv3x3_sample(x.data() + bi * cin * h * w_in, w.data(),
                             b.empty() ? nullptr : b.data(), cin, h, w_in,
                             cout, y.data() + bi * cout * h * w_in);
    });
    return y;
  }
  const int cols_rows = cin * kh * kw;
  const std::int64_t plane = static_cast<std::int64_t>(ho) * wo;

  parallel_for(0, batch, [&](std::int64_t bi) {
    std::vector<T> cols(static_cast<std::size_t>(cols_rows) * plane);
    detail::im2col(x.data() + bi * cin * h * w_in, cin, h, w_in, kh, kw, pad,
                   stride, ho, wo, cols.data());
    T* yb = y.data() + bi * cout * plane;
    gemm_nn(cout, static_cast<int>(plane), cols_rows, w.data(), cols_rows,
            cols.data(), static_cast<int>(plane), yb, static_cast<int>(plane));
    if (!b.empty()) {
      for (int co = 0; co < cout; ++co) {
        const T bias = b.data()[co];
        T* row = yb + static_cast<std::int64_t>(co) * plane;
        for (std::int64_t i = 0; i < plane; ++i) row[i] += bias;
      }
    }
  });
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, int pad,
                     int stride, const Tensor<T>& dy,
                     std::type_identity_t<Tensor<T>>* dx,
                     std::type_identity_t<Tensor<T>>* dw,
                     std::type_identity_t<Tensor<T>>* db) {
  const int batch = x.extent(0), cin = x.extent(1), h = x.extent(2),
            w_in = x.extent(3);
  const int cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const int ho = dy.extent(2), wo = dy.extent(3);
  const int cols_rows = cin * kh * kw;
  const std::int64_t plane = static_cast<std::int64_t>(ho) * wo;

  const int workers = std::max(1, std::min(max_threads(), batch));
  const int chunk = (batch + workers - 1) / workers;
  std::vector<std::vector<T>> dw_parts, db_parts;
  if (dw) dw_parts.assign(workers, std::vector<T>(dw->numel(), T(0)));
  if (db) db_parts.assign(workers, std::vector<T>(cout, T(0)));

  parallel_for(0, workers, [&](std::int64_t t) {
    const int lo = static_cast<int>(t) * chunk;
    const int hi = std::min(lo + chunk, batch);
    if (lo >= hi) return;
    std::vector<T> cols(static_cast<std::size_t>(cols_rows) * plane);
    std::vector<T> dcols(dx ? cols.size() : 0);
    for (int bi = lo; bi < hi; ++bi) {
      const T* dyb = dy.data() + static_cast<std::int64_t>(bi) * cout * plane;
      if (dw || dx) {
        detail::im2col(x.data() + static_cast<std::int64_t>(bi) * cin * h * w_in,
                       cin, h, w_in, kh, kw, pad, stride, ho, wo, cols.data());
      }
      if (dw) {
        gemm_nt(cout, cols_rows, static_cast<int>(plane), dyb,
                static_cast<int>(plane), cols.data(), static_cast<int>(plane),
                dw_parts[static_cast<std::size_t>(t)].data(), cols_rows, true);
      }
      if (db) {
        auto& part = db_parts[static_cast<std::size_t>(t)];
        for (int co = 0; co < cout; ++co) {
          const T* row = dyb + static_cast<std::int64_t>(co) * plane;
          T s = T(0);
          for (std::int64_t i = 0; i < plane; ++i) s += row[i];
          part[static_cast<std::size_t>(co)] += s;
        }
      }
      if (dx) {
        gemm_tn(cols_rows, static_cast<int>(plane), cout, w.data(), cols_rows,
                dyb, static_cast<int>(plane), dcols.data(),
                static_cast<int>(plane));
        detail::col2im_add(dcols.data(), cin, h, w_in, kh, kw, pad, stride, ho,
                           wo,
                           dx->data() +
                               static_cast<std::int64_t>(bi) * cin * h * w_in);
      }
    }
  });

  for (int t = 0; t < workers; ++t) {
    if (dw) {
      const auto& part = dw_parts[static_cast<std::size_t>(t)];
      for (std::int64_t i = 0; i < dw->numel(); ++i) dw->data()[i] += part[i];
    }
    if (db) {
      const auto& part = db_parts[static_cast<std::size_t>(t)];
      for (int co = 0; co < cout; ++co) db->data()[co] += part[co];
    }
  }
}

// ---------------------------------------------------------------------------
// max_pool2d: 2x2 stride-2 max with first-index tie-break.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int k, int s) {
  if (k != 2 || s != 2) {
    throw std::invalid_argument("max_pool2d: only kernel=2, stride=2");
  }
  if (x.rank() != 4) {
    throw std::invalid_argument("max_pool2d: input must be rank 4");
  }
  const int batch = x.extent(0), c = x.extent(1), h = x.extent(2),
            w = x.extent(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("max_pool2d: odd extent " + std::to_string(h) +
                                "x" + std::to_string(w));
  }
  Tensor<T> y({batch, c, h / 2, w / 2});
  const std::int64_t planes = static_cast<std::int64_t>(batch) * c;
  parallel_for(0, planes, [&](std::int64_t p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * (h / 2) * (w / 2);
    for (int i = 0; i < h / 2; ++i) {
      for (int j = 0; j < w / 2; ++j) {
        const T* cell = src + static_cast<std::int64_t>(2 * i) * w + 2 * j;
        T best = cell[0];
        if (cell[1] > best) best = cell[1];
        if (cell[w] > best) best = cell[w];
        if (cell[w + 1] > best) best = cell[w + 1];
        dst[i * (w / 2) + j] = best;
      }
    }
  });
  return y;
}

template <typename T>
void max_pool2d_backward(const Tensor<T>& x, const Tensor<T>& dy,
                         Tensor<T>& dx) {
  const int batch = x.extent(0), c = x.extent(1), h = x.extent(2),
            w = x.extent(3);
  const std::int64_t planes = static_cast<std::int64_t>(batch) * c;
  parallel_for(0, planes, [&](std::int64_t p) {
    const T* src = x.data() + p * h * w;
    const T* g = dy.data() + p * (h / 2) * (w / 2);
    T* dst = dx.data() + p * h * w;
    for (int i = 0; i < h / 2; ++i) {
      for (int j = 0; j < w / 2; ++j) {
        const std::int64_t base = static_cast<std::int64_t>(2 * i) * w + 2 * j;
        // Row-major scan order fixes the first-index tie-break.
        const std::int64_t offs[4] = {base, base + 1, base + w, base + w + 1};
        int arg = 0;
        T best = src[offs[0]];
        for (int o = 1; o < 4; ++o) {
          if (src[offs[o]] > best) {
            best = src[offs[o]];
            arg = o;
          }
        }
        dst[offs[arg]] += g[i * (w / 2) + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// conv1d_temporal: x[B,K,Cin,N] * w[Cout,Cin,3] + b[Cout] -> y[B,K,Cout,N]
// Zero padding keeps the frame axis length; weights are shared across K.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv1d_temporal(const Tensor<T>& x, const Tensor<T>& w,
                          const Tensor<T>& b, int pad = 1) {
  if (x.rank() != 4) {
    throw std::invalid_argument("conv1d_temporal: input must be rank 4");
  }
  if (w.rank() != 3 || w.extent(2) != 3 || pad != 1) {
    throw std::invalid_argument("conv1d_temporal: kernel size 3 with pad 1");
  }
  if (x.extent(2) != w.extent(1)) {
    throw std::invalid_argument(
        "conv1d_temporal: channel axis 2 (" + std::to_string(x.extent(2)) +
        ") does not match weight Cin (" + std::to_string(w.extent(1)) + ")");
  }
  const int batch = x.extent(0), parts = x.extent(1), cin = x.extent(2),
            n = x.extent(3);
  if (n < 1) throw std::invalid_argument("conv1d_temporal: empty frame axis");
  const int cout = w.extent(0);
  Tensor<T> y({batch, parts, cout, n});

  const std::int64_t groups = static_cast<std::int64_t>(batch) * parts;
  parallel_for(0, groups, [&](std::int64_t g) {
    const T* xg = x.data() + g * cin * n;
    T* yg = y.data() + g * cout * n;
    for (int co = 0; co < cout; ++co) {
      T* out = yg + static_cast<std::int64_t>(co) * n;
      const T bias = b.empty() ? T(0) : b.data()[co];
      for (int t = 0; t < n; ++t) out[t] = bias;
      for (int ci = 0; ci < cin; ++ci) {
        const T* in = xg + static_cast<std::int64_t>(ci) * n;
        const T w0 = w(co, ci, 0), w1 = w(co, ci, 1), w2 = w(co, ci, 2);
        for (int t = 0; t < n; ++t) {
          T s = w1 * in[t];
          if (t > 0) s += w0 * in[t - 1];
          if (t + 1 < n) s += w2 * in[t + 1];
          out[t] += s;
        }
      }
    }
  });
  return y;
}

template <typename T>
void conv1d_temporal_backward(const Tensor<T>& x, const Tensor<T>& w,
                              const Tensor<T>& dy,
                              std::type_identity_t<Tensor<T>>* dx,
                              std::type_identity_t<Tensor<T>>* dw,
                              std::type_identity_t<Tensor<T>>* db) {
  const int batch = x.extent(0), parts = x.extent(1), cin = x.extent(2),
            n = x.extent(3);
  const int cout = w.extent(0);
  const std::int64_t groups = static_cast<std::int64_t>(batch) * parts;

  if (dx) {
    parallel_for(0, groups, [&](std::int64_t g) {
      const T* dyg = dy.data() + g * cout * n;
      T* dxg = dx->data() + g * cin * n;
      for (int ci = 0; ci < cin; ++ci) {
        T* out = dxg + static_cast<std::int64_t>(ci) * n;
        for (int co = 0; co < cout; ++co) {
          const T* gin = dyg + static_cast<std::int64_t>(co) * n;
          const T w0 = w(co, ci, 0), w1 = w(co, ci, 1), w2 = w(co, ci, 2);
          for (int t = 0; t < n; ++t) {
            T s = w1 * gin[t];
            if (t + 1 < n) s += w0 * gin[t + 1];
            if (t > 0) s += w2 * gin[t - 1];
            out[t] += s;
          }
        }
      }
    });
  }
  if (dw || db) {
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* xg = x.data() + g * cin * n;
      const T* dyg = dy.data() + g * cout * n;
      for (int co = 0; co < cout; ++co) {
        const T* gin = dyg + static_cast<std::int64_t>(co) * n;
        if (db) {
          T s = T(0);
          for (int t = 0; t < n; ++t) s += gin[t];
          db->data()[co] += s;
        }
        if (dw) {
          for (int ci = 0; ci < cin; ++ci) {
            const T* in = xg + static_cast<std::int64_t>(ci) * n;
            T g0 = T(0), g1 = T(0), g2 = T(0);
            for (int t = 0; t < n; ++t) {
              const T gv = gin[t];
              if (t > 0) g0 += gv * in[t - 1];
              g1 += gv * in[t];
              if (t + 1 < n) g2 += gv * in[t + 1];
            }
            (*dw)(co, ci, 0) += g0;
            (*dw)(co, ci, 1) += g1;
            (*dw)(co, ci, 2) += g2;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// dwconv1d_temporal: x[B,K,C,N] * w[C,3] -> y[B,K,C,N], one kernel per channel.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dwconv1d_temporal(const Tensor<T>& x, const Tensor<T>& w,
                            int pad = 1) {
  if (x.rank() != 4) {
    throw std::invalid_argument("dwconv1d_temporal: input must be rank 4");
  }
  if (w.rank() != 2 || w.extent(1) != 3 || pad != 1) {
    throw std::invalid_argument("dwconv1d_temporal: kernel size 3 with pad 1");
  }
  if (x.extent(2) != w.extent(0)) {
    throw std::invalid_argument(
        "dwconv1d_temporal: channel axis 2 (" + std::to_string(x.extent(2)) +
        ") does not match kernel channels (" + std::to_string(w.extent(0)) +
        ")");
  }
  const int batch = x.extent(0), parts = x.extent(1), c = x.extent(2),
            n = x.extent(3);
  Tensor<T> y({batch, parts, c, n});
  const std::int64_t groups = static_cast<std::int64_t>(batch) * parts;
  parallel_for(0, groups, [&](std::int64_t g) {
    const T* xg = x.data() + g * c * n;
    T* yg = y.data() + g * c * n;
    for (int ci = 0; ci < c; ++ci) {
      const T* in = xg + static_cast<std::int64_t>(ci) * n;
      T* out = yg + static_cast<std::int64_t>(ci) * n;
      const T w0 = w(ci, 0), w1 = w(ci, 1), w2 = w(ci, 2);
      for (int t = 0; t < n; ++t) {
        T s = w1 * in[t];
        if (t > 0) s += w0 * in[t - 1];
        if (t + 1 < n) s += w2 * in[t + 1];
        out[t] = s;
      }
    }
  });
  return y;
}

template <typename T>
void dwconv1d_temporal_backward(const Tensor<T>& x, const Tensor<T>& w,
                                const Tensor<T>& dy,
                                std::type_identity_t<Tensor<T>>* dx,
                                std::type_identity_t<Tensor<T>>* dw) {
  const int batch = x.extent(0), parts = x.extent(1), c = x.extent(2),
            n = x.extent(3);
  const std::int64_t groups = static_cast<std::int64_t>(batch) * parts;
  if (dx) {
    parallel_for(0, groups, [&](std::int64_t g) {
      const T* dyg = dy.data() + g * c * n;
      T* dxg = dx->data() + g * c * n;
      for (int ci = 0; ci < c; ++ci) {
        const T* gin = dyg + static_cast<std::int64_t>(ci) * n;
        T* out = dxg + static_cast<std::int64_t>(ci) * n;
        const T w0 = w(ci, 0), w1 = w(ci, 1), w2 = w(ci, 2);
        for (int t = 0; t < n; ++t) {
          T s = w1 * gin[t];
          if (t + 1 < n) s += w0 * gin[t + 1];
          if (t > 0) s += w2 * gin[t - 1];
          out[t] += s;
        }
      }
    });
  }
  if (dw) {
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* xg = x.data() + g * c * n;
      const T* dyg = dy.data() + g * c * n;
      for (int ci = 0; ci < c; ++ci) {
        const T* in = xg + static_cast<std::int64_t>(ci) * n;
        const T* gin = dyg + static_cast<std::int64_t>(ci) * n;
        T g0 = T(0), g1 = T(0), g2 = T(0);
        for (int t = 0; t < n; ++t) {
          const T gv = gin[t];
          if (t > 0) g0 += gv * in[t - 1];
          g1 += gv * in[t];
          if (t + 1 < n) g2 += gv * in[t + 1];
        }
        (*dw)(ci, 0) += g0;
        (*dw)(ci, 1) += g1;
        (*dw)(ci, 2) += g2;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// linear: y[...,Cout] = x[...,Cin] * w[Cin,Cout] (+ b[Cout])
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2) {
    throw std::invalid_argument("linear: weight must be rank 2");
  }
  const int cin = w.extent(0), cout = w.extent(1);
  if (x.extent(x.rank() - 1) != cin) {
    throw std::invalid_argument(
        "linear: inner axis " + std::to_string(x.extent(x.rank() - 1)) +
        " does not match weight Cin " + std::to_string(cin));
  }
  if (!b.empty() && (b.rank() != 1 || b.extent(0) != cout)) {
    throw std::invalid_argument("linear: bias axis 0 must equal Cout");
  }
  std::vector<int> out_shape = x.shape();
  out_shape.back() = cout;
  Tensor<T> y(out_shape);
  const int rows = static_cast<int>(x.numel() / cin);
  gemm_nn(rows, cout, cin, x.data(), cin, w.data(), cout, y.data(), cout);
  if (!b.empty()) {
    T* dst = y.data();
    for (int r = 0; r < rows; ++r, dst += cout) {
      for (int j = 0; j < cout; ++j) dst[j] += b.data()[j];
    }
  }
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w,
                     const Tensor<T>& dy, std::type_identity_t<Tensor<T>>* dx,
                     std::type_identity_t<Tensor<T>>* dw,
                     std::type_identity_t<Tensor<T>>* db) {
  const int cin = w.extent(0), cout = w.extent(1);
  const int rows = static_cast<int>(x.numel() / cin);
  if (dx) {
    gemm_nt(rows, cin, cout, dy.data(), cout, w.data(), cout, dx->data(), cin,
            true);
  }
  if (dw) {
    gemm_tn(cin, cout, rows, x.data(), cin, dy.data(), cout, dw->data(), cout,
            true);
  }
  if (db) {
    const T* src = dy.data();
    for (int r = 0; r < rows; ++r, src += cout) {
      for (int j = 0; j < cout; ++j) db->data()[j] += src[j];
    }
  }
}

// ---------------------------------------------------------------------------
// softmax along an axis, with max subtraction.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw std::invalid_argument("softmax: bad axis");
  }
  const int extent = x.extent(axis);
  std::int64_t inner = 1;
  for (int a = axis + 1; a < x.rank(); ++a) inner *= x.extent(a);
  const std::int64_t outer = x.numel() / (extent * inner);

  Tensor<T> y(x.shape());
  const T* src = x.data();
  T* dst = y.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = (o * extent) * inner + i;
      T m = src[base];
      for (int e = 1; e < extent; ++e) {
        m = std::max(m, src[base + e * inner]);
      }
      T sum = T(0);
      for (int e = 0; e < extent; ++e) {
        const T v = std::exp(src[base + e * inner] - m);
        dst[base + e * inner] = v;
        sum += v;
      }
      const T inv = T(1) / sum;
      for (int e = 0; e < extent; ++e) dst[base + e * inner] *= inv;
    }
  }
  return y;
}

template <typename T>
void softmax_backward(const Tensor<T>& y, const Tensor<T>& dy, int axis,
                      Tensor<T>& dx) {
  const int extent = y.extent(axis);
  std::int64_t inner = 1;
  for (int a = axis + 1; a < y.rank(); ++a) inner *= y.extent(a);
  const std::int64_t outer = y.numel() / (extent * inner);

  const T* yv = y.data();
  const T* gv = dy.data();
  T* dst = dx.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = (o * extent) * inner + i;
      T dot = T(0);
      for (int e = 0; e < extent; ++e) {
        const std::int64_t at = base + e * inner;
        dot += gv[at] * yv[at];
      }
      for (int e = 0; e < extent; ++e) {
        const std::int64_t at = base + e * inner;
        dst[at] += yv[at] * (gv[at] - dot);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// layer_norm over the last (channel) axis.
// ---------------------------------------------------------------------------

template <typename T>
struct LayerNormCache {
  Tensor<T> mean;     // one per row
  Tensor<T> inv_std;  // 1/sqrt(var+eps) per row
};

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps,
                     LayerNormCache<T>* cache = nullptr) {
  const int c = x.extent(x.rank() - 1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw std::invalid_argument("layer_norm: gamma/beta must have extent C");
  }
  const std::int64_t rows = x.numel() / c;
  Tensor<T> y(x.shape());
  Tensor<T> mean({static_cast<int>(rows)});
  Tensor<T> inv_std({static_cast<int>(rows)});

  const T* src = x.data();
  T* dst = y.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = src + r * c;
    T mu = T(0);
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (int j = 0; j < c; ++j) {
      const T d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T istd = T(1) / std::sqrt(var + eps);
    mean.data()[r] = mu;
    inv_std.data()[r] = istd;
    T* out = dst + r * c;
    for (int j = 0; j < c; ++j) {
      out[j] = gamma.data()[j] * ((row[j] - mu) * istd) + beta.data()[j];
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                         const LayerNormCache<T>& cache, const Tensor<T>& dy,
                         std::type_identity_t<Tensor<T>>* dx,
                         std::type_identity_t<Tensor<T>>* dgamma,
                         std::type_identity_t<Tensor<T>>* dbeta) {
  const int c = x.extent(x.rank() - 1);
  const std::int64_t rows = x.numel() / c;
  const T* src = x.data();
  const T* gv = dy.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = src + r * c;
    const T* grow = gv + r * c;
    const T mu = cache.mean.data()[r];
    const T istd = cache.inv_std.data()[r];
    // dxhat, plus the two reduction terms of the standard derivation.
    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
    for (int j = 0; j < c; ++j) {
      const T xhat = (row[j] - mu) * istd;
      const T dxhat = grow[j] * gamma.data()[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      if (dgamma) dgamma->data()[j] += grow[j] * xhat;
      if (dbeta) dbeta->data()[j] += grow[j];
    }
    if (dx) {
      T* out = dx->data() + r * c;
      const T inv_c = T(1) / static_cast<T>(c);
      for (int j = 0; j < c; ++j) {
        const T xhat = (row[j] - mu) * istd;
        const T dxhat = grow[j] * gamma.data()[j];
        out[j] += istd * (dxhat - inv_c * sum_dxhat - inv_c * xhat * sum_dxhat_xhat);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise activations.
// ---------------------------------------------------------------------------

enum class Act { kLeakyRelu, kRelu, kSigmoid };

inline constexpr double kLeakySlope = 0.01;

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
  Tensor<T> y(x.shape());
  const T* src = x.data();
  T* dst = y.data();
  const std::int64_t n = x.numel();
  switch (kind) {
    case Act::kLeakyRelu:
      for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = src[i] >= T(0) ? src[i] : static_cast<T>(kLeakySlope) * src[i];
      }
      break;
    case Act::kRelu:
      for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = src[i] > T(0) ? src[i] : T(0);
      }
      break;
    case Act::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = T(1) / (T(1) + std::exp(-src[i]));
      }
      break;
  }
  return y;
}

// dx from the pre-activation input x and (for sigmoid) the output y.
template <typename T>
void activation_backward(const Tensor<T>& x, const Tensor<T>& y,
                         const Tensor<T>& dy, Act kind, Tensor<T>& dx) {
  const T* xv = x.data();
  const T* yv = y.data();
  const T* gv = dy.data();
  T* dst = dx.data();
  const std::int64_t n = x.numel();
  switch (kind) {
    case Act::kLeakyRelu:
      for (std::int64_t i = 0; i < n; ++i) {
        dst[i] += xv[i] >= T(0) ? gv[i] : static_cast<T>(kLeakySlope) * gv[i];
      }
      break;
    case Act::kRelu:
      for (std::int64_t i = 0; i < n; ++i) {
        dst[i] += xv[i] > T(0) ? gv[i] : T(0);
      }
      break;
    case Act::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i) {
        dst[i] += gv[i] * yv[i] * (T(1) - yv[i]);
      }
      break;
  }
}

}  // namespace cstl
