#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cstl/tensor.hpp"

namespace cstl {

// ---------------------------------------------------------------------------
// Batch-all triplet loss, applied independently per part and averaged over
// the non-zero hinge terms of each part, then over parts. Distances are
// Euclidean between the C_e part vectors.
// ---------------------------------------------------------------------------

template <typename T>
struct TripletCache {
  Tensor<T> dist;            // [K,B,B]
  std::vector<std::int64_t> active;  // non-zero term count per part
  T margin = T(0);
};

template <typename T>
void validate_triplet_batch(const std::vector<int>& labels) {
  if (labels.size() < 2) {
    throw std::invalid_argument("batch_all_triplet: batch too small");
  }
  std::vector<int> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  int classes = 1;
  bool has_pair = false;
  int run = 1;
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] == sorted[i - 1]) {
      ++run;
    } else {
      ++classes;
      run = 1;
    }
    if (run >= 2) has_pair = true;
  }
  if (classes < 2) {
    throw std::invalid_argument("batch_all_triplet: need at least 2 classes");
  }
  if (!has_pair) {
    throw std::invalid_argument(
        "batch_all_triplet: need a class with at least 2 samples");
  }
}

template <typename T>
T batch_all_triplet(const Tensor<T>& f_o, const std::vector<int>& labels,
                    T margin, TripletCache<T>* cache = nullptr) {
  const int batch = f_o.extent(0), parts = f_o.extent(1), ce = f_o.extent(2);
  if (static_cast<int>(labels.size()) != batch) {
    throw std::invalid_argument("batch_all_triplet: label count mismatch");
  }
  validate_triplet_batch<T>(labels);

  Tensor<T> dist({parts, batch, batch});
  for (int k = 0; k < parts; ++k) {
    for (int i = 0; i < batch; ++i) {
      for (int j = i + 1; j < batch; ++j) {
        const T* fi = f_o.data() + (static_cast<std::int64_t>(i) * parts + k) * ce;
        const T* fj = f_o.data() + (static_cast<std::int64_t>(j) * parts + k) * ce;
        T s = T(0);
        for (int c = 0; c < ce; ++c) {
          const T d = fi[c] - fj[c];
          s += d * d;
        }
        const T d = std::sqrt(s);
        dist(k, i, j) = d;
        dist(k, j, i) = d;
      }
    }
  }

  T total = T(0);
  std::vector<std::int64_t> active(static_cast<std::size_t>(parts), 0);
  for (int k = 0; k < parts; ++k) {
    T part_sum = T(0);
    std::int64_t cnt = 0;
    for (int a = 0; a < batch; ++a) {
      for (int p = 0; p < batch; ++p) {
        if (p == a || labels[p] != labels[a]) continue;
        for (int n = 0; n < batch; ++n) {
          if (labels[n] == labels[a]) continue;
          const T term = margin + dist(k, a, p) - dist(k, a, n);
          if (term > T(0)) {
            part_sum += term;
            ++cnt;
          }
        }
      }
    }
    active[static_cast<std::size_t>(k)] = cnt;
    if (cnt > 0) total += part_sum / static_cast<T>(cnt);
  }
  if (cache) {
    cache->dist = std::move(dist);
    cache->active = std::move(active);
    cache->margin = margin;
  }
  return total / static_cast<T>(parts);
}

template <typename T>
void batch_all_triplet_backward(const Tensor<T>& f_o,
                                const std::vector<int>& labels,
                                const TripletCache<T>& cache, Tensor<T>& d_fo) {
  const int batch = f_o.extent(0), parts = f_o.extent(1), ce = f_o.extent(2);
  Tensor<T> ddist({batch, batch});
  for (int k = 0; k < parts; ++k) {
    const std::int64_t cnt = cache.active[static_cast<std::size_t>(k)];
    if (cnt == 0) continue;
    const T coef = T(1) / (static_cast<T>(cnt) * static_cast<T>(parts));
    ddist.fill(T(0));
    for (int a = 0; a < batch; ++a) {
      for (int p = 0; p < batch; ++p) {
        if (p == a || labels[p] != labels[a]) continue;
        for (int n = 0; n < batch; ++n) {
          if (labels[n] == labels[a]) continue;
          const T term = cache.margin + cache.dist(k, a, p) - cache.dist(k, a, n);
          if (term > T(0)) {
            ddist(a, p) += coef;
            ddist(a, n) -= coef;
          }
        }
      }
    }
    for (int i = 0; i < batch; ++i) {
      for (int j = 0; j < batch; ++j) {
        const T g = ddist(i, j);
        if (g == T(0) || i == j) continue;
        const T d = std::max(cache.dist(k, i, j), static_cast<T>(1e-12));
        const T* fi = f_o.data() + (static_cast<std::int64_t>(i) * parts + k) * ce;
        const T* fj = f_o.data() + (static_cast<std::int64_t>(j) * parts + k) * ce;
        T* di = d_fo.data() + (static_cast<std::int64_t>(i) * parts + k) * ce;
        T* dj = d_fo.data() + (static_cast<std::int64_t>(j) * parts + k) * ce;
        for (int c = 0; c < ce; ++c) {
          const T u = g * (fi[c] - fj[c]) / d;
          di[c] += u;
          dj[c] -= u;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Cross-entropy over the SSFL logits P_w[B,H,K,C_t]: summed over heads,
// averaged over batch and parts so the magnitude stays batch-size free.
// ---------------------------------------------------------------------------

template <typename T>
struct CrossEntropyCache {
  Tensor<T> probs;
};

template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                CrossEntropyCache<T>* cache = nullptr) {
  if (logits.rank() != 4) {
    throw std::invalid_argument("cross_entropy: logits must be [B,H,K,C_t]");
  }
  const int batch = logits.extent(0), heads = logits.extent(1),
            parts = logits.extent(2), classes = logits.extent(3);
  if (static_cast<int>(labels.size()) != batch) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(classes) + ")");
    }
  }
  Tensor<T> probs(logits.shape());
  T loss = T(0);
  const std::int64_t rows = static_cast<std::int64_t>(batch) * heads * parts;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = logits.data() + r * classes;
    T* prow = probs.data() + r * classes;
    T m = row[0];
    for (int c = 1; c < classes; ++c) m = std::max(m, row[c]);
    T sum = T(0);
    for (int c = 0; c < classes; ++c) {
      prow[c] = std::exp(row[c] - m);
      sum += prow[c];
    }
    const T inv = T(1) / sum;
    for (int c = 0; c < classes; ++c) prow[c] *= inv;
    const int y = labels[static_cast<std::size_t>(r / (heads * parts))];
    loss += -(row[y] - m - std::log(sum));
  }
  if (cache) cache->probs = std::move(probs);
  return loss / (static_cast<T>(batch) * static_cast<T>(parts));
}

template <typename T>
void cross_entropy_backward(const CrossEntropyCache<T>& cache,
                            const std::vector<int>& labels,
                            Tensor<T>& d_logits) {
  const int batch = d_logits.extent(0), heads = d_logits.extent(1),
            parts = d_logits.extent(2), classes = d_logits.extent(3);
  const T norm = T(1) / (static_cast<T>(batch) * static_cast<T>(parts));
  const std::int64_t rows = static_cast<std::int64_t>(batch) * heads * parts;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* prow = cache.probs.data() + r * classes;
    T* drow = d_logits.data() + r * classes;
    const int y = labels[static_cast<std::size_t>(r / (heads * parts))];
    for (int c = 0; c < classes; ++c) {
      drow[c] += norm * (prow[c] - (c == y ? T(1) : T(0)));
    }
  }
}

// Unit-weight sum of the two objectives.
template <typename T>
T total_loss(T ce, T tri) {
  return ce + tri;
}

}  // namespace cstl
