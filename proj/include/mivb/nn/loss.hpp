#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mivb/nn/tensor.hpp"

namespace mivb::nn {

template <typename T>
struct LossResult {
  double loss = 0;      // mean over the batch
  Tensor<T> grad;       // d(mean loss)/d(logits)
  int correct = 0;      // argmax hits, for classification losses
};

template <typename T>
int argmax_row(const Tensor<T>& logits, int row) {
  const int k = static_cast<int>(logits.sample_size());
  const T* p = logits.sample(row);
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (p[j] > p[best]) best = j;
  return best;
}

// Softmax cross-entropy over rows of an (n, k, 1, 1) logits tensor.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const int n = logits.n(), k = static_cast<int>(logits.sample_size());
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  LossResult<T> r;
  r.grad = Tensor<T>(n, k, 1, 1);
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    const T* z = logits.sample(i);
    double mx = z[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(z[j]));
    double s = 0;
    for (int j = 0; j < k; ++j) s += std::exp(z[j] - mx);
    const double lse = mx + std::log(s);
    r.loss += lse - z[y];
    T* g = r.grad.sample(i);
    for (int j = 0; j < k; ++j) g[j] = static_cast<T>(std::exp(z[j] - lse) / n);
    g[y] -= static_cast<T>(1.0 / n);
    if (argmax_row(logits, i) == y) ++r.correct;
  }
  r.loss /= n;
  return r;
}

// Binary cross-entropy on raw scores, shape (n, 1, 1, 1); targets in {0, 1}.
template <typename T>
LossResult<T> bce_with_logits(const Tensor<T>& scores, std::span<const T> targets) {
  const int n = scores.n();
  if (static_cast<int>(targets.size()) != n || scores.sample_size() != 1)
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  LossResult<T> r;
  r.grad = Tensor<T>(n, 1, 1, 1);
  for (int i = 0; i < n; ++i) {
    const double z = scores[i], t = targets[i];
    // log(1 + exp(-|z|)) + max(z, 0) - z t
    r.loss += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * t;
    const double sig = 1.0 / (1.0 + std::exp(-z));
    r.grad[i] = static_cast<T>((sig - t) / n);
    if ((z > 0) == (t > 0.5)) ++r.correct;
  }
  r.loss /= n;
  return r;
}

}  // namespace mivb::nn
