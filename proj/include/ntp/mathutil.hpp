#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace ntp {

/// log(sum(exp(x))) with max-shift stabilization.
inline double logsumexp(std::span<const double> x) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const double v : x) mx = std::max(mx, v);
  double s = 0.0;
  for (const double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

/// Mean cross-entropy over a logits batch; optionally writes d(mean CE)/dlogits.
/// logits: n x k row-major. Throws on non-finite logits.
inline double softmax_cross_entropy(std::span<const double> logits,
                                    std::span<const std::uint16_t> labels, std::size_t k,
                                    std::vector<double>* dlogits = nullptr) {
  const std::size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("empty batch");
  if (logits.size() != n * k) throw std::invalid_argument("logits shape mismatch");
  if (dlogits) dlogits->assign(n * k, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.subspan(i * k, k);
    for (const double v : row)
      if (!std::isfinite(v)) throw std::runtime_error("non-finite logits");
    const double lse = logsumexp(row);
    total += lse - row[labels[i]];
    if (dlogits) {
      for (std::size_t j = 0; j < k; ++j)
        (*dlogits)[i * k + j] = std::exp(row[j] - lse) / static_cast<double>(n);
      (*dlogits)[i * k + labels[i]] -= 1.0 / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace ntp
