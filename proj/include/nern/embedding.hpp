#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "nern/error.hpp"

namespace nern {

struct KernelCoordinate {
  size_t layer = 0;
  size_t filter = 0;
  size_t channel = 0;
};

enum class EmbeddingRegime { Smooth, NonSmooth };

// Sinusoidal positional embedding config. The smooth/non-smooth bases follow
// the two plotted regimes; dimension of the full coordinate embedding is 6*N.
struct EmbeddingConfig {
  double base = 0.76;
  size_t num_frequencies = 40;
  EmbeddingRegime regime = EmbeddingRegime::Smooth;

  static EmbeddingConfig smooth(size_t n = 40) { return {0.76, n, EmbeddingRegime::Smooth}; }
  static EmbeddingConfig non_smooth(size_t n = 40) { return {1.25, n, EmbeddingRegime::NonSmooth}; }

  size_t dim() const { return 6 * num_frequencies; }

  void validate() const {
    if (base <= 0.0) fail(ErrorCode::InvalidArgument, "embedding base must be positive");
    if (num_frequencies < 1) fail(ErrorCode::InvalidArgument, "embedding needs N >= 1");
  }
};

// gamma(v) = [sin(b^0 pi v), cos(b^0 pi v), ..., sin(b^{N-1} pi v), cos(b^{N-1} pi v)]
inline std::vector<double> gamma(double v, const EmbeddingConfig& cfg) {
  cfg.validate();
  std::vector<double> out(2 * cfg.num_frequencies);
  double bn = 1.0;
  for (size_t n = 0; n < cfg.num_frequencies; ++n) {
    const double a = bn * M_PI * v;
    out[2 * n] = std::sin(a);
    out[2 * n + 1] = std::cos(a);
    bn *= cfg.base;
  }
  return out;
}

// PE(l,f,c) = concat(gamma(l), gamma(f), gamma(c))
inline std::vector<double> embed(const KernelCoordinate& c, const EmbeddingConfig& cfg) {
  std::vector<double> out;
  out.reserve(cfg.dim());
  for (double v : {double(c.layer), double(c.filter), double(c.channel)}) {
    auto g = gamma(v, cfg);
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double aa = 0, bb = 0, ab = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    aa += a[i] * a[i];
    bb += b[i] * b[i];
    ab += a[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// Cosine similarity of gamma(v) against gamma(anchor) for v in [0, range),
// min-max normalized over the range so the anchor maps to 1.
inline std::vector<double> similarity_profile(size_t anchor, size_t range,
                                              const EmbeddingConfig& cfg) {
  if (anchor >= range) fail(ErrorCode::InvalidArgument, "anchor outside profile range");
  const auto ga = gamma(double(anchor), cfg);
  std::vector<double> sims(range);
  for (size_t v = 0; v < range; ++v) sims[v] = cosine_similarity(ga, gamma(double(v), cfg));
  double lo = sims[0], hi = sims[0];
  for (double s : sims) {
    lo = s < lo ? s : lo;
    hi = s > hi ? s : hi;
  }
  if (hi - lo <= 0.0)
    fail(ErrorCode::DegenerateInput, "similarity profile is constant over the range");
  for (double& s : sims) s = (s - lo) / (hi - lo);
  return sims;
}

inline std::string profile_csv(const std::vector<double>& profile) {
  std::string s = "index,similarity\n";
  char buf[64];
  for (size_t i = 0; i < profile.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f\n", i, profile[i]);
    s += buf;
  }
  return s;
}

}  // namespace nern
