#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "nern/error.hpp"
#include "nern/io.hpp"
#include "nern/model_zoo.hpp"
#include "nern/predictor.hpp"
#include "nern/tensor.hpp"

namespace nern {

// ---- weight importance ------------------------------------------------------

struct ImportanceRecord {
  size_t layer = 0;
  size_t filter = 0;
  double relative_error = 0;  // ||W_f - What_f||_2 / ||W_f||_2
  size_t rank = 0;            // 1 = lowest error
};

struct ImportanceReport {
  std::vector<ImportanceRecord> records;  // sorted ascending by error
};

// Per-filter relative reconstruction error for one layer. Zero-norm original
// filters rank last.
inline ImportanceReport weight_importance(const TensorF& original, const TensorF& reconstructed,
                                          size_t layer) {
  if (!original.same_shape(reconstructed))
    fail(ErrorCode::ShapeMismatch, "weight_importance shape mismatch");
  const size_t F = original.shape[0], D = original.numel() / F;
  ImportanceReport rep;
  std::vector<size_t> zero_norm;
  for (size_t f = 0; f < F; ++f) {
    const float* w = original.ptr() + f * D;
    const float* r = reconstructed.ptr() + f * D;
    double nw = 0, nd = 0;
    for (size_t i = 0; i < D; ++i) {
      nw += double(w[i]) * w[i];
      const double d = double(w[i]) - double(r[i]);
      nd += d * d;
    }
    ImportanceRecord rec;
    rec.layer = layer;
    rec.filter = f;
    if (nw == 0) {
      rec.relative_error = std::numeric_limits<double>::infinity();
      zero_norm.push_back(f);
    } else {
      rec.relative_error = std::sqrt(nd) / std::sqrt(nw);
    }
    rep.records.push_back(rec);
  }
  std::stable_sort(rep.records.begin(), rep.records.end(),
                   [](const ImportanceRecord& a, const ImportanceRecord& b) {
                     return a.relative_error < b.relative_error;
                   });
  for (size_t i = 0; i < rep.records.size(); ++i) rep.records[i].rank = i + 1;
  return rep;
}

inline std::string importance_csv(const ImportanceReport& rep) {
  std::string s = "layer,filter,relative_error,rank\n";
  char buf[96];
  for (const auto& r : rep.records) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%zu\n", r.layer, r.filter, r.relative_error,
                  r.rank);
    s += buf;
  }
  return s;
}

// ---- activation / kernel image export ---------------------------------------

inline uint8_t to_gray(double v, double lo, double hi) {
  if (hi <= lo) return 128;  // degenerate range maps to mid-gray
  const double t = (v - lo) / (hi - lo);
  return uint8_t(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
}

// Mean activation map over a probe batch for the chosen filters, min-max
// normalized per map to [0,255].
inline std::vector<std::vector<uint8_t>> avg_activation_maps(const OriginalNetwork& net,
                                                             size_t layer,
                                                             const std::vector<size_t>& filters,
                                                             const TensorF& probe,
                                                             size_t* out_h = nullptr,
                                                             size_t* out_w = nullptr) {
  GraphF g;
  std::vector<GraphF::Id> wid, bid;
  for (size_t l = 0; l < net.catalog.layers.size(); ++l) {
    wid.push_back(g.constant(net.conv_weights[l]));
    bid.push_back(g.constant(net.conv_biases[l]));
  }
  auto fw = forward_network(g, net.catalog, wid, bid, g.constant(net.head_w),
                            g.constant(net.head_b), g.constant(probe));
  size_t tap = 0, seen = 0;
  for (size_t l = 0; l < net.catalog.layers.size(); ++l) {
    if (!net.catalog.layers[l].predictable) continue;
    if (l == layer) {
      tap = seen;
      break;
    }
    ++seen;
  }
  const TensorF& act = g.value(fw.taps[tap]);
  const size_t B = act.shape[0], C = act.shape[1], H = act.shape[2], W = act.shape[3];
  if (out_h) *out_h = H;
  if (out_w) *out_w = W;
  std::vector<std::vector<uint8_t>> maps;
  for (size_t f : filters) {
    if (f >= C) fail(ErrorCode::InvalidArgument, "filter index outside layer");
    std::vector<double> mean(H * W, 0.0);
    for (size_t b = 0; b < B; ++b) {
      const float* p = act.ptr() + (b * C + f) * H * W;
      for (size_t i = 0; i < H * W; ++i) mean[i] += p[i];
    }
    for (auto& v : mean) v /= double(B);
    double lo = mean[0], hi = mean[0];
    for (double v : mean) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    std::vector<uint8_t> img(H * W);
    for (size_t i = 0; i < H * W; ++i) img[i] = to_gray(mean[i], lo, hi);
    maps.push_back(std::move(img));
  }
  return maps;
}

// Kernels of one channel tiled into a grid with 1px separators, min-max
// normalized over the grid's kernel values.
inline std::vector<uint8_t> kernel_grid_image(const TensorF& weights, size_t channel,
                                              size_t grid_h, size_t grid_w, size_t* out_h,
                                              size_t* out_w) {
  const size_t F = weights.shape[0], C = weights.shape[1], k = weights.shape[2];
  if (channel >= C) fail(ErrorCode::InvalidArgument, "channel outside layer");
  if (grid_h * grid_w > F) fail(ErrorCode::InvalidArgument, "grid exceeds available kernels");
  double lo = 0, hi = 0;
  bool first = true;
  for (size_t t = 0; t < grid_h * grid_w; ++t) {
    const float* p = weights.ptr() + (t * C + channel) * k * k;
    for (size_t i = 0; i < k * k; ++i) {
      if (first) {
        lo = hi = p[i];
        first = false;
      }
      lo = std::min(lo, double(p[i]));
      hi = std::max(hi, double(p[i]));
    }
  }
  const size_t H = grid_h * k + (grid_h - 1), W = grid_w * k + (grid_w - 1);
  std::vector<uint8_t> img(H * W, 0);
  for (size_t gy = 0; gy < grid_h; ++gy)
    for (size_t gx = 0; gx < grid_w; ++gx) {
      const float* p = weights.ptr() + ((gy * grid_w + gx) * C + channel) * k * k;
      for (size_t ky = 0; ky < k; ++ky)
        for (size_t kx = 0; kx < k; ++kx)
          img[(gy * (k + 1) + ky) * W + gx * (k + 1) + kx] = to_gray(p[ky * k + kx], lo, hi);
    }
  *out_h = H;
  *out_w = W;
  return img;
}

inline void export_kernel_grid(const std::string& path, const TensorF& weights, size_t channel,
                               size_t grid_h, size_t grid_w) {
  size_t H = 0, W = 0;
  auto img = kernel_grid_image(weights, channel, grid_h, grid_w, &H, &W);
  write_pgm(path, img, W, H);
}

// ---- meta-compression --------------------------------------------------------

// Globally zero the floor(p*n) smallest-|w| scalars across the predictor's
// weight matrices; biases exempt; ties broken by parameter order.
inline NernPredictor prune_predictor(const NernPredictor& pred, double factor,
                                     bool per_layer = false) {
  if (factor < 0.0 || factor > 1.0) fail(ErrorCode::InvalidArgument, "pruning factor in [0,1]");
  NernPredictor out = pred;
  auto prune_span = [&](std::vector<TensorF*> mats) {
    size_t n = 0;
    for (auto* m : mats) n += m->numel();
    const size_t kill = size_t(std::floor(factor * double(n)));
    if (kill == 0) return;
    std::vector<std::pair<float, uint32_t>> order;  // (|w|, global index)
    order.reserve(n);
    uint32_t gi = 0;
    for (auto* m : mats)
      for (float v : m->data) order.push_back({std::abs(v), gi++});
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.first < b.first || (a.first == b.first && a.second < b.second);
    });
    std::vector<char> zap(n, 0);
    for (size_t i = 0; i < kill; ++i) zap[order[i].second] = 1;
    gi = 0;
    for (auto* m : mats)
      for (auto& v : m->data) {
        if (zap[gi]) v = 0.0f;
        ++gi;
      }
  };
  if (per_layer) {
    for (auto& w : out.weights) prune_span({&w});
  } else {
    std::vector<TensorF*> all;
    for (auto& w : out.weights) all.push_back(&w);
    prune_span(all);
  }
  return out;
}

// prune -> reconstruct -> evaluate, one row per factor
struct PruneSweepRow {
  double factor = 0;
  double accuracy = 0;
};

inline std::vector<PruneSweepRow> pruning_sweep(const NernPredictor& pred,
                                                const OriginalNetwork& net,
                                                const PermutationMap* map,
                                                const std::vector<double>& factors,
                                                const Dataset& eval_set) {
  std::vector<PruneSweepRow> rows;
  for (double f : factors) {
    auto pruned = prune_predictor(pred, f);
    auto weights = reconstruct_network(pruned, net.catalog, map, net.conv_weights);
    rows.push_back({f, eval_accuracy(weights, net, eval_set)});
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<PruneSweepRow>& rows) {
  std::string s = "factor,accuracy\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", r.factor, r.accuracy);
    s += buf;
  }
  return s;
}

}  // namespace nern
