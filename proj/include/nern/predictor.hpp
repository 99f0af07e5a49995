#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nern/arch.hpp"
#include "nern/autodiff.hpp"
#include "nern/embedding.hpp"
#include "nern/error.hpp"
#include "nern/model_zoo.hpp"
#include "nern/rng.hpp"
#include "nern/smoothness.hpp"
#include "nern/tensor.hpp"

namespace nern {

// The predictor MLP: 4 hidden ReLU layers of constant width plus a linear
// output of k_max^2 values per coordinate.
struct NernPredictor {
  EmbeddingConfig embedding;
  size_t hidden = 64;
  size_t k_max = 3;
  uint64_t seed = 0;
  std::vector<TensorF> weights;  // [h,6N], [h,h]x3, [k_max^2,h]
  std::vector<TensorF> biases;

  size_t param_count(bool include_output = true, bool include_biases = true) const {
    size_t n = 0;
    const size_t L = include_output ? weights.size() : weights.size() - 1;
    for (size_t i = 0; i < L; ++i) {
      n += weights[i].numel();
      if (include_biases) n += biases[i].numel();
    }
    return n;
  }
  double size_mb(bool include_output = true) const {
    return params_to_mb(param_count(include_output));
  }
};

struct WeightStats {
  double mean = 0;
  double stddev = 0;
};

template <typename T>
WeightStats weight_stats(const std::vector<Tensor<T>>& weights) {
  double sum = 0, sum2 = 0;
  size_t n = 0;
  for (const auto& w : weights)
    for (T v : w.data) {
      sum += double(v);
      sum2 += double(v) * double(v);
      ++n;
    }
  WeightStats s;
  s.mean = sum / double(n);
  s.stddev = std::sqrt(std::max(0.0, sum2 / double(n) - s.mean * s.mean));
  return s;
}

// Routing of prediction rows: for each predictable layer, row_ids[j] is the
// global prediction row whose output lands in original flat slot j.
struct ReconstructionPlan {
  size_t k_max = 1;
  Tensor<float> embeddings;  // [total_rows, 6N], prediction-coordinate order
  struct LayerRoute {
    size_t catalog_layer = 0;
    size_t filters = 0, channels = 0, kernel = 0;
    size_t row_base = 0;
    std::vector<uint32_t> row_ids;  // original slot -> global row
  };
  std::vector<LayerRoute> layers;
  size_t total_rows = 0;
};

inline ReconstructionPlan make_reconstruction_plan(const ArchCatalog& cat,
                                                   const EmbeddingConfig& cfg,
                                                   const PermutationMap* map) {
  cfg.validate();
  if (map && map->variant != PermVariant::None) {
    size_t pl = 0;
    for (const auto& l : cat.layers) pl += l.predictable;
    if (map->layers.size() != pl)
      fail(ErrorCode::ShapeMismatch, "permutation map does not cover the predictable layers");
  }
  ReconstructionPlan plan;
  plan.k_max = cat.k_max();
  size_t rows = 0;
  for (const auto& l : cat.layers)
    if (l.predictable) rows += l.kernel_count();
  plan.total_rows = rows;
  plan.embeddings = Tensor<float>({rows, cfg.dim()});

  size_t base = 0, pl = 0;
  for (size_t li = 0; li < cat.layers.size(); ++li) {
    const auto& spec = cat.layers[li];
    if (!spec.predictable) continue;
    ReconstructionPlan::LayerRoute route;
    route.catalog_layer = li;
    route.filters = spec.filters;
    route.channels = spec.channels;
    route.kernel = spec.kernel;
    route.row_base = base;
    const size_t m = spec.kernel_count();
    // embeddings enumerate the prediction coordinates (l, f', c')
    for (size_t t = 0; t < m; ++t) {
      const KernelCoordinate coord{li, t / spec.channels, t % spec.channels};
      auto e = embed(coord, cfg);
      float* dst = plan.embeddings.ptr() + (base + t) * cfg.dim();
      for (size_t i = 0; i < e.size(); ++i) dst[i] = float(e[i]);
    }
    // original slot j is predicted at the step t with source_slot(t) == j
    route.row_ids.assign(m, 0);
    if (map && map->variant != PermVariant::None) {
      const auto& lp = map->layers[pl];
      if (lp.filters != spec.filters || lp.channels != spec.channels)
        fail(ErrorCode::ShapeMismatch, "permutation layer extents mismatch");
      for (size_t t = 0; t < m; ++t) route.row_ids[lp.source_slot(t)] = uint32_t(base + t);
    } else {
      for (size_t t = 0; t < m; ++t) route.row_ids[t] = uint32_t(base + t);
    }
    plan.layers.push_back(std::move(route));
    base += m;
    ++pl;
  }
  return plan;
}

// HyperNetwork-style init: fan-in scaled hidden layers, then the output layer
// rescaled and shifted so that predictions over all catalog coordinates match
// the original weights' mean/std.
inline NernPredictor init_nern(const EmbeddingConfig& cfg, size_t hidden, uint64_t seed,
                               const ReconstructionPlan& plan, const WeightStats& stats) {
  if (!(stats.stddev > 0)) fail(ErrorCode::InvalidArgument, "init_nern requires std > 0");
  NernPredictor p;
  p.embedding = cfg;
  p.hidden = hidden;
  p.k_max = plan.k_max;
  p.seed = seed;
  Rng rng(seed);
  const size_t out_dim = plan.k_max * plan.k_max;
  std::vector<size_t> dims = {cfg.dim(), hidden, hidden, hidden, hidden, out_dim};
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    TensorF w({dims[i + 1], dims[i]});
    const bool last = i + 2 == dims.size();
    const double scale = std::sqrt((last ? 1.0 : 2.0) / double(dims[i]));
    for (auto& v : w.data) v = float(rng.normal() * scale);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(std::vector<size_t>{dims[i + 1]});
  }
  // calibrate the output layer against the measured prediction statistics
  GraphF g;
  std::vector<GraphF::Id> wid, bid;
  for (size_t i = 0; i < 5; ++i) {
    wid.push_back(g.constant(p.weights[i]));
    bid.push_back(g.constant(p.biases[i]));
  }
  auto h = g.constant(plan.embeddings);
  for (size_t i = 0; i < 4; ++i) h = g.relu(g.dense(h, wid[i], bid[i]));
  auto out = g.dense(h, wid[4], bid[4]);
  const TensorF& o = g.value(out);
  double m0 = 0, s0 = 0;
  for (float v : o.data) m0 += v;
  m0 /= double(o.numel());
  for (float v : o.data) s0 += (v - m0) * (v - m0);
  s0 = std::sqrt(s0 / double(o.numel()));
  if (!(s0 > 0) || !std::isfinite(s0))
    fail(ErrorCode::CalibrationFailed, "predictor init produced degenerate outputs");
  const double scale = stats.stddev / s0;
  for (auto& v : p.weights[4].data) v = float(v * scale);
  const float shift = float(stats.mean - m0 * scale);
  for (auto& v : p.biases[4].data) v = shift;
  return p;
}

// Batched MLP forward over an embeddings matrix already in the graph.
template <typename T>
typename Graph<T>::Id predictor_rows(Graph<T>& g, const std::vector<typename Graph<T>::Id>& wid,
                                     const std::vector<typename Graph<T>::Id>& bid,
                                     typename Graph<T>::Id embeddings) {
  auto h = embeddings;
  for (size_t i = 0; i < 4; ++i) h = g.relu(g.dense(h, wid[i], bid[i]));
  return g.dense(h, wid[4], bid[4]);
}

inline TensorF predict_rows(const NernPredictor& p, const TensorF& embeddings) {
  GraphF g;
  std::vector<GraphF::Id> wid, bid;
  for (size_t i = 0; i < 5; ++i) {
    wid.push_back(g.constant(p.weights[i]));
    bid.push_back(g.constant(p.biases[i]));
  }
  return g.value(predictor_rows(g, wid, bid, g.constant(embeddings)));
}

inline TensorF predict_kernel(const NernPredictor& p, const KernelCoordinate& coord) {
  TensorF e({1, p.embedding.dim()});
  auto ev = embed(coord, p.embedding);
  for (size_t i = 0; i < ev.size(); ++i) e[i] = float(ev[i]);
  TensorF row = predict_rows(p, e);
  return TensorF({p.k_max, p.k_max}, std::move(row.data));
}

// Rows a perfect predictor would output: each prediction row carries the
// original kernel of its routed slot in the centered crop window.
inline TensorF oracle_rows(const ReconstructionPlan& plan,
                           const std::vector<TensorF>& original_weights) {
  const size_t kmax = plan.k_max, kk = kmax * kmax;
  TensorF rows({plan.total_rows, kk});
  for (const auto& route : plan.layers) {
    const TensorF& w = original_weights[route.catalog_layer];
    const size_t k = route.kernel, off = (kmax - k) / 2;
    for (size_t j = 0; j < route.filters * route.channels; ++j) {
      float* dst = rows.ptr() + size_t(route.row_ids[j]) * kk;
      const float* src = w.ptr() + j * k * k;
      for (size_t ky = 0; ky < k; ++ky)
        for (size_t kx = 0; kx < k; ++kx) dst[(ky + off) * kmax + (kx + off)] = src[ky * k + kx];
    }
  }
  return rows;
}

// Assemble the full conv stack from prediction rows: predicted layers routed
// through the plan, non-predictable layers copied verbatim.
inline std::vector<TensorF> assemble_weights(const ArchCatalog& cat,
                                             const ReconstructionPlan& plan, const TensorF& rows,
                                             const std::vector<TensorF>& original_weights) {
  GraphF g;
  auto rid = g.constant(rows);
  std::vector<TensorF> out(original_weights.begin(), original_weights.end());
  for (const auto& route : plan.layers) {
    auto wid = g.gather_kernels(rid, route.row_ids, route.filters, route.channels, route.kernel,
                                plan.k_max);
    out[route.catalog_layer] = g.value(wid);
  }
  (void)cat;
  return out;
}

inline std::vector<TensorF> reconstruct_network(const NernPredictor& p, const ArchCatalog& cat,
                                                const PermutationMap* map,
                                                const std::vector<TensorF>& original_weights) {
  auto plan = make_reconstruction_plan(cat, p.embedding, map);
  if (plan.k_max != p.k_max)
    fail(ErrorCode::ShapeMismatch, "predictor k_max does not match the catalog");
  return assemble_weights(cat, plan, predict_rows(p, plan.embeddings), original_weights);
}

}  // namespace nern
