#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "nern/arch.hpp"
#include "nern/error.hpp"
#include "nern/tensor.hpp"

namespace nern {

// ---- kernel distances ----------------------------------------------------

// Cosine distance for k>=2 kernels, squared difference for 1x1 kernels.
// Zero-norm kernels count as maximally distant (1.0) unless both are zero.
template <typename T>
T kernel_distance(const T* u, const T* v, size_t n) {
  if (n == 1) {
    const T d = u[0] - v[0];
    return d * d;
  }
  T uu = T(0), vv = T(0), uv = T(0);
  for (size_t i = 0; i < n; ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  const T nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu == T(0) || nv == T(0)) return (nu == T(0) && nv == T(0)) ? T(0) : T(1);
  if (uu == vv && uu == uv) return T(0);  // elementwise-identical kernels, exactly
  return T(1) - uv / (nu * nv);
}

// Adjacent-kernel smoothness of one layer [F,C,k,k]: filter-adjacent terms
// over f<F-1 plus channel-adjacent terms over c<C-1.
template <typename T>
T layer_smoothness(const Tensor<T>& w) {
  if (w.rank() != 4) fail(ErrorCode::ShapeMismatch, "layer_smoothness wants [F,C,k,k]");
  const size_t F = w.shape[0], C = w.shape[1], kk = w.shape[2] * w.shape[3];
  T acc = T(0);
  for (size_t f = 0; f < F; ++f)
    for (size_t c = 0; c < C; ++c) {
      const T* u = w.ptr() + (f * C + c) * kk;
      if (f + 1 < F) acc += kernel_distance(u, w.ptr() + ((f + 1) * C + c) * kk, kk);
      if (c + 1 < C) acc += kernel_distance(u, w.ptr() + (f * C + c + 1) * kk, kk);
    }
  return acc;
}

template <typename T>
T smoothness_loss(const std::vector<Tensor<T>>& weights) {
  T acc = T(0);
  for (const auto& w : weights) acc += layer_smoothness(w);
  return acc;
}

// ---- kernel graph + greedy Hamiltonian path --------------------------------

struct KernelDistanceGraph {
  size_t n = 0;
  std::vector<double> d;  // n*n symmetric, zero diagonal

  double at(size_t i, size_t j) const { return d[i * n + j]; }
};

// Vertices enumerate kernels of one layer in (f, c) row-major order.
template <typename T>
KernelDistanceGraph kernel_graph(const Tensor<T>& w) {
  if (w.rank() != 4) fail(ErrorCode::ShapeMismatch, "kernel_graph wants [F,C,k,k]");
  const size_t n = w.shape[0] * w.shape[1], kk = w.shape[2] * w.shape[3];
  KernelDistanceGraph g;
  g.n = n;
  g.d.assign(n * n, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const double dist = double(kernel_distance(w.ptr() + i * kk, w.ptr() + j * kk, kk));
      g.d[i * n + j] = dist;
      g.d[j * n + i] = dist;
    }
  return g;
}

// Greedy nearest-neighbour Hamiltonian path: start at vertex 0, repeatedly
// take the closest unvisited vertex, ties broken by lowest index.
inline std::vector<uint32_t> greedy_hamiltonian(const KernelDistanceGraph& g) {
  if (g.n == 0) fail(ErrorCode::InvalidArgument, "empty graph");
  std::vector<uint32_t> path;
  path.reserve(g.n);
  std::vector<char> used(g.n, 0);
  uint32_t cur = 0;
  path.push_back(0);
  used[0] = 1;
  for (size_t step = 1; step < g.n; ++step) {
    double best = 0;
    uint32_t bj = UINT32_MAX;
    for (uint32_t j = 0; j < g.n; ++j) {
      if (used[j]) continue;
      const double dj = g.at(cur, j);
      if (bj == UINT32_MAX || dj < best) {
        best = dj;
        bj = j;
      }
    }
    path.push_back(bj);
    used[bj] = 1;
    cur = bj;
  }
  return path;
}

inline double path_weight(const KernelDistanceGraph& g, const std::vector<uint32_t>& path) {
  double w = 0;
  for (size_t i = 0; i + 1 < path.size(); ++i) w += g.at(path[i], path[i + 1]);
  return w;
}

// ---- permutation map -------------------------------------------------------

enum class PermVariant : uint8_t { None = 0, InFilter = 1, CrossFilter = 2 };

inline const char* perm_variant_name(PermVariant v) {
  switch (v) {
    case PermVariant::None: return "none";
    case PermVariant::InFilter: return "in_filter";
    case PermVariant::CrossFilter: return "cross_filter";
  }
  return "?";
}

inline PermVariant perm_variant_from_name(const std::string& s) {
  if (s == "none") return PermVariant::None;
  if (s == "in_filter") return PermVariant::InFilter;
  if (s == "cross_filter") return PermVariant::CrossFilter;
  fail(ErrorCode::InvalidArgument, "unknown permutation variant: " + s);
}

// Per-layer reordering of the prediction sequence. For cross-filter, order[t]
// is the original flat (f*C+c) slot predicted at step t. For in-filter,
// filter_order[t] is the original filter predicted at filter-step t and
// kernel_orders[f][t] is the original channel of filter f predicted at
// channel-step t.
struct LayerPermutation {
  size_t filters = 0;
  size_t channels = 0;
  std::vector<uint32_t> order;                      // cross-filter, length F*C
  std::vector<uint32_t> filter_order;               // in-filter, length F
  std::vector<std::vector<uint32_t>> kernel_orders; // in-filter, F x C

  // prediction slot t -> original flat slot
  uint32_t source_slot(size_t t) const {
    if (!order.empty()) return order[t];
    const size_t fp = t / channels, cp = t % channels;
    const uint32_t f = filter_order[fp];
    return uint32_t(f * channels + kernel_orders[f][cp]);
  }
};

struct PermutationMap {
  PermVariant variant = PermVariant::None;
  std::vector<LayerPermutation> layers;  // one per predictable layer
};

namespace detail {

inline bool is_bijection(const std::vector<uint32_t>& p) {
  std::vector<char> seen(p.size(), 0);
  for (uint32_t v : p) {
    if (v >= p.size() || seen[v]) return false;
    seen[v] = 1;
  }
  return true;
}

}  // namespace detail

// Greedy orderings over the weights of every predictable layer.
template <typename T>
PermutationMap compute_permutations(const std::vector<Tensor<T>>& predictable_weights,
                                    PermVariant variant) {
  if (variant == PermVariant::None)
    fail(ErrorCode::InvalidArgument, "compute_permutations requires a variant");
  PermutationMap map;
  map.variant = variant;
  for (const auto& w : predictable_weights) {
    const size_t F = w.shape[0], C = w.shape[1], kk = w.shape[2] * w.shape[3];
    LayerPermutation lp;
    lp.filters = F;
    lp.channels = C;
    if (variant == PermVariant::CrossFilter) {
      lp.order = greedy_hamiltonian(kernel_graph(w));
    } else {
      // channel ordering inside each filter
      lp.kernel_orders.resize(F);
      for (size_t f = 0; f < F; ++f) {
        KernelDistanceGraph g;
        g.n = C;
        g.d.assign(C * C, 0.0);
        for (size_t i = 0; i < C; ++i)
          for (size_t j = i + 1; j < C; ++j) {
            const double d =
                double(kernel_distance(w.ptr() + (f * C + i) * kk, w.ptr() + (f * C + j) * kk, kk));
            g.d[i * C + j] = d;
            g.d[j * C + i] = d;
          }
        lp.kernel_orders[f] = greedy_hamiltonian(g);
      }
      // filter ordering over the permuted filters; distance sums the
      // channel-aligned kernel distances after the in-filter step
      KernelDistanceGraph fg;
      fg.n = F;
      fg.d.assign(F * F, 0.0);
      for (size_t a = 0; a < F; ++a)
        for (size_t b = a + 1; b < F; ++b) {
          double d = 0;
          for (size_t t = 0; t < C; ++t)
            d += double(kernel_distance(w.ptr() + (a * C + lp.kernel_orders[a][t]) * kk,
                                        w.ptr() + (b * C + lp.kernel_orders[b][t]) * kk, kk));
          fg.d[a * F + b] = d;
          fg.d[b * F + a] = d;
        }
      lp.filter_order = greedy_hamiltonian(fg);
    }
    map.layers.push_back(std::move(lp));
  }
  return map;
}

// Reorder kernels into prediction order: out[prediction slot t] = in[source_slot(t)].
template <typename T>
Tensor<T> permute_layer(const Tensor<T>& w, const LayerPermutation& lp) {
  if (w.shape[0] != lp.filters || w.shape[1] != lp.channels)
    fail(ErrorCode::ShapeMismatch, "permute: weight shape does not match permutation");
  const size_t kk = w.shape[2] * w.shape[3];
  Tensor<T> out(w.shape);
  for (size_t t = 0; t < lp.filters * lp.channels; ++t)
    std::copy_n(w.ptr() + size_t(lp.source_slot(t)) * kk, kk, out.ptr() + t * kk);
  return out;
}

template <typename T>
Tensor<T> invert_layer(const Tensor<T>& w, const LayerPermutation& lp) {
  if (w.shape[0] != lp.filters || w.shape[1] != lp.channels)
    fail(ErrorCode::ShapeMismatch, "invert: weight shape does not match permutation");
  const size_t kk = w.shape[2] * w.shape[3];
  Tensor<T> out(w.shape);
  for (size_t t = 0; t < lp.filters * lp.channels; ++t)
    std::copy_n(w.ptr() + t * kk, kk, out.ptr() + size_t(lp.source_slot(t)) * kk);
  return out;
}

template <typename T>
std::vector<Tensor<T>> permute(const std::vector<Tensor<T>>& weights, const PermutationMap& map) {
  if (map.variant == PermVariant::None) return weights;
  if (weights.size() != map.layers.size())
    fail(ErrorCode::ShapeMismatch, "permute: layer count mismatch");
  std::vector<Tensor<T>> out;
  out.reserve(weights.size());
  for (size_t l = 0; l < weights.size(); ++l) out.push_back(permute_layer(weights[l], map.layers[l]));
  return out;
}

template <typename T>
std::vector<Tensor<T>> invert(const std::vector<Tensor<T>>& weights, const PermutationMap& map) {
  if (map.variant == PermVariant::None) return weights;
  if (weights.size() != map.layers.size())
    fail(ErrorCode::ShapeMismatch, "invert: layer count mismatch");
  std::vector<Tensor<T>> out;
  out.reserve(weights.size());
  for (size_t l = 0; l < weights.size(); ++l) out.push_back(invert_layer(weights[l], map.layers[l]));
  return out;
}

// ---- size overhead ---------------------------------------------------------

struct PermCostReport {
  std::vector<double> bits_per_layer;  // real-valued log2 formula
  double total_mb = 0;                 // bits/8/2^20, unrounded
  double overhead_percent = 0;         // round3(MB) vs round2(total MB)
  uint64_t codec_bits = 0;             // ceil(log2) per index field
};

// Real-valued formulas over predictable layers only:
// cross-filter F*C*(log2 F + log2 C), in-filter F*C*log2 C + F*log2 F.
inline PermCostReport permutation_bit_cost(const ArchCatalog& cat, PermVariant variant) {
  if (variant == PermVariant::None)
    fail(ErrorCode::InvalidArgument, "permutation_bit_cost requires a variant");
  PermCostReport r;
  double bits = 0;
  auto ceil_log2 = [](size_t v) -> uint64_t {
    uint64_t b = 0;
    while ((size_t(1) << b) < v) ++b;
    return b;
  };
  for (const auto& l : cat.layers) {
    if (!l.predictable) continue;
    const double F = double(l.filters), C = double(l.channels);
    double lb = 0;
    if (variant == PermVariant::CrossFilter) {
      lb = F * C * (std::log2(F) + std::log2(C));
      r.codec_bits += uint64_t(l.filters * l.channels) *
                      (ceil_log2(l.filters) + ceil_log2(l.channels));
    } else {
      lb = F * C * std::log2(C) + F * std::log2(F);
      r.codec_bits += uint64_t(l.filters * l.channels) * ceil_log2(l.channels) +
                      uint64_t(l.filters) * ceil_log2(l.filters);
    }
    r.bits_per_layer.push_back(lb);
    bits += lb;
  }
  r.total_mb = bits / 8.0 / (1024.0 * 1024.0);
  const double total_mb = round2(params_to_mb(cat.total_param_count()));
  r.overhead_percent = round2(round3(r.total_mb) / total_mb * 100.0);
  return r;
}

// ---- serialization ---------------------------------------------------------
// "NRP1", variant byte, u32 layer count, per layer u32 F, u32 C, bit-packed
// payload (LSB-first within bytes, ceil(log2 range) bits per index).

namespace detail {

class BitWriter {
 public:
  void put(uint32_t value, uint32_t bits) {
    if (bits < 32 && value >= (1u << bits))
      fail(ErrorCode::InvalidArgument, "bit-pack range overflow");
    for (uint32_t i = 0; i < bits; ++i) {
      if (pos_ == 0) bytes_.push_back(0);
      if (value & (1u << i)) bytes_.back() |= uint8_t(1u << pos_);
      pos_ = (pos_ + 1) & 7;
    }
  }
  void align() { pos_ = 0; }
  const std::vector<uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<uint8_t> bytes_;
  uint32_t pos_ = 0;
};

class BitReader {
 public:
  BitReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  uint32_t get(uint32_t bits) {
    uint32_t v = 0;
    for (uint32_t i = 0; i < bits; ++i) {
      const size_t byte = bit_ >> 3;
      if (byte >= n_) fail(ErrorCode::IoError, "truncated permutation payload");
      if (p_[byte] & (1u << (bit_ & 7))) v |= (1u << i);
      ++bit_;
    }
    return v;
  }
  void align() { bit_ = (bit_ + 7) & ~size_t(7); }
  size_t bytes_consumed() const { return (bit_ + 7) >> 3; }

 private:
  const uint8_t* p_;
  size_t n_;
  size_t bit_ = 0;
};

inline uint32_t ceil_log2_u32(size_t v) {
  uint32_t b = 0;
  while ((size_t(1) << b) < v) ++b;
  return b;
}

inline void put_u32le(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32le(const std::string& s, size_t& off) {
  if (off + 4 > s.size()) fail(ErrorCode::IoError, "truncated permutation stream");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(s[off + size_t(i)])) << (8 * i);
  off += 4;
  return v;
}

}  // namespace detail

inline std::string serialize_permutations(const PermutationMap& map) {
  std::string out = "NRP1";
  out.push_back(char(uint8_t(map.variant)));
  detail::put_u32le(out, uint32_t(map.variant == PermVariant::None ? 0 : map.layers.size()));
  if (map.variant == PermVariant::None) return out;
  for (const auto& lp : map.layers) {
    detail::put_u32le(out, uint32_t(lp.filters));
    detail::put_u32le(out, uint32_t(lp.channels));
    detail::BitWriter bw;
    const uint32_t fb = detail::ceil_log2_u32(lp.filters);
    const uint32_t cb = detail::ceil_log2_u32(lp.channels);
    if (map.variant == PermVariant::CrossFilter) {
      if (!detail::is_bijection(lp.order))
        fail(ErrorCode::InvalidArgument, "cross-filter order is not a bijection");
      for (uint32_t slot : lp.order) {
        bw.put(slot / uint32_t(lp.channels), fb);
        bw.put(slot % uint32_t(lp.channels), cb);
      }
    } else {
      if (!detail::is_bijection(lp.filter_order))
        fail(ErrorCode::InvalidArgument, "filter order is not a bijection");
      for (uint32_t f : lp.filter_order) bw.put(f, fb);
      for (size_t f = 0; f < lp.filters; ++f) {
        if (!detail::is_bijection(lp.kernel_orders[f]))
          fail(ErrorCode::InvalidArgument, "kernel order is not a bijection");
        for (uint32_t c : lp.kernel_orders[f]) bw.put(c, cb);
      }
    }
    detail::put_u32le(out, uint32_t(bw.bytes().size()));
    out.append(reinterpret_cast<const char*>(bw.bytes().data()), bw.bytes().size());
  }
  return out;
}

inline PermutationMap deserialize_permutations(const std::string& s) {
  if (s.size() < 9 || s.compare(0, 4, "NRP1") != 0)
    fail(ErrorCode::IoError, "bad permutation magic");
  PermutationMap map;
  const uint8_t vb = uint8_t(s[4]);
  if (vb > 2) fail(ErrorCode::IoError, "bad permutation variant byte");
  map.variant = PermVariant(vb);
  size_t off = 5;
  const uint32_t layers = detail::get_u32le(s, off);
  for (uint32_t l = 0; l < layers; ++l) {
    LayerPermutation lp;
    lp.filters = detail::get_u32le(s, off);
    lp.channels = detail::get_u32le(s, off);
    if (lp.filters == 0 || lp.channels == 0) fail(ErrorCode::IoError, "bad permutation extents");
    const uint32_t payload = detail::get_u32le(s, off);
    if (off + payload > s.size()) fail(ErrorCode::IoError, "truncated permutation payload");
    detail::BitReader br(reinterpret_cast<const uint8_t*>(s.data()) + off, payload);
    const uint32_t fb = detail::ceil_log2_u32(lp.filters);
    const uint32_t cb = detail::ceil_log2_u32(lp.channels);
    if (map.variant == PermVariant::CrossFilter) {
      lp.order.resize(lp.filters * lp.channels);
      for (auto& slot : lp.order) {
        const uint32_t f = br.get(fb);
        const uint32_t c = br.get(cb);
        if (f >= lp.filters || c >= lp.channels)
          fail(ErrorCode::IoError, "permutation index out of range");
        slot = uint32_t(f * lp.channels + c);
      }
      if (!detail::is_bijection(lp.order)) fail(ErrorCode::IoError, "order is not a bijection");
    } else {
      lp.filter_order.resize(lp.filters);
      for (auto& f : lp.filter_order) {
        f = br.get(fb);
        if (f >= lp.filters) fail(ErrorCode::IoError, "permutation index out of range");
      }
      if (!detail::is_bijection(lp.filter_order))
        fail(ErrorCode::IoError, "filter order is not a bijection");
      lp.kernel_orders.assign(lp.filters, {});
      for (size_t f = 0; f < lp.filters; ++f) {
        lp.kernel_orders[f].resize(lp.channels);
        for (auto& c : lp.kernel_orders[f]) {
          c = br.get(cb);
          if (c >= lp.channels) fail(ErrorCode::IoError, "permutation index out of range");
        }
        if (!detail::is_bijection(lp.kernel_orders[f]))
          fail(ErrorCode::IoError, "kernel order is not a bijection");
      }
    }
    off += payload;
    map.layers.push_back(std::move(lp));
  }
  return map;
}

}  // namespace nern
