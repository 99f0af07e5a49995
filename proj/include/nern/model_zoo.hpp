#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nern/arch.hpp"
#include "nern/autodiff.hpp"
#include "nern/error.hpp"
#include "nern/optim.hpp"
#include "nern/rng.hpp"
#include "nern/tensor.hpp"

namespace nern {

// A trainable desk-scale original network: sequential convs per the catalog,
// each followed by ReLU, then global average pooling and a dense head.
struct OriginalNetwork {
  ArchCatalog catalog;
  std::vector<TensorF> conv_weights;  // [F,C,k,k] per layer
  std::vector<TensorF> conv_biases;   // [F] per layer
  TensorF head_w;                     // [classes, last F]
  TensorF head_b;                     // [classes]
  uint64_t init_seed = 0;

  size_t num_classes() const { return head_b.numel(); }
};

inline OriginalNetwork build_desk_cnn(uint64_t seed) {
  OriginalNetwork net;
  net.catalog = desk3_catalog();
  net.init_seed = seed;
  Rng rng(seed);
  for (const auto& l : net.catalog.layers) {
    TensorF w({l.filters, l.channels, l.kernel, l.kernel});
    const double scale = std::sqrt(2.0 / double(l.channels * l.kernel * l.kernel));
    for (auto& v : w.data) v = float(rng.normal() * scale);
    net.conv_weights.push_back(std::move(w));
    net.conv_biases.emplace_back(std::vector<size_t>{l.filters});
  }
  const size_t feat = net.catalog.layers.back().filters;
  net.head_w = TensorF({2, feat});
  for (auto& v : net.head_w.data) v = float(rng.normal() * std::sqrt(1.0 / double(feat)));
  net.head_b = TensorF({2});
  return net;
}

// Synthetic two-class task: one horizontal (class 0) or vertical (class 1)
// bar of amplitude 0.55 at a random position on an 8x8 canvas, plus N(0,0.3)
// pixel noise. The low bar amplitude keeps the task accuracy sensitive to
// weight reconstruction quality instead of saturating.
struct Dataset {
  TensorF images;  // [N,1,8,8]
  std::vector<int> labels;
  size_t size() const { return labels.size(); }
};

inline Dataset make_bars(Rng& rng, size_t n) {
  constexpr double kAmplitude = 0.55;
  constexpr double kNoiseSigma = 0.3;
  Dataset ds;
  ds.images = TensorF({n, 1, 8, 8});
  ds.labels.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const int cls = int(rng.uniform_int(2));
    const size_t pos = rng.uniform_int(8);
    float* img = ds.images.ptr() + i * 64;
    for (size_t j = 0; j < 64; ++j) img[j] = 0.0f;
    for (size_t j = 0; j < 8; ++j) {
      if (cls == 0)
        img[pos * 8 + j] = float(kAmplitude);
      else
        img[j * 8 + pos] = float(kAmplitude);
    }
    for (size_t j = 0; j < 64; ++j) img[j] += float(rng.normal() * kNoiseSigma);
    ds.labels[i] = cls;
  }
  return ds;
}

struct TaskData {
  Dataset train;
  Dataset test;
};

inline TaskData make_task_data(uint64_t seed) {
  Rng rng(seed);
  TaskData d;
  d.train = make_bars(rng, 2048);
  d.test = make_bars(rng, 512);
  return d;
}

template <typename T>
struct ForwardTaps {
  typename Graph<T>::Id logits;
  std::vector<typename Graph<T>::Id> taps;  // post-ReLU output of each predictable conv
};

// Forward through conv stack + GAP + head inside an existing graph. Weight and
// bias ids may be params, constants, or assembled prediction nodes.
template <typename T>
ForwardTaps<T> forward_network(Graph<T>& g, const ArchCatalog& cat,
                               const std::vector<typename Graph<T>::Id>& conv_w,
                               const std::vector<typename Graph<T>::Id>& conv_b,
                               typename Graph<T>::Id head_w, typename Graph<T>::Id head_b,
                               typename Graph<T>::Id input) {
  ForwardTaps<T> out;
  auto h = input;
  for (size_t l = 0; l < cat.layers.size(); ++l) {
    const auto& spec = cat.layers[l];
    h = g.relu(g.conv2d(h, conv_w[l], conv_b[l], spec.stride, spec.padding));
    if (spec.predictable) out.taps.push_back(h);
  }
  out.logits = g.dense(g.gap2d(h), head_w, head_b);
  return out;
}

inline TensorF batch_images(const Dataset& ds, const std::vector<uint32_t>& idx) {
  TensorF out({idx.size(), 1, 8, 8});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(ds.images.ptr() + size_t(idx[i]) * 64, 64, out.ptr() + i * 64);
  return out;
}

inline TensorF onehot_rows(const Dataset& ds, const std::vector<uint32_t>& idx, size_t classes) {
  TensorF out({idx.size(), classes});
  for (size_t i = 0; i < idx.size(); ++i) out.at2(i, size_t(ds.labels[idx[i]])) = 1.0f;
  return out;
}

template <typename Net>
double eval_accuracy_impl(const Net& weights, const ArchCatalog& cat, const TensorF& head_w,
                          const TensorF& head_b, const std::vector<TensorF>& biases,
                          const Dataset& ds) {
  size_t correct = 0;
  const size_t batch = 64;
  for (size_t start = 0; start < ds.size(); start += batch) {
    const size_t n = std::min(batch, ds.size() - start);
    std::vector<uint32_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = uint32_t(start + i);
    GraphF g;
    std::vector<GraphF::Id> wid, bid;
    for (size_t l = 0; l < cat.layers.size(); ++l) {
      wid.push_back(g.constant(weights[l]));
      bid.push_back(g.constant(biases[l]));
    }
    auto fw = forward_network(g, cat, wid, bid, g.constant(head_w), g.constant(head_b),
                              g.constant(batch_images(ds, idx)));
    const TensorF& logits = g.value(fw.logits);
    for (size_t i = 0; i < n; ++i) {
      size_t best = 0;
      for (size_t k = 1; k < logits.shape[1]; ++k)
        if (logits.at2(i, k) > logits.at2(i, best)) best = k;
      if (int(best) == ds.labels[start + i]) ++correct;
    }
  }
  return double(correct) / double(ds.size());
}

inline double eval_accuracy(const OriginalNetwork& net, const Dataset& ds) {
  return eval_accuracy_impl(net.conv_weights, net.catalog, net.head_w, net.head_b,
                            net.conv_biases, ds);
}

inline double eval_accuracy(const std::vector<TensorF>& conv_weights, const OriginalNetwork& ref,
                            const Dataset& ds) {
  return eval_accuracy_impl(conv_weights, ref.catalog, ref.head_w, ref.head_b, ref.conv_biases,
                            ds);
}

struct OriginalTrainMetrics {
  double final_accuracy = 0;
  double final_smoothness = 0;
  size_t epochs = 0;
};

// Task cross-entropy (as KL against one-hot targets) plus an optional
// lambda-weighted adjacent-kernel smoothness penalty over all conv layers.
inline OriginalTrainMetrics train_original(OriginalNetwork& net, const TaskData& data,
                                           double smoothness_factor, size_t epochs,
                                           double lr = 3e-3, size_t batch = 64,
                                           uint64_t shuffle_seed = 1) {
  if (data.train.size() == 0) fail(ErrorCode::InvalidArgument, "empty dataset");
  if (smoothness_factor < 0) fail(ErrorCode::InvalidArgument, "negative smoothness factor");
  Adam adam;
  Rng rng(shuffle_seed);
  const size_t L = net.catalog.layers.size();
  for (size_t epoch = 0; epoch < epochs; ++epoch) {
    auto order = rng.sample_without_replacement(data.train.size(), data.train.size());
    for (size_t start = 0; start + batch <= data.train.size(); start += batch) {
      std::vector<uint32_t> idx(order.begin() + long(start), order.begin() + long(start + batch));
      GraphF g;
      std::vector<GraphF::Id> wid, bid;
      for (size_t l = 0; l < L; ++l) {
        wid.push_back(g.param(net.conv_weights[l]));
        bid.push_back(g.param(net.conv_biases[l]));
      }
      auto hw = g.param(net.head_w);
      auto hb = g.param(net.head_b);
      auto fw = forward_network(g, net.catalog, wid, bid, hw, hb,
                                g.constant(batch_images(data.train, idx)));
      auto ce = g.kl_div(g.constant(onehot_rows(data.train, idx, net.num_classes())),
                         g.softmax(fw.logits));
      auto loss = ce;
      if (smoothness_factor > 0) {
        auto sm = g.cosine_smoothness(wid[0]);
        for (size_t l = 1; l < L; ++l) sm = g.add(sm, g.cosine_smoothness(wid[l]));
        loss = g.add(ce, g.scale(sm, float(smoothness_factor)));
      }
      if (!std::isfinite(g.value(loss)[0]))
        fail(ErrorCode::Diverged, "original training loss is not finite");
      g.backward(loss);
      std::vector<TensorF*> params;
      std::vector<const TensorF*> grads;
      for (size_t l = 0; l < L; ++l) {
        params.push_back(&net.conv_weights[l]);
        grads.push_back(&g.grad(wid[l]));
        params.push_back(&net.conv_biases[l]);
        grads.push_back(&g.grad(bid[l]));
      }
      params.push_back(&net.head_w);
      grads.push_back(&g.grad(hw));
      params.push_back(&net.head_b);
      grads.push_back(&g.grad(hb));
      adam.step(params, grads, lr);
    }
  }
  OriginalTrainMetrics m;
  m.epochs = epochs;
  m.final_accuracy = eval_accuracy(net, data.test);
  GraphF g;
  GraphF::Id sm = GraphF::kNone;
  for (size_t l = 0; l < L; ++l) {
    auto s = g.cosine_smoothness(g.constant(net.conv_weights[l]));
    sm = sm == GraphF::kNone ? s : g.add(sm, s);
  }
  m.final_smoothness = g.value(sm)[0];
  return m;
}

}  // namespace nern
