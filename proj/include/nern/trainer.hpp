#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nern/model_zoo.hpp"
#include "nern/optim.hpp"
#include "nern/predictor.hpp"
#include "nern/smoothness.hpp"

namespace nern {

enum class SamplingKind { All, RandomLayer, UniformBatch, MagnitudeMixed };

inline const char* sampling_kind_name(SamplingKind k) {
  switch (k) {
    case SamplingKind::All: return "all";
    case SamplingKind::RandomLayer: return "random_layer";
    case SamplingKind::UniformBatch: return "uniform_batch";
    case SamplingKind::MagnitudeMixed: return "magnitude_mixed";
  }
  return "?";
}

inline SamplingKind sampling_kind_from_name(const std::string& s) {
  if (s == "all") return SamplingKind::All;
  if (s == "random_layer") return SamplingKind::RandomLayer;
  if (s == "uniform_batch") return SamplingKind::UniformBatch;
  if (s == "magnitude_mixed") return SamplingKind::MagnitudeMixed;
  fail(ErrorCode::InvalidArgument, "unknown sampling kind: " + s);
}

struct SamplingStrategy {
  SamplingKind kind = SamplingKind::MagnitudeMixed;
  size_t batch_size = 256;
  double p_uni = 0.8;
};

struct TrainConfig {
  double alpha = 1.0;  // KD coefficient
  double beta = 1.0;   // FMD coefficient
  bool use_recon = true;
  double lr = 2e-3;
  bool cosine_decay = true;
  int64_t iterations = 5000;
  size_t task_batch = 64;
  SamplingStrategy sampling;
  bool noise_inputs = false;
  bool lookahead = true;
  bool distill_grad_full = true;  // false: distillation grads only through sampled rows
  bool recon_mse = false;         // sensitivity switch for the recon loss form
  bool oracle_mode = false;       // predictor output replaced by original kernels
  uint64_t seed = 1;
  int64_t eval_every = 0;  // 0: only at the end
};

// ---- standalone losses (also used by the training graph) -------------------

// Per-kernel coordinate bookkeeping against the plan's prediction rows.
struct KernelIndex {
  struct Entry {
    size_t plan_layer;  // index into plan.layers
    size_t slot;        // original flat (f*C+c)
  };
  std::vector<Entry> entries;           // global kernel id -> location
  std::vector<double> magnitudes;       // mean |w| per kernel
  std::vector<size_t> scalars_per_kernel;
  size_t total() const { return entries.size(); }
};

inline KernelIndex build_kernel_index(const ReconstructionPlan& plan,
                                      const std::vector<TensorF>& original_weights) {
  KernelIndex ki;
  for (size_t pl = 0; pl < plan.layers.size(); ++pl) {
    const auto& route = plan.layers[pl];
    const TensorF& w = original_weights[route.catalog_layer];
    const size_t kk = route.kernel * route.kernel;
    for (size_t j = 0; j < route.filters * route.channels; ++j) {
      double mag = 0;
      for (size_t i = 0; i < kk; ++i) mag += std::abs(double(w.ptr()[j * kk + i]));
      ki.entries.push_back({pl, j});
      ki.magnitudes.push_back(mag / double(kk));
      ki.scalars_per_kernel.push_back(kk);
    }
  }
  return ki;
}

// sampled coordinate set, as global kernel ids in draw order, no duplicates
inline std::vector<uint32_t> sample_coordinates(const SamplingStrategy& st, Rng& rng,
                                                const ReconstructionPlan& plan,
                                                const KernelIndex& ki) {
  const size_t n = ki.total();
  switch (st.kind) {
    case SamplingKind::All: {
      std::vector<uint32_t> all(n);
      for (size_t i = 0; i < n; ++i) all[i] = uint32_t(i);
      return all;
    }
    case SamplingKind::RandomLayer: {
      const size_t pl = rng.uniform_int(plan.layers.size());
      std::vector<uint32_t> out;
      size_t base = 0;
      for (size_t l = 0; l < plan.layers.size(); ++l) {
        const size_t m = plan.layers[l].filters * plan.layers[l].channels;
        if (l == pl)
          for (size_t j = 0; j < m; ++j) out.push_back(uint32_t(base + j));
        base += m;
      }
      return out;
    }
    case SamplingKind::UniformBatch: {
      if (st.batch_size > n) fail(ErrorCode::InvalidArgument, "weight batch exceeds population");
      return rng.sample_without_replacement(n, st.batch_size);
    }
    case SamplingKind::MagnitudeMixed: {
      if (st.batch_size > n) fail(ErrorCode::InvalidArgument, "weight batch exceeds population");
      std::vector<char> taken(n, 0);
      std::vector<double> mag = ki.magnitudes;
      double mag_total = 0;
      for (double m : mag) mag_total += m;
      size_t remaining = n;
      std::vector<uint32_t> out;
      out.reserve(st.batch_size);
      while (out.size() < st.batch_size) {
        uint32_t pick = 0;
        if (rng.uniform() < st.p_uni || mag_total <= 0) {
          size_t r = rng.uniform_int(remaining);
          for (uint32_t i = 0;; ++i)
            if (!taken[i] && r-- == 0) {
              pick = i;
              break;
            }
        } else {
          double r = rng.uniform() * mag_total;
          uint32_t last = 0;
          for (uint32_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            last = i;
            if (r < mag[i]) break;
            r -= mag[i];
          }
          pick = last;
        }
        taken[pick] = 1;
        mag_total -= mag[pick];
        --remaining;
        out.push_back(pick);
      }
      return out;
    }
  }
  fail(ErrorCode::InvalidArgument, "bad sampling kind");
}

// ||W_S - What_S||_2 / (scalar count of S); standalone form over weights
inline double recon_loss(const std::vector<TensorF>& original,
                         const std::vector<TensorF>& reconstructed,
                         const std::vector<std::pair<size_t, size_t>>& sampled) {
  if (sampled.empty()) fail(ErrorCode::InvalidArgument, "recon_loss: empty sample set");
  double acc = 0;
  size_t count = 0;
  for (auto [layer, slot] : sampled) {
    const TensorF& w = original[layer];
    const TensorF& r = reconstructed[layer];
    if (!w.same_shape(r)) fail(ErrorCode::ShapeMismatch, "recon_loss shape mismatch");
    const size_t kk = w.shape[2] * w.shape[3];
    for (size_t i = 0; i < kk; ++i) {
      const double d = double(w.ptr()[slot * kk + i]) - double(r.ptr()[slot * kk + i]);
      acc += d * d;
      ++count;
    }
  }
  return std::sqrt(acc) / double(count);
}

// mean over batch of sum_l || n(a_l) - n(ahat_l) ||_2 with per-sample-per-layer
// l2 normalization
inline double fmd_loss(const std::vector<TensorF>& acts_a, const std::vector<TensorF>& acts_b) {
  if (acts_a.size() != acts_b.size()) fail(ErrorCode::ShapeMismatch, "fmd layer count mismatch");
  if (acts_a.empty()) return 0.0;
  const size_t B = acts_a[0].shape[0];
  double total = 0;
  for (size_t l = 0; l < acts_a.size(); ++l) {
    if (!acts_a[l].same_shape(acts_b[l])) fail(ErrorCode::ShapeMismatch, "fmd shape mismatch");
    const size_t D = acts_a[l].numel() / B;
    for (size_t b = 0; b < B; ++b) {
      const float* pa = acts_a[l].ptr() + b * D;
      const float* pb = acts_b[l].ptr() + b * D;
      double na = 0, nb = 0;
      for (size_t i = 0; i < D; ++i) {
        na += double(pa[i]) * pa[i];
        nb += double(pb[i]) * pb[i];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      double d2 = 0;
      for (size_t i = 0; i < D; ++i) {
        const double ua = na > 0 ? pa[i] / na : 0.0;
        const double ub = nb > 0 ? pb[i] / nb : 0.0;
        d2 += (ua - ub) * (ua - ub);
      }
      total += std::sqrt(d2);
    }
  }
  return total / double(B);
}

// mean over batch of KL(softmax(original) || softmax(reconstructed))
inline double kd_loss(const TensorF& logits_orig, const TensorF& logits_recon) {
  GraphF g;
  auto p = g.softmax(g.constant(logits_orig));
  auto q = g.softmax(g.constant(logits_recon));
  return double(g.value(g.kl_div(p, q))[0]);
}

// Gaussian N(0,1) task inputs for data-free training
inline TensorF make_noise_inputs(Rng& rng, size_t batch, const std::vector<size_t>& input_shape) {
  std::vector<size_t> shape = {batch};
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  TensorF x(shape);
  for (auto& v : x.data) v = float(rng.normal());
  return x;
}

// ---- training loop ---------------------------------------------------------

struct MetricsRow {
  int64_t iter = 0;
  double recon = 0, kd = 0, fmd = 0, lr = 0;
  double eval_acc = std::nan("");  // NaN when not evaluated this iteration
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s = "iter,recon_loss,kd_loss,fmd_loss,lr,eval_acc\n";
  char buf[160];
  for (const auto& r : rows) {
    if (std::isnan(r.eval_acc))
      std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,\n", (long long)r.iter, r.recon,
                    r.kd, r.fmd, r.lr);
    else
      std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n", (long long)r.iter, r.recon,
                    r.kd, r.fmd, r.lr, r.eval_acc);
    s += buf;
  }
  return s;
}

struct TrainResult {
  NernPredictor predictor;
  std::vector<MetricsRow> metrics;
  double final_accuracy = 0;      // reconstructed network on the test split
  double original_accuracy = 0;   // original network on the test split
};

using CheckpointHook = std::function<void(const NernPredictor&, int64_t)>;

inline TrainResult train_nern(const OriginalNetwork& net, const TaskData& data,
                              const TrainConfig& cfg, const EmbeddingConfig& ecfg, size_t hidden,
                              const PermutationMap* map, CheckpointHook checkpoint = nullptr,
                              int64_t checkpoint_every = 0) {
  auto plan = make_reconstruction_plan(net.catalog, ecfg, map);
  auto ki = build_kernel_index(plan, net.conv_weights);
  const size_t kmax = plan.k_max, kk_max = kmax * kmax;

  TrainResult result;
  result.original_accuracy = eval_accuracy(net, data.test);
  NernPredictor pred = init_nern(ecfg, hidden, cfg.seed, plan, weight_stats(net.conv_weights));
  NernPredictor last_good = pred;

  Adam adam;
  Lookahead lookahead;
  CosineSchedule sched{cfg.lr, cfg.iterations, cfg.cosine_decay};
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);

  // original scalars per kernel in crop order, for the recon gather
  std::vector<std::vector<float>> orig_scalars(ki.total());
  {
    size_t cid = 0;
    for (const auto& route : plan.layers) {
      const TensorF& w = net.conv_weights[route.catalog_layer];
      const size_t kk = route.kernel * route.kernel;
      for (size_t j = 0; j < route.filters * route.channels; ++j, ++cid) {
        orig_scalars[cid].assign(w.ptr() + j * kk, w.ptr() + (j + 1) * kk);
      }
    }
  }
  const TensorF oracle = cfg.oracle_mode ? oracle_rows(plan, net.conv_weights) : TensorF({1});

  const std::vector<size_t> input_shape(net.catalog.layers.empty()
                                            ? std::vector<size_t>{1, 8, 8}
                                            : std::vector<size_t>{1, 8, 8});

  for (int64_t it = 0; it < cfg.iterations; ++it) {
    const double lr = sched.lr(it);
    GraphF g;
    std::vector<GraphF::Id> wid, bid;
    for (size_t i = 0; i < 5; ++i) {
      wid.push_back(g.param(pred.weights[i]));
      bid.push_back(g.param(pred.biases[i]));
    }
    GraphF::Id rows = cfg.oracle_mode
                          ? g.constant(oracle)
                          : predictor_rows(g, wid, bid, g.constant(plan.embeddings));

    MetricsRow row;
    row.iter = it;
    row.lr = lr;
    GraphF::Id loss = GraphF::kNone;

    std::vector<uint32_t> sampled;
    if (cfg.use_recon) {
      sampled = sample_coordinates(cfg.sampling, rng, plan, ki);
      std::vector<uint32_t> flat;
      std::vector<float> orig;
      for (uint32_t cid : sampled) {
        const auto& e = ki.entries[cid];
        const auto& route = plan.layers[e.plan_layer];
        const size_t k = route.kernel, off = (kmax - k) / 2;
        const size_t r = route.row_ids[e.slot];
        for (size_t ky = 0; ky < k; ++ky)
          for (size_t kx = 0; kx < k; ++kx)
            flat.push_back(uint32_t(r * kk_max + (ky + off) * kmax + (kx + off)));
        orig.insert(orig.end(), orig_scalars[cid].begin(), orig_scalars[cid].end());
      }
      const size_t count = orig.size();
      auto diff = g.sub(g.gather_scalars(rows, std::move(flat)),
                        g.constant(TensorF({count}, std::move(orig))));
      GraphF::Id rl = cfg.recon_mse ? g.mean(g.mul(diff, diff))
                                    : g.scale(g.l2norm(diff), float(1.0 / double(count)));
      row.recon = g.value(rl)[0];
      loss = rl;
    }

    if (cfg.alpha > 0 || cfg.beta > 0) {
      // reconstructed conv stack from the prediction rows
      GraphF::Id rows_eff = rows;
      if (!cfg.distill_grad_full && cfg.use_recon && !cfg.oracle_mode) {
        // distillation gradients restricted to the sampled rows: non-sampled
        // rows enter as constants
        TensorF mask({plan.total_rows, kk_max});
        for (uint32_t cid : sampled) {
          const auto& e = ki.entries[cid];
          const size_t r = plan.layers[e.plan_layer].row_ids[e.slot];
          for (size_t i = 0; i < kk_max; ++i) mask.at2(r, i) = 1.0f;
        }
        TensorF inv_vals = g.value(rows);
        for (size_t i = 0; i < inv_vals.numel(); ++i) inv_vals[i] *= (1.0f - mask[i]);
        rows_eff = g.add(g.mul(rows, g.constant(mask)), g.constant(inv_vals));
      }
      std::vector<GraphF::Id> rec_w(net.catalog.layers.size(), GraphF::kNone);
      for (size_t l = 0; l < net.catalog.layers.size(); ++l)
        rec_w[l] = g.constant(net.conv_weights[l]);
      for (const auto& route : plan.layers)
        rec_w[route.catalog_layer] = g.gather_kernels(rows_eff, route.row_ids, route.filters,
                                                      route.channels, route.kernel, kmax);
      std::vector<GraphF::Id> cb, ob, ow;
      for (size_t l = 0; l < net.catalog.layers.size(); ++l) {
        cb.push_back(g.constant(net.conv_biases[l]));
        ow.push_back(g.constant(net.conv_weights[l]));
        ob.push_back(cb.back());
      }
      auto hw = g.constant(net.head_w);
      auto hb = g.constant(net.head_b);

      TensorF inputs;
      if (cfg.noise_inputs) {
        inputs = make_noise_inputs(rng, cfg.task_batch, input_shape);
      } else {
        if (cfg.task_batch > data.train.size())
          fail(ErrorCode::InvalidArgument, "task batch exceeds training set");
        inputs = batch_images(data.train, rng.sample_without_replacement(data.train.size(),
                                                                         cfg.task_batch));
      }
      auto x = g.constant(inputs);
      auto orig_fw = forward_network(g, net.catalog, ow, ob, hw, hb, x);
      auto rec_fw = forward_network(g, net.catalog, rec_w, cb, hw, hb, x);

      if (cfg.alpha > 0) {
        auto kd = g.kl_div(g.softmax(orig_fw.logits), g.softmax(rec_fw.logits));
        row.kd = g.value(kd)[0];
        auto term = g.scale(kd, float(cfg.alpha));
        loss = loss == GraphF::kNone ? term : g.add(loss, term);
      }
      if (cfg.beta > 0) {
        GraphF::Id fmd = GraphF::kNone;
        for (size_t t = 0; t < orig_fw.taps.size(); ++t) {
          const auto& shape = g.value(orig_fw.taps[t]).shape;
          const size_t B = shape[0], D = shape[1] * shape[2] * shape[3];
          auto na = g.row_normalize(g.reshape(orig_fw.taps[t], {B, D}));
          auto nb = g.row_normalize(g.reshape(rec_fw.taps[t], {B, D}));
          auto term = g.mean(g.row_l2norm(g.sub(nb, na)));
          fmd = fmd == GraphF::kNone ? term : g.add(fmd, term);
        }
        row.fmd = g.value(fmd)[0];
        auto term = g.scale(fmd, float(cfg.beta));
        loss = loss == GraphF::kNone ? term : g.add(loss, term);
      }
    }

    if (loss == GraphF::kNone) fail(ErrorCode::InvalidArgument, "no loss terms enabled");
    if (!std::isfinite(g.value(loss)[0])) {
      pred = last_good;
      if (checkpoint) checkpoint(pred, it);
      fail(ErrorCode::Diverged,
           "training loss diverged at iteration " + std::to_string(it) + "; last-good kept");
    }

    if (!cfg.oracle_mode) {
      last_good = pred;
      g.backward(loss);
      std::vector<TensorF*> params;
      std::vector<const TensorF*> grads;
      for (size_t i = 0; i < 5; ++i) {
        params.push_back(&pred.weights[i]);
        grads.push_back(&g.grad(wid[i]));
        params.push_back(&pred.biases[i]);
        grads.push_back(&g.grad(bid[i]));
      }
      adam.step(params, grads, lr);
      if (cfg.lookahead) lookahead.after_step(params);
    }

    if (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0) {
      auto weights = assemble_weights(net.catalog, plan, predict_rows(pred, plan.embeddings),
                                      net.conv_weights);
      row.eval_acc = eval_accuracy(weights, net, data.test);
    }
    result.metrics.push_back(row);
    if (checkpoint && checkpoint_every > 0 && (it + 1) % checkpoint_every == 0)
      checkpoint(pred, it + 1);
  }

  {
    const TensorF rows = cfg.oracle_mode ? oracle : predict_rows(pred, plan.embeddings);
    auto weights = assemble_weights(net.catalog, plan, rows, net.conv_weights);
    result.final_accuracy = eval_accuracy(weights, net, data.test);
  }
  result.predictor = std::move(pred);
  return result;
}

}  // namespace nern
