#pragma once

#include <cmath>
#include <future>
#include <map>
#include <string>
#include <vector>

#include "nern/config.hpp"
#include "nern/model_zoo.hpp"
#include "nern/trainer.hpp"

namespace nern {

struct PreparedExperiment {
  ExperimentConfig cfg;
  TaskData data;
  OriginalNetwork original;
  PermutationMap map;  // variant None when unused
  double original_accuracy = 0;
};

// Train (or reuse) the original network and compute permutations once per
// config; per-seed NeRN runs share this state.
inline PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.catalog != "desk3")
    fail(ErrorCode::InvalidArgument, "trainable experiments need the desk3 catalog");
  PreparedExperiment prep;
  prep.cfg = cfg;
  prep.data = make_task_data(cfg.data_seed);
  prep.original = build_desk_cnn(cfg.original_seed);
  const double lambda = cfg.smoothness == SmoothnessMode::Regularized ? cfg.lambda : 0.0;
  auto m = train_original(prep.original, prep.data, lambda, cfg.original_epochs, cfg.original_lr);
  prep.original_accuracy = m.final_accuracy;
  if (cfg.smoothness == SmoothnessMode::Permuted)
    prep.map = compute_permutations(prep.original.conv_weights, cfg.variant);
  return prep;
}

inline TrainResult run_prepared(const PreparedExperiment& prep, uint64_t seed) {
  TrainConfig tc = prep.cfg.train;
  tc.seed = seed;
  const PermutationMap* map =
      prep.cfg.smoothness == SmoothnessMode::Permuted ? &prep.map : nullptr;
  return train_nern(prep.original, prep.data, tc, prep.cfg.embedding, prep.cfg.hidden, map);
}

struct Aggregate {
  size_t n = 0;
  double mean = 0;
  double ci95 = 0;  // 1.96 * sigma / sqrt(n); undefined (0) for n == 1
};

inline Aggregate aggregate(const std::vector<double>& xs) {
  Aggregate a;
  a.n = xs.size();
  if (xs.empty()) return a;
  for (double x : xs) a.mean += x;
  a.mean /= double(xs.size());
  if (xs.size() > 1) {
    double var = 0;
    for (double x : xs) var += (x - a.mean) * (x - a.mean);
    var /= double(xs.size());
    a.ci95 = 1.96 * std::sqrt(var) / std::sqrt(double(xs.size()));
  }
  return a;
}

struct MatrixResult {
  struct Row {
    std::string config;
    std::string metric;
    Aggregate agg;
  };
  std::vector<Row> rows;
  size_t failures = 0;

  std::string csv() const {
    std::string s = "config,metric,n,mean,ci95\n";
    char buf[192];
    for (const auto& r : rows) {
      if (r.agg.n > 1)
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.9g,%.9g\n", r.config.c_str(),
                      r.metric.c_str(), r.agg.n, r.agg.mean, r.agg.ci95);
      else
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.9g,\n", r.config.c_str(), r.metric.c_str(),
                      r.agg.n, r.agg.mean);
      s += buf;
    }
    return s;
  }
};

// Run every config over the requested seeds; failures are recorded and the
// matrix keeps going. jobs > 1 runs seeds concurrently (runs are independent
// and individually deterministic).
inline MatrixResult run_experiment_matrix(const std::vector<ExperimentConfig>& configs,
                                          const std::vector<uint64_t>& seeds, size_t jobs = 1) {
  if (configs.empty()) fail(ErrorCode::InvalidArgument, "matrix needs at least one config");
  if (seeds.empty()) fail(ErrorCode::InvalidArgument, "matrix needs at least one seed");
  MatrixResult out;
  for (const auto& cfg : configs) {
    PreparedExperiment prep = prepare_experiment(cfg);
    std::vector<double> recon_acc, orig_acc, final_recon_loss;
    std::vector<std::string> errors;
    for (size_t start = 0; start < seeds.size(); start += std::max<size_t>(jobs, 1)) {
      const size_t n = std::min(std::max<size_t>(jobs, 1), seeds.size() - start);
      std::vector<std::future<TrainResult>> futs;
      for (size_t i = 0; i < n; ++i)
        futs.push_back(std::async(std::launch::async, [&prep, &seeds, start, i]() {
          return run_prepared(prep, seeds[start + i]);
        }));
      for (auto& f : futs) {
        try {
          TrainResult r = f.get();
          recon_acc.push_back(r.final_accuracy);
          orig_acc.push_back(r.original_accuracy);
          if (!r.metrics.empty()) final_recon_loss.push_back(r.metrics.back().recon);
        } catch (const std::exception& e) {
          errors.push_back(e.what());
          ++out.failures;
        }
      }
    }
    out.rows.push_back({cfg.name, "original_accuracy", aggregate(orig_acc)});
    out.rows.push_back({cfg.name, "reconstructed_accuracy", aggregate(recon_acc)});
    out.rows.push_back({cfg.name, "final_recon_loss", aggregate(final_recon_loss)});
    if (!errors.empty())
      out.rows.push_back({cfg.name, "failed_runs", {errors.size(), double(errors.size()), 0}});
  }
  return out;
}

}  // namespace nern
