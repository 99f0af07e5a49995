#pragma once

#include <cstdlib>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nern/embedding.hpp"
#include "nern/error.hpp"
#include "nern/io.hpp"
#include "nern/smoothness.hpp"
#include "nern/trainer.hpp"

namespace nern {

enum class SmoothnessMode { None, Regularized, Permuted };

inline const char* smoothness_mode_name(SmoothnessMode m) {
  switch (m) {
    case SmoothnessMode::None: return "none";
    case SmoothnessMode::Regularized: return "regularized";
    case SmoothnessMode::Permuted: return "permuted";
  }
  return "?";
}

inline SmoothnessMode smoothness_mode_from_name(const std::string& s) {
  if (s == "none") return SmoothnessMode::None;
  if (s == "regularized") return SmoothnessMode::Regularized;
  if (s == "permuted") return SmoothnessMode::Permuted;
  fail(ErrorCode::InvalidArgument, "unknown smoothness mode: " + s);
}

// One experiment: which original, how it is smoothed, and how the NeRN is
// configured and trained.
struct ExperimentConfig {
  std::string name = "default";
  std::string catalog = "desk3";
  EmbeddingConfig embedding = EmbeddingConfig::smooth(40);
  size_t hidden = 64;
  SmoothnessMode smoothness = SmoothnessMode::None;
  double lambda = 0.0;                              // regularized mode
  PermVariant variant = PermVariant::CrossFilter;   // permuted mode
  TrainConfig train;
  uint64_t data_seed = 42;
  uint64_t original_seed = 0;
  size_t original_epochs = 30;
  double original_lr = 3e-3;

  void validate() const {
    embedding.validate();
    if (catalog != "desk3" && smoothness == SmoothnessMode::Regularized)
      fail(ErrorCode::InvalidArgument, "regularized smoothness requires a trainable original");
    if (smoothness == SmoothnessMode::Permuted && variant == PermVariant::None)
      fail(ErrorCode::InvalidArgument, "permuted mode needs a variant");
    if (train.alpha < 0 || train.beta < 0)
      fail(ErrorCode::InvalidArgument, "loss coefficients must be >= 0");
  }

  std::string canonical() const {
    std::ostringstream os;
    os << "config_version=1;catalog=" << catalog << ";b=" << embedding.base
       << ";n=" << embedding.num_frequencies
       << ";regime=" << (embedding.regime == EmbeddingRegime::Smooth ? "smooth" : "non_smooth")
       << ";hidden=" << hidden << ";smoothness=" << smoothness_mode_name(smoothness)
       << ";lambda=" << lambda << ";variant=" << perm_variant_name(variant)
       << ";alpha=" << train.alpha << ";beta=" << train.beta << ";use_recon=" << train.use_recon
       << ";lr=" << train.lr << ";cosine=" << train.cosine_decay << ";iters=" << train.iterations
       << ";task_batch=" << train.task_batch
       << ";sampling=" << sampling_kind_name(train.sampling.kind)
       << ";weight_batch=" << train.sampling.batch_size << ";p_uni=" << train.sampling.p_uni
       << ";noise=" << train.noise_inputs << ";lookahead=" << train.lookahead
       << ";distill_grad=" << (train.distill_grad_full ? "full" : "sampled_only")
       << ";recon_mse=" << train.recon_mse << ";seed=" << train.seed
       << ";data_seed=" << data_seed << ";original_seed=" << original_seed
       << ";original_epochs=" << original_epochs << ";original_lr=" << original_lr;
    return os.str();
  }

  std::string hash() const { return hex64(fnv1a(canonical())); }
};

// Flat sectioned key=value config text. '#' starts a comment. Unknown keys are
// rejected so typos fail loudly.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') fail(ErrorCode::InvalidArgument, "bad section header: " + line);
        section = trim(line.substr(1, line.size() - 2));
        cfg.sections_.push_back(section);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::InvalidArgument,
             "expected key = value at line " + std::to_string(lineno));
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }
  const std::vector<std::string>& sections() const { return sections_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double get_num(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "bad numeric value for " + key + ": " + it->second);
    }
  }
  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "1" || it->second == "true" || it->second == "yes") return true;
    if (it->second == "0" || it->second == "false" || it->second == "no") return false;
    fail(ErrorCode::InvalidArgument, "bad boolean for " + key + ": " + it->second);
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  std::map<std::string, std::string> values_;
  std::vector<std::string> sections_;
};

inline ExperimentConfig experiment_from_kv(const KeyValueConfig& kv) {
  static const std::vector<std::string> known = {
      "config_version",
      "experiment.catalog", "experiment.hidden", "experiment.smoothness", "experiment.lambda",
      "experiment.variant", "experiment.name",
      "embedding.b", "embedding.n", "embedding.regime",
      "train.alpha", "train.beta", "train.use_recon", "train.lr", "train.cosine_decay",
      "train.iterations", "train.task_batch", "train.sampling", "train.weight_batch",
      "train.p_uni", "train.noise", "train.lookahead", "train.distill_grad", "train.recon_mse",
      "train.seed", "train.eval_every",
      "data.seed", "data.original_epochs", "data.original_lr", "data.original_seed"};
  for (const auto& [key, value] : kv.values()) {
    (void)value;
    bool ok = false;
    for (const auto& k : known) ok |= k == key;
    if (!ok) fail(ErrorCode::InvalidArgument, "unknown config key: " + key);
  }
  if (kv.has("config_version") && kv.get("config_version", "1") != "1")
    fail(ErrorCode::InvalidArgument, "unsupported config_version");

  ExperimentConfig cfg;
  cfg.name = kv.get("experiment.name", cfg.name);
  cfg.catalog = kv.get("experiment.catalog", cfg.catalog);
  cfg.hidden = size_t(kv.get_num("experiment.hidden", double(cfg.hidden)));
  cfg.smoothness = smoothness_mode_from_name(kv.get("experiment.smoothness", "none"));
  cfg.lambda = kv.get_num("experiment.lambda", cfg.lambda);
  if (kv.has("experiment.variant"))
    cfg.variant = perm_variant_from_name(kv.get("experiment.variant", "cross_filter"));

  cfg.embedding.base = kv.get_num("embedding.b", cfg.embedding.base);
  cfg.embedding.num_frequencies = size_t(kv.get_num("embedding.n", 40));
  const std::string regime = kv.get("embedding.regime", "");
  if (regime == "smooth")
    cfg.embedding.regime = EmbeddingRegime::Smooth;
  else if (regime == "non_smooth")
    cfg.embedding.regime = EmbeddingRegime::NonSmooth;
  else if (!regime.empty())
    fail(ErrorCode::InvalidArgument, "unknown embedding regime: " + regime);

  cfg.train.alpha = kv.get_num("train.alpha", cfg.train.alpha);
  cfg.train.beta = kv.get_num("train.beta", cfg.train.beta);
  cfg.train.use_recon = kv.get_bool("train.use_recon", cfg.train.use_recon);
  cfg.train.lr = kv.get_num("train.lr", cfg.train.lr);
  cfg.train.cosine_decay = kv.get_bool("train.cosine_decay", cfg.train.cosine_decay);
  cfg.train.iterations = int64_t(kv.get_num("train.iterations", double(cfg.train.iterations)));
  cfg.train.task_batch = size_t(kv.get_num("train.task_batch", double(cfg.train.task_batch)));
  if (kv.has("train.sampling"))
    cfg.train.sampling.kind = sampling_kind_from_name(kv.get("train.sampling", ""));
  cfg.train.sampling.batch_size =
      size_t(kv.get_num("train.weight_batch", double(cfg.train.sampling.batch_size)));
  cfg.train.sampling.p_uni = kv.get_num("train.p_uni", cfg.train.sampling.p_uni);
  cfg.train.noise_inputs = kv.get_bool("train.noise", cfg.train.noise_inputs);
  cfg.train.lookahead = kv.get_bool("train.lookahead", cfg.train.lookahead);
  const std::string dg = kv.get("train.distill_grad", "full");
  if (dg == "full")
    cfg.train.distill_grad_full = true;
  else if (dg == "sampled_only")
    cfg.train.distill_grad_full = false;
  else
    fail(ErrorCode::InvalidArgument, "unknown distill_grad: " + dg);
  cfg.train.recon_mse = kv.get_bool("train.recon_mse", cfg.train.recon_mse);
  cfg.train.seed = uint64_t(kv.get_num("train.seed", double(cfg.train.seed)));
  cfg.train.eval_every = int64_t(kv.get_num("train.eval_every", double(cfg.train.eval_every)));

  cfg.data_seed = uint64_t(kv.get_num("data.seed", double(cfg.data_seed)));
  cfg.original_seed = uint64_t(kv.get_num("data.original_seed", double(cfg.original_seed)));
  cfg.original_epochs = size_t(kv.get_num("data.original_epochs", double(cfg.original_epochs)));
  cfg.original_lr = kv.get_num("data.original_lr", cfg.original_lr);
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_from_kv(KeyValueConfig::parse(read_file(path)));
}

inline uint64_t seed_from_env_or(uint64_t fallback) {
  const char* s = std::getenv("NERN_SEED");
  if (!s || !*s) return fallback;
  return uint64_t(std::strtoull(s, nullptr, 10));
}

}  // namespace nern
