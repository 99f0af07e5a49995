#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nern/io.hpp"
#include "nern/model_zoo.hpp"
#include "nern/predictor.hpp"
#include "nern/smoothness.hpp"

namespace nern {

using json = nlohmann::json;

inline json catalog_to_json(const ArchCatalog& cat) {
  json j;
  j["name"] = cat.name;
  j["non_conv_param_count"] = cat.non_conv_param_count;
  j["layers"] = json::array();
  for (const auto& l : cat.layers) {
    j["layers"].push_back({{"filters", l.filters},
                           {"channels", l.channels},
                           {"kernel", l.kernel},
                           {"stride", l.stride},
                           {"padding", l.padding},
                           {"predictable", l.predictable}});
  }
  return j;
}

inline ArchCatalog catalog_from_json(const json& j) {
  ArchCatalog cat;
  cat.name = j.at("name").get<std::string>();
  cat.non_conv_param_count = j.at("non_conv_param_count").get<size_t>();
  for (const auto& jl : j.at("layers")) {
    LayerSpec l;
    l.filters = jl.at("filters").get<size_t>();
    l.channels = jl.at("channels").get<size_t>();
    l.kernel = jl.at("kernel").get<size_t>();
    l.stride = jl.at("stride").get<int>();
    l.padding = jl.at("padding").get<int>();
    l.predictable = jl.at("predictable").get<bool>();
    cat.layers.push_back(l);
  }
  return cat;
}

// Original-network checkpoint: manifest.json plus one tensor dump per
// parameter tensor.
inline void save_original(const std::string& dir, const OriginalNetwork& net,
                          const std::string& config_hash, double final_accuracy = -1,
                          double final_smoothness = -1) {
  std::filesystem::create_directories(dir);
  json j;
  j["type"] = "original";
  j["catalog"] = catalog_to_json(net.catalog);
  j["init_seed"] = net.init_seed;
  j["config_hash"] = config_hash;
  if (final_accuracy >= 0) j["final_accuracy"] = final_accuracy;
  if (final_smoothness >= 0) j["final_smoothness"] = final_smoothness;
  write_file(dir + "/manifest.json", j.dump(2) + "\n");
  for (size_t l = 0; l < net.conv_weights.size(); ++l) {
    save_tensor(dir + "/conv" + std::to_string(l) + "_w.nrt", net.conv_weights[l]);
    save_tensor(dir + "/conv" + std::to_string(l) + "_b.nrt", net.conv_biases[l]);
  }
  save_tensor(dir + "/head_w.nrt", net.head_w);
  save_tensor(dir + "/head_b.nrt", net.head_b);
}

inline OriginalNetwork load_original(const std::string& dir) {
  json j = json::parse(read_file(dir + "/manifest.json"));
  if (j.at("type") != "original") fail(ErrorCode::IoError, "not an original checkpoint: " + dir);
  OriginalNetwork net;
  net.catalog = catalog_from_json(j.at("catalog"));
  net.init_seed = j.at("init_seed").get<uint64_t>();
  for (size_t l = 0; l < net.catalog.layers.size(); ++l) {
    net.conv_weights.push_back(load_tensor<float>(dir + "/conv" + std::to_string(l) + "_w.nrt"));
    net.conv_biases.push_back(load_tensor<float>(dir + "/conv" + std::to_string(l) + "_b.nrt"));
  }
  net.head_w = load_tensor<float>(dir + "/head_w.nrt");
  net.head_b = load_tensor<float>(dir + "/head_b.nrt");
  return net;
}

inline std::string original_config_hash(const std::string& dir) {
  json j = json::parse(read_file(dir + "/manifest.json"));
  return j.value("config_hash", "");
}

// Predictor checkpoint: manifest.json plus per-layer weight/bias dumps.
inline void save_predictor(const std::string& dir, const NernPredictor& p,
                           const std::string& catalog_name, const std::string& perm_hash,
                           const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  json j;
  j["type"] = "nern";
  j["embedding_base"] = p.embedding.base;
  j["embedding_n"] = p.embedding.num_frequencies;
  j["embedding_regime"] =
      p.embedding.regime == EmbeddingRegime::Smooth ? "smooth" : "non_smooth";
  j["hidden"] = p.hidden;
  j["k_max"] = p.k_max;
  j["seed"] = p.seed;
  j["catalog"] = catalog_name;
  j["permutation_hash"] = perm_hash;
  j["config_hash"] = config_hash;
  write_file(dir + "/manifest.json", j.dump(2) + "\n");
  for (size_t i = 0; i < p.weights.size(); ++i) {
    save_tensor(dir + "/w" + std::to_string(i) + ".nrt", p.weights[i]);
    save_tensor(dir + "/b" + std::to_string(i) + ".nrt", p.biases[i]);
  }
}

struct PredictorCheckpoint {
  NernPredictor predictor;
  std::string catalog_name;
  std::string permutation_hash;
  std::string config_hash;
};

inline PredictorCheckpoint load_predictor(const std::string& dir) {
  json j = json::parse(read_file(dir + "/manifest.json"));
  if (j.at("type") != "nern") fail(ErrorCode::IoError, "not a predictor checkpoint: " + dir);
  PredictorCheckpoint out;
  NernPredictor& p = out.predictor;
  p.embedding.base = j.at("embedding_base").get<double>();
  p.embedding.num_frequencies = j.at("embedding_n").get<size_t>();
  p.embedding.regime = j.at("embedding_regime") == "smooth" ? EmbeddingRegime::Smooth
                                                            : EmbeddingRegime::NonSmooth;
  p.hidden = j.at("hidden").get<size_t>();
  p.k_max = j.at("k_max").get<size_t>();
  p.seed = j.at("seed").get<uint64_t>();
  out.catalog_name = j.at("catalog").get<std::string>();
  out.permutation_hash = j.at("permutation_hash").get<std::string>();
  out.config_hash = j.at("config_hash").get<std::string>();
  for (size_t i = 0; i < 5; ++i) {
    p.weights.push_back(load_tensor<float>(dir + "/w" + std::to_string(i) + ".nrt"));
    p.biases.push_back(load_tensor<float>(dir + "/b" + std::to_string(i) + ".nrt"));
  }
  return out;
}

inline void save_permutations(const std::string& path, const PermutationMap& map) {
  write_file(path, serialize_permutations(map));
}

inline PermutationMap load_permutations(const std::string& path) {
  return deserialize_permutations(read_file(path));
}

inline std::string permutation_file_hash(const std::string& path) {
  return hex64(fnv1a(read_file(path)));
}

// Dataset cache as tensor dumps (labels stored as f32 0/1).
inline void save_dataset(const std::string& dir, const TaskData& data) {
  std::filesystem::create_directories(dir);
  auto labels_tensor = [](const Dataset& d) {
    TensorF t({d.size()});
    for (size_t i = 0; i < d.size(); ++i) t[i] = float(d.labels[i]);
    return t;
  };
  save_tensor(dir + "/train_x.nrt", data.train.images);
  save_tensor(dir + "/train_y.nrt", labels_tensor(data.train));
  save_tensor(dir + "/test_x.nrt", data.test.images);
  save_tensor(dir + "/test_y.nrt", labels_tensor(data.test));
}

inline TaskData load_dataset(const std::string& dir) {
  TaskData d;
  auto load_split = [&](const std::string& stem, Dataset& ds) {
    ds.images = load_tensor<float>(dir + "/" + stem + "_x.nrt");
    TensorF y = load_tensor<float>(dir + "/" + stem + "_y.nrt");
    ds.labels.resize(y.numel());
    for (size_t i = 0; i < y.numel(); ++i) ds.labels[i] = int(y[i]);
  };
  load_split("train", d.train);
  load_split("test", d.test);
  return d;
}

}  // namespace nern
