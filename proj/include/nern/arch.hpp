#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "nern/error.hpp"

namespace nern {

struct LayerSpec {
  size_t filters = 1;   // F_l (output channels)
  size_t channels = 1;  // C_l (input channels)
  size_t kernel = 1;    // k_l
  int stride = 1;
  int padding = 0;
  bool predictable = true;

  size_t param_count() const { return filters * channels * kernel * kernel; }
  size_t kernel_count() const { return filters * channels; }
};

// Conv shape metadata for one architecture. non_conv_param_count covers
// everything outside conv kernels (biases / norm params / classifier head).
struct ArchCatalog {
  std::string name;
  std::vector<LayerSpec> layers;
  size_t non_conv_param_count = 0;

  size_t conv_param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }
  size_t total_param_count() const { return conv_param_count() + non_conv_param_count; }

  size_t predictable_param_count() const {
    size_t n = 0;
    for (const auto& l : layers)
      if (l.predictable) n += l.param_count();
    return n;
  }
  size_t predictable_kernel_count() const {
    size_t n = 0;
    for (const auto& l : layers)
      if (l.predictable) n += l.kernel_count();
    return n;
  }

  // output size of the predictor; the largest kernel among predicted layers
  size_t k_max() const {
    size_t k = 1;
    for (const auto& l : layers)
      if (l.predictable && l.kernel > k) k = l.kernel;
    return k;
  }
};

// 4 bytes per parameter, MB = 2^20 bytes.
inline double params_to_mb(size_t params) { return double(params) * 4.0 / (1024.0 * 1024.0); }

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }
inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

struct SizeReport {
  double total_mb = 0;
  double conv_mb = 0;
  double conv_percent = 0;
};

// MB fields are reported at 2 decimals and the percentage is derived from the
// rounded pair, which is how the reference table's percent column is formed.
inline SizeReport size_report(const ArchCatalog& cat) {
  SizeReport r;
  r.total_mb = round2(params_to_mb(cat.total_param_count()));
  r.conv_mb = round2(params_to_mb(cat.conv_param_count()));
  r.conv_percent = round2(r.conv_mb / r.total_mb * 100.0);
  return r;
}

// Desk-scale reference net: conv(1->8,k3,p1) relu, conv(8->16,k3,p1,s2) relu,
// conv(16->16,k3,p1) relu, global-avg-pool, dense(16->2).
inline ArchCatalog desk3_catalog() {
  ArchCatalog cat;
  cat.name = "desk3";
  cat.layers = {
      {8, 1, 3, 1, 1, true},
      {16, 8, 3, 2, 1, true},
      {16, 16, 3, 1, 1, true},
  };
  // conv biases (8+16+16) + head weights/bias (16*2 + 2)
  cat.non_conv_param_count = 40 + 34;
  return cat;
}

namespace detail {

inline void add_cifar_resnet_stages(ArchCatalog& cat, size_t blocks_per_stage) {
  cat.layers.push_back({16, 3, 3, 1, 1, true});  // stem
  for (size_t b = 0; b < blocks_per_stage; ++b) {
    cat.layers.push_back({16, 16, 3, 1, 1, true});
    cat.layers.push_back({16, 16, 3, 1, 1, true});
  }
  for (size_t stage = 1; stage <= 2; ++stage) {
    const size_t cout = stage == 1 ? 32 : 64;
    const size_t cin = cout / 2;
    cat.layers.push_back({cout, cin, 3, 2, 1, true});
    cat.layers.push_back({cout, cout, 3, 1, 1, true});
    // option-B projection shortcut; not part of the predicted set
    cat.layers.push_back({cout, cin, 1, 2, 0, false});
    for (size_t b = 1; b < blocks_per_stage; ++b) {
      cat.layers.push_back({cout, cout, 3, 1, 1, true});
      cat.layers.push_back({cout, cout, 3, 1, 1, true});
    }
  }
}

inline size_t cifar_resnet_bn_params(size_t blocks_per_stage) {
  // one BN per conv (2 params per channel), incl. the projection shortcuts
  size_t bn = 16 * 2;  // stem
  bn += blocks_per_stage * 2 * 16 * 2;
  bn += blocks_per_stage * 2 * 32 * 2 + 32 * 2;
  bn += blocks_per_stage * 2 * 64 * 2 + 64 * 2;
  return bn;
}

}  // namespace detail

inline ArchCatalog resnet_catalog(const std::string& name) {
  ArchCatalog cat;
  cat.name = name;
  if (name == "resnet20_cifar" || name == "resnet56_cifar") {
    const size_t blocks = name == "resnet20_cifar" ? 3 : 9;
    detail::add_cifar_resnet_stages(cat, blocks);
    cat.non_conv_param_count = detail::cifar_resnet_bn_params(blocks) + (64 * 10 + 10);
  } else if (name == "resnet18_imagenet") {
    cat.layers.push_back({64, 3, 7, 2, 3, false});  // 7x7 stem is skipped
    for (size_t b = 0; b < 2; ++b) {
      cat.layers.push_back({64, 64, 3, 1, 1, true});
      cat.layers.push_back({64, 64, 3, 1, 1, true});
    }
    for (size_t stage = 1; stage <= 3; ++stage) {
      const size_t cout = 64u << stage;
      const size_t cin = cout / 2;
      cat.layers.push_back({cout, cin, 3, 2, 1, true});
      cat.layers.push_back({cout, cout, 3, 1, 1, true});
      cat.layers.push_back({cout, cin, 1, 2, 0, false});  // downsampling conv, skipped
      cat.layers.push_back({cout, cout, 3, 1, 1, true});
      cat.layers.push_back({cout, cout, 3, 1, 1, true});
    }
    size_t bn = 64 * 2;
    bn += 4 * 64 * 2;
    bn += 4 * 128 * 2 + 128 * 2;
    bn += 4 * 256 * 2 + 256 * 2;
    bn += 4 * 512 * 2 + 512 * 2;
    cat.non_conv_param_count = bn + (512 * 1000 + 1000);
  } else {
    fail(ErrorCode::InvalidArgument, "unknown architecture: " + name);
  }
  return cat;
}

}  // namespace nern
