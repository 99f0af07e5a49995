// Command-line surface for the desk-scale weight-prediction pipeline.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nern/analysis.hpp"
#include "nern/config.hpp"
#include "nern/experiment.hpp"
#include "nern/persist.hpp"
#include "nern/trainer.hpp"

using namespace nern;

namespace {

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stod(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
  std::vector<uint64_t> out;
  for (double v : parse_doubles(s)) out.push_back(uint64_t(v));
  return out;
}

const PermutationMap* resolve_map(const std::string& perm_path, PermutationMap& storage) {
  if (perm_path.empty()) return nullptr;
  storage = load_permutations(perm_path);
  return storage.variant == PermVariant::None ? nullptr : &storage;
}

// the permutation pairing recorded in a predictor checkpoint must match the
// file supplied at use time
void check_perm_pairing(const PredictorCheckpoint& ckpt, const std::string& perm_path) {
  const std::string actual = perm_path.empty() ? "" : permutation_file_hash(perm_path);
  if (ckpt.permutation_hash != actual)
    fail(ErrorCode::InvalidArgument,
         "predictor/permutation mismatch: checkpoint expects hash '" + ckpt.permutation_hash +
             "', got '" + actual + "'");
}

struct TrainNernArgs {
  std::string original_dir, out_dir, perm_path, metrics_path, config_path;
  int64_t ckpt_every = 0;
  ExperimentConfig cfg;
  bool oracle = false;
};

int cmd_train_nern(const TrainNernArgs& args, CLI::App* sub) {
  ExperimentConfig cfg =
      args.config_path.empty() ? ExperimentConfig{} : load_experiment_config(args.config_path);
  // explicit flags override the config file
  auto overridden = [&](const std::string& flag) { return sub->count(flag) > 0; };
  if (overridden("--hidden")) cfg.hidden = args.cfg.hidden;
  if (overridden("--iterations")) cfg.train.iterations = args.cfg.train.iterations;
  if (overridden("--lr")) cfg.train.lr = args.cfg.train.lr;
  if (overridden("--alpha")) cfg.train.alpha = args.cfg.train.alpha;
  if (overridden("--beta")) cfg.train.beta = args.cfg.train.beta;
  if (overridden("--no-recon")) cfg.train.use_recon = args.cfg.train.use_recon;
  if (overridden("--sampling")) cfg.train.sampling.kind = args.cfg.train.sampling.kind;
  if (overridden("--weight-batch"))
    cfg.train.sampling.batch_size = args.cfg.train.sampling.batch_size;
  if (overridden("--p-uni")) cfg.train.sampling.p_uni = args.cfg.train.sampling.p_uni;
  if (overridden("--task-batch")) cfg.train.task_batch = args.cfg.train.task_batch;
  if (overridden("--noise")) cfg.train.noise_inputs = args.cfg.train.noise_inputs;
  if (overridden("--no-lookahead")) cfg.train.lookahead = args.cfg.train.lookahead;
  if (overridden("--seed")) cfg.train.seed = args.cfg.train.seed;
  if (overridden("--eval-every")) cfg.train.eval_every = args.cfg.train.eval_every;
  if (overridden("--b")) cfg.embedding.base = args.cfg.embedding.base;
  if (overridden("--n-freq")) cfg.embedding.num_frequencies = args.cfg.embedding.num_frequencies;
  if (overridden("--distill-grad"))
    cfg.train.distill_grad_full = args.cfg.train.distill_grad_full;
  if (overridden("--recon-mse")) cfg.train.recon_mse = args.cfg.train.recon_mse;
  if (!sub->count("--seed") && !args.config_path.empty()) {
    // keep config seed
  } else if (!sub->count("--seed")) {
    cfg.train.seed = seed_from_env_or(cfg.train.seed);
  }
  cfg.train.oracle_mode = args.oracle;
  cfg.validate();

  OriginalNetwork net = load_original(args.original_dir);
  TaskData data = make_task_data(cfg.data_seed);
  PermutationMap storage;
  const PermutationMap* map = resolve_map(args.perm_path, storage);

  const std::string perm_hash =
      args.perm_path.empty() ? "" : permutation_file_hash(args.perm_path);
  const std::string config_hash = cfg.hash();
  CheckpointHook hook = nullptr;
  if (!args.out_dir.empty())
    hook = [&](const NernPredictor& p, int64_t) {
      save_predictor(args.out_dir, p, net.catalog.name, perm_hash, config_hash);
    };

  TrainResult r = train_nern(net, data, cfg.train, cfg.embedding, cfg.hidden, map, hook,
                             args.ckpt_every);
  if (!args.out_dir.empty())
    save_predictor(args.out_dir, r.predictor, net.catalog.name, perm_hash, config_hash);
  if (!args.metrics_path.empty()) write_file(args.metrics_path, metrics_csv(r.metrics));
  std::printf("original_accuracy %.6f\nreconstructed_accuracy %.6f\n", r.original_accuracy,
              r.final_accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale neural representation for network weights"};
  app.require_subcommand(1);

  try {
    // ---- train-original ----
    auto* t_orig = app.add_subcommand("train-original", "train a desk-scale original network");
    std::string to_out;
    double to_lambda = 0.0, to_lr = 3e-3;
    uint64_t to_seed = 0, to_data_seed = 42;
    size_t to_epochs = 30;
    std::string to_data_out;
    t_orig->add_option("--out", to_out, "checkpoint directory")->required();
    t_orig->add_option("--lambda", to_lambda, "smoothness regularization factor");
    t_orig->add_option("--epochs", to_epochs);
    t_orig->add_option("--lr", to_lr);
    t_orig->add_option("--seed", to_seed, "init seed");
    t_orig->add_option("--data-seed", to_data_seed);
    t_orig->add_option("--data-out", to_data_out, "optional dataset cache directory");
    t_orig->callback([&]() {
      ExperimentConfig cfg;
      cfg.lambda = to_lambda;
      cfg.smoothness = to_lambda > 0 ? SmoothnessMode::Regularized : SmoothnessMode::None;
      cfg.original_seed = to_seed;
      cfg.data_seed = to_data_seed;
      cfg.original_epochs = to_epochs;
      cfg.original_lr = to_lr;
      auto data = make_task_data(to_data_seed);
      auto net = build_desk_cnn(to_seed);
      auto m = train_original(net, data, to_lambda, to_epochs, to_lr);
      save_original(to_out, net, cfg.hash(), m.final_accuracy, m.final_smoothness);
      if (!to_data_out.empty()) save_dataset(to_data_out, data);
      std::printf("accuracy %.6f smoothness %.6f\n", m.final_accuracy, m.final_smoothness);
    });

    // ---- permute ----
    auto* perm = app.add_subcommand("permute", "compute greedy kernel orderings");
    std::string p_orig, p_out, p_variant = "cross_filter";
    perm->add_option("--original", p_orig)->required();
    perm->add_option("--variant", p_variant, "cross_filter | in_filter");
    perm->add_option("--out", p_out, "permutation file")->required();
    perm->callback([&]() {
      auto net = load_original(p_orig);
      std::vector<TensorF> predictable;
      for (size_t l = 0; l < net.catalog.layers.size(); ++l)
        if (net.catalog.layers[l].predictable) predictable.push_back(net.conv_weights[l]);
      auto map = compute_permutations(predictable, perm_variant_from_name(p_variant));
      save_permutations(p_out, map);
      std::printf("layers %zu hash %s\n", map.layers.size(), permutation_file_hash(p_out).c_str());
    });

    // ---- train-nern ----
    auto* t_nern = app.add_subcommand("train-nern", "fit the predictor to an original network");
    TrainNernArgs ta;
    t_nern->add_option("--original", ta.original_dir)->required();
    t_nern->add_option("--out", ta.out_dir, "predictor checkpoint directory");
    t_nern->add_option("--perm", ta.perm_path, "permutation file");
    t_nern->add_option("--metrics", ta.metrics_path, "metrics csv path");
    t_nern->add_option("--config", ta.config_path, "experiment config file");
    t_nern->add_option("--ckpt-every", ta.ckpt_every);
    t_nern->add_option("--hidden", ta.cfg.hidden);
    t_nern->add_option("--iterations", ta.cfg.train.iterations);
    t_nern->add_option("--lr", ta.cfg.train.lr);
    t_nern->add_option("--alpha", ta.cfg.train.alpha);
    t_nern->add_option("--beta", ta.cfg.train.beta);
    t_nern->add_flag_callback("--no-recon", [&]() { ta.cfg.train.use_recon = false; });
    std::string ta_sampling;
    t_nern->add_option("--sampling", ta_sampling, "all|random_layer|uniform_batch|magnitude_mixed")
        ->each([&](const std::string& v) { ta.cfg.train.sampling.kind = sampling_kind_from_name(v); });
    t_nern->add_option("--weight-batch", ta.cfg.train.sampling.batch_size);
    t_nern->add_option("--p-uni", ta.cfg.train.sampling.p_uni);
    t_nern->add_option("--task-batch", ta.cfg.train.task_batch);
    t_nern->add_flag_callback("--noise", [&]() { ta.cfg.train.noise_inputs = true; });
    t_nern->add_flag_callback("--no-lookahead", [&]() { ta.cfg.train.lookahead = false; });
    t_nern->add_option("--seed", ta.cfg.train.seed);
    t_nern->add_option("--eval-every", ta.cfg.train.eval_every);
    t_nern->add_option("--b", ta.cfg.embedding.base);
    t_nern->add_option("--n-freq", ta.cfg.embedding.num_frequencies);
    std::string ta_dg;
    t_nern->add_option("--distill-grad", ta_dg, "full | sampled_only")
        ->each([&](const std::string& v) { ta.cfg.train.distill_grad_full = v == "full"; });
    t_nern->add_flag_callback("--recon-mse", [&]() { ta.cfg.train.recon_mse = true; });
    t_nern->add_flag_callback("--oracle", [&]() { ta.oracle = true; });
    t_nern->callback([&]() { cmd_train_nern(ta, t_nern); });

    // ---- reconstruct ----
    auto* rec = app.add_subcommand("reconstruct", "write the reconstructed conv weights");
    std::string r_orig, r_nern, r_perm, r_out;
    rec->add_option("--original", r_orig)->required();
    rec->add_option("--nern", r_nern)->required();
    rec->add_option("--perm", r_perm);
    rec->add_option("--out", r_out)->required();
    rec->callback([&]() {
      auto net = load_original(r_orig);
      auto ckpt = load_predictor(r_nern);
      check_perm_pairing(ckpt, r_perm);
      PermutationMap storage;
      const PermutationMap* map = resolve_map(r_perm, storage);
      auto weights = reconstruct_network(ckpt.predictor, net.catalog, map, net.conv_weights);
      std::filesystem::create_directories(r_out);
      json j;
      j["type"] = "reconstruction";
      j["config_hash"] = ckpt.config_hash;
      j["catalog"] = net.catalog.name;
      write_file(r_out + "/manifest.json", j.dump(2) + "\n");
      for (size_t l = 0; l < weights.size(); ++l)
        save_tensor(r_out + "/conv" + std::to_string(l) + "_w.nrt", weights[l]);
      std::printf("layers %zu\n", weights.size());
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "accuracy of the original / reconstructed network");
    std::string e_orig, e_nern, e_perm;
    ev->add_option("--original", e_orig)->required();
    ev->add_option("--nern", e_nern);
    ev->add_option("--perm", e_perm);
    ev->callback([&]() {
      auto net = load_original(e_orig);
      json manifest = json::parse(read_file(e_orig + "/manifest.json"));
      auto data = make_task_data(42);
      std::printf("original_accuracy %.6f\n", eval_accuracy(net, data.test));
      if (!e_nern.empty()) {
        auto ckpt = load_predictor(e_nern);
        if (ckpt.catalog_name != net.catalog.name)
          fail(ErrorCode::InvalidArgument, "predictor was trained for catalog " +
                                               ckpt.catalog_name + ", not " + net.catalog.name);
        check_perm_pairing(ckpt, e_perm);
        PermutationMap storage;
        const PermutationMap* map = resolve_map(e_perm, storage);
        auto weights = reconstruct_network(ckpt.predictor, net.catalog, map, net.conv_weights);
        std::printf("reconstructed_accuracy %.6f\n", eval_accuracy(weights, net, data.test));
      }
    });

    // ---- size-report ----
    auto* sr = app.add_subcommand("size-report", "conv parameter size accounting");
    std::string sr_arch;
    sr->add_option("--arch", sr_arch)->required();
    sr->callback([&]() {
      auto cat = sr_arch == "desk3" ? desk3_catalog() : resnet_catalog(sr_arch);
      auto r = size_report(cat);
      std::printf("%.2f %.2f %.2f\n", r.total_mb, r.conv_mb, r.conv_percent);
    });

    // ---- perm-cost ----
    auto* pc = app.add_subcommand("perm-cost", "permutation size overhead");
    std::string pc_arch, pc_variant = "cross_filter";
    bool pc_codec = false;
    pc->add_option("--arch", pc_arch)->required();
    pc->add_option("--variant", pc_variant);
    pc->add_flag("--codec", pc_codec, "also print the on-disk ceil(log2) cost");
    pc->callback([&]() {
      auto cat = pc_arch == "desk3" ? desk3_catalog() : resnet_catalog(pc_arch);
      auto r = permutation_bit_cost(cat, perm_variant_from_name(pc_variant));
      std::printf("%.3f MB %.2f%%\n", r.total_mb, r.overhead_percent);
      if (pc_codec)
        std::printf("codec %.3f MB\n", double(r.codec_bits) / 8.0 / (1024.0 * 1024.0));
    });

    // ---- importance ----
    auto* imp = app.add_subcommand("importance", "per-filter reconstruction-error ranking");
    std::string i_orig, i_nern, i_perm, i_out, i_maps;
    size_t i_layer = 0, i_count = 10;
    imp->add_option("--original", i_orig)->required();
    imp->add_option("--nern", i_nern)->required();
    imp->add_option("--perm", i_perm);
    imp->add_option("--layer", i_layer)->required();
    imp->add_option("--out", i_out, "csv path")->required();
    imp->add_option("--maps-out", i_maps, "directory for low/high-error activation maps");
    imp->add_option("--count", i_count, "filters per side for the activation export");
    imp->callback([&]() {
      auto net = load_original(i_orig);
      auto ckpt = load_predictor(i_nern);
      check_perm_pairing(ckpt, i_perm);
      PermutationMap storage;
      const PermutationMap* map = resolve_map(i_perm, storage);
      auto weights = reconstruct_network(ckpt.predictor, net.catalog, map, net.conv_weights);
      if (i_layer >= net.catalog.layers.size())
        fail(ErrorCode::InvalidArgument, "layer index outside catalog");
      auto rep = weight_importance(net.conv_weights[i_layer], weights[i_layer], i_layer);
      write_file(i_out, importance_csv(rep));
      if (!i_maps.empty()) {
        std::filesystem::create_directories(i_maps);
        auto data = make_task_data(42);
        std::vector<uint32_t> probe_idx(64);
        for (size_t i = 0; i < 64; ++i) probe_idx[i] = uint32_t(i);
        TensorF probe = batch_images(data.test, probe_idx);
        const size_t n = std::min(i_count, rep.records.size());
        std::vector<size_t> low, high;
        for (size_t i = 0; i < n; ++i) {
          low.push_back(rep.records[i].filter);
          high.push_back(rep.records[rep.records.size() - 1 - i].filter);
        }
        size_t H = 0, W = 0;
        auto lo_maps = avg_activation_maps(net, i_layer, low, probe, &H, &W);
        auto hi_maps = avg_activation_maps(net, i_layer, high, probe);
        for (size_t i = 0; i < n; ++i) {
          write_pgm(i_maps + "/low_" + std::to_string(i) + ".pgm", lo_maps[i], W, H);
          write_pgm(i_maps + "/high_" + std::to_string(i) + ".pgm", hi_maps[i], W, H);
        }
      }
      std::printf("filters %zu\n", rep.records.size());
    });

    // ---- prune-sweep ----
    auto* ps = app.add_subcommand("prune-sweep", "magnitude-prune the predictor and re-evaluate");
    std::string ps_orig, ps_nern, ps_perm, ps_out, ps_factors = "0,0.05,0.1,0.2,0.3,0.5";
    ps->add_option("--original", ps_orig)->required();
    ps->add_option("--nern", ps_nern)->required();
    ps->add_option("--perm", ps_perm);
    ps->add_option("--factors", ps_factors, "comma-separated pruning factors");
    ps->add_option("--out", ps_out, "csv path")->required();
    ps->callback([&]() {
      auto net = load_original(ps_orig);
      auto ckpt = load_predictor(ps_nern);
      check_perm_pairing(ckpt, ps_perm);
      PermutationMap storage;
      const PermutationMap* map = resolve_map(ps_perm, storage);
      auto data = make_task_data(42);
      auto rows = pruning_sweep(ckpt.predictor, net, map, parse_doubles(ps_factors), data.test);
      write_file(ps_out, sweep_csv(rows));
      for (const auto& r : rows) std::printf("%.3f %.6f\n", r.factor, r.accuracy);
    });

    // ---- embed-profile ----
    auto* ep = app.add_subcommand("embed-profile", "positional-embedding similarity profile");
    double ep_b = 0.76;
    size_t ep_n = 40, ep_anchor = 31, ep_range = 64;
    std::string ep_out, ep_regime;
    ep->add_option("--b", ep_b);
    ep->add_option("--regime", ep_regime, "smooth | non_smooth (overrides --b)");
    ep->add_option("--n-freq", ep_n);
    ep->add_option("--anchor", ep_anchor);
    ep->add_option("--range", ep_range);
    ep->add_option("--out", ep_out, "csv path")->required();
    ep->callback([&]() {
      EmbeddingConfig cfg{ep_b, ep_n, EmbeddingRegime::Smooth};
      if (ep_regime == "smooth") cfg = EmbeddingConfig::smooth(ep_n);
      else if (ep_regime == "non_smooth") cfg = EmbeddingConfig::non_smooth(ep_n);
      else if (!ep_regime.empty())
        fail(ErrorCode::InvalidArgument, "unknown regime: " + ep_regime);
      auto prof = similarity_profile(ep_anchor, ep_range, cfg);
      write_file(ep_out, profile_csv(prof));
      std::printf("points %zu\n", prof.size());
    });

    // ---- export-kernels ----
    auto* ek = app.add_subcommand("export-kernels", "kernel grid image of a layer channel");
    std::string k_orig, k_nern, k_perm, k_out;
    size_t k_layer = 0, k_channel = 0, k_gh = 8, k_gw = 8;
    ek->add_option("--original", k_orig)->required();
    ek->add_option("--nern", k_nern, "export reconstructed kernels instead of originals");
    ek->add_option("--perm", k_perm);
    ek->add_option("--layer", k_layer)->required();
    ek->add_option("--channel", k_channel);
    ek->add_option("--grid-h", k_gh);
    ek->add_option("--grid-w", k_gw);
    ek->add_option("--out", k_out, "pgm path")->required();
    ek->callback([&]() {
      auto net = load_original(k_orig);
      if (k_layer >= net.catalog.layers.size())
        fail(ErrorCode::InvalidArgument, "layer index outside catalog");
      TensorF weights = net.conv_weights[k_layer];
      if (!k_nern.empty()) {
        auto ckpt = load_predictor(k_nern);
        check_perm_pairing(ckpt, k_perm);
        PermutationMap storage;
        const PermutationMap* map = resolve_map(k_perm, storage);
        weights = reconstruct_network(ckpt.predictor, net.catalog, map, net.conv_weights)[k_layer];
      }
      export_kernel_grid(k_out, weights, k_channel, k_gh, k_gw);
      std::printf("wrote %s\n", k_out.c_str());
    });

    // ---- matrix ----
    auto* mx = app.add_subcommand("matrix", "run a config set across seeds and aggregate");
    std::string m_configs, m_seeds = "1,2,3,4", m_out;
    size_t m_jobs = 1;
    mx->add_option("--configs", m_configs, "comma-separated config files")->required();
    mx->add_option("--seeds", m_seeds);
    mx->add_option("--out", m_out, "csv path")->required();
    mx->add_option("--jobs", m_jobs, "concurrent runs per config");
    mx->callback([&]() {
      std::vector<ExperimentConfig> configs;
      std::string cur;
      for (char c : m_configs + ",") {
        if (c == ',') {
          if (!cur.empty()) {
            auto cfg = load_experiment_config(cur);
            if (cfg.name == "default") cfg.name = std::filesystem::path(cur).stem().string();
            configs.push_back(cfg);
          }
          cur.clear();
        } else {
          cur += c;
        }
      }
      auto result = run_experiment_matrix(configs, parse_seeds(m_seeds), m_jobs);
      write_file(m_out, result.csv());
      std::fputs(result.csv().c_str(), stdout);
      if (result.failures) std::fprintf(stderr, "failed runs: %zu\n", result.failures);
    });

    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
