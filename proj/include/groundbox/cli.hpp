#pragma once

// Command-line entry point. Exit codes: 0 success, 1 runtime failure,
// 2 usage error. All diagnostics go to the error stream.
//
// Config precedence for every subcommand: explicit flag > GROUNDBOX_SEED
// (seed only) > config file > built-in default.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "groundbox/checkpoint.hpp"
#include "groundbox/config.hpp"
#include "groundbox/dataset_io.hpp"
#include "groundbox/eval.hpp"
#include "groundbox/gradcheck.hpp"
#include "groundbox/train.hpp"

namespace groundbox::cli {

struct ConfigOverrides {
  std::string config_path;
  std::optional<double> lambda, margin;
  std::optional<std::size_t> frames, proposals, epochs;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;

  void attach(CLI::App& app, bool require_config) {
    auto* c = app.add_option("--config", config_path, "key = value config file");
    if (require_config) c->required();
    app.add_option("--lambda", lambda, "ranking/penalty balance (overrides config)");
    app.add_option("--margin", margin, "ranking margin (overrides config)");
    app.add_option("--frames", frames, "frames sampled per segment, T (overrides config)");
    app.add_option("--proposals", proposals, "proposals per frame, N (overrides config)");
    app.add_option("--epochs", epochs, "training epochs (overrides config)");
    app.add_option("--seed", seed, "random seed (overrides config and GROUNDBOX_SEED)");
    app.add_option("--set", sets, "extra key=value override, repeatable");
  }

  GroundingConfig resolve(GroundingConfig base = {}) const {
    GroundingConfig cfg = config_path.empty() ? base : load_config(config_path, base);
    if (const char* env = std::getenv("GROUNDBOX_SEED"); env && *env) set_config_value(cfg, "seed", env);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_config_value(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
    }
    if (lambda) cfg.lambda = *lambda;
    if (margin) cfg.margin = *margin;
    if (frames) cfg.frames = *frames;
    if (proposals) cfg.proposals = *proposals;
    if (epochs) cfg.epochs = *epochs;
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
  }
};

/// Small shapes for gradient checking; only the loss settings come from the
/// user's config.
inline GroundingConfig gradcheck_settings(const GroundingConfig& user) {
  auto cfg = gradcheck_config();
  cfg.lambda = user.lambda;
  cfg.margin = user.margin;
  cfg.negatives = user.negatives;
  cfg.penalty_halved_sum = user.penalty_halved_sum;
  cfg.positional_encoding = user.positional_encoding;
  cfg.attn_layers = user.attn_layers;
  cfg.attn_heads = std::min<std::size_t>(user.attn_heads, cfg.attn_hidden);
  return cfg;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"groundbox: frame-weighted weakly supervised video object grounding"};
  app.require_subcommand(1, 1);

  ConfigOverrides gen_opts;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset with planted ground truth");
  gen_opts.attach(*gen, false);
  gen->add_option("--out", gen_out, "output directory")->required();

  ConfigOverrides train_opts;
  std::string train_data, train_out, train_mode;
  auto* tr = app.add_subcommand("train", "train a grounding model");
  train_opts.attach(*tr, false);
  tr->add_option("--data", train_data, "dataset directory")->required();
  tr->add_option("--mode", train_mode, "loss mode")->check(CLI::IsMember({"dvsa", "loss-weight", "obj-interact", "full"}));
  tr->add_option("--out", train_out, "output directory")->required();

  std::string eval_ckpt, eval_data, eval_split = "test", eval_out, eval_config;
  std::optional<std::size_t> eval_workers;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint with box accuracy");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint directory or file")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--split", eval_split, "split to score")->check(CLI::IsMember({"val", "test"}));
  ev->add_option("--out", eval_out, "report.json path")->required();
  ev->add_option("--config", eval_config, "config the model shapes must match (defaults to the checkpoint's)");
  ev->add_option("--workers", eval_workers, "evaluation threads");

  ConfigOverrides grad_opts;
  double grad_step = 1e-5;
  double grad_tol = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss mode");
  grad_opts.attach(*gc, false);
  gc->add_option("--step", grad_step, "central difference step");
  gc->add_option("--tolerance", grad_tol, "maximum accepted relative error");

  std::string cmp_a, cmp_b;
  std::size_t cmp_top = 10;
  auto* cmp = app.add_subcommand("compare", "per-class accuracy differences between two reports");
  cmp->add_option("--a", cmp_a, "first report.json")->required();
  cmp->add_option("--b", cmp_b, "second report.json")->required();
  cmp->add_option("--top", cmp_top, "rows to print at each end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) {
      auto cfg = gen_opts.resolve();
      auto data = generate_synthetic(cfg, cfg.seed);
      save_dataset(gen_out, data);
      err << "wrote " << data.train.size() << "/" << data.val.size() << "/" << data.test.size()
          << " train/val/test segments to " << gen_out << '\n';
    } else if (*tr) {
      auto cfg = train_opts.resolve();
      if (!train_mode.empty()) cfg.mode = parse_mode(train_mode);
      auto data = load_dataset(train_data);
      std::filesystem::create_directories(train_out);
      auto result = train(cfg, data, [&](const TrainLogEntry& e) {
        err << "epoch " << e.epoch << "  loss " << e.train_loss << "  val_acc " << e.val_accuracy << '\n';
      });
      save_checkpoint(std::filesystem::path(train_out) / "checkpoint.bin", result.params, result.config);
      write_trainlog(std::filesystem::path(train_out) / "trainlog.csv", result.log);
      err << "best val accuracy " << result.best_val_accuracy << " at epoch " << result.best_epoch << '\n';
    } else if (*ev) {
      auto cfg = eval_config.empty() ? load_checkpoint_config(eval_ckpt) : load_config(eval_config);
      if (eval_workers) cfg.workers = *eval_workers;
      auto data = load_dataset(eval_data);
      if (cfg.vocab_size != data.vocab.size() || cfg.feature_dim != data.feature_dim) {
        throw ShapeError("model expects vocabulary " + std::to_string(cfg.vocab_size) + " and feature dim " +
                         std::to_string(cfg.feature_dim) + "; data has " + std::to_string(data.vocab.size()) +
                         " and " + std::to_string(data.feature_dim));
      }
      Rng rng(0);
      auto params = ModelParams::create(cfg, rng);
      load_checkpoint(eval_ckpt, params);
      const auto split = parse_split(eval_split);
      auto report = evaluate(params, data.split(split), data.vocab, data.feature_dim, cfg.workers,
                             std::string(mode_name(cfg.mode)), eval_split);
      save_report(eval_out, report);
      err << std::string(mode_title(cfg.mode)) << " " << eval_split << " macro accuracy " << report.macro_accuracy
          << " (upper bound " << report.upper_bound << ")\n";
    } else if (*gc) {
      auto cfg = gradcheck_settings(grad_opts.resolve());
      bool ok = true;
      GradCheckResult worst;
      std::string worst_mode;
      for (const auto& [mode, r] : gradcheck_all_modes(cfg, grad_step)) {
        out << std::left << std::setw(14) << mode_name(mode) << " max_rel_err " << std::scientific
            << std::setprecision(3) << r.max_relative_error << "  (" << r.checked << " coords, worst "
            << r.worst_param << "[" << r.worst_index << "])" << std::defaultfloat << '\n';
        ok = ok && r.max_relative_error < grad_tol;
        if (worst_mode.empty() || r.max_relative_error > worst.max_relative_error) {
          worst = r;
          worst_mode = std::string(mode_name(mode));
        }
      }
      err << "worst offender: " << worst_mode << " " << worst.worst_param << "[" << worst.worst_index
          << "] analytic " << worst.analytic << " numeric " << worst.numeric << " rel " << worst.max_relative_error
          << '\n';
      if (!ok) {
        err << "gradcheck failed: tolerance " << grad_tol << '\n';
        return 1;
      }
    } else if (*cmp) {
      auto a = load_report(cmp_a);
      auto b = load_report(cmp_b);
      auto deltas = per_class_delta(a, b);
      const std::size_t k = std::min(cmp_top, deltas.size());
      out << "top " << k << " increases (a - b):\n";
      for (std::size_t i = 0; i < k; ++i) out << "  " << std::left << std::setw(16) << deltas[i].first << std::showpos << deltas[i].second << std::noshowpos << '\n';
      out << "top " << k << " decreases (a - b):\n";
      for (std::size_t i = 0; i < k; ++i) {
        const auto& d = deltas[deltas.size() - 1 - i];
        out << "  " << std::left << std::setw(16) << d.first << std::showpos << d.second << std::noshowpos << '\n';
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace groundbox::cli
