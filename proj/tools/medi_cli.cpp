#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "medi/bounds.hpp"
#include "medi/experiment.hpp"

namespace fs = std::filesystem;
using namespace medi;

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, numeric_error = 3, infeasible = 4 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

experiment::ExperimentConfig load(const Globals& g) {
  experiment::ExperimentConfig cfg = g.config.empty() ? experiment::ExperimentConfig{} : experiment::load_config(g.config);
  for (const auto& o : g.overrides) experiment::apply_override(cfg, o);
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.out_dir = g.out;
  cfg.validate();
  return cfg;
}

fs::path out_root(const experiment::ExperimentConfig& cfg) {
  const fs::path dir = experiment::resolve_out_dir(cfg.out_dir);
  fs::create_directories(dir);
  return dir;
}

std::string stem(const experiment::ExperimentConfig& cfg, const std::string& what, std::uint64_t seed) {
  return what + "-" + cfg.hash().substr(0, 10) + "-seed" + std::to_string(seed);
}

int synth_data(const Globals& g) {
  const auto cfg = load(g);
  if (cfg.dataset.kind == experiment::DatasetKind::file) {
    throw ConfigError("synth-data needs dataset.kind = multirule or alphabet");
  }
  const auto dir = out_root(cfg);
  for (auto seed : cfg.seeds) {
    const auto cell = experiment::prepare_seed(cfg, seed);
    const auto path = dir / (cfg.dataset_label() + "-" + cfg.hash().substr(0, 10) + "-seed" + std::to_string(seed) + ".tsv");
    data::save_columnar(path.string(), cell.dataset);
    std::printf("%s: %zu examples, %zu features\n", path.c_str(), cell.dataset.size(), cell.dataset.dim());
  }
  return ok;
}

int train_cata(const Globals& g) {
  const auto cfg = load(g);
  const auto dir = out_root(cfg);
  for (auto seed : cfg.seeds) {
    const auto cell = experiment::prepare_seed(cfg, seed);
    cata::SamplerConfig cc = cfg.cata;
    cc.seed = substream_seed(seed, "cata");
    const auto trained = cata::train_cata(cell.split, cc);
    const auto partition = cata::assign_views(trained.model, cell.split.known_pool, cc.execution);
    const auto base = dir / stem(cfg, "cata", seed);
    cata::save_partition(base.string() + ".views", partition);

    // Extractor and every head in one checkpoint, heads prefixed by view.
    nn::Layout layout;
    std::vector<double> values;
    auto add = [&](const std::string& prefix, const nn::ParameterVector& p) {
      for (const auto& s : p.layout.segments()) {
        layout.append(prefix + s.name, s.size);
        values.insert(values.end(), p.values.begin() + static_cast<std::ptrdiff_t>(s.offset),
                      p.values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size));
      }
    };
    add("", trained.model.extractor_params);
    for (std::size_t v = 0; v < trained.model.num_views(); ++v) {
      add("view" + std::to_string(v) + ".", trained.model.head_params[v]);
    }
    nn::save_checkpoint(base.string() + ".ckpt", nn::ParameterVector(layout, values),
                        {{"config_hash", cfg.hash()}, {"seed", std::to_string(seed)}, {"kind", "cata"}});
    std::printf("seed %llu: loss %.4f -> %.4f, orthogonality %.4f -> %.4f, view purity %.3f, sizes",
                static_cast<unsigned long long>(seed), trained.loss_trace.front(), trained.loss_trace.back(),
                trained.initial_orthogonality, trained.final_orthogonality,
                cata::view_purity(partition, cell.split.known_pool));
    for (auto s : partition.sizes) std::printf(" %zu", s);
    std::printf("\n  %s.views\n", base.c_str());
  }
  return ok;
}

cata::TaskSampler make_sampler(const experiment::ExperimentConfig& cfg, const data::DatasetSplit& split,
                               std::uint64_t seed) {
  if (cfg.sampler == experiment::SamplerKind::uniform) return cata::TaskSampler::uniform(split.known_pool);
  cata::SamplerConfig cc = cfg.cata;
  cc.seed = substream_seed(seed, "cata");
  const auto trained = cata::train_cata(split, cc);
  return cata::TaskSampler::by_views(split.known_pool, cata::assign_views(trained.model, split.known_pool, cc.execution),
                                     cfg.cata_fallback);
}

int train_meta(const Globals& g, experiment::Method method) {
  auto cfg = load(g);
  cfg.method = method;
  cfg.validate();
  const auto dir = out_root(cfg);
  for (auto seed : cfg.seeds) {
    const auto cell = experiment::prepare_seed(cfg, seed);
    const auto sampler = make_sampler(cfg, cell.split, seed);
    nn::ModelConfig model = cfg.model;
    model.input_dim = cell.dataset.dim();
    std::vector<double> trace;
    std::size_t fallback = 0;
    nn::ParameterVector params;
    if (method == experiment::Method::medi_pro) {
      auto pc = cfg.proto;
      pc.model = model;
      pc.model.head_width = 0;
      pc.seed = substream_seed(seed, "train");
      auto t = proto::train_medi_pro(sampler, pc);
      trace = t.loss_trace;
      fallback = t.fallback_episodes;
      params = t.params;
    } else {
      auto mc = cfg.maml;
      mc.model = model;
      mc.model.head_width = cfg.maml.model.head_width;
      mc.seed = substream_seed(seed, "train");
      auto t = maml::train_medi_maml(sampler, mc, cell.split.novel_observations);
      trace = t.loss_trace;
      fallback = t.fallback_episodes;
      params = t.state.params;
    }
    const auto path = dir / (stem(cfg, experiment::to_string(method), seed) + ".ckpt");
    nn::save_checkpoint(path.string(), params,
                        {{"config_hash", cfg.hash()}, {"seed", std::to_string(seed)},
                         {"method", experiment::to_string(method)}});
    std::printf("seed %llu: loss %.4f -> %.4f over %zu steps, %zu fallback episodes\n  %s\n",
                static_cast<unsigned long long>(seed), trace.empty() ? 0.0 : trace.front(),
                trace.empty() ? 0.0 : trace.back(), trace.size(), fallback, path.c_str());
  }
  return ok;
}

int evaluate(const Globals& g, bool fresh) {
  const auto cfg = load(g);
  experiment::RunOptions opts;
  opts.resume = !fresh;
  const auto rec = experiment::run_experiment(cfg, opts);
  std::printf("%s %s/%s on %s, %zu-way %zu-obsv: ACC %s over %zu trials (run %s, %.1fs)\n", rec.name.c_str(),
              rec.method.c_str(), rec.sampler.c_str(), rec.dataset.c_str(), rec.way, rec.obsv,
              experiment::format_mean_std(rec.mean, rec.std).c_str(), rec.trials.size(), rec.run_id.c_str(),
              rec.wall_time);
  return ok;
}

int report(const Globals& g, std::string results, const std::string& style) {
  const std::string dir = experiment::resolve_out_dir(g.out);
  if (results.empty()) results = (fs::path(dir) / "results.jsonl").string();
  const auto records = experiment::load_records(results);
  for (const auto& f : experiment::emit_report(records, dir, experiment::parse_report_style(style))) {
    std::printf("%s\n", f.c_str());
  }
  return ok;
}

template <class F>
int guarded(F&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return config_error;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return config_error;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return config_error;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return numeric_error;
  } catch (const InfeasibleError& e) {
    std::fprintf(stderr, "infeasible: %s\n", e.what());
    return infeasible;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return failure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-discovery of novel classes: data, training, evaluation and reports"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "INI experiment file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "run this seed only");
  app.add_option("--out", g.out, "output root (default $MEDI_OUT, else medi-out)");
  app.add_option("--set", g.overrides, "section.key=value override, repeatable");

  auto* synth = app.add_subcommand("synth-data", "generate the configured synthetic dataset");
  auto* cata_cmd = app.add_subcommand("train-cata", "train the multi-view sampler and write the view partition");
  auto* maml_cmd = app.add_subcommand("train-maml", "meta-train the pair-loss model");
  auto* proto_cmd = app.add_subcommand("train-proto", "meta-train the prototype model");
  auto* eval_cmd = app.add_subcommand("evaluate", "run the discovery protocol and append results");
  bool fresh = false;
  eval_cmd->add_flag("--fresh", fresh, "ignore results already recorded for this run");

  auto* bound_cmd = app.add_subcommand("bound", "evaluate the uniform-stability generalization bound");
  std::size_t n = 0;
  double beta = 0.0, M = 1.0, delta = 0.05;
  std::optional<double> clamp;
  bound_cmd->add_option("--n", n, "number of meta-training tasks")->required();
  bound_cmd->add_option("--beta", beta, "uniform stability")->required();
  bound_cmd->add_option("--M", M, "loss bound");
  bound_cmd->add_option("--delta", delta, "failure probability");
  bound_cmd->add_option("--clamp", clamp, "derive M = -ln(clamp) for the clamped pair loss");

  auto* report_cmd = app.add_subcommand("report", "bar charts and a mean±std table from results");
  std::string results, style = "both";
  report_cmd->add_option("--results", results, "JSONL file (default <out>/results.jsonl)");
  report_cmd->add_option("--style", style, "bar|table|both");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return config_error;
  }
  if (*seed_opt) g.seed = seed;

  return guarded([&]() -> int {
    if (*synth) return synth_data(g);
    if (*cata_cmd) return train_cata(g);
    if (*maml_cmd) return train_meta(g, experiment::Method::medi_maml);
    if (*proto_cmd) return train_meta(g, experiment::Method::medi_pro);
    if (*eval_cmd) return evaluate(g, fresh);
    if (*report_cmd) return report(g, results, style);
    if (clamp) M = bounds::clamped_bce_bound(*clamp);
    const double eps = bounds::stability_epsilon(n, beta, M, delta);
    std::printf("n=%zu beta=%g M=%g delta=%g epsilon=%.6f\n", n, beta, M, delta, eps);
    return ok;
  });
}
