#include "cst/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>

#include "cst/dataset.hpp"
#include "cst/dcr.hpp"
#include "cst/diagnostics.hpp"
#include "cst/inference.hpp"
#include "cst/io.hpp"
#include "cst/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cst {
namespace {

int wrap(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

std::string hash_hex(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::vector<LabeledExample> load_dataset_or_die(const std::string& dir) {
  std::vector<std::string> errors;
  auto data = load_dataset(dir, &errors);
  for (const auto& e : errors) std::cerr << "warning: " << e << "\n";
  if (data.empty())
    throw std::runtime_error("dataset at " + dir + " has no usable images");
  return data;
}

void require_class_match(const ArchSpec& arch, const std::string& data_dir) {
  const int have = dataset_class_count(data_dir);
  if (have != arch.num_classes)
    throw ConfigError("checkpoint expects " + std::to_string(arch.num_classes) +
                      " classes but dataset has " + std::to_string(have));
}

}  // namespace

int cmd_gen_data(const GenDataArgs& args) {
  return wrap([&]() {
    if (!fs::exists(args.spec_path))
      throw ConfigError("cannot open spec: " + args.spec_path);
    std::uint64_t file_seed = 0;
    DatasetSpec spec;
    try {
      spec = load_dataset_spec(args.spec_path, &file_seed);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    const std::uint64_t seed =
        args.seed ? *args.seed : (file_seed != 0 ? file_seed : 1);
    if (fs::exists(args.out_dir) && !fs::is_empty(args.out_dir) && !args.force)
      throw ConfigError("output dir " + args.out_dir +
                        " is not empty (use --force to overwrite)");
    auto data = generate_dataset(spec, seed);
    save_dataset(args.out_dir, data, spec, seed);
    const std::uint64_t h = dataset_hash(data);

    json manifest{{"version", version_string()},
                  {"command", "gen-data"},
                  {"seed", seed},
                  {"count", static_cast<int>(data.size())},
                  {"classes", spec.num_classes},
                  {"hash", hash_hex(h)}};
    std::ofstream mf(fs::path(args.out_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";

    std::cout << "wrote " << data.size() << " images (" << spec.num_classes
              << " classes) hash=" << hash_hex(h) << " -> " << args.out_dir
              << "\n";
    return 0;
  });
}

namespace {

TrainConfig apply_train_flags(const TrainArgs& args) {
  TrainConfig cfg = load_train_config(args.config_path);
  if (args.no_cycle) cfg.cycle_on = false;
  if (args.no_dcr) cfg.dcr_on = false;
  if (args.supervised_only) cfg.supervised_only = true;
  if (!args.dcr_style.empty())
    cfg.consistency.style = consistency_style_from_string(args.dcr_style);
  if (!args.dcr_pairing.empty())
    cfg.dcr_pairing = dcr_pairing_from_string(args.dcr_pairing);
  if (args.seed) cfg.seed = *args.seed;
  if (args.total_iters) cfg.total_iters = *args.total_iters;
  if (args.burn_in_iters) cfg.burn_in_iters = *args.burn_in_iters;
  validate_train_config(cfg);
  return cfg;
}

}  // namespace

int cmd_train(const TrainArgs& args) {
  return wrap([&]() {
    const TrainConfig cfg = apply_train_flags(args);
    RunResult res = run_training(cfg, args.data_dir, args.out_dir, args.force,
                                 args.burn_in_only);
    std::cout << "finished at iteration " << res.state.iteration << "\n";
    if (!res.checkpoint_path.empty())
      std::cout << "checkpoint: " << res.checkpoint_path << "\n";
    std::cout << "metrics: " << (fs::path(args.out_dir) / "metrics.jsonl").string()
              << "\n";
    return 0;
  });
}

int cmd_eval(const EvalArgs& args) {
  return wrap([&]() {
    if (args.teacher != "t1" && args.teacher != "t2")
      throw ConfigError("teacher must be t1 or t2, got: " + args.teacher);
    LoadedCheckpoint lc = load_checkpoint(args.ckpt);
    require_class_match(lc.arch, args.data_dir);
    auto data = load_dataset_or_die(args.data_dir);
    const DetectorModel& model =
        args.teacher == "t1" ? lc.state.t1 : lc.state.t2;
    EvalReport rep = evaluate_model(model, data);
    const std::string out = args.out_path.empty()
                                ? args.ckpt + ".eval." + args.teacher + ".json"
                                : args.out_path;
    std::ofstream of(out);
    if (!of) throw std::runtime_error("cannot write " + out);
    of << rep.to_json() << "\n";
    std::cout << args.teacher << " " << rep.summary_line() << "\n";
    std::cout << "report: " << out << "\n";
    return 0;
  });
}

int cmd_ensemble_eval(const EnsembleEvalArgs& args) {
  return wrap([&]() {
    LoadedCheckpoint lc = load_checkpoint(args.ckpt);
    require_class_match(lc.arch, args.data_dir);
    auto data = load_dataset_or_die(args.data_dir);
    EvalReport r1 = evaluate_model(lc.state.t1, data);
    EvalReport r2 = evaluate_model(lc.state.t2, data);
    EvalReport re =
        evaluate_ensemble({&lc.state.t1, &lc.state.t2}, data);
    json combined{{"t1", json::parse(r1.to_json())},
                  {"t2", json::parse(r2.to_json())},
                  {"ensemble", json::parse(re.to_json())}};
    const std::string out = args.out_path.empty()
                                ? args.ckpt + ".eval.ensemble.json"
                                : args.out_path;
    std::ofstream of(out);
    if (!of) throw std::runtime_error("cannot write " + out);
    of << combined.dump(2) << "\n";
    std::cout << "t1       " << r1.summary_line() << "\n";
    std::cout << "t2       " << r2.summary_line() << "\n";
    std::cout << "ensemble " << re.summary_line() << "\n";
    std::cout << "report: " << out << "\n";
    return 0;
  });
}

int cmd_diagnose(const DiagnoseArgs& args) {
  return wrap([&]() {
    DiagnoseOptions opt;
    opt.run_dir = args.run_dir;
    opt.baseline_dir = args.baseline_dir;
    opt.data_dir = args.data_dir;
    opt.out_dir = args.out_dir;
    opt.feature_images = args.feature_images;
    opt.bin_count = args.bins;
    opt.seed = args.seed;
    DiagnoseResult res = run_diagnose(opt);
    std::printf("consistency/accuracy point-biserial: %.6f over %d boxes\n",
                res.bins.correlation, res.bins.total);
    for (const auto& f : res.written) std::cout << "wrote " << f << "\n";
    return 0;
  });
}

int cli_main(int argc, char** argv) {
  CLI::App app{"cycle self-training detector with consistency reweighting"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "render a synthetic shape dataset");
  gen->add_option("--spec", gd.spec_path, "generation spec JSON")->required();
  gen->add_option("--out", gd.out_dir, "output dataset dir")->required();
  std::uint64_t gd_seed = 0;
  auto* gd_seed_opt = gen->add_option("--seed", gd_seed, "override spec seed");
  gen->add_flag("--force", gd.force, "overwrite a non-empty output dir");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "burn-in plus mutual training");
  auto* burnin = app.add_subcommand("burnin", "burn-in stage only");
  for (auto* sc : {train, burnin}) {
    TrainArgs& a = tr;
    sc->add_option("--config", a.config_path, "train config JSON")->required();
    sc->add_option("--data", a.data_dir, "dataset dir")->required();
    sc->add_option("--out", a.out_dir, "run dir")->required();
    sc->add_flag("--force", a.force, "take over the run dir and start fresh");
  }
  std::uint64_t tr_seed = 0;
  int tr_total = 0, tr_burn = 0;
  train->add_flag("--no-cycle", tr.no_cycle,
                  "each teacher supervises its own student");
  train->add_flag("--no-dcr", tr.no_dcr, "disable consistency reweighting");
  train->add_flag("--supervised-only", tr.supervised_only,
                  "labeled baseline, no teachers");
  train->add_option("--dcr-style", tr.dcr_style, "consistency flavor")
      ->check(CLI::IsMember({"l1", "js", "js-literal"}));
  train->add_option("--dcr-pairing", tr.dcr_pairing, "who scores whose labels")
      ->check(CLI::IsMember({"tt", "own-ts", "cross-ts"}));
  auto* tr_seed_opt = train->add_option("--seed", tr_seed, "override seed");
  auto* tr_total_opt =
      train->add_option("--total-iters", tr_total, "override total iterations");
  auto* tr_burn_opt = train->add_option("--burn-in-iters", tr_burn,
                                        "override burn-in iterations");
  std::uint64_t bi_seed = 0;
  int bi_burn = 0;
  auto* bi_seed_opt = burnin->add_option("--seed", bi_seed, "override seed");
  auto* bi_burn_opt = burnin->add_option("--burn-in-iters", bi_burn,
                                         "override burn-in iterations");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "score one teacher on a dataset");
  eval->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
  eval->add_option("--data", ev.data_dir, "dataset dir")->required();
  eval->add_option("--teacher", ev.teacher, "t1 or t2")
      ->check(CLI::IsMember({"t1", "t2"}));
  eval->add_option("--out", ev.out_path, "report path");

  EnsembleEvalArgs ee;
  auto* ens = app.add_subcommand("ensemble-eval",
                                 "score t1, t2, and their box fusion");
  ens->add_option("--ckpt", ee.ckpt, "checkpoint file")->required();
  ens->add_option("--data", ee.data_dir, "dataset dir")->required();
  ens->add_option("--out", ee.out_path, "report path");

  DiagnoseArgs dg;
  auto* diag = app.add_subcommand("diagnose",
                                  "replay checkpoints into traces and plots");
  diag->add_option("--run", dg.run_dir, "training run dir")->required();
  diag->add_option("--baseline", dg.baseline_dir, "matched single-pair run");
  diag->add_option("--data", dg.data_dir, "dataset dir override");
  diag->add_option("--out", dg.out_dir, "output dir");
  diag->add_option("--feature-images", dg.feature_images,
                   "images sampled for region stats");
  diag->add_option("--bins", dg.bins, "consistency histogram bins");
  diag->add_option("--seed", dg.seed, "sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  if (gen->parsed()) {
    if (gd_seed_opt->count()) gd.seed = gd_seed;
    return cmd_gen_data(gd);
  }
  if (train->parsed() || burnin->parsed()) {
    tr.burn_in_only = burnin->parsed();
    if (train->parsed()) {
      if (tr_seed_opt->count()) tr.seed = tr_seed;
      if (tr_total_opt->count()) tr.total_iters = tr_total;
      if (tr_burn_opt->count()) tr.burn_in_iters = tr_burn;
    } else {
      if (bi_seed_opt->count()) tr.seed = bi_seed;
      if (bi_burn_opt->count()) tr.burn_in_iters = bi_burn;
    }
    return cmd_train(tr);
  }
  if (eval->parsed()) return cmd_eval(ev);
  if (ens->parsed()) return cmd_ensemble_eval(ee);
  if (diag->parsed()) return cmd_diagnose(dg);
  return 2;
}

}  // namespace cst
