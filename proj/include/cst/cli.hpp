#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace cst {

// Every command returns a process exit code: 0 success, 1 runtime failure,
// 2 usage or configuration error.

struct GenDataArgs {
  std::string spec_path, out_dir;
  std::optional<std::uint64_t> seed;  // overrides the spec file's seed
  bool force = false;
};
int cmd_gen_data(const GenDataArgs& args);

struct TrainArgs {
  std::string config_path, data_dir, out_dir;
  bool force = false;
  bool burn_in_only = false;
  bool no_cycle = false;
  bool no_dcr = false;
  bool supervised_only = false;
  std::string dcr_style;    // empty keeps the config value
  std::string dcr_pairing;  // empty keeps the config value
  std::optional<std::uint64_t> seed;
  std::optional<int> total_iters, burn_in_iters;
};
int cmd_train(const TrainArgs& args);

struct EvalArgs {
  std::string ckpt, data_dir;
  std::string teacher = "t1";  // t1 | t2
  std::string out_path;        // default: <ckpt>.eval.<teacher>.json
};
int cmd_eval(const EvalArgs& args);

struct EnsembleEvalArgs {
  std::string ckpt, data_dir;
  std::string out_path;  // default: <ckpt>.eval.ensemble.json
};
int cmd_ensemble_eval(const EnsembleEvalArgs& args);

struct DiagnoseArgs {
  std::string run_dir, baseline_dir, data_dir, out_dir;
  int feature_images = 8;
  int bins = 5;
  std::uint64_t seed = 7;
};
int cmd_diagnose(const DiagnoseArgs& args);

int cli_main(int argc, char** argv);

}  // namespace cst
