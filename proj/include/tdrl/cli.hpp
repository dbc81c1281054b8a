#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace tdrl {

// Exit codes shared by all subcommands:
//   0 success, 2 missing file / usage, 3 invalid config or output collision,
//   4 numeric abort, 5 checkpoint/environment shape mismatch.
inline constexpr int kExitOk = 0;
inline constexpr int kExitMissing = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitShape = 5;

struct EvalFlags {
  bool performance = false;
  bool ttf = false;
  bool target_rate = false;

  bool any() const { return performance || ttf || target_rate; }
};

int cmd_train(const std::string& config_path, bool force, std::ostream& out,
              std::ostream& err);
int cmd_eval(const std::string& checkpoint_path, const std::string& config_path,
             EvalFlags flags, bool force, std::ostream& out, std::ostream& err);
int cmd_defend(const std::string& checkpoint_path, const std::string& config_path,
               bool force, std::ostream& out, std::ostream& err);
int cmd_report(const std::string& run_dir, bool force, std::ostream& out,
               std::ostream& err);

// Full argument-vector entry point (argv[0] excluded).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tdrl
