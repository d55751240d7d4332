#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace potrl::cli {

// Each command validates its inputs before writing anything, then writes its
// artifacts plus exactly one run_manifest.json under the out directory and
// returns the artifact paths. config_path is recorded in the manifest.
std::vector<std::string> cmd_gen_data(const Config& cfg,
                                      const std::string& config_path);
std::vector<std::string> cmd_sft(const Config& cfg,
                                 const std::string& config_path);
std::vector<std::string> cmd_train(const Config& cfg,
                                   const std::string& config_path);
std::vector<std::string> cmd_eval(const Config& cfg,
                                  const std::string& config_path);
std::vector<std::string> cmd_judge_bench(const Config& cfg,
                                         const std::string& config_path);
std::vector<std::string> cmd_report(const Config& cfg,
                                    const std::vector<std::string>& inputs,
                                    const std::string& config_path);

// Full argv front end; returns the process exit code. Failures print one
// machine-parsable JSON line on stderr: {"error":"<type>","message":"..."}.
int run_cli(int argc, char** argv);

}  // namespace potrl::cli
