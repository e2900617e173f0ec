#pragma once

#include <string>

#include "latshield/config.hpp"

namespace latshield {

/// Commands throw (IoError / ConfigError / ValueError) on failure; the CLI
/// maps exceptions to nonzero exit codes. Each command writes its declared
/// artifacts under output_dir and persists resolved_config.json.

void cmd_dataset(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg, const std::string& stage); // ae | id | diff
void cmd_attack(const RunConfig& cfg);
void cmd_swap(const RunConfig& cfg);
void cmd_defend(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);
void cmd_transfer(const RunConfig& cfg);

/// Convenience for tests: dataset + all three train stages.
void run_training(const RunConfig& cfg);

NoiseSchedule schedule_from_config(const RunConfig& cfg);

} // namespace latshield
