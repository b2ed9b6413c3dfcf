#pragma once

#include <ostream>
#include <string>

#include "lorablend/config.hpp"

namespace lorablend {

// CLI command bodies. Each writes <out_dir>/report.json (also on failure)
// and returns the process exit code: 0 success, 1 invariant violation,
// 2 configuration or file error.
int cmd_prior(const PipelineConfig& cfg);
int cmd_gen(const PipelineConfig& cfg);
int cmd_edit(const PipelineConfig& cfg, const std::string& latent_path);

// Runs every oracle suite and prints one table row per suite to `out`.
// `mutate` names a suite whose output is deliberately corrupted first, to
// prove the comparison catches it; empty means no mutation. Returns 0 iff
// all suites pass.
int run_selftest(const std::string& mutate, std::ostream& out);

}  // namespace lorablend
