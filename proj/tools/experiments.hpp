#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "config.hpp"

namespace kr {

struct RunOptions {
    std::string out_dir;       // overrides run.out when non-empty
    std::uint64_t seed = 0;    // overrides run.seed when seed_given
    bool seed_given = false;
};

// Subcommand names in dispatch order, one per reproduced experiment.
const std::vector<std::string>& experiment_names();
bool is_experiment(const std::string& name);
std::string experiment_blurb(const std::string& name);

// Runs one experiment end to end. The config is read and validated first
// (unknown keys rejected via ConfigError before anything touches the
// filesystem), then the computation runs, and finally the data files, the
// gnuplot script and summary.json are written under the output directory in
// one pass, summary.json last. Check lines and wall-clock timings go to
// stdout; timings are deliberately absent from summary.json so reruns are
// byte-identical. Returns 0 when every built-in check passes, 1 otherwise.
int run_experiment(const std::string& name, Config& cfg, const RunOptions& opt);

}  // namespace kr
