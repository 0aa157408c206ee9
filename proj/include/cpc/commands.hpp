#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cpc/config.hpp"
#include "cpc/numerics.hpp"

namespace cpc::cli {

enum ExitCode : int { ok = 0, config_error = 1, io_error = 2, numeric_error = 3 };

struct GradcheckSeed {
    std::uint64_t seed = 0;
    bool skipped = false;       // a patch probability sat too close to a threshold
    double min_margin = 0.0;    // smallest |Z - threshold| over all entries
    std::size_t pce_pairs = 0;  // ordered pairs feeding the contrastive term
    GradCheckReport report;
};

struct GradcheckOutcome {
    std::vector<GradcheckSeed> seeds;
    double max_rel_error = 0.0;
    bool passed = false;
};

/// Randomized toy-problem gradient check of the full training loss.
GradcheckOutcome run_gradcheck(const config::GradcheckConfig& cfg, unsigned threads);

// Each command validates, runs and reports to `out`. Errors are thrown as
// the cpc error types and mapped to exit codes by run().
int cmd_cluster(const config::RunConfig& cfg, std::ostream& out);
int cmd_gendata(const config::RunConfig& cfg, std::ostream& out);
int cmd_train(const config::RunConfig& cfg, std::ostream& out);
int cmd_infer(const config::RunConfig& cfg, std::ostream& out);
int cmd_eval(const config::RunConfig& cfg, std::ostream& out);
int cmd_gradcheck(const config::RunConfig& cfg, std::ostream& out);

/// Full command line: `cpc <subcommand> [--config FILE] [--threads N]
/// [--section.key=value ...]`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cpc::cli
