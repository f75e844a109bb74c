#pragma once

// Central-difference gradient checks in double precision.
//
// Presets:
//   ops   every differentiable tensor and layer op, plus the loss
//   cafm  local branch, attention map, full CAFM
//   msfn  gating, full MSFN, plain FFN
//   net   one CAMixing block and the desk-preset network
//
// Error per entry: |a - n| / max(|a|, |n|, 1e-2). Large parameter tensors
// are sampled (max_entries per tensor per seed).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace hcanet {

struct GradcheckOptions {
    std::size_t seeds = 5;
    double step = 1e-3;
    double tolerance = 1e-3;
    std::size_t max_entries = 6;
};

struct GradcheckCase {
    std::string name;
    std::uint64_t seed = 0;
    std::size_t checked = 0;
    double max_rel_err = 0.0;
    std::string worst;
};

struct GradcheckReport {
    std::string preset;
    GradcheckOptions options;
    std::vector<GradcheckCase> cases;
    double max_rel_err = 0.0;
    bool passed = false;
};

void to_json(nlohmann::json& j, const GradcheckReport& r);

const std::vector<std::string>& gradcheck_presets();

/// Throws ConfigError for an unknown preset.
GradcheckReport run_gradcheck(const std::string& preset, const GradcheckOptions& options = {});

double gradcheck_rel_err(double analytic, double numeric);

}  // namespace hcanet
