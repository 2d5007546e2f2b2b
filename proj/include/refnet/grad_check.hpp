#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "refnet/autodiff.hpp"

namespace refnet::gradcheck {

/// A differentiable function of a few tensors, checked against central differences.
/// Non-scalar outputs are reduced with fixed random weights before differentiation.
struct Case {
    std::string name;
    std::vector<Tensor> inputs;
    std::function<ad::Var(std::span<const ad::Var>)> fn;
};

struct CaseResult {
    std::string name;
    std::size_t entries_checked = 0;
    double max_error = 0.0;
    bool pass = false;
    std::string error;  // set when the case threw
};

struct Report {
    double step = 1e-5;
    double tolerance = 1e-5;
    double floor = 1e-3;
    std::vector<CaseResult> cases;

    bool pass() const;
    nlohmann::ordered_json to_json() const;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
double relative_error(double analytic, double numeric, double floor);

CaseResult check_case(const Case& c, double step, double tolerance, double floor, std::uint64_t seed);
Report run(const std::vector<Case>& cases, double step, double tolerance, double floor, std::uint64_t seed);

/// One case per registered op plus the composite losses (refiner, MS, downstream, full training loss).
std::vector<Case> default_cases(std::uint64_t seed);

}  // namespace refnet::gradcheck
