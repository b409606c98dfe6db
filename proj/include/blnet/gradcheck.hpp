#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Finite-difference verification of every differentiable op and loss.
// Each check builds a scalar from the op's output through a fixed random
// projection, compares backward() gradients against central differences, and
// reports the worst relative error (L2-norm ratio) across its inputs.
namespace blnet::gradcheck {

struct Options {
    uint32_t seed = 1;
    bool float32 = true;        // false = run the suite in double
    bool inject_fault = false;  // test hook: corrupt one gradient on purpose
};

struct CheckResult {
    std::string name;
    double max_rel_error = 0.0;
};

// 1e-3 in 32-bit, 1e-5 in 64-bit.
double tolerance_for(bool float32);

// Runs every registered check once; result order is the registration order.
std::vector<CheckResult> run_suite(const Options& opt);

}  // namespace blnet::gradcheck
