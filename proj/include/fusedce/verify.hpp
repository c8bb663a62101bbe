#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusedce/dense_matrix.hpp"
#include "fusedce/parallel_sim.hpp"
#include "fusedce/reduction.hpp"

namespace fusedce::verify {

// Outcome of one randomized equivalence suite: the worst error metric
// observed across its cases against the tolerance it was held to.
struct SuiteResult {
    std::string name;
    std::size_t cases = 0;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::string detail;
};

struct VerifyConfig {
    PrecisionMode precision;
    std::uint64_t seed = 42;
    std::size_t ranks = 1;
    ParallelMode mode = ParallelMode::TensorParallel;
    std::size_t workers = 1;
    std::size_t loss_instances = 200;
    std::size_t grad_instances = 50;
};

// Individual suites. Each returns its max error and pass/fail against the
// precision-matched tolerance.
SuiteResult loss_equivalence_suite(const VerifyConfig& cfg);
SuiteResult gradient_recompute_suite(const VerifyConfig& cfg);
SuiteResult finite_difference_suite(const VerifyConfig& cfg);
SuiteResult gradient_paths_suite(const VerifyConfig& cfg);
SuiteResult window_sweep_suite(const VerifyConfig& cfg);
SuiteResult shard_invariance_suite(const VerifyConfig& cfg);
SuiteResult stability_suite(const VerifyConfig& cfg);

// All suites in a fixed order.
std::vector<SuiteResult> run_all(const VerifyConfig& cfg);

}  // namespace fusedce::verify
