#pragma once

// Invariant suites shared by the `check` command and the test binaries.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cmunet/nn.hpp"
#include "cmunet/ssm.hpp"

namespace cmunet {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  double measured = 0;
  double tolerance = 0;
  std::string detail;
};

// A scalar loss built from one operation (or the whole model) plus the
// tensors whose gradients are to be checked.
struct GradCase {
  std::string name;
  std::function<Tensor()> loss;
  std::vector<NamedTensor> wrt;
  int probes = 20;
};

std::vector<GradCase> grad_cases(std::uint64_t seed, bool include_model = true);

// Random scan problem in the given dtype; sizes bounded by the arguments.
struct ScanProblem {
  ssm::ScanDims dims;
  Tensor x, delta, a, b, c, d;
};
ScanProblem random_scan_problem(std::mt19937_64& rng, DType dtype, std::int64_t max_batch,
                                std::int64_t max_length, std::int64_t max_inner,
                                std::int64_t max_state);
// max |p - s| / max |s| over the outputs of the two scan implementations.
double scan_parity_error(const ScanProblem& p);

std::vector<CheckOutcome> scan_checks(int instances, std::uint64_t seed);
std::vector<CheckOutcome> grad_checks(std::uint64_t seed);
std::vector<CheckOutcome> metric_checks(std::uint64_t seed);

// suite: grads, scan, metrics or all. Prints one line per check to `out`.
std::vector<CheckOutcome> run_check_suite(const std::string& suite, std::uint64_t seed,
                                          std::ostream& out);

}  // namespace cmunet
