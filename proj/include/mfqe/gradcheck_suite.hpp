#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mfqe {

struct GradSuiteOptions {
  int instances = 20;
  std::uint64_t seed = 1;
  double op_step = 1e-3;         // finite-difference step for single ops
  double graph_step = 1e-6;      // step for the composed MC+QE graph
  int graph_entries = 6;         // sampled entries per parameter tensor of the composed graph
};

struct GradSuiteRow {
  std::string op;
  int bits = 64;  // 32: float engine gradients against 64-bit differences; 64: pure 64-bit
  int instances = 0;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  long checked = 0;
  long skipped_kinks = 0;
  bool passed() const { return checked > 0 && max_rel_error < threshold; }
};

/// Every differentiable op plus the composed MC+QE training loss, each on
/// `instances` random small problems, in both precisions.
std::vector<GradSuiteRow> run_gradcheck_suite(const GradSuiteOptions& opts = {});

}  // namespace mfqe
