#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cvs {

struct GradCheckConfig {
  std::size_t instances = 100;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  double alpha = 10.0;
  double beta = 1.0;
  double margin = 0.1;
  double temperature = 0.05;
  std::size_t max_embed_dim = 8;
  std::size_t max_batch = 6;
};

struct TermCheck {
  std::string term;  // "l_c", "l_m", "l_d" or "total"
  double max_relative_error = 0.0;
  std::size_t instances = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<TermCheck> terms;
  std::size_t rejected_instances = 0;  // draws too close to a kink, redrawn
  bool passed() const;
};

/// Central-difference check of every loss term and the total objective on
/// seeded random small instances. With alpha = beta = 0 only the
/// classification term is exercised.
GradCheckReport grad_check_suite(const GradCheckConfig& config = {});

}  // namespace cvs
