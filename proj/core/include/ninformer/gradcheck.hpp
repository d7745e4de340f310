#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ninformer/autograd.hpp"

namespace ninformer {

// Elementwise error between an analytic gradient a and a finite-difference
// estimate f: |a - f| / max(|a|, |f|, floor). The floor keeps gradients that
// are zero up to rounding from dominating the maximum.
inline constexpr double kRelativeErrorFloor = 1e-3;
double relative_error(double analytic, double numeric);

struct GradCheckOptions {
  std::size_t seeds = 10;
  double step = 1e-5;
  double tolerance = 1e-6;
  std::uint64_t base_seed = 2024;
};

struct GradCheckResult {
  std::string component;
  double max_relative_error = 0;
  std::size_t values_checked = 0;
  std::size_t seeds = 0;
  bool passed = false;
};

// Compares analytic gradients of `loss_fn` with respect to every element of
// every leaf against central differences with step `h`. `loss_fn` must build
// a scalar from the leaves' current values on each call.
double max_gradient_error(const std::function<Variable<double>()>& loss_fn, const std::vector<Variable<double>>& leaves,
                          double h, std::size_t* values_checked = nullptr);

// Components: every primitive op, the block families at (1, 4, 8) and the
// four classifiers at an 8x8x1 image, patch 4, d 8, one block, 3 classes.
std::vector<std::string> gradcheck_components();

GradCheckResult run_gradcheck(const std::string& component, const GradCheckOptions& opts = {});
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts = {});

}  // namespace ninformer
