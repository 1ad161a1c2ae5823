#pragma once

#include <string>
#include <vector>

#include "sfda/diffcore.hpp"

namespace sfda {

struct NamedGradCheck {
  std::string loss;
  GradCheckReport report;
};

/// Finite-difference check of every training objective on a seeded toy
/// model (feature width 8, 5 classes, batch 4, train-mode BN), differentiating
/// with respect to all model parameters.
std::vector<NamedGradCheck> run_gradcheck_suite(std::uint64_t seed, Scalar step = 1e-5, Scalar tol = 1e-5);

}  // namespace sfda
