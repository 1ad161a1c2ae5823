#pragma once

#include <cmath>
#include <cstdint>

#include "sfda/types.hpp"

namespace sfda {

/// Weight of the EMA-consistency term: 0 for the first `switch_fraction` of
/// iterations, 1 afterwards.
inline Scalar lambda_ema(std::int64_t iter, std::int64_t total_iters, Scalar switch_fraction) {
  return static_cast<Scalar>(iter) < switch_fraction * static_cast<Scalar>(total_iters) ? 0.0 : 1.0;
}

/// eta0 * (1 + 10 p)^(-power), p = global progress in [0, 1].
inline Scalar lr_at(Scalar eta0, Scalar progress, Scalar power = 1.0) {
  return eta0 / std::pow(1.0 + 10.0 * progress, power);
}

struct ThresholdSchedule {
  Scalar tau_high = 0.5;
  Scalar tau_low = 0.5;
  Scalar zeta = 0.0;
};

/// zeta = (step + 1) / total_steps; tau_high = 0.5 + 0.2 zeta and
/// tau_low = 1 - tau_high, which is exact, so tau_high + tau_low == 1.
inline ThresholdSchedule thresholds_for_zeta(Scalar zeta) {
  ThresholdSchedule s;
  s.zeta = zeta;
  s.tau_high = 0.5 + 0.2 * zeta;
  s.tau_low = 1.0 - s.tau_high;
  return s;
}

inline ThresholdSchedule thresholds_at(std::int64_t step, std::int64_t total_steps) {
  if (total_steps < 1 || step < 0 || step >= total_steps) {
    throw ContractError("thresholds_at: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + ")");
  }
  return thresholds_for_zeta(static_cast<Scalar>(step + 1) / static_cast<Scalar>(total_steps));
}

}  // namespace sfda
