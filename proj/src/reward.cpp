#include "semloop/reward.hpp"

#include <cmath>
#include <string>

namespace semloop {

void RewardSpec::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw Error(ErrorCode::InvalidConfig, "reward.sigma must be positive, got " + std::to_string(sigma));
}

double gaussian_reward(Score p, Score y, const RewardSpec& spec) {
  const double d = static_cast<double>(p.value() - y.value());
  return std::exp(-(d * d) / (2.0 * spec.sigma * spec.sigma));
}

}  // namespace semloop
