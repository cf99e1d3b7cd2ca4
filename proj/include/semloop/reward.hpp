#pragma once

#include "semloop/data_model.hpp"
#include "semloop/parsing.hpp"

namespace semloop {

struct RewardSpec {
  double sigma = 1.2;

  // Throws InvalidConfig unless sigma > 0 and finite.
  void validate() const;
};

// exp(-(p - y)^2 / (2 sigma^2)).
double gaussian_reward(Score p, Score y, const RewardSpec& spec = {});

// Zero whenever either stage failed to parse; otherwise the Gaussian term.
template <typename Summary>
double trajectory_reward(const ParseOutcome<Summary>& stage1, const ParseOutcome<Score>& stage2,
                         Score y, const RewardSpec& spec = {}) {
  if (!stage1.valid() || !stage2.valid()) return 0.0;
  return gaussian_reward(stage2.value(), y, spec);
}

}  // namespace semloop
