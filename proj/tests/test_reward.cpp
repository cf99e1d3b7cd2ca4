#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "semloop/reward.hpp"

using namespace semloop;

TEST_CASE("gaussian reward closed form") {
  const RewardSpec spec;
  for (int p = 0; p <= 6; ++p)
    for (int y = 0; y <= 6; ++y) {
      const double r = gaussian_reward(Score{p}, Score{y}, spec);
      CHECK(std::abs(r - oracle::closed_form_reward(p, y, 1.2)) < 1e-12);
      CHECK(r == gaussian_reward(Score{y}, Score{p}, spec));
      CHECK((r == 1.0) == (p == y));
    }
  CHECK(gaussian_reward(Score{3}, Score{4}) == doctest::Approx(0.706648).epsilon(1e-6));
  CHECK(gaussian_reward(Score{0}, Score{6}) == doctest::Approx(3.7267e-6).epsilon(1e-4));
}

TEST_CASE("reward decreases with distance and increases with sigma") {
  for (int y = 0; y <= 6; ++y)
    for (int p = 0; p <= 6; ++p)
      for (int q = 0; q <= 6; ++q)
        if (std::abs(p - y) < std::abs(q - y))
          CHECK(gaussian_reward(Score{p}, Score{y}) > gaussian_reward(Score{q}, Score{y}));
  CHECK(gaussian_reward(Score{1}, Score{3}, {0.5}) < gaussian_reward(Score{1}, Score{3}, {1.2}));
  CHECK(gaussian_reward(Score{1}, Score{3}, {1.2}) < gaussian_reward(Score{1}, Score{3}, {3.0}));
}

TEST_CASE("format gate") {
  const ParseOutcome<std::string> ok("summary");
  CHECK(trajectory_reward(ok, ParseOutcome<Score>(Score{3}), Score{4}) == doctest::Approx(0.706648).epsilon(1e-6));
  CHECK(trajectory_reward(ok, ParseOutcome<Score>(Score{0}), Score{0}) == 1.0);
  CHECK(trajectory_reward(ParseOutcome<std::string>(ParseFailure::EmptySummary), ParseOutcome<Score>(Score{4}),
                          Score{4}) == 0.0);
  CHECK(trajectory_reward(ok, ParseOutcome<Score>(ParseFailure::NoScoreToken), Score{4}) == 0.0);
}

TEST_CASE("sigma validation") {
  CHECK(semloop::testing::thrown_code([] { RewardSpec{0.0}.validate(); }) == ErrorCode::InvalidConfig);
  CHECK(semloop::testing::thrown_code([] { RewardSpec{-1.0}.validate(); }) == ErrorCode::InvalidConfig);
}
