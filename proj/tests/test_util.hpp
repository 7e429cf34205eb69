/*
 * Copyright 2026 The FedMF Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Shared fixtures for the unit tests.

#ifndef FEDMF_TESTS_TEST_UTIL_HPP_
#define FEDMF_TESTS_TEST_UTIL_HPP_

#include <cstdint>
#include <vector>

#include "fedmf/mf_core.hpp"

namespace fedmf::testutil {

struct Instance {
  RatingTable ratings;
  ProfileMatrix users;
  ProfileMatrix items;
};

// Random ratings in [1, 5] on a random mask (at least one rating overall),
// plus random profiles in [-1, 1).
inline Instance random_instance(std::size_t n, std::size_t m, std::size_t d,
                                double density, std::uint64_t seed) {
  SplitMix64 rng(seed * 7919 + 17);
  std::vector<Rating> rs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (rng.uniform() < density) rs.push_back({i, j, 1.0 + 4.0 * rng.uniform()});
    }
  }
  if (rs.empty()) rs.push_back({0, 0, 3.0});
  Instance inst{RatingTable(n, m, rs), ProfileMatrix(n, d), ProfileMatrix(m, d)};
  for (double& x : inst.users.values()) x = 2.0 * rng.uniform() - 1.0;
  for (double& x : inst.items.values()) x = 2.0 * rng.uniform() - 1.0;
  return inst;
}

}  // namespace fedmf::testutil

#endif  // FEDMF_TESTS_TEST_UTIL_HPP_
