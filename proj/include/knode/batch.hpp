/*
 Copyright 2026 the knode-mpc-online developers

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#ifndef KNODE_BATCH_HPP
#define KNODE_BATCH_HPP

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "knode/quadrotor.hpp"

namespace knode {

struct Sample {
  double t{0.0};
  StateVec x{StateVec::Zero()};
  Vec4 u{Vec4::Zero()};
};

/// Uniformly spaced (state, control) samples collected under one model version.
struct DataBatch {
  std::vector<Sample> samples;
  double dt{0.0};
  std::uint64_t model_version{0};
  bool clean{true};

  int size() const { return static_cast<int>(samples.size()); }

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("DataBatch: dt must be positive");
    for (std::size_t i = 1; i < samples.size(); ++i) {
      const double gap = samples[i].t - samples[i - 1].t;
      if (gap <= 0.0 || std::abs(gap - dt) > 1e-9)
        throw std::invalid_argument("DataBatch: timestamps must increase uniformly by dt");
    }
  }
};

}  // namespace knode

#endif  // KNODE_BATCH_HPP
