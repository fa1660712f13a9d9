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

#ifndef KNODE_INTEGRATE_HPP
#define KNODE_INTEGRATE_HPP

#include <stdexcept>
#include <string>
#include <utility>

namespace knode {

/// Classical fixed-step 4th-order Runge-Kutta update.
/// f(t, z) must return a vector of the same type as z. If z embeds a
/// quaternion block, the caller re-normalizes afterward.
template <class F, class V>
V rk4_step(F&& f, const V& z0, double t0, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  auto check = [](const V& k, const char* stage) {
    if (!k.allFinite())
      throw std::runtime_error(std::string("rk4_step: non-finite stage ") + stage);
  };
  const V k1 = f(t0, z0);
  check(k1, "k1");
  const V k2 = f(t0 + 0.5 * dt, V(z0 + 0.5 * dt * k1));
  check(k2, "k2");
  const V k3 = f(t0 + 0.5 * dt, V(z0 + 0.5 * dt * k2));
  check(k3, "k3");
  const V k4 = f(t0 + dt, V(z0 + dt * k3));
  check(k4, "k4");
  return z0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace knode

#endif  // KNODE_INTEGRATE_HPP
