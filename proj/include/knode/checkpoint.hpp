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

#ifndef KNODE_CHECKPOINT_HPP
#define KNODE_CHECKPOINT_HPP

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "knode/ensemble.hpp"

namespace knode {

inline constexpr const char* kCheckpointSchema = "knode-checkpoint-v1";

namespace detail {

/// 17 significant digits: doubles survive the text round trip bitwise.
inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void ck_fail(const std::string& what) {
  throw std::runtime_error("checkpoint: " + what);
}

inline std::string expect_tag(std::istream& in, const std::string& tag) {
  std::string got;
  if (!(in >> got)) ck_fail("truncated file, expected '" + tag + "'");
  if (got != tag) ck_fail("expected '" + tag + "', found '" + got + "'");
  return got;
}

template <class T>
T read_value(std::istream& in, const std::string& tag) {
  expect_tag(in, tag);
  T v;
  if (!(in >> v)) ck_fail("bad value for '" + tag + "'");
  return v;
}

inline void write_vector(std::ostream& out, const char* tag,
                         const Eigen::VectorXd& v) {
  out << tag << ' ' << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << fmt17(v(i));
  out << '\n';
}

inline Eigen::VectorXd read_vector(std::istream& in, const std::string& tag) {
  expect_tag(in, tag);
  Eigen::Index n;
  if (!(in >> n) || n < 0) ck_fail("bad length for '" + tag + "'");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(in >> v(i))) ck_fail("truncated values for '" + tag + "'");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const EnsembleModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) detail::ck_fail("cannot open '" + path + "' for writing");
  out << kCheckpointSchema << '\n';

  const QuadParams& p = m.params();
  out << "mass_kg " << detail::fmt17(p.m) << '\n';
  Eigen::VectorXd inertia(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) inertia(3 * r + c) = p.I(r, c);
  detail::write_vector(out, "inertia_kgm2", inertia);
  detail::write_vector(out, "gravity_mps2", p.g);
  detail::write_vector(out, "u_min", p.u_min);
  detail::write_vector(out, "u_max", p.u_max);

  out << "capacity " << m.capacity() << '\n';
  out << "dims " << m.member_dims().size();
  for (int d : m.member_dims()) out << ' ' << d;
  out << '\n';
  out << "ensemble_version " << m.version() << '\n';
  out << "members " << m.size() << '\n';
  for (int i = 0; i < m.size(); ++i) {
    out << "member " << i << " age " << m.age_of(i) << '\n';
    detail::write_vector(out, "params", m.member(i).flatten_params());
  }
  out << "end\n";
  if (!out) detail::ck_fail("write failure on '" + path + "'");
}

inline EnsembleModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) detail::ck_fail("cannot open '" + path + "'");
  std::string schema;
  if (!std::getline(in, schema)) detail::ck_fail("empty file");
  if (schema != kCheckpointSchema)
    detail::ck_fail("unknown schema '" + schema + "', expected '" +
                    std::string(kCheckpointSchema) + "'");

  QuadParams p;
  p.m = detail::read_value<double>(in, "mass_kg");
  const Eigen::VectorXd inertia = detail::read_vector(in, "inertia_kgm2");
  if (inertia.size() != 9) detail::ck_fail("inertia must hold 9 entries");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.I(r, c) = inertia(3 * r + c);
  const Eigen::VectorXd g = detail::read_vector(in, "gravity_mps2");
  if (g.size() != 3) detail::ck_fail("gravity must hold 3 entries");
  p.g = g;
  const Eigen::VectorXd umin = detail::read_vector(in, "u_min");
  const Eigen::VectorXd umax = detail::read_vector(in, "u_max");
  if (umin.size() != 4 || umax.size() != 4) detail::ck_fail("bounds must hold 4 entries");
  p.u_min = umin;
  p.u_max = umax;

  const int capacity = detail::read_value<int>(in, "capacity");
  detail::expect_tag(in, "dims");
  std::size_t ndims;
  if (!(in >> ndims) || ndims < 2) detail::ck_fail("bad dims length");
  std::vector<int> dims(ndims);
  for (auto& d : dims)
    if (!(in >> d)) detail::ck_fail("truncated dims");
  const std::uint64_t version = detail::read_value<std::uint64_t>(in, "ensemble_version");
  const int count = detail::read_value<int>(in, "members");
  if (count < 0 || count > capacity) detail::ck_fail("member count out of range");

  std::vector<Mlp> members;
  for (int i = 0; i < count; ++i) {
    detail::expect_tag(in, "member");
    int idx;
    if (!(in >> idx) || idx != i) detail::ck_fail("member index out of order");
    const int age = detail::read_value<int>(in, "age");
    if (age != count - 1 - i) detail::ck_fail("member age inconsistent with position");
    const Eigen::VectorXd theta = detail::read_vector(in, "params");
    Mlp net(dims);
    if (theta.size() != net.param_count()) detail::ck_fail("member parameter count mismatch");
    net.set_params(theta);
    members.push_back(std::move(net));
  }
  detail::expect_tag(in, "end");
  try {
    return EnsembleModel::restore(p, capacity, dims, std::move(members), version);
  } catch (const std::invalid_argument& e) {
    detail::ck_fail(e.what());
  }
  throw std::logic_error("unreachable");
}

}  // namespace knode

#endif  // KNODE_CHECKPOINT_HPP
