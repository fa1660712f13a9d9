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

#ifndef KNODE_MLP_HPP
#define KNODE_MLP_HPP

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace knode {

/// Small feed-forward network, tanh on hidden layers, identity output.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<int> layer_dims) : dims_(std::move(layer_dims)) {
    if (dims_.size() < 2) throw std::invalid_argument("Mlp: need at least two layer dims");
    for (int d : dims_)
      if (d <= 0) throw std::invalid_argument("Mlp: layer dims must be positive");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      W_.emplace_back(Eigen::MatrixXd::Zero(dims_[l + 1], dims_[l]));
      b_.emplace_back(Eigen::VectorXd::Zero(dims_[l + 1]));
    }
  }

  /// Uniform init in [-s, s], s = 1/sqrt(fan_in).
  static Mlp random_init(const std::vector<int>& layer_dims, std::uint64_t seed) {
    Mlp net(layer_dims);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < net.W_.size(); ++l) {
      const double s = 1.0 / std::sqrt(static_cast<double>(net.dims_[l]));
      std::uniform_real_distribution<double> dist(-s, s);
      for (Eigen::Index i = 0; i < net.W_[l].size(); ++i) net.W_[l].data()[i] = dist(rng);
      for (Eigen::Index i = 0; i < net.b_[l].size(); ++i) net.b_[l](i) = dist(rng);
    }
    return net;
  }

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  int num_layers() const { return static_cast<int>(W_.size()); }
  const Eigen::MatrixXd& weights(int l) const { return W_.at(l); }
  const Eigen::VectorXd& biases(int l) const { return b_.at(l); }
  Eigen::MatrixXd& weights(int l) { return W_.at(l); }
  Eigen::VectorXd& biases(int l) { return b_.at(l); }

  int param_count() const {
    int n = 0;
    for (std::size_t l = 0; l < W_.size(); ++l)
      n += static_cast<int>(W_[l].size() + b_[l].size());
    return n;
  }

  /// Post-activation values per layer; act[0] is the input itself.
  struct Cache {
    std::vector<Eigen::VectorXd> act;
  };

  Eigen::VectorXd forward(const Eigen::VectorXd& z) const {
    check_input(z);
    Eigen::VectorXd h = z;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      h = W_[l] * h + b_[l];
      if (l + 1 < W_.size()) h = h.array().tanh();
    }
    return h;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& z, Cache& cache) const {
    check_input(z);
    cache.act.resize(W_.size() + 1);
    cache.act[0] = z;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      Eigen::VectorXd h = W_[l] * cache.act[l] + b_[l];
      if (l + 1 < W_.size()) h = h.array().tanh();
      cache.act[l + 1] = std::move(h);
    }
    return cache.act.back();
  }

  /// d output / d input (output_dim x input_dim) at z.
  Eigen::MatrixXd input_jacobian(const Eigen::VectorXd& z) const {
    check_input(z);
    Eigen::VectorXd h = z;
    Eigen::MatrixXd J = Eigen::MatrixXd::Identity(dims_[0], dims_[0]);
    for (std::size_t l = 0; l < W_.size(); ++l) {
      J = W_[l] * J;
      h = W_[l] * h + b_[l];
      if (l + 1 < W_.size()) {
        h = h.array().tanh();
        J.array().colwise() *= (1.0 - h.array().square());
      }
    }
    return J;
  }

  /// Accumulates parameter gradients for output adjoint g; returns the input
  /// adjoint. gW/gb must be shaped like W/b.
  Eigen::VectorXd backward(const Cache& cache, const Eigen::VectorXd& g,
                           std::vector<Eigen::MatrixXd>& gW,
                           std::vector<Eigen::VectorXd>& gb) const {
    Eigen::VectorXd delta = g;
    for (int l = num_layers() - 1; l >= 0; --l) {
      if (l + 1 < num_layers()) {
        // act[l+1] is post-tanh at this point in the chain
        delta.array() *= (1.0 - cache.act[l + 1].array().square());
      }
      gW[l].noalias() += delta * cache.act[l].transpose();
      gb[l] += delta;
      if (l > 0) delta = W_[l].transpose() * delta;
    }
    return W_[0].transpose() * delta;
  }

  /// Input adjoint only, no parameter gradients.
  Eigen::VectorXd backward_input_only(const Cache& cache, const Eigen::VectorXd& g) const {
    Eigen::VectorXd delta = g;
    for (int l = num_layers() - 1; l >= 0; --l) {
      if (l + 1 < num_layers())
        delta.array() *= (1.0 - cache.act[l + 1].array().square());
      delta = W_[l].transpose() * delta;
    }
    return delta;
  }

  std::vector<Eigen::MatrixXd> zero_grad_w() const {
    std::vector<Eigen::MatrixXd> g;
    for (const auto& w : W_) g.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    return g;
  }
  std::vector<Eigen::VectorXd> zero_grad_b() const {
    std::vector<Eigen::VectorXd> g;
    for (const auto& v : b_) g.emplace_back(Eigen::VectorXd::Zero(v.size()));
    return g;
  }

  /// Row-major per layer: W0, b0, W1, b1, ...
  Eigen::VectorXd flatten_params() const {
    Eigen::VectorXd p(param_count());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      for (Eigen::Index i = 0; i < W_[l].rows(); ++i)
        for (Eigen::Index j = 0; j < W_[l].cols(); ++j) p(k++) = W_[l](i, j);
      for (Eigen::Index i = 0; i < b_[l].size(); ++i) p(k++) = b_[l](i);
    }
    return p;
  }

  void set_params(const Eigen::VectorXd& p) {
    if (p.size() != param_count())
      throw std::invalid_argument("Mlp::set_params: size mismatch");
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      for (Eigen::Index i = 0; i < W_[l].rows(); ++i)
        for (Eigen::Index j = 0; j < W_[l].cols(); ++j) W_[l](i, j) = p(k++);
      for (Eigen::Index i = 0; i < b_[l].size(); ++i) b_[l](i) = p(k++);
    }
  }

 private:
  void check_input(const Eigen::VectorXd& z) const {
    if (W_.empty()) throw std::logic_error("Mlp: uninitialized");
    if (z.size() != dims_.front())
      throw std::invalid_argument("Mlp: input dimension mismatch");
  }

  std::vector<int> dims_;
  std::vector<Eigen::MatrixXd> W_;
  std::vector<Eigen::VectorXd> b_;
};

}  // namespace knode

#endif  // KNODE_MLP_HPP
