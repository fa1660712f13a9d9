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

#ifndef KNODE_ORCHESTRATOR_HPP
#define KNODE_ORCHESTRATOR_HPP

#include <cmath>
#include <future>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "knode/batch.hpp"
#include "knode/trainer.hpp"

namespace knode {

struct OrchestratorConfig {
  double t_col{0.15};
  double sample_dt{0.002};
  double training_latency{0.05};  // simulated duration, not wall clock
  bool concurrent{false};

  void validate() const {
    if (!(t_col > 0.0) || !(sample_dt > 0.0) || training_latency < 0.0)
      throw std::invalid_argument("OrchestratorConfig: durations must be positive");
    const double ratio = t_col / sample_dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9)
      throw std::invalid_argument(
          "OrchestratorConfig: t_col must be an integer multiple of sample_dt");
  }
};

/// Accumulates plant-rate samples and emits a batch every t_col, provided the
/// whole window was collected under one model version. Mixed windows are
/// discarded; a model publish restarts the window.
class Collector {
 public:
  struct Result {
    std::optional<DataBatch> batch;
    bool discarded{false};
  };

  Collector(double t_col, double sample_dt) : t_col_(t_col), dt_(sample_dt) {
    OrchestratorConfig oc;
    oc.t_col = t_col;
    oc.sample_dt = sample_dt;
    oc.validate();
  }

  Result step(double t, const StateVec& x, const Vec4& u, std::uint64_t version) {
    if (has_last_ && t <= last_t_)
      throw std::invalid_argument("Collector: out-of-order timestamp");
    last_t_ = t;
    has_last_ = true;

    Result res;
    if (!samples_.empty() && t - t_s_ >= t_col_ - 0.5 * dt_) {
      if (clean_) {
        DataBatch b;
        b.dt = dt_;
        b.model_version = first_version_;
        b.clean = true;
        b.samples = std::move(samples_);
        res.batch = std::move(b);
      } else {
        res.discarded = true;
      }
      samples_.clear();
      clean_ = true;
      t_s_ = t;
    }

    if (samples_.empty()) first_version_ = version;
    if (version != first_version_) clean_ = false;
    samples_.push_back({t, x, u});
    return res;
  }

  /// Alg. 1 lines 5-7: the window restarts at the publish instant.
  bool on_model_published(double t) {
    const bool had = !samples_.empty();
    samples_.clear();
    clean_ = true;
    t_s_ = t;
    return had;
  }

  double t_s() const { return t_s_; }
  int buffered() const { return static_cast<int>(samples_.size()); }

 private:
  double t_col_;
  double dt_;
  double t_s_{0.0};
  double last_t_{0.0};
  bool has_last_{false};
  std::vector<Sample> samples_;
  std::uint64_t first_version_{0};
  bool clean_{true};
};

struct OrchestratorEvent {
  double t{0.0};
  std::string kind;  // batch_saved | batch_discarded | training_started |
                     // publish | training_failed | batch_stale_dropped
  std::uint64_t version{0};
  double batch_t0{-1.0};
};

/// Binds the control loop and the trainer: plant-rate collection, a
/// capacity-one newest-wins mailbox, training with simulated latency, and
/// atomic snapshot publication at control-step boundaries.
class OnlineOrchestrator {
 public:
  OnlineOrchestrator(EnsemblePtr initial, TrainConfig tc, OrchestratorConfig oc)
      : current_(std::move(initial)),
        tc_(tc),
        oc_(oc),
        collector_(oc.t_col, oc.sample_dt) {
    oc_.validate();
    if (!current_) throw std::invalid_argument("OnlineOrchestrator: null initial model");
  }

  EnsemblePtr model() const { return current_; }

  /// Feed one plant-rate sample (state and the control currently applied).
  void record_sample(double t, const StateVec& x, const Vec4& u) {
    Collector::Result res = collector_.step(t, x, u, current_->version());
    if (res.discarded) events_.push_back({t, "batch_discarded", current_->version(), -1.0});
    if (res.batch) {
      events_.push_back(
          {t, "batch_saved", res.batch->model_version, res.batch->samples.front().t});
      if (training_)
        pending_ = std::move(*res.batch);  // newest-wins, capacity one
      else
        start_training(t, std::move(*res.batch));
    }
  }

  /// Call at each control-step boundary before solving. Swaps in a finished
  /// model if its simulated completion time has passed; returns true on swap.
  bool maybe_publish(double t) {
    if (!training_ || t + 1e-12 < t_done_) return false;
    EnsemblePtr trained;
    if (oc_.concurrent)
      trained = fut_.get();
    else
      trained = std::move(result_);
    training_ = false;

    bool swapped = false;
    if (trained) {
      current_ = std::move(trained);
      collector_.on_model_published(t);
      events_.push_back({t, "publish", current_->version(), -1.0});
      swapped = true;
    } else {
      events_.push_back({t, "training_failed", current_->version(), -1.0});
    }
    if (pending_) {
      DataBatch b = std::move(*pending_);
      pending_.reset();
      start_training(t, std::move(b));
    }
    return swapped;
  }

  bool training_in_flight() const { return training_; }
  const std::vector<OrchestratorEvent>& events() const { return events_; }

 private:
  void start_training(double t, DataBatch batch) {
    if (batch.model_version != current_->version()) {
      events_.push_back(
          {t, "batch_stale_dropped", batch.model_version, batch.samples.front().t});
      return;
    }
    events_.push_back({t, "training_started", batch.model_version, batch.samples.front().t});
    training_ = true;
    t_done_ = t + oc_.training_latency;
    auto job = [snapshot = current_, b = std::move(batch), cfg = tc_]() -> EnsemblePtr {
      try {
        return std::make_shared<const EnsembleModel>(train_member(*snapshot, b, cfg).first);
      } catch (const std::exception&) {
        return nullptr;
      }
    };
    if (oc_.concurrent)
      fut_ = std::async(std::launch::async, std::move(job));
    else
      result_ = job();
  }

  EnsemblePtr current_;
  TrainConfig tc_;
  OrchestratorConfig oc_;
  Collector collector_;
  std::optional<DataBatch> pending_;
  bool training_{false};
  double t_done_{0.0};
  EnsemblePtr result_;
  std::future<EnsemblePtr> fut_;
  std::vector<OrchestratorEvent> events_;
};

}  // namespace knode

#endif  // KNODE_ORCHESTRATOR_HPP
