// Copyright 2026 The ngsc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Three-phase rate-distortion training:
//   1. q = 1 (largest lambda), uniform ROI
//   2. q ~ U[0, 1] per batch, uniform ROI
//   3. q ~ U[0, 1] per batch, random ROI shapes
// Every random draw is keyed by (seed, global step), so a run resumed from a
// saved state continues exactly as the uninterrupted run would.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ngsc/bitstream.hpp"
#include "ngsc/codec.hpp"
#include "ngsc/dataset.hpp"
#include "ngsc/rdo.hpp"

namespace ngsc {

enum class LambdaPolicy { kFixedMax, kSampled };
enum class RoiPolicy { kUniform, kRandomShapes };

struct TrainPhase {
  int phase = 1;
  int epochs = 1;
  LambdaPolicy lambda = LambdaPolicy::kFixedMax;
  RoiPolicy roi = RoiPolicy::kUniform;
};

inline constexpr int kFullScheduleEpochs[3] = {400, 350, 100};

/// The three phases with epochs divided by `scale` (rounded, at least 1).
/// scale = 50 gives 8/7/2.
inline std::vector<TrainPhase> scaled_schedule(double scale) {
  if (!(scale >= 1)) throw ConfigError("desk-scale factor must be >= 1");
  auto ep = [&](int full) { return std::max(1, static_cast<int>(std::lround(full / scale))); };
  return {{1, ep(kFullScheduleEpochs[0]), LambdaPolicy::kFixedMax, RoiPolicy::kUniform},
          {2, ep(kFullScheduleEpochs[1]), LambdaPolicy::kSampled, RoiPolicy::kUniform},
          {3, ep(kFullScheduleEpochs[2]), LambdaPolicy::kSampled, RoiPolicy::kRandomShapes}};
}

struct TrainOptions {
  std::vector<TrainPhase> phases = scaled_schedule(50);
  int64_t batch = 1;
  int64_t crop = 64;
  uint64_t seed = 1;
  double alpha = 0.5;
  AdamConfig adam;
  std::string out_dir;  // CSV log and per-phase checkpoints; empty disables files
};

struct LogRow {
  int64_t step = 0;
  int phase = 0;
  double q = 0, lambda = 0, distortion = 0, rate = 0, total = 0;
};

inline std::string csv_header() { return "step,phase,q,lambda,distortion,rate_bpp,total"; }

inline std::string to_csv(const LogRow& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.step << ',' << r.phase << ',' << r.q << ',' << r.lambda << ',' << r.distortion
     << ',' << r.rate << ',' << r.total;
  return os.str();
}

struct TrainingDiverged : NumericError {
  using NumericError::NumericError;
};

/// Mean of the first (or last) `window` totals.
inline double smoothed_loss(const std::vector<LogRow>& log, size_t window, bool tail) {
  if (log.empty()) throw ConfigError("smoothed_loss: empty log");
  window = std::clamp<size_t>(window, 1, log.size());
  double s = 0;
  for (size_t i = 0; i < window; ++i) s += log[tail ? log.size() - 1 - i : i].total;
  return s / static_cast<double>(window);
}

class Trainer {
 public:
  Trainer(CodecNet<float>& net, const std::vector<Tensor<float>>& images, TrainOptions opt)
      : net_(net), images_(images), opt_(std::move(opt)), adam_(net.parameters(), opt_.adam) {
    if (images_.empty()) throw ConfigError("training set is empty");
    if (opt_.batch <= 0) throw ConfigError("batch must be positive");
    if (opt_.crop <= 0 || opt_.crop % kPadMultiple != 0) throw ConfigError("crop must be a positive multiple of 64");
    if (opt_.phases.empty()) throw ConfigError("no training phases");
    for (const auto& im : images_)
      if (im.dim(2) < opt_.crop || im.dim(3) < opt_.crop) throw ConfigError("training image smaller than crop");
    steps_per_epoch_ = (static_cast<int64_t>(images_.size()) + opt_.batch - 1) / opt_.batch;
    snapshot();
  }

  int64_t steps_per_epoch() const { return steps_per_epoch_; }
  int64_t step() const { return step_; }
  const TrainOptions& options() const { return opt_; }

  int64_t total_steps() const {
    int64_t n = 0;
    for (const auto& p : opt_.phases) n += p.epochs * steps_per_epoch_;
    return n;
  }

  /// Index into options().phases for a global step.
  size_t phase_index(int64_t step) const {
    int64_t end = 0;
    for (size_t i = 0; i < opt_.phases.size(); ++i) {
      end += opt_.phases[i].epochs * steps_per_epoch_;
      if (step < end) return i;
    }
    return opt_.phases.size() - 1;
  }

  /// QIndex of the batch at `step`: 1 under kFixedMax, else U[0, 1).
  double q_for(int64_t step) const {
    if (opt_.phases[phase_index(step)].lambda == LambdaPolicy::kFixedMax) return 1.0;
    return Rng::derive(opt_.seed, static_cast<uint64_t>(step), kQTag).uniform();
  }

  /// Runs one optimization step and returns its log row. Throws
  /// TrainingDiverged (parameters restored to the last good snapshot) on a
  /// non-finite loss or gradient.
  LogRow train_step() {
    const TrainPhase& ph = opt_.phases[phase_index(step_)];
    const auto [x, r, q] = batch_for(step_, ph);
    Rng noise = Rng::derive(opt_.seed, static_cast<uint64_t>(step_), kNoiseTag);
    Tensor<float> m(Shape{opt_.batch, 1, opt_.crop, opt_.crop}, static_cast<float>(q));

    LogRow row;
    row.step = step_;
    row.phase = ph.phase;
    row.q = q;
    net_.parameters().zero_grad();
    try {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      const Tensor<float>* rp = ph.roi == RoiPolicy::kUniform ? nullptr : &r;
      auto fr = net_.forward(x, m, rp, Mode::kTrain, &noise);
      auto loss = rd_loss(x, fr.x_hat, fr.likelihood_y, fr.likelihood_z, rp, q, opt_.alpha);
      row.lambda = loss.lambda;
      row.distortion = loss.distortion.item();
      row.rate = loss.rate.item();
      row.total = loss.total.item();
      if (!std::isfinite(row.total)) diverge("non-finite loss");
      backward(loss.total);
    } catch (const TrainingDiverged&) {
      throw;
    } catch (const NumericError& e) {
      diverge(e.what());
    }
    if (!std::isfinite(adam_.grad_norm())) diverge("non-finite gradient");
    adam_.step();
    ++step_;
    return row;
  }

  /// Trains until `last_step` (exclusive; default: end of schedule). Writes
  /// the CSV log and phase-end checkpoints when out_dir is set.
  std::vector<LogRow> run(std::optional<int64_t> last_step = std::nullopt,
                          const std::function<void(const LogRow&)>& on_step = {}) {
    const int64_t stop = std::min(last_step.value_or(total_steps()), total_steps());
    std::ofstream log;
    if (!opt_.out_dir.empty()) {
      std::filesystem::create_directories(opt_.out_dir);
      const auto path = std::filesystem::path(opt_.out_dir) / "train_log.csv";
      const bool fresh = !std::filesystem::exists(path) || step_ == 0;
      log.open(path, fresh ? std::ios::trunc : std::ios::app);
      if (!log) throw ConfigError("cannot write " + path.string());
      if (fresh) log << csv_header() << '\n';
    }
    std::vector<LogRow> rows;
    while (step_ < stop) {
      rows.push_back(train_step());
      if (log.is_open()) log << to_csv(rows.back()) << '\n' << std::flush;
      if (on_step) on_step(rows.back());
      if (phase_end(step_)) {
        snapshot();
        if (!opt_.out_dir.empty()) {
          const auto base = std::filesystem::path(opt_.out_dir) / ("phase" + std::to_string(rows.back().phase));
          last_good_ = base.string() + ".ngwt";
          write_file(last_good_, Model::checkpoint_bytes(net_));
          save_state(base.string() + ".state");
        }
      }
    }
    return rows;
  }

  /// Parameters, optimizer moments and step counter.
  void save_state(const std::string& path) const {
    Checkpoint ck = make_checkpoint(net_.parameters(), net_.config().to_text());
    adam_.save(ck);
    ck.records.push_back({"trainer.step", {{1}, {static_cast<float>(step_)}}});
    write_file(path, serialize_checkpoint(ck));
  }

  void load_state(const std::string& path) {
    Checkpoint ck = parse_checkpoint(read_file(path));
    if (CodecConfig::parse(ck.config_text).to_text() != net_.config().to_text())
      throw FormatError(path + ": training state was saved for a different model configuration");
    Checkpoint params;
    for (const auto& [name, rec] : ck.records)
      if (net_.parameters().find(name)) params.records.emplace_back(name, rec);
    load_parameters(net_.parameters(), params);
    adam_.load(ck);
    const auto* s = ck.find("trainer.step");
    if (!s || s->values.size() != 1) throw FormatError(path + ": missing step counter");
    step_ = static_cast<int64_t>(s->values[0]);
    snapshot();
  }

 private:
  static constexpr uint64_t kShuffleTag = 0x73687566, kCropTag = 0x63726f70, kQTag = 0x71, kRoiTag = 0x726f69,
                            kNoiseTag = 0x6e6f6973;

  struct Batch {
    Tensor<float> x, r;
    double q;
  };

  bool phase_end(int64_t next_step) const {
    int64_t end = 0;
    for (const auto& p : opt_.phases) {
      end += p.epochs * steps_per_epoch_;
      if (next_step == end) return true;
    }
    return false;
  }

  Batch batch_for(int64_t step, const TrainPhase& ph) const {
    const int64_t epoch = step / steps_per_epoch_, pos = step % steps_per_epoch_;
    const size_t n = images_.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuf = Rng::derive(opt_.seed, static_cast<uint64_t>(epoch), kShuffleTag);
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuf.below(i)]);

    Rng crop = Rng::derive(opt_.seed, static_cast<uint64_t>(step), kCropTag);
    Rng roi = Rng::derive(opt_.seed, static_cast<uint64_t>(step), kRoiTag);
    std::vector<Tensor<float>> xs, rs;
    for (int64_t j = 0; j < opt_.batch; ++j) {
      const size_t idx = order[static_cast<size_t>(pos * opt_.batch + j) % n];
      xs.push_back(random_crop(images_[idx], opt_.crop, crop));
      if (ph.roi == RoiPolicy::kRandomShapes) rs.push_back(sample_roi_mask(roi, opt_.crop, opt_.crop));
    }
    Batch b;
    NoGradScope<float> ng;
    b.x = xs.size() == 1 ? xs[0] : concat<float>(xs, 0);
    if (!rs.empty()) b.r = rs.size() == 1 ? rs[0] : concat<float>(rs, 0);
    b.q = q_for(step);
    return b;
  }

  void snapshot() {
    good_.clear();
    for (const auto& p : net_.parameters().items()) good_.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  }

  [[noreturn]] void diverge(const std::string& what) {
    const auto& items = net_.parameters().items();
    for (size_t k = 0; k < items.size(); ++k) {
      Tensor<float> t = items[k].tensor;
      std::copy(good_[k].begin(), good_[k].end(), t.data().begin());
    }
    throw TrainingDiverged("training diverged at step " + std::to_string(step_) + " (" + what +
                           "); parameters restored to the last good snapshot" +
                           (last_good_.empty() ? std::string() : " saved at " + last_good_));
  }

  CodecNet<float>& net_;
  const std::vector<Tensor<float>>& images_;
  TrainOptions opt_;
  Adam<float> adam_;
  int64_t steps_per_epoch_ = 0;
  int64_t step_ = 0;
  std::vector<std::vector<float>> good_;
  std::string last_good_;
};

}  // namespace ngsc
