#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "unimc/numerics/adam.hpp"
#include "unimc/training/examples.hpp"
#include "unimc/training/loss.hpp"

namespace unimc::training {

struct TrainConfig {
  int epochs = 1;
  int max_steps = 0;  // 0: no step cap
  int cs_batch = 8;
  int mr_batch = 8;
  int mag_batch = 8;
  numerics::AdamConfig adam;
  std::uint64_t seed = 2022;
  ExampleOptions examples;
  std::string checkpoint_path;  // written after every epoch when set
  std::string log_path;         // appended to when set
};

struct StepLog {
  int epoch = 0;
  int step = 0;  // global optimizer step, starting at 1
  double total = 0, cs = 0, mr = 0, mag = 0;
};

inline std::string format_log_line(const StepLog& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d %d %.6f %.6f %.6f %.6f", s.epoch, s.step, s.total, s.cs, s.mr, s.mag);
  return buf;
}

struct TrainingSet {
  std::vector<SubtaskExample> cs, mr, mag;

  static TrainingSet build(const corpus::Corpus& c, const ExampleOptions& opt) {
    return {make_cs_examples(c, opt), make_mr_examples(c, opt), make_mag_examples(c, opt)};
  }
};

struct TrainResult {
  std::vector<StepLog> log;
  int steps = 0;
  int epochs = 0;
};

/// Cycles through a shuffled list of examples, reshuffling at each epoch.
class BatchCursor {
 public:
  BatchCursor(const std::vector<SubtaskExample>& pool, Task kind, std::size_t batch) : pool_(pool), kind_(kind), batch_(batch) {
    order_.resize(pool.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }

  void shuffle(std::mt19937_64& rng) {
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  /// Batches needed to visit every example once.
  std::size_t batches_per_pass() const { return batch_ == 0 ? 0 : (pool_.size() + batch_ - 1) / batch_; }

  Batch next() {
    Batch b;
    b.kind = kind_;
    if (pool_.empty() || batch_ == 0) return b;
    for (std::size_t i = 0; i < std::min(batch_, pool_.size()); ++i) {
      if (pos_ == order_.size()) pos_ = 0;
      b.examples.push_back(&pool_[order_[pos_++]]);
    }
    return b;
  }

 private:
  const std::vector<SubtaskExample>& pool_;
  Task kind_;
  std::size_t batch_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Joint training. Every optimizer step takes one batch of each subtask
/// (round-robin over the three lists). An epoch is the number of steps that
/// visits the largest list once. A non-finite loss or gradient halts training
/// with an exception naming the step and the offending example.
template <class T>
TrainResult train(model::Model<T>& m, const TrainingSet& data, const TrainConfig& cfg,
                  const std::function<void(const StepLog&)>& on_step = {}) {
  if (cfg.epochs < 1) throw Error("train: epochs must be >= 1");
  std::mt19937_64 rng(cfg.seed);
  BatchCursor cs(data.cs, Task::CS, static_cast<std::size_t>(cfg.cs_batch));
  BatchCursor mr(data.mr, Task::MR, static_cast<std::size_t>(cfg.mr_batch));
  BatchCursor mag(data.mag, Task::MAG, static_cast<std::size_t>(cfg.mag_batch));
  const std::size_t steps_per_epoch =
      std::max({cs.batches_per_pass(), mr.batches_per_pass(), mag.batches_per_pass(), std::size_t{1}});

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw Error("cannot open training log " + cfg.log_path);
  }

  TrainResult out;
  m.params().zero_grad();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    cs.shuffle(rng);
    mr.shuffle(rng);
    mag.shuffle(rng);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      if (cfg.max_steps > 0 && out.steps >= cfg.max_steps) break;
      const Batch bc = cs.next(), br = mr.next(), bm = mag.next();
      JointLoss loss;
      try {
        loss = joint_loss(m, bc, br, bm, true);
        numerics::adam_step(m.params(), cfg.adam);
      } catch (const NumericError& e) {
        m.params().zero_grad();
        throw NumericError(detail::concat("training halted at epoch ", epoch, " step ", out.steps + 1, ": ",
                                          e.what()));
      }
      ++out.steps;
      StepLog entry{epoch, out.steps, loss.total, loss.cs.value, loss.mr.value, loss.mag.value};
      out.log.push_back(entry);
      if (log) log << format_log_line(entry) << '\n' << std::flush;
      if (on_step) on_step(entry);
    }
    out.epochs = epoch;
    if (!cfg.checkpoint_path.empty()) m.save(cfg.checkpoint_path);
    if (cfg.max_steps > 0 && out.steps >= cfg.max_steps) break;
  }
  return out;
}

}  // namespace unimc::training
