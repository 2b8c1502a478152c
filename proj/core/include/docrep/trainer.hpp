#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "docrep/optim.hpp"
#include "docrep/pretrain.hpp"

namespace docrep {

struct NamedLoss {
  std::string task;
  double loss = 0.0;
};

struct StepRecord {
  int step = 0;
  std::vector<NamedLoss> losses;

  double loss(const std::string& task) const;
};

/// One line per task: `step=<n> task=<t> loss=<f>`.
std::string format_step_log(const StepRecord& record);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A task contributes `accumulation` micro-batches per step. run_micro does
/// forward and backward for one micro-batch with every gradient scaled by
/// `grad_scale`, and returns the unscaled losses it computed.
template <typename T>
struct TaskRunner {
  std::string name;
  int accumulation = 1;
  std::function<std::vector<NamedLoss>(int step, int micro, T grad_scale)> run_micro;
};

/// Runs every task's micro-batches in order, each scaled by 1/accumulation,
/// without updating. Returns per-task losses averaged over micro-batches.
template <typename T>
std::vector<NamedLoss> accumulate_task_gradients(const std::vector<TaskRunner<T>>& tasks, int step);

/// accumulate_task_gradients, optional clipping, one AdamW update, zeroed gradients.
template <typename T>
StepRecord multitask_step(ParameterSet<T>& params, AdamW<T>& optimizer, const std::vector<TaskRunner<T>>& tasks, int step,
                          double learning_rate, double max_grad_norm = 0.0);

/// Deterministic cycling order over n items: epoch e visits a permutation
/// derived from (seed, e).
class EpochSampler {
 public:
  EpochSampler() = default;
  EpochSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}
  std::size_t at(std::uint64_t cursor);
  std::size_t size() const { return n_; }

 private:
  std::size_t n_ = 0;
  std::uint64_t seed_ = 0;
  std::uint64_t epoch_ = ~std::uint64_t{0};
  std::vector<std::size_t> order_;
};

/// Linear warmup over the first warmup_steps, then (if decay_steps > 0) a
/// linear decay that reaches base / (decay_steps - warmup_steps) at decay_steps.
double scheduled_learning_rate(double base, int warmup_steps, int step, int decay_steps = 0);

/// Multi-task pre-training over an in-memory corpus. Each step draws its
/// micro-batches from streams derived from (seed, task, step), so a run
/// resumed from a checkpoint replays exactly.
template <typename T>
class Pretrainer {
 public:
  Pretrainer(DocumentModel<T>& model, const TrainConfig& cfg, std::vector<Document> docs,
             std::map<std::string, std::vector<double>> doc_topics = {});
  Pretrainer(const Pretrainer&) = delete;
  Pretrainer& operator=(const Pretrainer&) = delete;

  StepRecord step();
  /// Steps until completed_steps() == cfg.steps (or `until` if positive).
  void run(const std::function<void(const StepRecord&)>& on_step = {}, int until = 0);

  int completed_steps() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  DocumentModel<T>& model() { return model_; }
  AdamW<T>& optimizer() { return opt_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  std::vector<const Document*> sample(PretrainTask task, EpochSampler& sampler, const std::vector<const Document*>& pool,
                                      const TaskSchedule& sched, int step, int micro);
  std::vector<TaskRunner<T>> make_runners();

  DocumentModel<T>& model_;
  TrainConfig cfg_;
  std::vector<Document> docs_;
  std::map<std::string, std::vector<double>> doc_topics_;
  std::vector<const Document*> all_pool_, dsp_pool_;
  EpochSampler mvlm_sampler_, dsp_sampler_, dtm_sampler_;
  AdamW<T> opt_;
  std::vector<TaskRunner<T>> runners_;
  int step_ = 0;
};

}  // namespace docrep
