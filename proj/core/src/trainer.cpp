#include "docrep/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "docrep/checkpoint.hpp"
#include "docrep/serialize.hpp"

namespace docrep {

double StepRecord::loss(const std::string& task) const {
  for (const auto& l : losses)
    if (l.task == task) return l.loss;
  throw std::out_of_range("step " + std::to_string(step) + " has no loss for task " + task);
}

std::string format_step_log(const StepRecord& record) {
  std::ostringstream os;
  char buf[64];
  for (const auto& l : record.losses) {
    std::snprintf(buf, sizeof buf, "%.6f", l.loss);
    os << "step=" << record.step << " task=" << l.task << " loss=" << buf << '\n';
  }
  return os.str();
}

template <typename T>
std::vector<NamedLoss> accumulate_task_gradients(const std::vector<TaskRunner<T>>& tasks, int step) {
  std::vector<NamedLoss> out;
  for (const auto& task : tasks) {
    if (task.accumulation < 1) throw std::invalid_argument("task " + task.name + ": accumulation must be >= 1");
    std::vector<NamedLoss> sums;
    for (int micro = 0; micro < task.accumulation; ++micro) {
      const auto losses = task.run_micro(step, micro, static_cast<T>(1.0 / task.accumulation));
      for (const auto& l : losses) {
        if (!std::isfinite(l.loss))
          throw TrainingError("non-finite loss in task '" + l.task + "' at step " + std::to_string(step));
        auto it = std::find_if(sums.begin(), sums.end(), [&](const NamedLoss& s) { return s.task == l.task; });
        if (it == sums.end())
          sums.push_back(l);
        else
          it->loss += l.loss;
      }
    }
    for (auto& s : sums) {
      s.loss /= task.accumulation;
      out.push_back(s);
    }
  }
  return out;
}

template <typename T>
StepRecord multitask_step(ParameterSet<T>& params, AdamW<T>& optimizer, const std::vector<TaskRunner<T>>& tasks, int step,
                          double learning_rate, double max_grad_norm) {
  StepRecord record;
  record.step = step;
  try {
    record.losses = accumulate_task_gradients(tasks, step);
  } catch (...) {
    params.zero_grad();
    throw;
  }
  if (max_grad_norm > 0) clip_gradients(params, max_grad_norm);
  optimizer.step(params, learning_rate);
  params.zero_grad();
  return record;
}

std::size_t EpochSampler::at(std::uint64_t cursor) {
  if (n_ == 0) throw std::logic_error("EpochSampler over an empty pool");
  const std::uint64_t epoch = cursor / n_;
  if (epoch != epoch_) {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, {epoch}));
    rng.shuffle(order_.begin(), order_.end());
    epoch_ = epoch;
  }
  return order_[cursor % n_];
}

double scheduled_learning_rate(double base, int warmup_steps, int step, int decay_steps) {
  if (warmup_steps > 0 && step < warmup_steps) return base * static_cast<double>(step) / warmup_steps;
  if (decay_steps <= warmup_steps) return base;
  const double left = static_cast<double>(decay_steps - step + 1) / (decay_steps - warmup_steps);
  return base * std::clamp(left, 0.0, 1.0);
}

namespace {
constexpr std::uint64_t kMvlmStream = 1, kDspStream = 2, kDtmStream = 3;
}

template <typename T>
Pretrainer<T>::Pretrainer(DocumentModel<T>& model, const TrainConfig& cfg, std::vector<Document> docs,
                          std::map<std::string, std::vector<double>> doc_topics)
    : model_(model),
      cfg_(cfg),
      docs_(std::move(docs)),
      doc_topics_(std::move(doc_topics)),
      opt_(AdamWOptions{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay}) {
  cfg_.validate();
  if (docs_.empty()) throw std::invalid_argument("pre-training corpus is empty");
  const auto& mc = model_.config();
  for (const auto& d : docs_) {
    all_pool_.push_back(&d);
    if (std::min<int>(static_cast<int>(d.pages.size()), mc.max_pages) >= 2) dsp_pool_.push_back(&d);
    if (cfg_.tasks.clf) {
      if (!d.category) throw std::invalid_argument("document '" + d.id + "' has no category; CLF needs one for every document");
      if (*d.category < 0 || *d.category >= mc.num_classes)
        throw std::invalid_argument("document '" + d.id + "' has category " + std::to_string(*d.category) + " outside [0, " +
                                    std::to_string(mc.num_classes) + ")");
    }
    if (cfg_.tasks.dtm) {
      auto it = doc_topics_.find(d.id);
      if (it == doc_topics_.end())
        throw std::invalid_argument("no topic vector for document '" + d.id + "'; run mine-topics to produce doc_topics.jsonl");
      check_topic_vector(it->second, mc.num_topics, d.id);
    }
  }
  if (cfg_.tasks.dsp && dsp_pool_.empty())
    throw std::invalid_argument("page shuffle prediction needs documents with at least 2 pages, but every document has one page; "
                                "add multi-page documents to the corpus or disable the dsp task");
  mvlm_sampler_ = EpochSampler(all_pool_.size(), derive_seed(cfg_.seed, {kMvlmStream}));
  dsp_sampler_ = EpochSampler(dsp_pool_.size(), derive_seed(cfg_.seed, {kDspStream}));
  dtm_sampler_ = EpochSampler(all_pool_.size(), derive_seed(cfg_.seed, {kDtmStream}));
  runners_ = make_runners();
}

template <typename T>
std::vector<const Document*> Pretrainer<T>::sample(PretrainTask, EpochSampler& sampler, const std::vector<const Document*>& pool,
                                                   const TaskSchedule& sched, int step, int micro) {
  std::vector<const Document*> out;
  const std::uint64_t base =
      (static_cast<std::uint64_t>(step - 1) * sched.accumulation + static_cast<std::uint64_t>(micro)) * sched.batch_size;
  for (int i = 0; i < sched.batch_size; ++i) out.push_back(pool[sampler.at(base + i)]);
  return out;
}

template <typename T>
std::vector<TaskRunner<T>> Pretrainer<T>::make_runners() {
  std::vector<TaskRunner<T>> runners;
  const auto& mc = model_.config();
  if (cfg_.tasks.mvlm || cfg_.tasks.clf) {
    TaskRunner<T> r;
    r.name = "mvlm_clf";
    r.accumulation = cfg_.mvlm_clf.accumulation;
    r.run_micro = [this, &mc](int step, int micro, T grad_scale) {
      const auto docs = sample(PretrainTask::MvlmClf, mvlm_sampler_, all_pool_, cfg_.mvlm_clf, step, micro);
      std::vector<EncodedDocument> enc;
      for (const auto* d : docs) enc.push_back(encode_document(*d, mc));
      const auto seed = derive_seed(cfg_.seed, {kMvlmStream, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(micro)});
      const auto batch = build_mvlm_batch(std::move(enc), cfg_.tasks.mvlm ? mc.mask_prob : 0.0, mc.vocab_size, seed);
      const T per_doc = grad_scale * static_cast<T>(cfg_.mvlm_clf.weight / static_cast<double>(batch.size()));
      double mvlm = 0, clf = 0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        auto l = mvlm_clf_loss(model_, batch.items[i], batch.class_targets[i], cfg_.tasks.mvlm, cfg_.tasks.clf);
        Var<T> total;
        if (cfg_.tasks.mvlm) mvlm += l.mvlm.item();
        if (cfg_.tasks.clf) clf += l.clf.item();
        if (cfg_.tasks.mvlm && cfg_.tasks.clf)
          total = ops::add(l.mvlm, l.clf);
        else
          total = cfg_.tasks.mvlm ? l.mvlm : l.clf;
        if (std::isfinite(static_cast<double>(total.item()))) backward(total, per_doc);
      }
      std::vector<NamedLoss> out;
      const double n = static_cast<double>(batch.size());
      if (cfg_.tasks.mvlm) out.push_back({"mvlm", mvlm / n});
      if (cfg_.tasks.clf) out.push_back({"clf", clf / n});
      return out;
    };
    runners.push_back(std::move(r));
  }
  if (cfg_.tasks.dsp) {
    TaskRunner<T> r;
    r.name = "dsp";
    r.accumulation = cfg_.dsp.accumulation;
    r.run_micro = [this, &mc](int step, int micro, T grad_scale) {
      const auto docs = sample(PretrainTask::Dsp, dsp_sampler_, dsp_pool_, cfg_.dsp, step, micro);
      std::vector<EncodedDocument> enc;
      for (const auto* d : docs) enc.push_back(encode_document(*d, mc));
      const auto seed = derive_seed(cfg_.seed, {kDspStream, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(micro)});
      const auto batch = build_dsp_batch(std::move(enc), cfg_.dsp_shuffle_prob, seed);
      const T per_doc = grad_scale * static_cast<T>(cfg_.dsp.weight / static_cast<double>(batch.size()));
      double sum = 0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        auto l = dsp_loss(model_, batch.items[i], batch.class_targets[i]);
        sum += l.item();
        if (std::isfinite(static_cast<double>(l.item()))) backward(l, per_doc);
      }
      return std::vector<NamedLoss>{{"dsp", sum / static_cast<double>(batch.size())}};
    };
    runners.push_back(std::move(r));
  }
  if (cfg_.tasks.dtm) {
    TaskRunner<T> r;
    r.name = "dtm";
    r.accumulation = cfg_.dtm.accumulation;
    r.run_micro = [this, &mc](int step, int micro, T grad_scale) {
      const auto docs = sample(PretrainTask::Dtm, dtm_sampler_, all_pool_, cfg_.dtm, step, micro);
      const auto batch = build_dtm_batch(docs, doc_topics_, mc);
      const T per_doc = grad_scale * static_cast<T>(cfg_.dtm.weight / static_cast<double>(batch.size()));
      double sum = 0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        auto l = dtm_loss(model_, batch.items[i], batch.topic_targets[i]);
        sum += l.item();
        if (std::isfinite(static_cast<double>(l.item()))) backward(l, per_doc);
      }
      return std::vector<NamedLoss>{{"dtm", sum / static_cast<double>(batch.size())}};
    };
    runners.push_back(std::move(r));
  }
  if (runners.empty()) throw std::invalid_argument("no pre-training task enabled");
  return runners;
}

template <typename T>
StepRecord Pretrainer<T>::step() {
  const int next = step_ + 1;
  auto record = multitask_step(model_.parameters(), opt_, runners_, next,
                               scheduled_learning_rate(cfg_.learning_rate, cfg_.warmup_steps, next, cfg_.linear_decay ? cfg_.steps : 0), cfg_.max_grad_norm);
  step_ = next;
  return record;
}

template <typename T>
void Pretrainer<T>::run(const std::function<void(const StepRecord&)>& on_step, int until) {
  const int target = until > 0 ? until : cfg_.steps;
  while (step_ < target) {
    auto record = step();
    if (on_step) on_step(record);
  }
}

template <typename T>
void Pretrainer<T>::save_checkpoint(const std::filesystem::path& path) const {
  nlohmann::json extra;
  extra["train"] = cfg_;
  docrep::save_checkpoint(path, model_, &opt_, step_, cfg_.seed, extra);
}

template <typename T>
void Pretrainer<T>::load_checkpoint(const std::filesystem::path& path) {
  const auto meta = docrep::load_checkpoint(path, model_, &opt_);
  if (meta.seed != cfg_.seed)
    throw std::invalid_argument("checkpoint was written with seed " + std::to_string(meta.seed) + " but this run uses seed " +
                                std::to_string(cfg_.seed));
  step_ = meta.step;
}

template std::vector<NamedLoss> accumulate_task_gradients(const std::vector<TaskRunner<float>>&, int);
template std::vector<NamedLoss> accumulate_task_gradients(const std::vector<TaskRunner<double>>&, int);
template StepRecord multitask_step(ParameterSet<float>&, AdamW<float>&, const std::vector<TaskRunner<float>>&, int, double, double);
template StepRecord multitask_step(ParameterSet<double>&, AdamW<double>&, const std::vector<TaskRunner<double>>&, int, double,
                                   double);
template class Pretrainer<float>;
template class Pretrainer<double>;

}  // namespace docrep
