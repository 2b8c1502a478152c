#include "docrep/config.hpp"

#include <sstream>
#include <stdexcept>

#include "docrep/serialize.hpp"

namespace docrep {

std::string to_string(BackbonePreset preset) {
  switch (preset) {
    case BackbonePreset::Tiny: return "tiny";
    case BackbonePreset::Small: return "small";
    case BackbonePreset::Full: return "full";
  }
  return "tiny";
}

BackbonePreset backbone_preset_from_string(const std::string& name) {
  if (name == "tiny") return BackbonePreset::Tiny;
  if (name == "small") return BackbonePreset::Small;
  if (name == "full") return BackbonePreset::Full;
  throw std::invalid_argument("unknown backbone preset '" + name + "' (expected tiny, small or full)");
}

int BackboneConfig::stem_channels() const {
  switch (preset) {
    case BackbonePreset::Tiny: return 16;
    case BackbonePreset::Small: return 16;
    case BackbonePreset::Full: return 64;
  }
  return 16;
}

int BackboneConfig::stem_stride() const { return 4; }

std::vector<StageSpec> BackboneConfig::stages() const {
  switch (preset) {
    case BackbonePreset::Tiny: return {{16, 2}, {32, 2}};
    case BackbonePreset::Small: return {{32, 2}, {64, 2}, {64, 2}};
    case BackbonePreset::Full: return {{64, 1}, {128, 2}, {256, 2}, {512, 2}};
  }
  return {};
}

int BackboneConfig::d_img() const {
  switch (preset) {
    case BackbonePreset::Tiny: return 32;
    case BackbonePreset::Small: return 64;
    case BackbonePreset::Full: return 256;
  }
  return 32;
}

std::vector<int> BackboneConfig::pyramid_strides() const {
  std::vector<int> out;
  int stride = stem_stride();
  for (const auto& s : stages()) {
    stride *= s.stride;
    out.push_back(stride);
  }
  return out;
}

int BackboneConfig::resolved_output_level() const {
  const int levels = static_cast<int>(stages().size());
  if (output_level == -1) return levels - 1;
  if (output_level < 0 || output_level >= levels)
    throw std::invalid_argument("backbone output_level " + std::to_string(output_level) + " outside [0, " +
                                std::to_string(levels) + ")");
  return output_level;
}

int BackboneConfig::resolved_frozen_groups() const {
  const int groups = parameter_groups();
  if (frozen_stages == -1) return groups - 1;
  if (frozen_stages < 0 || frozen_stages > groups)
    throw std::invalid_argument("backbone frozen_stages " + std::to_string(frozen_stages) + " outside [0, " +
                                std::to_string(groups) + "]");
  return frozen_stages;
}

void EncoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("encoder.layers must be >= 1");
  if (heads < 1 || hidden % heads != 0) throw std::invalid_argument("encoder.hidden must be divisible by encoder.heads");
  if (window < 0 || window % 2 != 0) throw std::invalid_argument("encoder.window must be even");
  if (feed_forward < 1) throw std::invalid_argument("encoder.feed_forward must be >= 1");
}

void ModelConfig::validate() const {
  encoder.validate();
  if (vocab_size <= kFirstRegularToken) throw std::invalid_argument("vocab_size must exceed the reserved ids");
  if (max_pages < 1 || tokens_per_page < 1) throw std::invalid_argument("max_pages and tokens_per_page must be >= 1");
  if (page_width < 1 || page_height < 1) throw std::invalid_argument("page size must be positive");
  if (encoder.hidden % 2 != 0) throw std::invalid_argument("encoder.hidden must be even for sinusoidal page embeddings");
  if (num_classes < 2 || num_topics < 2 || num_token_labels < 2)
    throw std::invalid_argument("num_classes, num_topics and num_token_labels must be >= 2");
  if (mask_prob < 0.0 || mask_prob > 1.0) throw std::invalid_argument("mask_prob must lie in [0, 1]");
  (void)backbone.resolved_output_level();
  (void)backbone.resolved_frozen_groups();
}

std::string TaskToggles::str() const {
  std::string out;
  auto add = [&out](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(mvlm, "mvlm");
  add(clf, "clf");
  add(dsp, "dsp");
  add(dtm, "dtm");
  return out;
}

TaskToggles TaskToggles::parse(const std::string& csv) {
  TaskToggles t{false, false, false, false};
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "mvlm") t.mvlm = true;
    else if (item == "clf") t.clf = true;
    else if (item == "dsp") t.dsp = true;
    else if (item == "dtm") t.dtm = true;
    else if (!item.empty()) throw std::invalid_argument("unknown task '" + item + "' (expected mvlm, clf, dsp, dtm)");
  }
  if (!t.mvlm && !t.clf && !t.dsp && !t.dtm) throw std::invalid_argument("at least one pre-training task must be enabled");
  return t;
}

void TrainConfig::validate() const {
  for (const auto* s : {&mvlm_clf, &dsp, &dtm})
    if (s->batch_size < 1 || s->accumulation < 1)
      throw std::invalid_argument("task batch sizes and accumulation counts must be >= 1");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (learning_rate < 0) throw std::invalid_argument("learning_rate must be >= 0");
  if (dsp_shuffle_prob < 0 || dsp_shuffle_prob > 1) throw std::invalid_argument("dsp_shuffle_prob must lie in [0, 1]");
}

void FinetuneConfig::validate() const {
  if (batch_size < 1 || accumulation < 1) throw std::invalid_argument("finetune batch_size and accumulation must be >= 1");
  if (steps < 0) throw std::invalid_argument("finetune steps must be >= 0");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename V>
void read_opt(const nlohmann::json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

}  // namespace

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = {{"preset", to_string(c.preset)}, {"output_level", c.output_level}, {"frozen_stages", c.frozen_stages}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  if (auto it = j.find("preset"); it != j.end()) c.preset = backbone_preset_from_string(it->get<std::string>());
  read_opt(j, "output_level", c.output_level);
  read_opt(j, "frozen_stages", c.frozen_stages);
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"layers", c.layers}, {"heads", c.heads}, {"hidden", c.hidden}, {"feed_forward", c.feed_forward}, {"window", c.window}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  read_opt(j, "layers", c.layers);
  read_opt(j, "heads", c.heads);
  read_opt(j, "hidden", c.hidden);
  read_opt(j, "feed_forward", c.feed_forward);
  read_opt(j, "window", c.window);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size},
       {"max_pages", c.max_pages},
       {"tokens_per_page", c.tokens_per_page},
       {"page_width", c.page_width},
       {"page_height", c.page_height},
       {"num_classes", c.num_classes},
       {"num_topics", c.num_topics},
       {"num_token_labels", c.num_token_labels},
       {"mask_prob", c.mask_prob},
       {"trainable_page_embeddings", c.trainable_page_embeddings},
       {"dtm_per_page", c.dtm_per_page},
       {"init_std", c.init_std},
       {"embedding_init_std", c.embedding_init_std},
       {"encoder", c.encoder},
       {"backbone", c.backbone}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  read_opt(j, "vocab_size", c.vocab_size);
  read_opt(j, "max_pages", c.max_pages);
  read_opt(j, "tokens_per_page", c.tokens_per_page);
  read_opt(j, "page_width", c.page_width);
  read_opt(j, "page_height", c.page_height);
  read_opt(j, "num_classes", c.num_classes);
  read_opt(j, "num_topics", c.num_topics);
  read_opt(j, "num_token_labels", c.num_token_labels);
  read_opt(j, "mask_prob", c.mask_prob);
  read_opt(j, "trainable_page_embeddings", c.trainable_page_embeddings);
  read_opt(j, "dtm_per_page", c.dtm_per_page);
  read_opt(j, "init_std", c.init_std);
  read_opt(j, "embedding_init_std", c.embedding_init_std);
  read_opt(j, "encoder", c.encoder);
  read_opt(j, "backbone", c.backbone);
}

void to_json(nlohmann::json& j, const TaskSchedule& c) {
  j = {{"batch_size", c.batch_size}, {"accumulation", c.accumulation}, {"weight", c.weight}};
}

void from_json(const nlohmann::json& j, TaskSchedule& c) {
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "accumulation", c.accumulation);
  read_opt(j, "weight", c.weight);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"warmup_steps", c.warmup_steps},
       {"linear_decay", c.linear_decay},
       {"max_grad_norm", c.max_grad_norm},
       {"mvlm_clf", c.mvlm_clf},
       {"dsp", c.dsp},
       {"dtm", c.dtm},
       {"dsp_shuffle_prob", c.dsp_shuffle_prob},
       {"tasks", c.tasks.str()},
       {"seed", c.seed},
       {"checkpoint_interval", c.checkpoint_interval}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  read_opt(j, "steps", c.steps);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "adam_eps", c.adam_eps);
  read_opt(j, "warmup_steps", c.warmup_steps);
  read_opt(j, "linear_decay", c.linear_decay);
  read_opt(j, "max_grad_norm", c.max_grad_norm);
  read_opt(j, "mvlm_clf", c.mvlm_clf);
  read_opt(j, "dsp", c.dsp);
  read_opt(j, "dtm", c.dtm);
  read_opt(j, "dsp_shuffle_prob", c.dsp_shuffle_prob);
  if (auto it = j.find("tasks"); it != j.end()) c.tasks = TaskToggles::parse(it->get<std::string>());
  read_opt(j, "seed", c.seed);
  read_opt(j, "checkpoint_interval", c.checkpoint_interval);
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = {{"task", c.task == FinetuneConfig::Task::Classification ? "classification" : "token_labeling"},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"accumulation", c.accumulation},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  if (auto it = j.find("task"); it != j.end()) {
    const auto name = it->get<std::string>();
    if (name == "classification") c.task = FinetuneConfig::Task::Classification;
    else if (name == "token_labeling") c.task = FinetuneConfig::Task::TokenLabeling;
    else throw std::invalid_argument("unknown finetune task '" + name + "'");
  }
  read_opt(j, "steps", c.steps);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "accumulation", c.accumulation);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "seed", c.seed);
}

std::string first_config_difference(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix) {
  if (a.is_object() && b.is_object()) {
    for (auto it = a.begin(); it != a.end(); ++it) {
      const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
      auto other = b.find(it.key());
      if (other == b.end()) return path;
      if (auto diff = first_config_difference(*it, *other, path); !diff.empty()) return diff;
    }
    for (auto it = b.begin(); it != b.end(); ++it)
      if (!a.contains(it.key())) return prefix.empty() ? it.key() : prefix + "." + it.key();
    return {};
  }
  return a == b ? std::string{} : (prefix.empty() ? std::string("<root>") : prefix);
}

}  // namespace docrep
