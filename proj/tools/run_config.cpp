#include "run_config.hpp"

#include <stdexcept>

#include "docrep/rng.hpp"
#include "docrep/serialize.hpp"

namespace docrep::cli {

RunConfig::RunConfig() {
  model.vocab_size = corpus.vocab_size();
  model.num_classes = corpus.num_categories;
  model.encoder.hidden = 32;
  model.encoder.heads = 2;
  model.encoder.feed_forward = 64;
  model.num_topics = 8;
  train.steps = 600;
  train.learning_rate = 3e-3;
  train.linear_decay = true;
  train.mvlm_clf = {8, 1, 1.0};
  train.dsp = {8, 1, 1.0};
  train.dtm = {8, 1, 1.0};
  train.checkpoint_interval = 100;
  finetune.steps = 100;
  finetune.batch_size = 8;
  finetune.accumulation = 1;
  finetune.learning_rate = 1e-3;
}

void RunConfig::validate() const {
  if (precision != "single" && precision != "double")
    throw std::invalid_argument("precision must be 'single' or 'double', got '" + precision + "'");
  if (device != "cpu") throw std::invalid_argument("device '" + device + "' is not available in this build; use --device cpu");
  if (!(eval.train_fraction > 0.0 && eval.train_fraction < 1.0)) throw std::invalid_argument("eval.train_fraction must lie in (0, 1)");
  if (eval.split != "test" && eval.split != "train") throw std::invalid_argument("eval.split must be 'test' or 'train'");
  for (int k : eval.ndcg_k)
    if (k < 1) throw std::invalid_argument("eval.ndcg_k entries must be >= 1");
  model.validate();
  train.validate();
  finetune.validate();
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["precision"] = c.precision;
  j["device"] = c.device;
  j["ablation"] = c.ablation;
  j["model"] = c.model;
  j["train"] = c.train;
  j["finetune"] = c.finetune;
  j["corpus"] = {{"num_docs", c.corpus.num_docs},
                 {"num_categories", c.corpus.num_categories},
                 {"min_pages", c.corpus.min_pages},
                 {"max_pages", c.corpus.max_pages},
                 {"min_tokens_per_page", c.corpus.min_tokens_per_page},
                 {"max_tokens_per_page", c.corpus.max_tokens_per_page},
                 {"category_vocab", c.corpus.category_vocab},
                 {"shared_vocab", c.corpus.shared_vocab},
                 {"in_category_prob", c.corpus.in_category_prob},
                 {"table_prob", c.corpus.table_prob},
                 {"page_width", c.corpus.page_width},
                 {"page_height", c.corpus.page_height},
                 {"margin", c.corpus.margin}};
  j["lda"] = {{"alpha", c.lda.alpha}, {"beta", c.lda.beta}, {"iterations", c.lda.iterations}, {"infer_iterations", c.lda.infer_iterations}};
  j["paths"] = {{"corpus", c.paths.corpus}, {"topics", c.paths.topics}, {"checkpoint", c.paths.checkpoint}};
  j["eval"] = {{"train_fraction", c.eval.train_fraction}, {"split", c.eval.split}, {"ndcg_k", c.eval.ndcg_k}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.precision = j.at("precision").get<std::string>();
  c.device = j.at("device").get<std::string>();
  c.ablation = j.at("ablation").get<std::string>();
  c.model = j.at("model").get<ModelConfig>();
  c.train = j.at("train").get<TrainConfig>();
  c.finetune = j.at("finetune").get<FinetuneConfig>();
  const auto& s = j.at("corpus");
  c.corpus.num_docs = s.at("num_docs");
  c.corpus.num_categories = s.at("num_categories");
  c.corpus.min_pages = s.at("min_pages");
  c.corpus.max_pages = s.at("max_pages");
  c.corpus.min_tokens_per_page = s.at("min_tokens_per_page");
  c.corpus.max_tokens_per_page = s.at("max_tokens_per_page");
  c.corpus.category_vocab = s.at("category_vocab");
  c.corpus.shared_vocab = s.at("shared_vocab");
  c.corpus.in_category_prob = s.at("in_category_prob");
  c.corpus.table_prob = s.at("table_prob");
  c.corpus.page_width = s.at("page_width");
  c.corpus.page_height = s.at("page_height");
  c.corpus.margin = s.at("margin");
  const auto& l = j.at("lda");
  c.lda.alpha = l.at("alpha");
  c.lda.beta = l.at("beta");
  c.lda.iterations = l.at("iterations");
  c.lda.infer_iterations = l.at("infer_iterations");
  const auto& p = j.at("paths");
  c.paths.corpus = p.at("corpus");
  c.paths.topics = p.at("topics");
  c.paths.checkpoint = p.at("checkpoint");
  const auto& e = j.at("eval");
  c.eval.train_fraction = e.at("train_fraction");
  c.eval.split = e.at("split");
  c.eval.ndcg_k = e.at("ndcg_k").get<std::vector<int>>();
  return c;
}

void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& where) {
  if (!patch.is_object()) throw std::invalid_argument(where + ": configuration must be a JSON object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const auto key = where.empty() ? it.key() : where + "." + it.key();
    auto target = base.find(it.key());
    if (target == base.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    if (target->is_object())
      merge_config(*target, *it, key);
    else
      *target = *it;
  }
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' must look like key.path=value");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    auto it = node->find(part);
    if (!node->is_object() || it == node->end()) throw std::invalid_argument("unknown config key '" + key + "'");
    node = &*it;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_string() && !value.is_string()) value = text;
  *node = value;
}

std::uint64_t lda_seed(const RunConfig& c) { return derive_seed(c.seed, {0x1DA}); }
std::uint64_t model_seed(const RunConfig& c) { return derive_seed(c.seed, {0x30DE1}); }
std::uint64_t train_seed(const RunConfig& c) { return derive_seed(c.seed, {0x7A1}); }
std::uint64_t finetune_seed(const RunConfig& c) { return derive_seed(c.seed, {0xF1E}); }

}  // namespace docrep::cli
