#include "docrep/finetune.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace docrep {

nlohmann::json ablation_json(const AblationMask& a) {
  return {{"name", a.name()}, {"use_text", a.use_text}, {"use_layout", a.use_layout}, {"use_image", a.use_image}, {"use_page", a.use_page}};
}

template <typename T>
Classification classify_document(const DocumentModel<T>& model, const EncodedDocument& enc, const AblationMask& ablation) {
  NoGradGuard no_grad;
  const auto hidden = model.forward(enc, ablation);
  const auto logits = model.doc_class_head()(DocumentModel<T>::cls_state(hidden));
  const auto probs = ops::softmax_rows(logits.value());
  Classification out;
  out.probabilities.assign(probs.data.begin(), probs.data.end());
  out.label = std::max_element(out.probabilities.begin(), out.probabilities.end()) - out.probabilities.begin();
  return out;
}

template <typename T>
std::vector<TokenPrediction> label_tokens(const DocumentModel<T>& model, const EncodedDocument& enc, const AblationMask& ablation) {
  std::vector<std::int64_t> rows;
  for (std::int64_t s = 0; s < enc.length(); ++s)
    if (!enc.is_special(s)) rows.push_back(s);
  std::vector<TokenPrediction> out;
  if (rows.empty()) return out;
  NoGradGuard no_grad;
  const auto hidden = model.forward(enc, ablation);
  const auto logits = model.token_head()(ops::select_rows(hidden, rows)).value();
  const auto C = logits.cols();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const T* z = logits.data.data() + static_cast<std::int64_t>(i) * C;
    out.push_back({rows[i], std::max_element(z, z + C) - z});
  }
  return out;
}

template <typename T>
std::vector<double> extract_embedding(const DocumentModel<T>& model, const EncodedDocument& enc, const AblationMask& ablation) {
  NoGradGuard no_grad;
  const auto cls = DocumentModel<T>::cls_state(model.forward(enc, ablation)).value();
  return {cls.data.begin(), cls.data.end()};
}

template <typename T>
Finetuner<T>::Finetuner(DocumentModel<T>& model, const FinetuneConfig& cfg, std::vector<Document> train)
    : model_(model), cfg_(cfg), train_(std::move(train)), opt_(AdamWOptions{0.9, 0.999, 1e-8, cfg.weight_decay}) {
  cfg_.validate();
  if (train_.empty()) throw std::invalid_argument("fine-tuning set is empty");
  const auto& mc = model_.config();
  const bool classify = cfg_.task == FinetuneConfig::Task::Classification;
  for (const auto& d : train_) {
    if (classify) {
      if (!d.category || *d.category < 0 || *d.category >= mc.num_classes)
        throw std::invalid_argument("document '" + d.id + "' lacks a category in [0, " + std::to_string(mc.num_classes) + ")");
    } else {
      const bool any = std::any_of(d.tokens.begin(), d.tokens.end(), [](const TokenRecord& t) { return t.label.has_value(); });
      if (!any) throw std::invalid_argument("document '" + d.id + "' has no token labels");
    }
  }
  sampler_ = EpochSampler(train_.size(), derive_seed(cfg_.seed, {0xF17E}));
  TaskRunner<T> r;
  r.name = classify ? "doc_class" : "token";
  r.accumulation = cfg_.accumulation;
  r.run_micro = [this, classify, &mc](int step, int micro, T grad_scale) {
    const std::uint64_t base =
        (static_cast<std::uint64_t>(step - 1) * cfg_.accumulation + static_cast<std::uint64_t>(micro)) * cfg_.batch_size;
    const T per_doc = grad_scale / static_cast<T>(cfg_.batch_size);
    double sum = 0;
    for (int i = 0; i < cfg_.batch_size; ++i) {
      const auto& doc = train_[sampler_.at(base + i)];
      const auto enc = encode_document(doc, mc);
      const auto hidden = model_.forward(enc);
      Var<T> loss;
      if (classify) {
        loss = ops::cross_entropy(model_.doc_class_head()(DocumentModel<T>::cls_state(hidden)), {*doc.category});
      } else {
        std::vector<std::int64_t> rows, labels;
        for (std::int64_t s = 0; s < enc.length(); ++s)
          if (!enc.is_special(s) && enc.token_labels[s] >= 0) {
            rows.push_back(s);
            labels.push_back(enc.token_labels[s]);
          }
        if (rows.empty()) continue;
        loss = ops::cross_entropy(model_.token_head()(ops::select_rows(hidden, rows)), labels);
      }
      sum += loss.item();
      if (std::isfinite(static_cast<double>(loss.item()))) backward(loss, per_doc);
    }
    return std::vector<NamedLoss>{{classify ? "doc_class" : "token", sum / cfg_.batch_size}};
  };
  runners_.push_back(std::move(r));
}

template <typename T>
StepRecord Finetuner<T>::step() {
  const int next = step_ + 1;
  auto record = multitask_step(model_.parameters(), opt_, runners_, next, cfg_.learning_rate);
  step_ = next;
  return record;
}

template <typename T>
void Finetuner<T>::run(const std::function<void(const StepRecord&)>& on_step) {
  while (step_ < cfg_.steps) {
    auto record = step();
    if (on_step) on_step(record);
  }
}

template <typename T>
WeightedPRF evaluate_classification(const DocumentModel<T>& model, const std::vector<Document>& docs, const AblationMask& ablation) {
  std::vector<std::int64_t> truth, pred;
  for (const auto& d : docs) {
    if (!d.category) throw std::invalid_argument("document '" + d.id + "' has no category to evaluate against");
    truth.push_back(*d.category);
    pred.push_back(classify_document(model, encode_document(d, model.config()), ablation).label);
  }
  return weighted_prf(truth, pred);
}

template <typename T>
WeightedPRF evaluate_token_labeling(const DocumentModel<T>& model, const std::vector<Document>& docs, const AblationMask& ablation) {
  std::vector<std::int64_t> truth, pred;
  for (const auto& d : docs) {
    const auto enc = encode_document(d, model.config());
    if (enc.token_labels.empty()) continue;
    for (const auto& p : label_tokens(model, enc, ablation)) {
      const auto t = enc.token_labels[p.position];
      if (t < 0) continue;
      truth.push_back(t);
      pred.push_back(p.label);
    }
  }
  if (truth.empty()) throw std::invalid_argument("no labeled tokens to evaluate");
  return weighted_prf(truth, pred);
}

template <typename T>
RetrievalEvaluation evaluate_retrieval(const DocumentModel<T>& model, const std::vector<Document>& queries,
                                       const std::vector<Document>& index, const std::vector<int>& ks, const AblationMask& ablation) {
  std::vector<IndexEntry> entries;
  std::map<std::string, std::optional<int>> category;
  for (const auto& d : index) {
    entries.emplace_back(d.id, extract_embedding(model, encode_document(d, model.config()), ablation));
    category[d.id] = d.category;
  }
  RetrievalEvaluation out;
  std::vector<std::vector<int>> rels;
  for (const auto& q : queries) {
    QueryRanking qr;
    qr.query_id = q.id;
    qr.hits = retrieve(extract_embedding(model, encode_document(q, model.config()), ablation), entries);
    for (const auto& h : qr.hits) {
      const auto& c = category[h.id];
      qr.relevances.push_back(c && q.category && *c == *q.category ? 1 : 0);
    }
    rels.push_back(qr.relevances);
    out.rankings.push_back(std::move(qr));
  }
  out.metrics = map_ndcg(rels, ks);
  return out;
}

#define DOCREP_INSTANTIATE_FINETUNE(T)                                                                                        \
  template Classification classify_document(const DocumentModel<T>&, const EncodedDocument&, const AblationMask&);           \
  template std::vector<TokenPrediction> label_tokens(const DocumentModel<T>&, const EncodedDocument&, const AblationMask&);  \
  template std::vector<double> extract_embedding(const DocumentModel<T>&, const EncodedDocument&, const AblationMask&);      \
  template class Finetuner<T>;                                                                                                \
  template WeightedPRF evaluate_classification(const DocumentModel<T>&, const std::vector<Document>&, const AblationMask&);  \
  template WeightedPRF evaluate_token_labeling(const DocumentModel<T>&, const std::vector<Document>&, const AblationMask&);  \
  template RetrievalEvaluation evaluate_retrieval(const DocumentModel<T>&, const std::vector<Document>&,                      \
                                                  const std::vector<Document>&, const std::vector<int>&, const AblationMask&);

DOCREP_INSTANTIATE_FINETUNE(float)
DOCREP_INSTANTIATE_FINETUNE(double)

}  // namespace docrep
