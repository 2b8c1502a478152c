#include "docrep/pretrain.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace docrep {

std::string to_string(PretrainTask task) {
  switch (task) {
    case PretrainTask::MvlmClf: return "mvlm_clf";
    case PretrainTask::Dsp: return "dsp";
    case PretrainTask::Dtm: return "dtm";
  }
  return "?";
}

MvlmCounts apply_mvlm_masking(EncodedDocument& enc, double mask_prob, std::int64_t vocab_size, Rng& rng) {
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) throw std::invalid_argument("mask_prob must lie in [0, 1]");
  if (vocab_size <= kFirstRegularToken) throw std::invalid_argument("vocabulary has no regular tokens");
  MvlmCounts counts;
  enc.mvlm_labels.assign(enc.input_ids.size(), kIgnoreLabel);
  for (std::int64_t s = 0; s < enc.length(); ++s) {
    if (enc.is_special(s)) continue;
    if (!rng.bernoulli(mask_prob)) continue;
    ++counts.selected;
    enc.mvlm_labels[s] = enc.input_ids[s];
    const double r = rng.uniform();
    if (r < 0.8) {
      enc.input_ids[s] = kMaskToken;
      ++counts.masked;
    } else if (r < 0.9) {
      enc.input_ids[s] = rng.range(kFirstRegularToken, vocab_size - 1);
      ++counts.randomized;
    } else {
      ++counts.kept;
    }
  }
  return counts;
}

TaskBatch build_mvlm_batch(std::vector<EncodedDocument> docs, double mask_prob, std::int64_t vocab_size, std::uint64_t seed,
                           MvlmCounts* counts) {
  TaskBatch batch;
  batch.task = PretrainTask::MvlmClf;
  MvlmCounts total;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    Rng rng(derive_seed(seed, {i}));
    const auto c = apply_mvlm_masking(docs[i], mask_prob, vocab_size, rng);
    total.selected += c.selected;
    total.masked += c.masked;
    total.randomized += c.randomized;
    total.kept += c.kept;
    batch.class_targets.push_back(docs[i].category.value_or(-1));
  }
  batch.items = std::move(docs);
  if (counts) *counts = total;
  return batch;
}

std::vector<std::int64_t> build_clf_targets(const std::vector<EncodedDocument>& docs, int num_classes) {
  std::vector<std::int64_t> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    if (!d.category) throw std::invalid_argument("document '" + d.doc_id + "' has no category; CLF needs one for every document");
    if (*d.category < 0 || *d.category >= num_classes)
      throw std::invalid_argument("document '" + d.doc_id + "' has category " + std::to_string(*d.category) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    out.push_back(*d.category);
  }
  return out;
}

std::vector<int> random_nonidentity_permutation(int n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("a non-identity permutation needs at least 2 elements");
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (;;) {
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    for (int i = 0; i < n; ++i)
      if (perm[i] != i) return perm;
  }
}

TaskBatch build_dsp_batch(std::vector<EncodedDocument> docs, double shuffle_prob, std::uint64_t seed) {
  if (!(shuffle_prob >= 0.0 && shuffle_prob <= 1.0)) throw std::invalid_argument("shuffle_prob must lie in [0, 1]");
  TaskBatch batch;
  batch.task = PretrainTask::Dsp;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto& enc = docs[i];
    if (enc.num_pages() < 2) continue;
    Rng rng(derive_seed(seed, {i}));
    const bool shuffled = rng.bernoulli(shuffle_prob);
    if (shuffled) enc.image_source = random_nonidentity_permutation(enc.num_pages(), rng);
    batch.class_targets.push_back(shuffled ? 1 : 0);
    batch.items.push_back(std::move(enc));
  }
  if (batch.items.empty())
    throw std::invalid_argument("page shuffle prediction needs documents with at least 2 pages, but all " +
                                std::to_string(docs.size()) +
                                " documents in the batch have a single page; add multi-page documents to the corpus or disable the dsp task");
  return batch;
}

EncodedDocument encode_dtm_document(const Document& doc, const ModelConfig& cfg, bool per_page) {
  if (doc.pages.empty()) throw std::invalid_argument("document '" + doc.id + "' has no pages");
  const int u = cfg.page_width, v = cfg.page_height;
  const int kept = std::min<int>(static_cast<int>(doc.pages.size()), cfg.max_pages);
  EncodedDocument enc;
  enc.doc_id = doc.id;
  enc.category = doc.category;
  enc.pages.assign(doc.pages.begin(), doc.pages.begin() + kept);
  enc.image_source.resize(kept);
  std::iota(enc.image_source.begin(), enc.image_source.end(), 0);
  auto push = [&](std::int64_t id, int page) {
    enc.input_ids.push_back(id);
    enc.x1s.push_back(0);
    enc.y1s.push_back(0);
    enc.x2s.push_back(u);
    enc.y2s.push_back(v);
    enc.hs.push_back(v);
    enc.ws.push_back(u);
    enc.page_ids.push_back(page);
    enc.attention_mask.push_back(1);
    enc.global_mask.push_back(id == kClsToken ? 1 : 0);
  };
  push(kClsToken, 0);
  for (int p = 0; p < kept; ++p) {
    if (per_page || p == 0) push(kMaskToken, p);
    push(kSepToken, p);
  }
  return enc;
}

void check_topic_vector(const std::vector<double>& theta, int num_topics, const std::string& doc_id) {
  if (static_cast<int>(theta.size()) != num_topics)
    throw std::invalid_argument("topic vector of document '" + doc_id + "' has " + std::to_string(theta.size()) +
                                " entries, expected " + std::to_string(num_topics));
  double sum = 0;
  for (double t : theta) {
    if (!(t >= 0.0) || !std::isfinite(t))
      throw std::invalid_argument("topic vector of document '" + doc_id + "' has a negative or non-finite entry");
    sum += t;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("topic vector of document '" + doc_id + "' sums to " + std::to_string(sum) + ", not 1");
}

TaskBatch build_dtm_batch(const std::vector<const Document*>& docs, const std::map<std::string, std::vector<double>>& doc_topics,
                          const ModelConfig& cfg) {
  TaskBatch batch;
  batch.task = PretrainTask::Dtm;
  for (const auto* doc : docs) {
    auto it = doc_topics.find(doc->id);
    if (it == doc_topics.end()) throw std::invalid_argument("no topic vector for document '" + doc->id + "' in doc_topics.jsonl");
    check_topic_vector(it->second, cfg.num_topics, doc->id);
    batch.items.push_back(encode_dtm_document(*doc, cfg, cfg.dtm_per_page));
    batch.topic_targets.push_back(it->second);
  }
  return batch;
}

template <typename T>
Var<T> soft_cross_entropy(const Var<T>& logits, const std::vector<std::vector<double>>& targets) {
  const auto K = logits.shape().at(1);
  Tensor<T> t({static_cast<std::int64_t>(targets.size()), K});
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (static_cast<std::int64_t>(targets[r].size()) != K) throw std::invalid_argument("soft_cross_entropy: target width mismatch");
    for (std::int64_t k = 0; k < K; ++k) t.at(static_cast<std::int64_t>(r), k) = static_cast<T>(targets[r][k]);
  }
  return ops::soft_cross_entropy(logits, t);
}

template <typename T>
MvlmClfLoss<T> mvlm_clf_loss(const DocumentModel<T>& model, const EncodedDocument& enc, std::int64_t category, bool use_mvlm,
                             bool use_clf) {
  MvlmClfLoss<T> out;
  const auto hidden = model.forward(enc);
  if (use_mvlm) {
    std::vector<std::int64_t> rows, labels;
    for (std::size_t s = 0; s < enc.mvlm_labels.size(); ++s)
      if (enc.mvlm_labels[s] >= 0) {
        rows.push_back(static_cast<std::int64_t>(s));
        labels.push_back(enc.mvlm_labels[s]);
      }
    if (rows.empty())
      out.mvlm = ops::constant(Tensor<T>({1}));
    else
      out.mvlm = ops::cross_entropy(model.mvlm_head()(ops::select_rows(hidden, rows)), labels);
  }
  if (use_clf) {
    if (category < 0) throw std::invalid_argument("document '" + enc.doc_id + "' has no category; CLF needs one");
    out.clf = ops::cross_entropy(model.clf_head()(DocumentModel<T>::cls_state(hidden)), {category});
  }
  return out;
}

template <typename T>
Var<T> dsp_loss(const DocumentModel<T>& model, const EncodedDocument& enc, std::int64_t shuffled) {
  const auto hidden = model.forward(enc);
  return ops::cross_entropy(model.dsp_head()(DocumentModel<T>::cls_state(hidden)), {shuffled});
}

template <typename T>
Var<T> dtm_loss(const DocumentModel<T>& model, const EncodedDocument& enc, const std::vector<double>& theta) {
  const auto hidden = model.forward(enc);
  return soft_cross_entropy(model.dtm_head()(DocumentModel<T>::cls_state(hidden)), {theta});
}

template <typename T>
double dsp_accuracy(const DocumentModel<T>& model, const std::vector<Document>& docs, double shuffle_prob, std::uint64_t seed) {
  NoGradGuard no_grad;
  std::vector<EncodedDocument> encoded;
  for (const auto& d : docs)
    if (std::min<int>(static_cast<int>(d.pages.size()), model.config().max_pages) >= 2)
      encoded.push_back(encode_document(d, model.config()));
  const auto batch = build_dsp_batch(std::move(encoded), shuffle_prob, seed);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto logits = model.dsp_head()(DocumentModel<T>::cls_state(model.forward(batch.items[i]))).value();
    const std::int64_t pred = logits.data[1] > logits.data[0] ? 1 : 0;
    correct += pred == batch.class_targets[i];
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

#define DOCREP_INSTANTIATE_PRETRAIN(T)                                                                               \
  template Var<T> soft_cross_entropy(const Var<T>&, const std::vector<std::vector<double>>&);                        \
  template MvlmClfLoss<T> mvlm_clf_loss(const DocumentModel<T>&, const EncodedDocument&, std::int64_t, bool, bool); \
  template Var<T> dsp_loss(const DocumentModel<T>&, const EncodedDocument&, std::int64_t);                           \
  template Var<T> dtm_loss(const DocumentModel<T>&, const EncodedDocument&, const std::vector<double>&);              \
  template double dsp_accuracy(const DocumentModel<T>&, const std::vector<Document>&, double, std::uint64_t);

DOCREP_INSTANTIATE_PRETRAIN(float)
DOCREP_INSTANTIATE_PRETRAIN(double)

}  // namespace docrep
