#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "docrep/corpus.hpp"
#include "docrep/model.hpp"

namespace docrep {

enum class PretrainTask { MvlmClf, Dsp, Dtm };

std::string to_string(PretrainTask task);

/// Model-ready inputs and targets for one micro-batch of one task.
struct TaskBatch {
  PretrainTask task = PretrainTask::MvlmClf;
  std::vector<EncodedDocument> items;
  /// Category (MVLM+CLF) or shuffled flag (DSP), one per item; -1 if absent.
  std::vector<std::int64_t> class_targets;
  /// Topic distribution per item (DTM).
  std::vector<std::vector<double>> topic_targets;

  std::size_t size() const { return items.size(); }
};

struct MvlmCounts {
  std::int64_t selected = 0, masked = 0, randomized = 0, kept = 0;
};

/// Corrupts one encoded document in place and fills its mvlm_labels. Random
/// replacements are drawn uniformly from the regular (non-special) ids.
MvlmCounts apply_mvlm_masking(EncodedDocument& enc, double mask_prob, std::int64_t vocab_size, Rng& rng);

TaskBatch build_mvlm_batch(std::vector<EncodedDocument> docs, double mask_prob, std::int64_t vocab_size,
                           std::uint64_t seed, MvlmCounts* counts = nullptr);

/// Category ids for CLF; throws if any document lacks a category in [0, num_classes).
std::vector<std::int64_t> build_clf_targets(const std::vector<EncodedDocument>& docs, int num_classes);

/// Uniformly random non-identity permutation of 0..n-1 (n >= 2).
std::vector<int> random_nonidentity_permutation(int n, Rng& rng);

/// Draws the shuffle decision for every eligible (>= 2 page) document and
/// permutes only its page-to-image lookup. Single-page documents are dropped.
TaskBatch build_dsp_batch(std::vector<EncodedDocument> docs, double shuffle_prob, std::uint64_t seed);

/// CLS, then per page a MASK token with the full-page box followed by SEP.
/// With per_page == false a single MASK (page 0) precedes the per-page SEPs.
EncodedDocument encode_dtm_document(const Document& doc, const ModelConfig& cfg, bool per_page = true);

/// Throws unless theta is a length-K probability vector summing to 1 within 1e-6.
void check_topic_vector(const std::vector<double>& theta, int num_topics, const std::string& doc_id);

TaskBatch build_dtm_batch(const std::vector<const Document*>& docs, const std::map<std::string, std::vector<double>>& doc_topics,
                          const ModelConfig& cfg);

template <typename T>
Var<T> soft_cross_entropy(const Var<T>& logits, const std::vector<std::vector<double>>& targets);

/// Per-document task losses on the tape.
template <typename T>
struct MvlmClfLoss {
  Var<T> mvlm, clf;
};

template <typename T>
MvlmClfLoss<T> mvlm_clf_loss(const DocumentModel<T>& model, const EncodedDocument& enc, std::int64_t category,
                             bool use_mvlm, bool use_clf);
template <typename T>
Var<T> dsp_loss(const DocumentModel<T>& model, const EncodedDocument& enc, std::int64_t shuffled);
template <typename T>
Var<T> dtm_loss(const DocumentModel<T>& model, const EncodedDocument& enc, const std::vector<double>& theta);

/// Fraction of DSP predictions that match freshly drawn shuffle labels.
template <typename T>
double dsp_accuracy(const DocumentModel<T>& model, const std::vector<Document>& docs, double shuffle_prob, std::uint64_t seed);

}  // namespace docrep
