#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace docrep {

/// Fitted LDA state. Counts are from the final Gibbs sweep.
struct TopicModel {
  int num_topics = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::int64_t vocab_size = 0;
  /// num_topics x vocab_size, row-major.
  std::vector<std::int64_t> topic_word_counts;
  std::vector<std::int64_t> topic_counts;

  std::int64_t word_count(int topic, std::int64_t word) const {
    return topic_word_counts[static_cast<std::size_t>(topic) * vocab_size + word];
  }
  /// Smoothed p(word | topic).
  double word_probability(int topic, std::int64_t word) const;
  /// Highest-probability words of a topic, most probable first.
  std::vector<std::int64_t> top_words(int topic, std::size_t n) const;
};

struct LdaOptions {
  int num_topics = 30;
  /// Symmetric document-topic prior; <= 0 selects 50 / num_topics.
  double alpha = -1.0;
  double beta = 0.01;
  int iterations = 500;
  std::uint64_t seed = 0;
  /// Called after every sweep with (sweep index, current topic_counts).
  std::function<void(int, const std::vector<std::int64_t>&)> on_sweep;
};

/// Collapsed Gibbs sampling over token-topic assignments.
TopicModel fit_lda(const std::vector<std::vector<std::int64_t>>& docs, std::int64_t vocab_size, const LdaOptions& opts);

/// Held-out Gibbs inference with frozen topic-word counts. Words outside the
/// fitted vocabulary are skipped.
std::vector<double> infer_topics(const std::vector<std::int64_t>& doc, const TopicModel& model, int iterations,
                                 std::uint64_t seed);

void save_topic_model(const TopicModel& model, const std::filesystem::path& path);
TopicModel load_topic_model(const std::filesystem::path& path);

/// `doc_topics.jsonl`: one {"id": ..., "theta": [...]} object per line.
void save_doc_topics(const std::map<std::string, std::vector<double>>& doc_topics, const std::filesystem::path& path);
std::map<std::string, std::vector<double>> load_doc_topics(const std::filesystem::path& path);

}  // namespace docrep
