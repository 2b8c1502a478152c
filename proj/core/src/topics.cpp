#include "docrep/topics.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>

#include "docrep/rng.hpp"

namespace docrep {

double TopicModel::word_probability(int topic, std::int64_t word) const {
  return (static_cast<double>(word_count(topic, word)) + beta) /
         (static_cast<double>(topic_counts[topic]) + static_cast<double>(vocab_size) * beta);
}

std::vector<std::int64_t> TopicModel::top_words(int topic, std::size_t n) const {
  std::vector<std::int64_t> words(static_cast<std::size_t>(vocab_size));
  std::iota(words.begin(), words.end(), 0);
  n = std::min(n, words.size());
  std::partial_sort(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(n), words.end(),
                    [&](std::int64_t a, std::int64_t b) {
                      const auto ca = word_count(topic, a), cb = word_count(topic, b);
                      return ca != cb ? ca > cb : a < b;
                    });
  words.resize(n);
  return words;
}

namespace {

std::size_t sample_index(const std::vector<double>& cumulative, Rng& rng) {
  const double u = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

}  // namespace

TopicModel fit_lda(const std::vector<std::vector<std::int64_t>>& docs, std::int64_t vocab_size, const LdaOptions& opts) {
  const int K = opts.num_topics;
  if (K < 2) throw std::invalid_argument("fit_lda: need at least 2 topics");
  if (opts.iterations < 1) throw std::invalid_argument("fit_lda: iterations must be >= 1");
  std::int64_t total = 0;
  for (const auto& d : docs) {
    total += static_cast<std::int64_t>(d.size());
    for (auto w : d)
      if (w < 0 || w >= vocab_size) throw std::invalid_argument("fit_lda: token id " + std::to_string(w) + " outside vocabulary");
  }
  if (total == 0) throw std::invalid_argument("fit_lda: empty corpus");

  TopicModel m;
  m.num_topics = K;
  m.alpha = opts.alpha > 0 ? opts.alpha : 50.0 / K;
  m.beta = opts.beta;
  m.vocab_size = vocab_size;
  m.topic_word_counts.assign(static_cast<std::size_t>(K) * vocab_size, 0);
  m.topic_counts.assign(K, 0);

  Rng rng(opts.seed);
  std::vector<std::vector<int>> assign(docs.size());
  std::vector<std::vector<std::int64_t>> doc_topic(docs.size(), std::vector<std::int64_t>(K, 0));
  for (std::size_t d = 0; d < docs.size(); ++d) {
    assign[d].resize(docs[d].size());
    for (std::size_t i = 0; i < docs[d].size(); ++i) {
      const int z = static_cast<int>(rng.below(K));
      assign[d][i] = z;
      ++doc_topic[d][z];
      ++m.topic_word_counts[static_cast<std::size_t>(z) * vocab_size + docs[d][i]];
      ++m.topic_counts[z];
    }
  }

  const double vbeta = static_cast<double>(vocab_size) * m.beta;
  std::vector<double> cumulative(K);
  for (int sweep = 0; sweep < opts.iterations; ++sweep) {
    for (std::size_t d = 0; d < docs.size(); ++d) {
      auto& nd = doc_topic[d];
      for (std::size_t i = 0; i < docs[d].size(); ++i) {
        const auto w = docs[d][i];
        int z = assign[d][i];
        --nd[z];
        --m.topic_word_counts[static_cast<std::size_t>(z) * vocab_size + w];
        --m.topic_counts[z];
        double acc = 0;
        for (int k = 0; k < K; ++k) {
          acc += (static_cast<double>(nd[k]) + m.alpha) *
                 (static_cast<double>(m.topic_word_counts[static_cast<std::size_t>(k) * vocab_size + w]) + m.beta) /
                 (static_cast<double>(m.topic_counts[k]) + vbeta);
          cumulative[k] = acc;
        }
        z = static_cast<int>(sample_index(cumulative, rng));
        assign[d][i] = z;
        ++nd[z];
        ++m.topic_word_counts[static_cast<std::size_t>(z) * vocab_size + w];
        ++m.topic_counts[z];
      }
    }
    if (opts.on_sweep) opts.on_sweep(sweep, m.topic_counts);
  }
  return m;
}

std::vector<double> infer_topics(const std::vector<std::int64_t>& doc, const TopicModel& model, int iterations,
                                 std::uint64_t seed) {
  if (doc.empty()) throw std::invalid_argument("infer_topics: empty document");
  const int K = model.num_topics;
  std::vector<std::int64_t> words;
  for (auto w : doc)
    if (w >= 0 && w < model.vocab_size) words.push_back(w);
  if (words.empty()) throw std::invalid_argument("infer_topics: document has no in-vocabulary tokens");

  // Per-topic p(w|k) with the fitted counts frozen.
  const double vbeta = static_cast<double>(model.vocab_size) * model.beta;
  std::vector<std::vector<double>> phi(words.size(), std::vector<double>(K));
  for (std::size_t i = 0; i < words.size(); ++i)
    for (int k = 0; k < K; ++k)
      phi[i][k] = (static_cast<double>(model.word_count(k, words[i])) + model.beta) /
                  (static_cast<double>(model.topic_counts[k]) + vbeta);

  Rng rng(seed);
  std::vector<int> assign(words.size());
  std::vector<std::int64_t> nd(K, 0);
  for (std::size_t i = 0; i < words.size(); ++i) {
    assign[i] = static_cast<int>(rng.below(K));
    ++nd[assign[i]];
  }
  std::vector<double> cumulative(K);
  for (int sweep = 0; sweep < iterations; ++sweep) {
    for (std::size_t i = 0; i < words.size(); ++i) {
      --nd[assign[i]];
      double acc = 0;
      for (int k = 0; k < K; ++k) {
        acc += (static_cast<double>(nd[k]) + model.alpha) * phi[i][k];
        cumulative[k] = acc;
      }
      assign[i] = static_cast<int>(sample_index(cumulative, rng));
      ++nd[assign[i]];
    }
  }
  std::vector<double> theta(K);
  const double denom = static_cast<double>(words.size()) + K * model.alpha;
  for (int k = 0; k < K; ++k) theta[k] = (static_cast<double>(nd[k]) + model.alpha) / denom;
  // Renormalize away rounding so the sum is 1 to machine precision.
  const double sum = std::accumulate(theta.begin(), theta.end(), 0.0);
  for (auto& t : theta) t /= sum;
  return theta;
}

void save_topic_model(const TopicModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["K"] = model.num_topics;
  j["alpha"] = model.alpha;
  j["beta"] = model.beta;
  j["vocab_size"] = model.vocab_size;
  j["topic_counts"] = model.topic_counts;
  auto rows = nlohmann::json::array();
  for (int k = 0; k < model.num_topics; ++k) {
    const auto begin = model.topic_word_counts.begin() + static_cast<std::ptrdiff_t>(k) * model.vocab_size;
    rows.push_back(std::vector<std::int64_t>(begin, begin + model.vocab_size));
  }
  j["topic_word_counts"] = std::move(rows);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << '\n';
}

TopicModel load_topic_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open topic model " + path.string());
  const auto j = nlohmann::json::parse(in);
  TopicModel m;
  m.num_topics = j.at("K").get<int>();
  m.alpha = j.at("alpha").get<double>();
  m.beta = j.at("beta").get<double>();
  m.vocab_size = j.at("vocab_size").get<std::int64_t>();
  m.topic_counts = j.at("topic_counts").get<std::vector<std::int64_t>>();
  for (const auto& row : j.at("topic_word_counts")) {
    const auto r = row.get<std::vector<std::int64_t>>();
    if (static_cast<std::int64_t>(r.size()) != m.vocab_size) throw std::runtime_error("topic model row width mismatch in " + path.string());
    m.topic_word_counts.insert(m.topic_word_counts.end(), r.begin(), r.end());
  }
  if (static_cast<int>(m.topic_counts.size()) != m.num_topics ||
      static_cast<std::int64_t>(m.topic_word_counts.size()) != m.num_topics * m.vocab_size)
    throw std::runtime_error("topic model shape mismatch in " + path.string());
  return m;
}

void save_doc_topics(const std::map<std::string, std::vector<double>>& doc_topics, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [id, theta] : doc_topics) out << nlohmann::json{{"id", id}, {"theta", theta}}.dump() << '\n';
}

std::map<std::string, std::vector<double>> load_doc_topics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::map<std::string, std::vector<double>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out[j.at("id").get<std::string>()] = j.at("theta").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace docrep
