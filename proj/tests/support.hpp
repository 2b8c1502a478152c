#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "docrep/config.hpp"
#include "docrep/corpus.hpp"
#include "docrep/rng.hpp"
#include "docrep/tensor.hpp"

namespace docrep::testing {

/// Small-page model settings that keep the backbone cheap.
inline ModelConfig tiny_model_config(std::int64_t vocab = 64) {
  ModelConfig mc;
  mc.vocab_size = vocab;
  mc.page_width = 64;
  mc.page_height = 48;
  mc.max_pages = 3;
  mc.tokens_per_page = 8;
  mc.num_classes = 4;
  mc.num_topics = 4;
  mc.encoder.layers = 2;
  mc.encoder.hidden = 16;
  mc.encoder.heads = 2;
  mc.encoder.feed_forward = 32;
  mc.encoder.window = 4;
  return mc;
}

/// Random-noise pages with `tokens_per_page` random boxes per page.
inline Document random_document(const std::string& id, int pages, int tokens_per_page, const ModelConfig& mc,
                                std::uint64_t seed, std::optional<int> category = 0, bool labeled = false) {
  Rng rng(seed);
  Document d;
  d.id = id;
  d.category = category;
  for (int p = 0; p < pages; ++p) {
    auto r = std::make_shared<Raster>(mc.page_width, mc.page_height);
    for (auto& px : r->pixels) px = static_cast<std::uint8_t>(rng.range(0, 255));
    d.pages.emplace_back(p, r, id + "#" + std::to_string(p) + "#" + std::to_string(seed));
    for (int t = 0; t < tokens_per_page; ++t) {
      TokenRecord tok;
      tok.token_id = rng.range(kFirstRegularToken, mc.vocab_size - 1);
      const int x1 = static_cast<int>(rng.range(0, mc.page_width - 8)), y1 = static_cast<int>(rng.range(0, mc.page_height - 6));
      tok.bbox = {x1, y1, x1 + static_cast<int>(rng.range(1, 8)), y1 + static_cast<int>(rng.range(1, 6))};
      tok.page_index = p;
      if (labeled) tok.label = static_cast<int>(rng.range(0, mc.num_token_labels - 1));
      d.tokens.push_back(tok);
    }
  }
  return d;
}

inline Var<double> random_input(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.data) x = scale * rng.normal();
  return Var<double>(std::move(t), true);
}

/// Largest relative error between the analytic gradient of `loss` and
/// central differences, over every element of every input.
template <typename F>
double max_gradient_error(std::vector<Var<double>> inputs, F loss, double h = 1e-6) {
  for (auto& v : inputs) v.zero_grad();
  backward(loss());
  double worst = 0;
  for (auto& v : inputs) {
    const auto analytic = v.grad();
    auto& data = v.mutable_value().data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss().item();
      data[i] = keep - h;
      const double down = loss().item();
      data[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double g = analytic.empty() ? 0.0 : analytic[i];
      worst = std::max(worst, std::abs(fd - g) / std::max(1e-6, std::abs(fd) + std::abs(g)));
    }
  }
  return worst;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("docrep-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline double relative_error(double a, double b) { return std::abs(a - b) / std::max(1e-12, std::max(std::abs(a), std::abs(b))); }

}  // namespace docrep::testing
