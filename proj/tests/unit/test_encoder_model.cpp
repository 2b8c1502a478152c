#include <doctest.h>

#include "dense_oracle.hpp"
#include "docrep/encoder.hpp"
#include "docrep/model.hpp"
#include "support.hpp"

using namespace docrep;
using namespace docrep::testing;

namespace {

template <typename T>
double dense_gap(std::int64_t S, int window, std::uint64_t seed, std::vector<std::uint8_t> mask = {},
                 std::vector<std::uint8_t> global = {}) {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.feed_forward = 32;
  cfg.window = window;
  ParameterSet<T> params;
  Rng rng(seed);
  Encoder<T> enc(cfg, params, rng, 0.3);
  for (auto& p : params.all())
    for (auto& v : p.var.mutable_value().data) v += static_cast<T>(0.1 * rng.normal());
  if (mask.empty()) mask.assign(S, 1);
  if (global.empty()) {
    global.assign(S, 0);
    global[0] = 1;
  }
  Tensor<T> x({S, 16});
  for (auto& v : x.data) v = static_cast<T>(rng.normal());
  const auto out = enc.encode(Var<T>(x), mask, global).value();
  const Mat ref = reference_encode(enc, to_mat(x), attention_pattern(S, window, mask, global), mask);
  double gap = 0;
  for (std::int64_t i = 0; i < S; ++i)
    for (int c = 0; c < 16; ++c) gap = std::max(gap, std::abs(static_cast<double>(out.at(i, c)) - ref(i, c)));
  return gap;
}

}  // namespace

TEST_CASE("windowed encoder equals a dense transformer when the window covers the sequence") {
  CHECK(dense_gap<float>(8, 16, 1) <= 1e-5);
  CHECK(dense_gap<double>(8, 16, 1) <= 1e-10);
  CHECK(dense_gap<double>(9, 16, 2) <= 1e-10);
}

TEST_CASE("encoder matches the oracle with a narrow window, globals and padding") {
  std::vector<std::uint8_t> mask(30, 1), global(30, 0);
  global[0] = global[12] = 1;
  for (int i = 26; i < 30; ++i) mask[i] = 0;
  CHECK(dense_gap<double>(30, 4, 3, mask, global) <= 1e-10);
}

TEST_CASE("a lone global token attends only to itself") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.feed_forward = 8;
  cfg.window = 4;
  ParameterSet<double> params;
  Rng rng(4);
  Encoder<double> enc(cfg, params, rng, 0.5);
  Tensor<double> x({5, 8});
  for (auto& v : x.data) v = rng.normal();
  std::vector<std::uint8_t> mask{1, 0, 0, 0, 0}, global{1, 0, 0, 0, 0};
  const auto out = enc.encode(Var<double>(x), mask, global).value();
  // Single-key softmax: attention output equals the value projection.
  const auto& L = enc.layers()[0];
  Mat x0 = to_mat(x).topRows(1);
  Mat h = layer_norm(x0, to_row(L.ln1_gain), to_row(L.ln1_bias));
  Mat v = h * to_mat(L.wv.value());
  v.rowwise() += to_row(L.bv);
  Mat a = v * to_mat(L.wo.value());
  a.rowwise() += to_row(L.bo);
  Mat r = x0 + a;
  Mat f = layer_norm(r, to_row(L.ln2_gain), to_row(L.ln2_bias)) * to_mat(L.w1.value());
  f.rowwise() += to_row(L.b1);
  Mat g = gelu(f) * to_mat(L.w2.value());
  g.rowwise() += to_row(L.b2);
  const Mat expect = layer_norm(r + g, to_row(enc.final_gain()), to_row(enc.final_bias()));
  for (int c = 0; c < 8; ++c) CHECK(out.at(0, c) == doctest::Approx(expect(0, c)).epsilon(1e-12));
  for (std::int64_t i = 1; i < 5; ++i)
    for (int c = 0; c < 8; ++c) CHECK(out.at(i, c) == 0.0);
}

TEST_CASE("swapping two distant tokens leaves positions outside their windows unchanged") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.feed_forward = 16;
  cfg.window = 2;
  ParameterSet<double> params;
  Rng rng(5);
  Encoder<double> enc(cfg, params, rng, 0.5);
  const std::int64_t S = 12, i = 2, j = 9;
  Tensor<double> x({S, 8});
  for (auto& v : x.data) v = rng.normal();
  auto y = x;
  for (int c = 0; c < 8; ++c) std::swap(y.at(i, c), y.at(j, c));
  const std::vector<std::uint8_t> mask(S, 1), global(S, 0);
  const auto a = enc.encode(Var<double>(x), mask, global).value();
  const auto b = enc.encode(Var<double>(y), mask, global).value();
  for (std::int64_t s = 0; s < S; ++s) {
    if (std::llabs(s - i) <= 1 || std::llabs(s - j) <= 1) continue;
    for (int c = 0; c < 8; ++c) CHECK(a.at(s, c) == b.at(s, c));
  }
  for (int c = 0; c < 8; ++c) {
    CHECK(a.at(i, c) != doctest::Approx(b.at(j, c)));
  }
}

TEST_CASE("encoder config validation") {
  EncoderConfig cfg;
  cfg.hidden = 10;
  cfg.heads = 4;
  CHECK_THROWS(cfg.validate());
  cfg.hidden = 16;
  cfg.window = 5;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("document model forward and feature cache") {
  const auto mc = tiny_model_config();
  DocumentModel<double> model(mc, 3);
  const auto doc = random_document("m", 2, 4, mc, 9);
  const auto enc = encode_document(doc, mc);
  ops::AttentionStats stats;
  const auto h1 = model.forward(enc, {}, &stats).value();
  CHECK(h1.shape == Shape{enc.length(), mc.hidden()});
  CHECK(stats.score_slots > 0);
  CHECK(model.feature_cache_entries() == 2);
  const auto h2 = model.forward(enc).value();
  CHECK(h1.data == h2.data);
  model.clear_feature_cache();
  CHECK(model.feature_cache_entries() == 0);
  model.set_feature_cache_budget(0);
  CHECK(model.forward(enc).value().data == h1.data);
  CHECK(model.feature_cache_entries() == 0);

  DocumentModel<double> twin(mc, 3);
  CHECK(twin.forward(enc).value().data == h1.data);
  DocumentModel<double> other(mc, 4);
  CHECK(other.forward(enc).value().data != h1.data);

  auto too_long = mc;
  too_long.tokens_per_page = 2;
  CHECK_THROWS(DocumentModel<double>(too_long, 3).forward(enc));
}

TEST_CASE("parameter registry") {
  const auto mc = tiny_model_config();
  DocumentModel<float> model(mc, 1);
  auto& params = model.parameters();
  CHECK(params.count() > params.count(true));
  const auto groups = params.groups();
  CHECK(std::find(groups.begin(), groups.end(), "heads.mvlm") != groups.end());
  CHECK(params.find("encoder.final_ln.gain").var.value().data == std::vector<float>(mc.hidden(), 1.0f));
  CHECK_THROWS(params.find("nope"));
  params.set_group_trainable("heads.mvlm", false);
  for (const auto& p : params.all())
    if (p.group == "heads.mvlm") CHECK(!p.var.requires_grad());
}
