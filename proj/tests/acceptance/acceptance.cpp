// Acceptance runner: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "dense_oracle.hpp"
#include "docrep/checkpoint.hpp"
#include "docrep/encoder.hpp"
#include "docrep/finetune.hpp"
#include "docrep/topics.hpp"
#include "support.hpp"

using namespace docrep;
using namespace docrep::testing;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1

template <typename T>
double dense_gap(std::uint64_t seed) {
  const std::int64_t S = 8;
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.feed_forward = 32;
  cfg.window = 16;
  ParameterSet<T> params;
  Rng rng(seed);
  Encoder<T> enc(cfg, params, rng, 0.3);
  for (auto& p : params.all())
    for (auto& v : p.var.mutable_value().data) v += static_cast<T>(0.1 * rng.normal());
  std::vector<std::uint8_t> mask(S, 1), global(S, 0);
  global[0] = 1;
  Tensor<T> x({S, 16});
  for (auto& v : x.data) v = static_cast<T>(rng.normal());
  const auto out = enc.encode(Var<T>(x), mask, global).value();
  const Mat ref = reference_encode(enc, to_mat(x), attention_pattern(S, 16, mask, global), mask);
  double gap = 0;
  for (std::int64_t i = 0; i < S; ++i)
    for (int c = 0; c < 16; ++c) gap = std::max(gap, std::abs(static_cast<double>(out.at(i, c)) - ref(i, c)));
  return gap;
}

Verdict dense_equivalence() {
  const auto t0 = Clock::now();
  double gs = 0, gd = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    gs = std::max(gs, dense_gap<float>(seed));
    gd = std::max(gd, dense_gap<double>(seed));
  }
  const double t = seconds_since(t0);
  return {gs <= 1e-5 && gd <= 1e-10 && t < 10,
          "single " + fmt("%.2e", gs) + ", double " + fmt("%.2e", gd) + ", " + fmt("%.2f", t) + " s"};
}

// ---------------------------------------------------------------- 2

Verdict gradient_check() {
  const auto t0 = Clock::now();
  auto mc = tiny_model_config();
  mc.backbone.frozen_stages = 0;
  DocumentModel<double> model(mc, 11);
  model.set_feature_cache_budget(0);
  auto& ps = model.parameters();
  for (const auto& g : ps.groups()) ps.set_group_trainable(g, true);

  const auto doc = random_document("grad", 2, 3, mc, 12, 1, true);
  const auto enc = encode_document(doc, mc);
  const auto masked = build_mvlm_batch({enc}, 0.5, mc.vocab_size, 13).items[0];
  const auto shuffled = build_dsp_batch({enc}, 1.0, 14).items[0];
  const auto dtm = encode_dtm_document(doc, mc);
  const std::vector<double> theta{0.1, 0.2, 0.3, 0.4};
  const auto loss = [&] {
    const auto l = mvlm_clf_loss(model, masked, 1, true, true);
    const auto hidden = model.forward(enc);
    const auto doc_class = ops::cross_entropy(model.doc_class_head()(DocumentModel<double>::cls_state(hidden)), {1});
    const auto tokens = ops::cross_entropy(model.token_head()(hidden), enc.token_labels);
    return ops::add_n<double>({l.mvlm, l.clf, dsp_loss(model, shuffled, 1), dtm_loss(model, dtm, theta), doc_class, tokens});
  };

  ps.zero_grad();
  backward(loss());
  std::map<std::string, std::pair<double, double>> per_group;  // |fd - g|^2, max(|fd|^2, |g|^2)
  std::map<std::string, double> fd_sq, g_sq;
  Rng rng(15);
  const double h = 1e-5;
  std::int64_t probes = 0;
  for (auto& p : ps.all()) {
    auto& data = p.var.mutable_value().data;
    const auto analytic = p.var.grad();
    std::vector<std::size_t> picks;
    std::vector<std::size_t> nonzero;
    for (std::size_t i = 0; i < analytic.size(); ++i)
      if (analytic[i] != 0) nonzero.push_back(i);
    for (int k = 0; k < 6 && !nonzero.empty(); ++k) picks.push_back(nonzero[rng.below(nonzero.size())]);
    for (int k = 0; k < 4; ++k) picks.push_back(rng.below(data.size()));
    for (auto i : picks) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss().item();
      data[i] = keep - h;
      const double down = loss().item();
      data[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double g = analytic.empty() ? 0.0 : analytic[i];
      per_group[p.group].first += (fd - g) * (fd - g);
      fd_sq[p.group] += fd * fd;
      g_sq[p.group] += g * g;
      ++probes;
    }
  }
  double worst = 0;
  std::string worst_group;
  for (const auto& [group, diff] : per_group) {
    const double scale = std::sqrt(std::max(fd_sq[group], g_sq[group]));
    const double rel = scale > 0 ? std::sqrt(diff.first) / scale : 0.0;
    if (rel >= worst) {
      worst = rel;
      worst_group = group;
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-4 && t < 300,
          std::to_string(per_group.size()) + " groups, " + std::to_string(probes) + " probes, worst " + fmt("%.2e", worst) + " (" +
              worst_group + "), " + fmt("%.1f", t) + " s"};
}

// ---------------------------------------------------------------- 3

Verdict roi_pooling() {
  Rng rng(21);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto C = rng.range(1, 4), H = rng.range(1, 12), W = rng.range(1, 12);
    auto map = random_input({C, H, W}, rng);
    ops::Region r;
    r.left = rng.range(0, W - 1);
    r.right = rng.range(r.left + 1, W);
    r.top = rng.range(0, H - 1);
    r.bottom = rng.range(r.top + 1, H);
    const auto taped = ops::roi_max_pool<double>({map}, {0}, {r}).value();
    const auto direct = roi_pool(FeatureMap<double>{map, 1}, r);
    for (std::int64_t c = 0; c < C; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      for (auto y = r.top; y < r.bottom; ++y)
        for (auto x = r.left; x < r.right; ++x) best = std::max(best, map.value()[(c * H + y) * W + x]);
      mismatches += taped[c] != best || direct[c] != best;
    }
  }
  int empty = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    const int pw = static_cast<int>(rng.range(1, 2000)), ph = static_cast<int>(rng.range(1, 2000));
    const int mw = static_cast<int>(rng.range(1, 64)), mh = static_cast<int>(rng.range(1, 64));
    const int x1 = static_cast<int>(rng.range(0, pw)), x2 = static_cast<int>(rng.range(x1, pw));
    const int y1 = static_cast<int>(rng.range(0, ph)), y2 = static_cast<int>(rng.range(y1, ph));
    const auto reg = scale_bbox({x1, y1, x2, y2}, pw, ph, mw, mh);
    empty += !(0 <= reg.left && reg.left < reg.right && reg.right <= mw && 0 <= reg.top && reg.top < reg.bottom && reg.bottom <= mh);
  }
  return {mismatches == 0 && empty == 0,
          std::to_string(mismatches) + " mismatches over 1000 pairs, " + std::to_string(empty) + " empty regions over 100000 boxes"};
}

// ---------------------------------------------------------------- 4

Verdict soft_cross_entropy_check() {
  Rng rng(31);
  double grad_gap = 0, fd_gap = 0, ln_gap = 0;
  double onehot_gap = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto K = rng.range(2, 12);
    auto logits = random_input({1, K}, rng, 2.0);
    std::vector<double> theta(K);
    for (auto& t : theta) t = rng.uniform();
    const double s = std::accumulate(theta.begin(), theta.end(), 0.0);
    for (auto& t : theta) t /= s;
    const std::vector<std::vector<double>> target{theta};
    backward(soft_cross_entropy(logits, target));
    std::vector<double> p(K);
    double z = 0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(logits.value()[k]);
    for (std::int64_t k = 0; k < K; ++k) p[k] = std::exp(logits.value()[k]) / z;
    for (std::int64_t k = 0; k < K; ++k) {
      grad_gap = std::max(grad_gap, std::abs(logits.grad()[k] - (p[k] - theta[k])));
      auto& v = logits.mutable_value().data[k];
      const double keep = v;
      v = keep + 1e-6;
      const double up = soft_cross_entropy(logits, target).item();
      v = keep - 1e-6;
      const double down = soft_cross_entropy(logits, target).item();
      v = keep;
      fd_gap = std::max(fd_gap, std::abs((up - down) / 2e-6 - (p[k] - theta[k])));
    }
    std::vector<double> onehot(K, 0.0);
    const auto hot = rng.range(0, K - 1);
    onehot[hot] = 1.0;
    onehot_gap = std::max(onehot_gap, std::abs(soft_cross_entropy(logits, {onehot}).item() - ops::cross_entropy(logits, {hot}).item()));
    Var<double> flat(Tensor<double>({1, K}, rng.normal()));
    ln_gap = std::max(ln_gap, std::abs(soft_cross_entropy(flat, {std::vector<double>(K, 1.0 / K)}).item() - std::log(static_cast<double>(K))));
  }
  return {grad_gap <= 1e-6 && fd_gap <= 1e-6 && onehot_gap <= 1e-12 && ln_gap <= 1e-9,
          "analytic gap " + fmt("%.1e", grad_gap) + ", finite-difference gap " + fmt("%.1e", fd_gap) + ", one-hot gap " + fmt("%.1e", onehot_gap) + ", ln K gap " + fmt("%.1e", ln_gap)};
}

// ---------------------------------------------------------------- 5

Verdict lda_checks() {
  Rng rng(41);
  std::vector<std::vector<std::int64_t>> docs(40);
  std::int64_t total = 0;
  for (auto& d : docs) {
    const auto n = rng.range(1, 40);
    for (std::int64_t i = 0; i < n; ++i) d.push_back(rng.range(0, 59));
    total += n;
  }
  LdaOptions opts;
  opts.num_topics = 6;
  opts.iterations = 60;
  opts.seed = 3;
  bool conserved = true;
  int sweeps = 0;
  opts.on_sweep = [&](int, const std::vector<std::int64_t>& counts) {
    ++sweeps;
    conserved = conserved && std::accumulate(counts.begin(), counts.end(), std::int64_t{0}) == total;
  };
  const auto model = fit_lda(docs, 60, opts);
  double theta_gap = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto th = infer_topics(docs[i], model, 30, i);
    theta_gap = std::max(theta_gap, std::abs(std::accumulate(th.begin(), th.end(), 0.0) - 1.0));
  }
  int pure = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::vector<std::vector<std::int64_t>> split{std::vector<std::int64_t>(20, 0), std::vector<std::int64_t>(20, 1)};
    LdaOptions o;
    o.num_topics = 2;
    o.alpha = 0.1;
    o.beta = 0.1;
    o.iterations = 200;
    o.seed = seed;
    const auto m = fit_lda(split, 2, o);
    const auto t0 = infer_topics(split[0], m, 100, seed + 1), t1 = infer_topics(split[1], m, 100, seed + 2);
    const auto a0 = std::max_element(t0.begin(), t0.end()) - t0.begin(), a1 = std::max_element(t1.begin(), t1.end()) - t1.begin();
    pure += a0 != a1 && t0[a0] >= 0.9 && t1[a1] >= 0.9;
  }
  return {conserved && sweeps == 60 && pure >= 9 && theta_gap <= 1e-9,
          std::string(conserved ? "conserved" : "NOT conserved") + " over " + std::to_string(sweeps) + " sweeps, purity " +
              std::to_string(pure) + "/10, theta sum gap " + fmt("%.1e", theta_gap)};
}

// ---------------------------------------------------------------- 6

Verdict masking_statistics() {
  const auto mc = tiny_model_config(1000);
  std::vector<EncodedDocument> docs;
  for (int i = 0; i < 8; ++i) docs.push_back(encode_document(random_document("m" + std::to_string(i), 3, 8, mc, 50 + i), mc));
  MvlmCounts total;
  for (std::uint64_t seed = 0; total.selected < 10000; ++seed) {
    MvlmCounts c;
    build_mvlm_batch(docs, 0.15, mc.vocab_size, seed, &c);
    total.selected += c.selected;
    total.masked += c.masked;
    total.randomized += c.randomized;
    total.kept += c.kept;
  }
  const double n = static_cast<double>(total.selected);
  const double fm = total.masked / n, fr = total.randomized / n, fk = total.kept / n;
  const bool ratios = std::abs(fm - 0.8) <= 0.02 && std::abs(fr - 0.1) <= 0.02 && std::abs(fk - 0.1) <= 0.02;

  DocumentModel<double> model(tiny_model_config(), 2);
  bool invariant = true;
  double oracle_gap = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto batch = build_mvlm_batch({encode_document(random_document("i", 2, 6, model.config(), seed), model.config())}, 0.3,
                                  model.config().vocab_size, seed);
    auto& enc = batch.items[0];
    const double base = mvlm_clf_loss(model, enc, 0, true, false).mvlm.item();
    // Mean negative log-likelihood over selected positions only, from the raw logits.
    const auto logits = model.mvlm_head()(model.forward(enc)).value();
    double nll = 0;
    int selected = 0;
    for (std::int64_t s = 0; s < logits.rows(); ++s) {
      if (enc.mvlm_labels[s] == kIgnoreLabel) continue;
      double z = 0;
      for (std::int64_t k = 0; k < logits.cols(); ++k) z += std::exp(logits.at(s, k));
      nll += std::log(z) - logits.at(s, enc.mvlm_labels[s]);
      ++selected;
    }
    if (selected > 0) oracle_gap = std::max(oracle_gap, std::abs(nll / selected - base));
    for (auto& l : enc.mvlm_labels)
      if (l == kIgnoreLabel) l = -7;
    invariant = invariant && mvlm_clf_loss(model, enc, 0, true, false).mvlm.item() == base;
  }
  invariant = invariant && oracle_gap <= 1e-12;
  return {ratios && invariant, std::to_string(total.selected) + " selections: " + fmt("%.4f", fm) + "/" + fmt("%.4f", fr) + "/" +
                                   fmt("%.4f", fk) + ", selected-only oracle gap " + fmt("%.1e", oracle_gap) + ", ignored labels " + (invariant ? "have no effect" : "CHANGE the loss")};
}

// ---------------------------------------------------------------- 7, 8, 9 share one pre-trained model

ModelConfig desk_model_config(const SyntheticSpec& spec, int topics = 8) {
  ModelConfig mc;
  mc.vocab_size = spec.vocab_size();
  mc.num_classes = spec.num_categories;
  mc.num_topics = topics;
  mc.encoder.hidden = 32;
  mc.encoder.heads = 2;
  mc.encoder.feed_forward = 64;
  return mc;
}

TrainConfig desk_train_config(int steps, std::uint64_t seed) {
  TrainConfig tc;
  tc.steps = steps;
  tc.learning_rate = 3e-3;
  tc.linear_decay = true;
  tc.mvlm_clf = {8, 1, 1.0};
  tc.dsp = {8, 1, 1.0};
  tc.dtm = {8, 1, 1.0};
  tc.seed = seed;
  return tc;
}

std::map<std::string, std::vector<double>> mine_topics(const std::vector<Document>& docs, std::int64_t vocab, int topics,
                                                       std::uint64_t seed) {
  std::vector<std::vector<std::int64_t>> streams;
  for (const auto& d : docs) streams.push_back(d.token_ids());
  LdaOptions lo;
  lo.num_topics = topics;
  lo.iterations = 200;
  lo.seed = seed;
  const auto lda = fit_lda(streams, vocab, lo);
  std::map<std::string, std::vector<double>> out;
  for (std::size_t i = 0; i < docs.size(); ++i) out[docs[i].id] = infer_topics(streams[i], lda, 50, derive_seed(seed, {i}));
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Desk {
  SyntheticSpec spec;
  std::vector<Document> train, val;
  std::unique_ptr<DocumentModel<float>> model;
  std::vector<StepRecord> log;
  double pretrain_seconds = 0;
  std::unique_ptr<DocumentModel<float>> finetuned;
};

Desk& desk() {
  static std::unique_ptr<Desk> d;
  if (d) return *d;
  d = std::make_unique<Desk>();
  const auto t0 = Clock::now();
  auto docs = generate_synthetic_documents(d->spec, 7);
  d->train.assign(docs.begin(), docs.begin() + 160);
  d->val.assign(docs.begin() + 160, docs.end());
  const auto mc = desk_model_config(d->spec);
  const auto topics = mine_topics(d->train, mc.vocab_size, mc.num_topics, 1);
  d->model = std::make_unique<DocumentModel<float>>(mc, 1);
  Pretrainer<float> pt(*d->model, desk_train_config(600, 3), d->train, topics);
  pt.run([&](const StepRecord& r) { d->log.push_back(r); });
  d->pretrain_seconds = seconds_since(t0);
  return *d;
}

Verdict dsp_learnability() {
  auto& d = desk();
  double acc = 0;
  const int draws = 5;
  for (int s = 0; s < draws; ++s) acc += dsp_accuracy(*d.model, d.val, 0.5, 99 + s);
  acc /= draws;
  std::string trend;
  bool decreasing = true;
  for (const char* task : {"mvlm", "clf", "dsp", "dtm"}) {
    std::vector<double> early, late;
    for (const auto& r : d.log) {
      if (r.step <= 20) early.push_back(r.loss(task));
      if (r.step >= 180 && r.step <= 200) late.push_back(r.loss(task));
    }
    const double e = median(early), l = median(late);
    decreasing = decreasing && l < e;
    trend += std::string(" ") + task + " " + fmt("%.3f", e) + "->" + fmt("%.3f", l);
  }
  return {acc >= 0.90 && d.pretrain_seconds < 1800 && decreasing,
          "accuracy " + fmt("%.3f", acc) + " on " + std::to_string(d.val.size()) + " held-out docs x " + std::to_string(draws) +
              " shuffles after " + std::to_string(d.log.size()) + " steps, " + fmt("%.0f", d.pretrain_seconds) +
              " s; median loss steps 1-20 vs 180-200:" + trend};
}

Verdict clf_learnability() {
  auto& d = desk();
  if (!d.finetuned) {
    d.finetuned = std::make_unique<DocumentModel<float>>(d.model->config(), 1);
    TempDir dir("acc-ft");
    save_checkpoint<float>(dir / "m.ckpt", *d.model, nullptr, 0, 0);
    load_checkpoint<float>(dir / "m.ckpt", *d.finetuned);
    FinetuneConfig fc;
    fc.steps = 100;
    fc.batch_size = 8;
    fc.accumulation = 1;
    fc.learning_rate = 1e-3;
    fc.seed = 4;
    Finetuner<float> ft(*d.finetuned, fc, d.train);
    ft.run();
  }
  const auto s = evaluate_classification(*d.finetuned, d.val);
  return {s.accuracy >= 0.90, "accuracy " + fmt("%.3f", s.accuracy) + " on " + std::to_string(d.val.size()) +
                                  " held-out docs after 100 fine-tuning steps"};
}

Verdict retrieval() {
  auto& d = desk();
  if (!d.finetuned) clf_learnability();
  const std::vector<int> ks{1, 3, 5, 10};
  const auto ev = evaluate_retrieval(*d.finetuned, d.val, d.train, ks);

  // Exhaustive oracle: every index document scored and sorted here.
  std::vector<std::pair<std::string, std::vector<double>>> index;
  for (const auto& doc : d.train) index.emplace_back(doc.id, extract_embedding(*d.finetuned, encode_document(doc, d.finetuned->config())));
  std::map<std::string, int> category;
  for (const auto& doc : d.train) category[doc.id] = *doc.category;
  double map_sum = 0;
  std::vector<double> ndcg_sum(ks.size(), 0.0);
  int counted = 0;
  for (const auto& q : d.val) {
    const auto qv = extract_embedding(*d.finetuned, encode_document(q, d.finetuned->config()));
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& [id, v] : index) {
      double dot = 0, nq = 0, nv = 0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        dot += qv[i] * v[i];
        nq += qv[i] * qv[i];
        nv += v[i] * v[i];
      }
      scored.emplace_back(1.0 - dot / (std::sqrt(nq) * std::sqrt(nv)), id);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> rel;
    for (const auto& [dist, id] : scored) rel.push_back(category[id] == *q.category);
    const int relevant = std::accumulate(rel.begin(), rel.end(), 0);
    if (relevant == 0) continue;
    ++counted;
    double hits = 0, ap = 0;
    for (std::size_t i = 0; i < rel.size(); ++i)
      if (rel[i]) ap += ++hits / static_cast<double>(i + 1);
    map_sum += ap / relevant;
    for (std::size_t j = 0; j < ks.size(); ++j) {
      double dcg = 0, ideal = 0;
      for (int i = 0; i < ks[j] && i < static_cast<int>(rel.size()); ++i) {
        dcg += rel[i] / std::log2(i + 2.0);
        if (i < relevant) ideal += 1.0 / std::log2(i + 2.0);
      }
      ndcg_sum[j] += dcg / ideal;
    }
  }
  double gap = std::abs(ev.metrics.map - map_sum / counted);
  for (std::size_t j = 0; j < ks.size(); ++j) gap = std::max(gap, std::abs(ev.metrics.ndcg[j] - ndcg_sum[j] / counted));
  return {ev.metrics.map >= 0.85 && gap <= 1e-9 && ev.metrics.queries == 40,
          "MAP " + fmt("%.4f", ev.metrics.map) + " over " + std::to_string(ev.metrics.queries) + " queries x " +
              std::to_string(d.train.size()) + " index docs, NDCG@10 " + fmt("%.4f", ev.metrics.ndcg.back()) + ", oracle gap " +
              fmt("%.1e", gap)};
}

// ---------------------------------------------------------------- 10

Verdict ablation_direction() {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.num_docs = 120;
  double sum_all = 0, sum_base = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto docs = generate_synthetic_documents(spec, 100 + seed);
    const std::vector<Document> train(docs.begin(), docs.begin() + 96), val(docs.begin() + 96, docs.end());
    const auto mc = desk_model_config(spec);
    const auto topics = mine_topics(train, mc.vocab_size, mc.num_topics, 10 + seed);
    double f1[2];
    for (int variant = 0; variant < 2; ++variant) {
      DocumentModel<float> model(mc, 20 + seed);
      auto tc = desk_train_config(600, 30 + seed);
      tc.tasks = TaskToggles::parse(variant == 0 ? "mvlm,clf,dsp,dtm" : "mvlm,clf");
      Pretrainer<float>(model, tc, train, variant == 0 ? topics : std::map<std::string, std::vector<double>>{}).run();
      FinetuneConfig fc;
      fc.task = FinetuneConfig::Task::TokenLabeling;
      fc.steps = 200;
      fc.batch_size = 8;
      fc.accumulation = 1;
      fc.learning_rate = 1e-3;
      fc.seed = 40 + seed;
      Finetuner<float>(model, fc, train).run();
      f1[variant] = evaluate_token_labeling(model, val, AblationMask::image_only()).f1;
    }
    sum_all += f1[0];
    sum_base += f1[1];
    per_seed += " " + fmt("%.3f", f1[0]) + "/" + fmt("%.3f", f1[1]);
  }
  return {sum_all >= sum_base, "image-only token F1, all four tasks " + fmt("%.4f", sum_all / 3) + " vs MVLM+CLF " +
                                   fmt("%.4f", sum_base / 3) + " (per seed:" + per_seed + "), " + fmt("%.0f", seconds_since(t0)) + " s"};
}

// ---------------------------------------------------------------- 11

Verdict metric_oracles() {
  Rng rng(61);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = rng.range(1, 50), classes = rng.range(1, 6);
    std::vector<std::int64_t> t, p;
    for (std::int64_t i = 0; i < n; ++i) {
      t.push_back(rng.range(0, classes - 1));
      p.push_back(rng.bernoulli(0.6) ? t.back() : rng.range(0, classes));
    }
    // Oracle from the explicit confusion matrix with integer counts.
    std::set<std::int64_t> labels(t.begin(), t.end());
    labels.insert(p.begin(), p.end());
    std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> cm;
    for (std::int64_t i = 0; i < n; ++i) ++cm[{t[i], p[i]}];
    double prec = 0, rec = 0, f1 = 0;
    std::int64_t correct = 0;
    for (auto c : labels) {
      std::int64_t row = 0, col = 0;
      for (auto o : labels) {
        row += cm[{c, o}];
        col += cm[{o, c}];
      }
      const std::int64_t tp = cm[{c, c}];
      correct += tp;
      const double pc = col ? static_cast<double>(tp) / col : 0.0, rc = row ? static_cast<double>(tp) / row : 0.0;
      const double fc = pc + rc > 0 ? 2 * pc * rc / (pc + rc) : 0.0;
      const double w = static_cast<double>(row) / n;
      prec += w * pc;
      rec += w * rc;
      f1 += w * fc;
    }
    const auto s = weighted_prf(t, p);
    mismatches += s.precision != prec || s.recall != rec || s.f1 != f1 || s.accuracy != static_cast<double>(correct) / n;
  }
  const double ap = average_precision({1, 0, 1, 0});
  const double ndcg = ndcg_at_k({1, 0, 0, 1}, 1);
  return {mismatches == 0 && std::abs(ap - 0.8333) <= 1e-4 && std::abs(ap - 5.0 / 6.0) <= 1e-9 && ndcg == 1.0,
          std::to_string(mismatches) + " mismatches over 1000 cases, AP " + fmt("%.10f", ap) + ", NDCG@1 " + fmt("%.1f", ndcg)};
}

// ---------------------------------------------------------------- 12

std::pair<std::string, std::string> cli_pipeline(const TempDir& root) {
  const nlohmann::json cfg = {
      {"precision", "double"},
      {"corpus", {{"num_docs", 20}, {"page_width", 256}, {"page_height", 320}, {"min_tokens_per_page", 4}, {"max_tokens_per_page", 8}}},
      {"model", {{"page_width", 256}, {"page_height", 320}, {"tokens_per_page", 10}, {"max_pages", 4}}},
      {"train", {{"steps", 10}, {"checkpoint_interval", 5}, {"mvlm_clf", {{"batch_size", 4}}}, {"dsp", {{"batch_size", 4}}}, {"dtm", {{"batch_size", 4}}}}},
      {"finetune", {{"steps", 5}, {"batch_size", 4}}},
      {"lda", {{"iterations", 50}, {"infer_iterations", 20}}}};
  std::ofstream(root / "config.json") << cfg.dump();
  std::ostringstream out, err;
  const auto call = [&](std::vector<std::string> args) {
    args.insert(args.end(), {"--config", (root / "config.json").string(), "--seed", "17"});
    if (cli::run(args, out, err) != 0) throw std::runtime_error("docrep " + args[0] + " failed: " + err.str());
  };
  const auto p = [&](const char* name) { return (root / name).string(); };
  const auto corpus = (root / "gen" / "corpus").string();
  call({"gen-corpus", "--run-dir", p("gen")});
  call({"mine-topics", "--corpus", corpus, "--run-dir", p("lda")});
  call({"pretrain", "--corpus", corpus, "--topics", p("lda"), "--run-dir", p("pt")});
  call({"finetune", "--corpus", corpus, "--checkpoint", p("pt"), "--run-dir", p("ft")});
  call({"evaluate", "--corpus", corpus, "--checkpoint", p("ft"), "--run-dir", p("ev")});
  call({"retrieve", "--corpus", corpus, "--checkpoint", p("ft"), "--run-dir", p("rt")});
  return {read_file(root / "ev" / "metrics.json"), read_file(root / "rt" / "metrics.json")};
}

Verdict pipeline_reproducibility() {
  TempDir a("acc-pipe-a"), b("acc-pipe-b");
  const auto ra = cli_pipeline(a), rb = cli_pipeline(b);
  const bool same = ra == rb && !ra.first.empty() && !ra.second.empty();
  const auto acc = nlohmann::json::parse(ra.first)["accuracy"].get<double>();
  return {same, std::string("evaluate and retrieve metrics.json ") + (same ? "byte-identical" : "DIFFER") + " across two runs (accuracy " +
                    fmt("%.4f", acc) + ")"};
}

// ---------------------------------------------------------------- 13

Verdict checkpoint_replay() {
  const auto mc = tiny_model_config();
  std::vector<Document> docs;
  for (int i = 0; i < 8; ++i) docs.push_back(random_document("r" + std::to_string(i), 2 + i % 3, 5, mc, 70 + i, i % mc.num_classes));
  std::map<std::string, std::vector<double>> topics;
  for (const auto& d : docs) topics[d.id] = {0.4, 0.3, 0.2, 0.1};
  TrainConfig tc;
  tc.steps = 8;
  tc.learning_rate = 1e-3;
  tc.mvlm_clf = {3, 2, 1.0};
  tc.dsp = {2, 1, 1.0};
  tc.dtm = {2, 1, 1.0};
  tc.seed = 77;
  const auto losses = [](const StepRecord& r) {
    std::vector<double> v;
    for (const auto& l : r.losses) v.push_back(l.loss);
    return v;
  };
  DocumentModel<double> straight(mc, 8);
  Pretrainer<double> a(straight, tc, docs, topics);
  std::vector<std::vector<double>> la, lb;
  a.run([&](const StepRecord& r) { la.push_back(losses(r)); });

  TempDir dir("acc-replay");
  {
    DocumentModel<double> first(mc, 8);
    Pretrainer<double> b(first, tc, docs, topics);
    b.run([&](const StepRecord& r) { lb.push_back(losses(r)); }, 4);
    b.save_checkpoint(dir / "mid.ckpt");
  }
  DocumentModel<double> resumed(mc, 1234);
  Pretrainer<double> c(resumed, tc, docs, topics);
  c.load_checkpoint(dir / "mid.ckpt");
  c.run([&](const StepRecord& r) { lb.push_back(losses(r)); });
  bool params_same = true;
  for (std::size_t i = 0; i < straight.parameters().all().size(); ++i)
    params_same = params_same && straight.parameters().all()[i].var.value().data == resumed.parameters().all()[i].var.value().data;
  const bool same = la == lb && la.size() == 8;
  return {same && params_same, std::to_string(la.size()) + " steps, resumed at 4: losses " + (same ? "bit-identical" : "DIFFER") +
                                   ", parameters " + (params_same ? "bit-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"dense attention equivalence", dense_equivalence},
      {"full-model gradient check", gradient_check},
      {"roi pooling oracle", roi_pooling},
      {"soft cross-entropy", soft_cross_entropy_check},
      {"lda invariants", lda_checks},
      {"mvlm masking statistics", masking_statistics},
      {"dsp learnability", dsp_learnability},
      {"clf learnability", clf_learnability},
      {"retrieval", retrieval},
      {"inference ablation direction", ablation_direction},
      {"metric oracles", metric_oracles},
      {"pipeline reproducibility", pipeline_reproducibility},
      {"checkpoint replay", checkpoint_replay},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(number)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << "criterion " << number << " (" << criteria[i].first << "): " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
