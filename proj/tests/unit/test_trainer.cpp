#include <doctest.h>

#include "docrep/checkpoint.hpp"
#include "docrep/trainer.hpp"
#include "support.hpp"

using namespace docrep;
using namespace docrep::testing;

namespace {

struct Toy {
  ParameterSet<double> params;
  Var<double> w, b;
  Tensor<double> x{{4, 3}};
  std::vector<std::int64_t> y{0, 2, 1, 2};

  explicit Toy(std::uint64_t seed) {
    Rng rng(seed);
    w = params.normal("w", "body", {3, 3}, 0.5, rng);
    b = params.zeros("b", "head", {3});
    for (auto& v : x.data) v = rng.normal();
  }

  /// Mean cross-entropy over rows [lo, hi).
  Var<double> loss(std::int64_t lo, std::int64_t hi) {
    std::vector<std::int64_t> rows;
    for (auto r = lo; r < hi; ++r) rows.push_back(r);
    const auto xs = ops::select_rows(ops::constant(x), rows);
    return ops::cross_entropy(ops::linear(xs, w, b), std::vector<std::int64_t>(y.begin() + lo, y.begin() + hi));
  }

  TaskRunner<double> runner(int accumulation) {
    TaskRunner<double> t;
    t.name = "toy";
    t.accumulation = accumulation;
    t.run_micro = [this, accumulation](int, int micro, double scale) {
      const std::int64_t n = 4 / accumulation;
      auto l = loss(micro * n, (micro + 1) * n);
      backward(l, scale);
      return std::vector<NamedLoss>{{"toy", l.item()}};
    };
    return t;
  }
};

std::vector<double> flat(const ParameterSet<double>& ps) {
  std::vector<double> out;
  for (const auto& p : ps.all()) out.insert(out.end(), p.var.value().data.begin(), p.var.value().data.end());
  return out;
}

std::vector<Document> pretrain_docs(const ModelConfig& mc, int n) {
  std::vector<Document> docs;
  for (int i = 0; i < n; ++i) docs.push_back(random_document("p" + std::to_string(i), 2 + i % 2, 4, mc, 40 + i, i % mc.num_classes));
  return docs;
}

std::map<std::string, std::vector<double>> uniform_topics(const std::vector<Document>& docs, int k) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& d : docs) out[d.id] = std::vector<double>(k, 1.0 / k);
  return out;
}

TrainConfig small_train_config() {
  TrainConfig tc;
  tc.steps = 4;
  tc.learning_rate = 1e-3;
  tc.mvlm_clf = {2, 1, 1};
  tc.dsp = {2, 1, 1};
  tc.dtm = {2, 1, 1};
  tc.seed = 12;
  return tc;
}

}  // namespace

TEST_CASE("gradient accumulation matches the full batch") {
  Toy a(1), b(1);
  AdamW<double> oa, ob;
  const auto la = multitask_step(a.params, oa, {a.runner(1)}, 1, 0.05);
  const auto lb = multitask_step(b.params, ob, {b.runner(2)}, 1, 0.05);
  CHECK(la.loss("toy") == doctest::Approx(lb.loss("toy")).epsilon(1e-12));
  const auto pa = flat(a.params), pb = flat(b.params);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(std::abs(pa[i] - pb[i]) <= 1e-12);
}

TEST_CASE("optimizer steps") {
  SUBCASE("zero learning rate leaves parameters unchanged") {
    Toy t(2);
    const auto before = flat(t.params);
    AdamW<double> opt;
    multitask_step(t.params, opt, {t.runner(1)}, 1, 0.0);
    CHECK(flat(t.params) == before);
    CHECK(opt.updates() == 1);
  }
  SUBCASE("one update per step regardless of accumulation") {
    Toy t(3);
    AdamW<double> opt;
    for (int s = 1; s <= 3; ++s) multitask_step(t.params, opt, {t.runner(4)}, s, 0.01);
    CHECK(opt.updates() == 3);
    CHECK(opt.slots()[0].steps == 3);
    for (const auto& p : t.params.all()) CHECK(p.var.grad().empty());
  }
  SUBCASE("frozen parameters do not move") {
    Toy t(4);
    t.params.set_group_trainable("body", false);
    const auto w0 = t.w.value().data;
    const auto b0 = t.b.value().data;
    AdamW<double> opt;
    multitask_step(t.params, opt, {t.runner(1)}, 1, 0.1);
    CHECK(t.w.value().data == w0);
    CHECK(t.b.value().data != b0);
  }
  SUBCASE("adamw trace on p squared") {
    ParameterSet<double> ps;
    auto p = ps.ones("p", "g", {1, 1});
    AdamW<double> opt;
    const double expected[] = {0.8990000005, 0.7985190271685216, 0.6989111831582323};
    for (double want : expected) {
      backward(ops::matmul(p, p));
      opt.step(ps, 0.1);
      ps.zero_grad();
      CHECK(p.value()[0] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  SUBCASE("clipping bounds the global norm") {
    Toy t(5);
    backward(t.loss(0, 4), 100.0);
    const double before = gradient_norm(t.params);
    CHECK(clip_gradients(t.params, 1.0) == doctest::Approx(before));
    CHECK(gradient_norm(t.params) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(clip_gradients(t.params, 10.0) == doctest::Approx(1.0));
    CHECK(gradient_norm(t.params) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("non-finite losses abort the step") {
    Toy t(6);
    TaskRunner<double> bad;
    bad.name = "bad";
    bad.run_micro = [](int, int, double) { return std::vector<NamedLoss>{{"bad", std::nan("")}}; };
    AdamW<double> opt;
    CHECK_THROWS_AS(multitask_step(t.params, opt, {bad}, 7, 0.1), TrainingError);
    CHECK(opt.updates() == 0);
  }
}

TEST_CASE("epoch sampler visits every item once per epoch") {
  EpochSampler s(7, 3), twin(7, 3);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::size_t> seen;
    for (int i = 0; i < 7; ++i) {
      const std::uint64_t cursor = epoch * 7 + i;
      seen.push_back(s.at(cursor));
      CHECK(twin.at(cursor) == seen.back());
    }
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  }
  CHECK_THROWS(EpochSampler(0, 1).at(0));
}

TEST_CASE("warmup schedule and step log") {
  CHECK(scheduled_learning_rate(1.0, 0, 1) == 1.0);
  CHECK(scheduled_learning_rate(1.0, 4, 1) == 0.25);
  CHECK(scheduled_learning_rate(1.0, 4, 4) == 1.0);
  CHECK(scheduled_learning_rate(1.0, 0, 1, 4) == 1.0);
  CHECK(scheduled_learning_rate(1.0, 0, 4, 4) == 0.25);
  CHECK(scheduled_learning_rate(1.0, 2, 3, 5) == 1.0);
  CHECK(scheduled_learning_rate(1.0, 2, 5, 5) == doctest::Approx(1.0 / 3));
  StepRecord r;
  r.step = 12;
  r.losses = {{"mvlm", 1.5}, {"dsp", 0.25}};
  CHECK(format_step_log(r) == "step=12 task=mvlm loss=1.500000\nstep=12 task=dsp loss=0.250000\n");
  CHECK(r.loss("dsp") == 0.25);
  CHECK_THROWS(r.loss("dtm"));
}

TEST_CASE("pretrainer") {
  const auto mc = tiny_model_config();
  const auto docs = pretrain_docs(mc, 6);
  const auto topics = uniform_topics(docs, mc.num_topics);
  SUBCASE("each step reports every enabled task and updates once") {
    DocumentModel<double> model(mc, 1);
    Pretrainer<double> pt(model, small_train_config(), docs, topics);
    const auto r = pt.step();
    CHECK(r.step == 1);
    CHECK(r.losses.size() == 4);
    for (const char* task : {"mvlm", "clf", "dsp", "dtm"}) CHECK(std::isfinite(r.loss(task)));
    CHECK(pt.optimizer().updates() == 1);
  }
  SUBCASE("task toggles") {
    auto tc = small_train_config();
    tc.tasks = TaskToggles::parse("mvlm,clf");
    DocumentModel<double> model(mc, 1);
    Pretrainer<double> pt(model, tc, docs);
    const auto r = pt.step();
    CHECK(r.losses.size() == 2);
    CHECK_THROWS(r.loss("dsp"));
  }
  SUBCASE("missing prerequisites are reported") {
    DocumentModel<double> model(mc, 1);
    CHECK_THROWS_WITH(Pretrainer<double>(model, small_train_config(), docs), doctest::Contains("doc_topics.jsonl"));
    auto one_page = docs;
    for (auto& d : one_page) {
      d.pages.resize(1);
      std::erase_if(d.tokens, [](const TokenRecord& t) { return t.page_index > 0; });
    }
    CHECK_THROWS_WITH(Pretrainer<double>(model, small_train_config(), one_page, topics), doctest::Contains("at least 2 pages"));
    auto uncategorized = docs;
    uncategorized[2].category.reset();
    CHECK_THROWS_WITH(Pretrainer<double>(model, small_train_config(), uncategorized, topics), doctest::Contains("no category"));
  }
  SUBCASE("resuming from a checkpoint replays the uninterrupted run exactly") {
    TempDir dir("replay");
    DocumentModel<double> straight(mc, 5);
    Pretrainer<double> a(straight, small_train_config(), docs, topics);
    std::vector<std::string> log_a;
    a.run([&](const StepRecord& r) { log_a.push_back(format_step_log(r)); });

    DocumentModel<double> first(mc, 5);
    Pretrainer<double> b(first, small_train_config(), docs, topics);
    std::vector<std::string> log_b;
    b.run([&](const StepRecord& r) { log_b.push_back(format_step_log(r)); }, 2);
    b.save_checkpoint(dir / "half.ckpt");

    DocumentModel<double> second(mc, 99);
    Pretrainer<double> c(second, small_train_config(), docs, topics);
    c.load_checkpoint(dir / "half.ckpt");
    CHECK(c.completed_steps() == 2);
    c.run([&](const StepRecord& r) { log_b.push_back(format_step_log(r)); });
    CHECK(log_a == log_b);
    CHECK(flat(straight.parameters()) == flat(second.parameters()));
  }
}

TEST_CASE("checkpoint files") {
  TempDir dir("ckpt");
  const auto mc = tiny_model_config();
  DocumentModel<double> model(mc, 1);
  AdamW<double> opt;
  save_checkpoint(dir / "a.ckpt", model, &opt, 3, 8, {{"note", "x"}});
  const auto meta = read_checkpoint_meta(dir / "a.ckpt");
  CHECK(meta.step == 3);
  CHECK(meta.seed == 8);
  CHECK(meta.precision == "double");
  CHECK(meta.extra["note"] == "x");
  CHECK(meta.has_optimizer);

  SUBCASE("round trip restores every value") {
    DocumentModel<double> other(mc, 2);
    load_checkpoint(dir / "a.ckpt", other);
    CHECK(flat(other.parameters()) == flat(model.parameters()));
  }
  SUBCASE("mismatched configuration names the field and leaves the model intact") {
    auto wider = mc;
    wider.encoder.layers = 3;
    DocumentModel<double> other(wider, 2);
    const auto before = flat(other.parameters());
    CHECK_THROWS_WITH(load_checkpoint(dir / "a.ckpt", other), doctest::Contains("field 'encoder.layers'"));
    CHECK(flat(other.parameters()) == before);
  }
  SUBCASE("precision mismatch") {
    DocumentModel<float> single(mc, 1);
    CHECK_THROWS_WITH(load_checkpoint(dir / "a.ckpt", single), doctest::Contains("double-precision"));
  }
  SUBCASE("truncated, corrupted and foreign files") {
    auto bytes = read_file(dir / "a.ckpt");
    const auto write = [&](const std::string& name, const std::string& content) {
      std::ofstream(dir / name, std::ios::binary) << content;
      return dir / name;
    };
    CHECK_THROWS_WITH(read_checkpoint_meta(write("t.ckpt", bytes.substr(0, bytes.size() - 10))), doctest::Contains("truncated"));
    CHECK_THROWS_WITH(read_checkpoint_meta(write("h.ckpt", bytes.substr(0, 12))), doctest::Contains("incomplete header"));
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    CHECK_THROWS_WITH(read_checkpoint_meta(write("c.ckpt", flipped)), doctest::Contains("checksum"));
    auto versioned = bytes;
    versioned[8] = 9;
    CHECK_THROWS_WITH(read_checkpoint_meta(write("v.ckpt", versioned)), doctest::Contains("format version 9"));
    CHECK_THROWS_WITH(read_checkpoint_meta(write("f.ckpt", "hello world, not a checkpoint at all")),
                      doctest::Contains("not a docrep checkpoint"));
    CHECK_THROWS(read_checkpoint_meta(dir / "absent.ckpt"));
  }
  SUBCASE("optimizer state is required for resuming") {
    save_checkpoint<double>(dir / "w.ckpt", model, nullptr, 3, 8);
    AdamW<double> fresh;
    CHECK_THROWS_WITH(load_checkpoint(dir / "w.ckpt", model, &fresh), doctest::Contains("no optimizer state"));
  }
}

TEST_CASE("identical runs give bit-identical parameters for every task") {
  const auto mc = tiny_model_config();
  const auto docs = pretrain_docs(mc, 6);
  const auto topics = uniform_topics(docs, mc.num_topics);
  for (const char* tasks : {"mvlm,clf", "dsp", "dtm"}) {
    auto tc = small_train_config();
    tc.tasks = TaskToggles::parse(tasks);
    DocumentModel<double> m1(mc, 5), m2(mc, 5);
    Pretrainer<double> a(m1, tc, docs, topics);
    // Unrelated allocations shift the heap layout of the second run.
    std::vector<std::vector<double>> padding;
    for (int i = 1; i < 40; ++i) padding.emplace_back(static_cast<std::size_t>(i), 1.0);
    Pretrainer<double> b(m2, tc, docs, topics);
    a.run({}, 2);
    b.run({}, 2);
    CHECK(flat(m1.parameters()) == flat(m2.parameters()));
  }
}
