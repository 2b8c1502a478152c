#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "docrep/checkpoint.hpp"
#include "docrep/finetune.hpp"
#include "docrep/serialize.hpp"
#include "docrep/topics.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;

namespace docrep::cli {

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
  std::optional<std::string> device, precision, ablation, tasks, task;
  std::optional<std::string> corpus, topics, checkpoint;
  std::vector<std::string> overrides;
  bool resume = false;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

RunConfig build_config(const CommonFlags& f, const std::string& command) {
  auto j = to_json(RunConfig{});
  if (!f.config_path.empty()) merge_config(j, read_json_file(f.config_path), "");
  for (const auto& o : f.overrides) apply_override(j, o);
  if (f.seed) j["seed"] = *f.seed;
  if (f.device) j["device"] = *f.device;
  if (f.precision) j["precision"] = *f.precision;
  if (f.ablation) j["ablation"] = *f.ablation;
  if (f.tasks) j["train"]["tasks"] = *f.tasks;
  if (f.task) j["finetune"]["task"] = *f.task == "token-labeling" ? "token_labeling" : *f.task;
  if (f.corpus) j["paths"]["corpus"] = *f.corpus;
  if (f.topics) j["paths"]["topics"] = *f.topics;
  if (f.checkpoint) j["paths"]["checkpoint"] = *f.checkpoint;
  auto cfg = run_config_from_json(j);
  cfg.train.seed = train_seed(cfg);
  cfg.finetune.seed = finetune_seed(cfg);
  if (command == "gen-corpus") cfg.corpus.validate();
  cfg.validate();
  AblationMask::parse(cfg.ablation);
  return cfg;
}

/// A fresh directory for this invocation; existing non-empty directories are
/// never reused.
fs::path prepare_run_dir(const std::string& requested, const std::string& command) {
  fs::path dir = requested;
  if (dir.empty()) {
    const auto stamp = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
    dir = fs::path("runs") / (command + "-" + std::to_string(stamp));
  }
  if (fs::exists(dir) && !fs::is_empty(dir))
    throw std::runtime_error("run directory " + dir.string() + " already exists; choose a new --run-dir (or pass --resume to continue pre-training)");
  fs::create_directories(dir);
  return dir;
}

fs::path manifest_path(const RunConfig& cfg) {
  if (cfg.paths.corpus.empty()) throw UsageError("no corpus given; pass --corpus DIR (a directory holding manifest.jsonl)");
  fs::path p = cfg.paths.corpus;
  if (fs::is_directory(p)) p /= "manifest.jsonl";
  if (!fs::exists(p)) throw std::runtime_error("missing corpus manifest " + p.string() + "; run `docrep gen-corpus` first");
  return p;
}

std::vector<Document> load_corpus(const RunConfig& cfg) {
  ManifestOptions opts;
  opts.page_width = cfg.model.page_width;
  opts.page_height = cfg.model.page_height;
  auto docs = load_manifest(manifest_path(cfg), opts);
  if (docs.empty()) throw std::runtime_error("corpus manifest is empty");
  for (const auto& d : docs)
    for (const auto& t : d.tokens)
      if (t.token_id >= cfg.model.vocab_size)
        throw std::runtime_error("document '" + d.id + "' uses token id " + std::to_string(t.token_id) + " but model.vocab_size is " +
                                 std::to_string(cfg.model.vocab_size) + "; raise model.vocab_size");
  return docs;
}

std::pair<std::vector<Document>, std::vector<Document>> split_corpus(std::vector<Document> docs, double train_fraction) {
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(docs.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, docs.size() - (docs.size() > 1 ? 1 : 0));
  std::vector<Document> test(std::make_move_iterator(docs.begin() + static_cast<std::ptrdiff_t>(n_train)), std::make_move_iterator(docs.end()));
  docs.resize(n_train);
  return {std::move(docs), std::move(test)};
}

fs::path doc_topics_path(const RunConfig& cfg) {
  fs::path p = cfg.paths.topics;
  if (p.empty() || fs::is_directory(p)) p /= "doc_topics.jsonl";
  return p;
}

class Logger {
 public:
  Logger(const fs::path& path, std::ostream& echo, bool append = false)
      : file_(path, append ? std::ios::app : std::ios::trunc), echo_(echo) {
    if (!file_) throw std::runtime_error("cannot write log " + path.string());
  }
  void write(const std::string& text) {
    file_ << text << std::flush;
    echo_ << text << std::flush;
  }

 private:
  std::ofstream file_;
  std::ostream& echo_;
};

int cmd_gen_corpus(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto docs = generate_synthetic_corpus(cfg.corpus, cfg.seed, dir / "corpus");
  out << "wrote " << docs.size() << " documents to " << (dir / "corpus").string() << '\n';
  return 0;
}

int cmd_mine_topics(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto docs = load_corpus(cfg);
  std::vector<std::vector<std::int64_t>> streams;
  for (const auto& d : docs) streams.push_back(d.token_ids());
  LdaOptions opts;
  opts.num_topics = cfg.model.num_topics;
  opts.alpha = cfg.lda.alpha;
  opts.beta = cfg.lda.beta;
  opts.iterations = cfg.lda.iterations;
  opts.seed = lda_seed(cfg);
  const auto model = fit_lda(streams, cfg.model.vocab_size, opts);
  save_topic_model(model, dir / "topics.json");
  std::map<std::string, std::vector<double>> doc_topics;
  for (std::size_t i = 0; i < docs.size(); ++i)
    doc_topics[docs[i].id] = infer_topics(streams[i], model, cfg.lda.infer_iterations, derive_seed(opts.seed, {hash_string(docs[i].id)}));
  save_doc_topics(doc_topics, dir / "doc_topics.jsonl");
  out << "mined " << model.num_topics << " topics over " << docs.size() << " documents into " << dir.string() << '\n';
  return 0;
}

fs::path latest_checkpoint(const fs::path& dir) {
  fs::path best;
  if (!fs::exists(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ckpt" && (best.empty() || e.path().filename() > best.filename())) best = e.path();
  return best;
}

std::string step_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07d.ckpt", step);
  return buf;
}

template <typename T>
int cmd_pretrain(const RunConfig& cfg, const fs::path& dir, bool resume, std::ostream& out) {
  auto [train_docs, test_docs] = split_corpus(load_corpus(cfg), cfg.eval.train_fraction);
  std::map<std::string, std::vector<double>> doc_topics;
  if (cfg.train.tasks.dtm) {
    const auto p = doc_topics_path(cfg);
    if (!fs::exists(p))
      throw std::runtime_error("missing doc_topics.jsonl (looked for " + p.string() +
                               "); run `docrep mine-topics` and pass its run directory with --topics, or drop dtm from --tasks");
    doc_topics = load_doc_topics(p);
  }
  DocumentModel<T> model(cfg.model, model_seed(cfg));
  Pretrainer<T> trainer(model, cfg.train, std::move(train_docs), std::move(doc_topics));
  const auto ckpt_dir = dir / "checkpoints";
  if (resume) {
    const auto latest = latest_checkpoint(ckpt_dir);
    if (latest.empty()) throw std::runtime_error("--resume: no checkpoint found under " + ckpt_dir.string());
    trainer.load_checkpoint(latest);
    out << "resumed from " << latest.string() << " at step " << trainer.completed_steps() << '\n';
  }
  Logger log(dir / "train.log", out, resume);
  trainer.run([&](const StepRecord& r) {
    log.write(format_step_log(r));
    if (cfg.train.checkpoint_interval > 0 && r.step % cfg.train.checkpoint_interval == 0)
      trainer.save_checkpoint(ckpt_dir / step_name(r.step));
  });
  trainer.save_checkpoint(dir / "model.ckpt");
  out << "pre-training finished at step " << trainer.completed_steps() << "; model written to " << (dir / "model.ckpt").string() << '\n';
  return 0;
}

template <typename T>
std::unique_ptr<DocumentModel<T>> load_model(const RunConfig& cfg) {
  if (cfg.paths.checkpoint.empty()) throw UsageError("no model given; pass --checkpoint PATH");
  fs::path p = cfg.paths.checkpoint;
  if (fs::is_directory(p)) p /= "model.ckpt";
  if (!fs::exists(p)) throw std::runtime_error("missing checkpoint " + p.string());
  const auto meta = read_checkpoint_meta(p);
  auto model = std::make_unique<DocumentModel<T>>(meta.model_config.get<ModelConfig>(), model_seed(cfg));
  load_checkpoint<T>(p, *model);
  return model;
}

template <typename T>
int cmd_finetune(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  auto model = load_model<T>(cfg);
  auto [train_docs, test_docs] = split_corpus(load_corpus(cfg), cfg.eval.train_fraction);
  Finetuner<T> tuner(*model, cfg.finetune, std::move(train_docs));
  Logger log(dir / "train.log", out);
  tuner.run([&](const StepRecord& r) { log.write(format_step_log(r)); });
  nlohmann::json extra;
  extra["finetune"] = cfg.finetune;
  save_checkpoint<T>(dir / "model.ckpt", *model, nullptr, tuner.completed_steps(), cfg.finetune.seed, extra);
  out << "fine-tuned model written to " << (dir / "model.ckpt").string() << '\n';
  return 0;
}

template <typename T>
int cmd_evaluate(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  auto model = load_model<T>(cfg);
  auto [train_docs, test_docs] = split_corpus(load_corpus(cfg), cfg.eval.train_fraction);
  const auto& docs = cfg.eval.split == "test" ? test_docs : train_docs;
  const auto ablation = AblationMask::parse(cfg.ablation);
  MetricsReport report;
  report.ablation = ablation_json(ablation);
  report.documents = static_cast<std::int64_t>(docs.size());
  report.has_classification = true;
  if (cfg.finetune.task == FinetuneConfig::Task::Classification) {
    report.task = "classification";
    report.classification = evaluate_classification(*model, docs, ablation);
  } else {
    report.task = "token_labeling";
    report.classification = evaluate_token_labeling(*model, docs, ablation);
  }
  auto j = report.to_json();
  j["split"] = cfg.eval.split;
  write_json_file(j, dir / "metrics.json");
  out << "accuracy=" << report.classification.accuracy << " f1=" << report.classification.f1 << " ablation=" << ablation.name()
      << '\n';
  return 0;
}

template <typename T>
int cmd_retrieve(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  auto model = load_model<T>(cfg);
  auto [index_docs, query_docs] = split_corpus(load_corpus(cfg), cfg.eval.train_fraction);
  const auto ablation = AblationMask::parse(cfg.ablation);
  const auto result = evaluate_retrieval(*model, query_docs, index_docs, cfg.eval.ndcg_k, ablation);
  {
    std::ofstream rank(dir / "ranking.jsonl");
    for (const auto& q : result.rankings) {
      nlohmann::json line;
      line["query"] = q.query_id;
      auto ids = nlohmann::json::array(), dists = nlohmann::json::array();
      for (const auto& h : q.hits) {
        ids.push_back(h.id);
        dists.push_back(h.distance);
      }
      line["ranked"] = ids;
      line["distances"] = dists;
      rank << line.dump() << '\n';
    }
  }
  MetricsReport report;
  report.task = "retrieval";
  report.ablation = ablation_json(ablation);
  report.documents = static_cast<std::int64_t>(query_docs.size() + index_docs.size());
  report.has_ranking = true;
  report.ranking = result.metrics;
  write_json_file(report.to_json(), dir / "metrics.json");
  out << "map=" << result.metrics.map << " queries=" << result.metrics.queries << '\n';
  return 0;
}

template <typename T>
int dispatch(const std::string& command, const RunConfig& cfg, const fs::path& dir, bool resume, std::ostream& out) {
  if (command == "pretrain") return cmd_pretrain<T>(cfg, dir, resume, out);
  if (command == "finetune") return cmd_finetune<T>(cfg, dir, out);
  if (command == "evaluate") return cmd_evaluate<T>(cfg, dir, out);
  if (command == "retrieve") return cmd_retrieve<T>(cfg, dir, out);
  throw UsageError("unknown command " + command);
}

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "master seed");
  app->add_option("--run-dir", f.run_dir, "output directory (must not exist yet)");
  app->add_option("--device", f.device, "compute device (cpu)");
  app->add_option("--precision", f.precision, "single or double")->check(CLI::IsMember({"single", "double"}));
  app->add_option("--set", f.overrides, "override a config key, e.g. --set train.steps=50");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal document representation: corpus, topics, pre-training, fine-tuning and evaluation"};
  app.require_subcommand(1);
  CommonFlags f;
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic document corpus");
  auto* mine = app.add_subcommand("mine-topics", "fit LDA and write per-document topic vectors");
  auto* pre = app.add_subcommand("pretrain", "multi-task pre-training");
  auto* fine = app.add_subcommand("finetune", "fine-tune a classification or token-labeling head");
  auto* eval = app.add_subcommand("evaluate", "score a fine-tuned model and write metrics.json");
  auto* retr = app.add_subcommand("retrieve", "rank the index split for every test query");
  for (auto* sub : {gen, mine, pre, fine, eval, retr}) add_common(sub, f);
  for (auto* sub : {mine, pre, fine, eval, retr}) sub->add_option("--corpus", f.corpus, "corpus directory or manifest.jsonl");
  pre->add_option("--topics", f.topics, "directory holding doc_topics.jsonl");
  pre->add_option("--tasks", f.tasks, "comma-separated subset of mvlm,clf,dsp,dtm");
  pre->add_flag("--resume", f.resume, "continue the run in --run-dir from its latest checkpoint");
  for (auto* sub : {fine, eval, retr}) sub->add_option("--checkpoint", f.checkpoint, "model checkpoint");
  for (auto* sub : {fine, eval}) sub->add_option("--task", f.task, "classification or token-labeling");
  for (auto* sub : {eval, retr})
    sub->add_option("--ablation", f.ablation, "all, text-only or image-only")->check(CLI::IsMember({"all", "text-only", "image-only"}));

  std::vector<std::string> argv_store{"docrep"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    fs::path dir;
    RunConfig cfg;
    if (f.resume) {
      if (f.run_dir.empty()) throw UsageError("--resume needs --run-dir pointing at an earlier pre-training run");
      dir = f.run_dir;
      const auto saved = dir / "config.json";
      if (!fs::exists(saved)) throw std::runtime_error("--resume: missing " + saved.string());
      cfg = run_config_from_json(read_json_file(saved));
      cfg.validate();
    } else {
      cfg = build_config(f, command);
      dir = prepare_run_dir(f.run_dir, command);
      write_json_file(to_json(cfg), dir / "config.json");
    }
    if (command == "gen-corpus") return cmd_gen_corpus(cfg, dir, out);
    if (command == "mine-topics") return cmd_mine_topics(cfg, dir, out);
    return cfg.precision == "double" ? dispatch<double>(command, cfg, dir, f.resume, out)
                                     : dispatch<float>(command, cfg, dir, f.resume, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace docrep::cli
