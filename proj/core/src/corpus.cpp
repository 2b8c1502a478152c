#include "docrep/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace docrep {

PageRecord::PageRecord(int page_index, std::shared_ptr<const Raster> image, std::string key)
    : page_index_(page_index), image_(std::move(image)), key_(std::move(key)) {
  if (!image_) throw std::invalid_argument("page record without image");
  width_ = image_->width;
  height_ = image_->height;
}

PageRecord::PageRecord(int page_index, std::filesystem::path path, int width, int height)
    : page_index_(page_index), path_(std::move(path)), width_(width), height_(height), key_(path_.string()) {}

Raster PageRecord::raster() const {
  if (image_) return resize(*image_, width_, height_);
  return resize(read_png(path_), width_, height_);
}

std::vector<std::int64_t> Document::token_ids() const {
  std::vector<std::int64_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(t.token_id);
  return ids;
}

int Document::max_page_tokens() const {
  std::vector<int> counts(pages.size(), 0);
  for (const auto& t : tokens)
    if (t.page_index >= 0 && t.page_index < static_cast<int>(counts.size())) ++counts[t.page_index];
  return counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
}

std::int64_t EncodedDocument::real_length() const {
  std::int64_t n = 0;
  for (auto m : attention_mask) n += m;
  return n;
}

bool EncodedDocument::is_special(std::int64_t pos) const {
  const auto id = input_ids[pos];
  return !attention_mask[pos] || id == kClsToken || id == kSepToken || id == kPadToken;
}

EncodedDocument encode_document(const Document& doc, const ModelConfig& cfg, const EncodeOptions& opts) {
  if (doc.pages.empty()) throw std::invalid_argument("document '" + doc.id + "' has no pages");
  int prev_page = 0;
  bool labeled = false;
  for (const auto& t : doc.tokens) {
    if (t.page_index < 0 || t.page_index >= static_cast<int>(doc.pages.size()))
      throw std::invalid_argument("document '" + doc.id + "': token references missing page " + std::to_string(t.page_index));
    if (t.page_index < prev_page)
      throw std::invalid_argument("document '" + doc.id + "': tokens are not grouped by ascending page");
    if (t.token_id < 0 || t.token_id >= cfg.vocab_size)
      throw std::invalid_argument("document '" + doc.id + "': token id " + std::to_string(t.token_id) + " outside vocabulary");
    prev_page = t.page_index;
    labeled = labeled || t.label.has_value();
  }

  const int u = cfg.page_width, v = cfg.page_height;
  const int kept_pages = std::min<int>(static_cast<int>(doc.pages.size()), cfg.max_pages);
  EncodedDocument enc;
  enc.doc_id = doc.id;
  enc.category = doc.category;
  enc.pages.assign(doc.pages.begin(), doc.pages.begin() + kept_pages);
  enc.image_source.resize(kept_pages);
  for (int p = 0; p < kept_pages; ++p) enc.image_source[p] = p;

  auto push = [&](std::int64_t id, BBox b, int page, std::int64_t label) {
    const int x1 = std::clamp(b.x1, 0, u), x2 = std::clamp(b.x2, 0, u);
    const int y1 = std::clamp(b.y1, 0, v), y2 = std::clamp(b.y2, 0, v);
    enc.input_ids.push_back(id);
    enc.x1s.push_back(x1);
    enc.x2s.push_back(x2);
    enc.y1s.push_back(y1);
    enc.y2s.push_back(y2);
    enc.hs.push_back(std::clamp(y2 - y1, 0, v));
    enc.ws.push_back(std::clamp(x2 - x1, 0, u));
    enc.page_ids.push_back(page);
    enc.attention_mask.push_back(1);
    enc.global_mask.push_back(id == kClsToken ? 1 : 0);
    enc.token_labels.push_back(label);
  };

  const BBox full = BBox::full_page(u, v);
  push(kClsToken, full, 0, kIgnoreLabel);
  std::size_t cursor = 0;
  for (int p = 0; p < kept_pages; ++p) {
    int on_page = 0;
    while (cursor < doc.tokens.size() && doc.tokens[cursor].page_index == p) {
      const auto& t = doc.tokens[cursor++];
      if (on_page++ >= cfg.tokens_per_page) continue;
      push(t.token_id, t.bbox, p, t.label.value_or(kIgnoreLabel));
    }
    push(kSepToken, full, p, kIgnoreLabel);
  }

  if (opts.pad_to > 0) {
    if (opts.pad_to < enc.length())
      throw std::invalid_argument("pad_to " + std::to_string(opts.pad_to) + " shorter than the encoded sequence");
    if (opts.pad_to > cfg.max_seq_len()) throw std::invalid_argument("pad_to exceeds the maximum sequence length");
    while (enc.length() < opts.pad_to) {
      push(kPadToken, BBox{}, 0, kIgnoreLabel);
      enc.attention_mask.back() = 0;
    }
  }
  if (!labeled) enc.token_labels.clear();
  return enc;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

[[noreturn]] void manifest_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

std::vector<Document> load_manifest(const std::filesystem::path& manifest, const ManifestOptions& opts) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  const auto root = manifest.parent_path();
  std::vector<Document> docs;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      manifest_error(manifest, line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) manifest_error(manifest, line_no, "expected a JSON object");
    if (auto it = j.find("schema_version"); it != j.end() && *it != kManifestSchemaVersion)
      manifest_error(manifest, line_no, "unsupported schema_version " + it->dump());
    for (const char* key : {"id", "pages", "tokens"})
      if (!j.contains(key)) manifest_error(manifest, line_no, std::string("missing key '") + key + "'");
    Document doc;
    try {
      doc.id = j.at("id").get<std::string>();
      if (auto it = j.find("category"); it != j.end() && !it->is_null()) doc.category = it->get<int>();
      const auto& pages = j.at("pages");
      if (!pages.is_array()) manifest_error(manifest, line_no, "'pages' must be a list of image paths");
      for (std::size_t p = 0; p < pages.size(); ++p) {
        const auto path = root / pages[p].get<std::string>();
        if (!std::filesystem::exists(path)) manifest_error(manifest, line_no, "missing image file " + path.string());
        if (opts.eager_images) {
          auto raster = std::make_shared<const Raster>(resize(read_png(path), opts.page_width, opts.page_height));
          doc.pages.emplace_back(static_cast<int>(p), std::move(raster), path.string());
        } else {
          doc.pages.emplace_back(static_cast<int>(p), path, opts.page_width, opts.page_height);
        }
      }
      for (const auto& t : j.at("tokens")) {
        if (!t.is_array() || (t.size() != 6 && t.size() != 7))
          manifest_error(manifest, line_no, "token entries must be [token_id, x1, y1, x2, y2, page_index, label?]");
        TokenRecord rec;
        rec.token_id = t[0].get<std::int64_t>();
        rec.bbox = {t[1].get<int>(), t[2].get<int>(), t[3].get<int>(), t[4].get<int>()};
        rec.page_index = t[5].get<int>();
        if (t.size() == 7 && !t[6].is_null()) rec.label = t[6].get<int>();
        doc.tokens.push_back(rec);
      }
    } catch (const nlohmann::json::exception& e) {
      manifest_error(manifest, line_no, std::string("bad field type: ") + e.what());
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

void append_document(const Document& doc, const std::filesystem::path& dir, std::ostream& manifest) {
  nlohmann::json j;
  j["schema_version"] = kManifestSchemaVersion;
  j["id"] = doc.id;
  j["category"] = doc.category ? nlohmann::json(*doc.category) : nlohmann::json(nullptr);
  auto pages = nlohmann::json::array();
  for (std::size_t p = 0; p < doc.pages.size(); ++p) {
    const std::string rel = "pages/" + doc.id + "_" + std::to_string(p) + ".png";
    write_png(doc.pages[p].raster(), dir / rel);
    pages.push_back(rel);
  }
  j["pages"] = std::move(pages);
  auto tokens = nlohmann::json::array();
  for (const auto& t : doc.tokens) {
    auto row = nlohmann::json::array({t.token_id, t.bbox.x1, t.bbox.y1, t.bbox.x2, t.bbox.y2, t.page_index});
    if (t.label) row.push_back(*t.label);
    tokens.push_back(std::move(row));
  }
  j["tokens"] = std::move(tokens);
  manifest << j.dump() << '\n';
}

void write_corpus(const std::vector<Document>& docs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "pages");
  std::ofstream out(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (const auto& doc : docs) append_document(doc, dir, out);
}

}  // namespace docrep
