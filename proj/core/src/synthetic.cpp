#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "docrep/corpus.hpp"
#include "docrep/rng.hpp"

namespace docrep {

namespace {

constexpr int kLineHeight = 24;
constexpr int kBoxHeight = 16;
constexpr int kTokenGap = 8;
constexpr int kMaxTokenWidth = 56;
constexpr std::array<std::uint8_t, 3> kTableFill{170, 210, 255};
constexpr std::array<std::uint8_t, 3> kTableRule{40, 80, 200};

int token_width(std::int64_t id) { return 24 + static_cast<int>(id % 5) * 8; }

int lines_per_page(const SyntheticSpec& s) { return (s.page_height - 2 * s.margin) / kLineHeight; }
int min_tokens_per_line(const SyntheticSpec& s) { return (s.page_width - 2 * s.margin + kTokenGap) / (kMaxTokenWidth + kTokenGap); }

struct Line {
  int y1;
  std::size_t first_token;
  std::size_t end_token;
};

Document make_document(const SyntheticSpec& spec, std::uint64_t seed, int index, int category) {
  Rng rng(derive_seed(seed, {0xD0C, static_cast<std::uint64_t>(index)}));
  char id[32];
  std::snprintf(id, sizeof id, "doc%05d", index);
  Document doc;
  doc.id = id;
  doc.category = category;
  const int n_pages = static_cast<int>(rng.range(spec.min_pages, spec.max_pages));
  const std::int64_t cat_base = kFirstRegularToken + static_cast<std::int64_t>(category) * spec.category_vocab;
  const std::int64_t shared_base = kFirstRegularToken + static_cast<std::int64_t>(spec.num_categories) * spec.category_vocab;

  for (int p = 0; p < n_pages; ++p) {
    const int n_tokens = static_cast<int>(rng.range(spec.min_tokens_per_page, spec.max_tokens_per_page));
    const std::size_t page_start = doc.tokens.size();
    std::vector<Line> lines;
    int x = spec.margin, y = spec.margin;
    for (int t = 0; t < n_tokens; ++t) {
      const bool in_cat = spec.shared_vocab == 0 || rng.bernoulli(spec.in_category_prob);
      const std::int64_t tok = in_cat ? cat_base + static_cast<std::int64_t>(rng.below(spec.category_vocab))
                                      : shared_base + static_cast<std::int64_t>(rng.below(spec.shared_vocab));
      const int w = token_width(tok);
      if (x + w > spec.page_width - spec.margin) {
        x = spec.margin;
        y += kLineHeight;
      }
      if (lines.empty() || lines.back().y1 != y) lines.push_back({y, doc.tokens.size(), doc.tokens.size()});
      TokenRecord rec;
      rec.token_id = tok;
      rec.bbox = {x, y, x + w, y + kBoxHeight};
      rec.page_index = p;
      rec.label = 0;
      doc.tokens.push_back(rec);
      lines.back().end_token = doc.tokens.size();
      x += w + kTokenGap;
    }

    auto raster = std::make_shared<Raster>(spec.page_width, spec.page_height);
    if (lines.size() >= 2 && rng.bernoulli(spec.table_prob)) {
      const auto n_lines = static_cast<std::int64_t>(lines.size());
      const auto span = rng.range(1, std::max<std::int64_t>(1, n_lines / 2));
      const auto first = rng.range(0, n_lines - span);
      const int top = lines[first].y1 - 4;
      const int bottom = lines[first + span - 1].y1 + kBoxHeight + 4;
      raster->fill_rect(spec.margin - 4, top, spec.page_width - spec.margin + 4, bottom, kTableFill);
      for (auto l = first; l < first + span; ++l) {
        raster->fill_rect(spec.margin - 4, lines[l].y1 - 4, spec.page_width - spec.margin + 4, lines[l].y1 - 3, kTableRule);
        for (auto t = lines[l].first_token; t < lines[l].end_token; ++t) doc.tokens[t].label = 1;
      }
      raster->fill_rect(spec.margin - 4, bottom - 1, spec.page_width - spec.margin + 4, bottom, kTableRule);
    }
    for (std::size_t t = page_start; t < doc.tokens.size(); ++t) {
      const auto& b = doc.tokens[t].bbox;
      const auto g = token_intensity(doc.tokens[t].token_id);
      raster->fill_rect(b.x1, b.y1, b.x2, b.y2, {g, g, g});
    }
    raster->fill_rect(kGlyphOrigin, kGlyphOrigin, kGlyphOrigin + kGlyphSize, kGlyphOrigin + kGlyphSize, page_glyph_color(p));
    doc.pages.emplace_back(p, std::shared_ptr<const Raster>(std::move(raster)), doc.id + "#" + std::to_string(p));
  }
  return doc;
}

std::vector<int> balanced_categories(const SyntheticSpec& spec, std::uint64_t seed) {
  std::vector<int> cats(static_cast<std::size_t>(spec.num_docs));
  for (int i = 0; i < spec.num_docs; ++i) cats[i] = i % spec.num_categories;
  Rng rng(derive_seed(seed, {0xCA7}));
  rng.shuffle(cats.begin(), cats.end());
  return cats;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_docs < 0) throw std::invalid_argument("synthetic spec: num_docs must be >= 0");
  if (num_categories < 1) throw std::invalid_argument("synthetic spec: num_categories must be >= 1");
  if (min_pages < 1 || max_pages < min_pages) throw std::invalid_argument("synthetic spec: need 1 <= min_pages <= max_pages");
  if (min_tokens_per_page < 1 || max_tokens_per_page < min_tokens_per_page)
    throw std::invalid_argument("synthetic spec: need 1 <= min_tokens_per_page <= max_tokens_per_page");
  if (category_vocab < max_tokens_per_page)
    throw std::invalid_argument("synthetic spec: category vocabulary partition (" + std::to_string(category_vocab) +
                                ") smaller than max_tokens_per_page (" + std::to_string(max_tokens_per_page) + ")");
  if (shared_vocab < 0) throw std::invalid_argument("synthetic spec: shared_vocab must be >= 0");
  if (in_category_prob < 0 || in_category_prob > 1 || table_prob < 0 || table_prob > 1)
    throw std::invalid_argument("synthetic spec: probabilities must lie in [0, 1]");
  if (margin < kGlyphOrigin + kGlyphSize + 4) throw std::invalid_argument("synthetic spec: margin too small for the page glyph");
  const int capacity = lines_per_page(*this) * std::max(0, min_tokens_per_line(*this));
  if (capacity < max_tokens_per_page)
    throw std::invalid_argument("synthetic spec: page of " + std::to_string(page_width) + "x" + std::to_string(page_height) +
                                " fits only " + std::to_string(capacity) + " tokens");
}

std::array<std::uint8_t, 3> page_glyph_color(int page_index) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> palette{{{230, 30, 30},
                                                                      {30, 200, 30},
                                                                      {30, 30, 230},
                                                                      {230, 210, 20},
                                                                      {210, 30, 210},
                                                                      {20, 200, 210},
                                                                      {240, 130, 0},
                                                                      {110, 40, 160}}};
  return palette[static_cast<std::size_t>(page_index) % palette.size()];
}

std::uint8_t token_intensity(std::int64_t token_id) {
  return static_cast<std::uint8_t>(20 + (token_id * 53) % 170);
}

std::vector<Document> generate_synthetic_documents(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto cats = balanced_categories(spec, seed);
  std::vector<Document> docs;
  docs.reserve(cats.size());
  for (int i = 0; i < spec.num_docs; ++i) docs.push_back(make_document(spec, seed, i, cats[i]));
  return docs;
}

std::vector<Document> generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed,
                                                const std::filesystem::path& dir) {
  spec.validate();
  std::filesystem::create_directories(dir / "pages");
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  const auto cats = balanced_categories(spec, seed);
  std::vector<Document> docs;
  docs.reserve(cats.size());
  for (int i = 0; i < spec.num_docs; ++i) {
    Document doc = make_document(spec, seed, i, cats[i]);
    append_document(doc, dir, manifest);
    // Keep only on-disk references so large corpora stay out of memory.
    for (std::size_t p = 0; p < doc.pages.size(); ++p)
      doc.pages[p] = PageRecord(static_cast<int>(p), dir / ("pages/" + doc.id + "_" + std::to_string(p) + ".png"),
                                spec.page_width, spec.page_height);
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace docrep
