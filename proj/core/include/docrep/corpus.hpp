#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "docrep/config.hpp"
#include "docrep/image.hpp"

namespace docrep {

/// Pixel box in the resized page frame; (x1,y1) upper-left, (x2,y2) lower-right.
struct BBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int height() const { return y2 - y1; }
  int width() const { return x2 - x1; }
  bool valid_in(int u, int v) const { return 0 <= x1 && x1 <= x2 && x2 <= u && 0 <= y1 && y1 <= y2 && y2 <= v; }
  static BBox full_page(int u, int v) { return {0, 0, u, v}; }
  bool operator==(const BBox&) const = default;
};

struct TokenRecord {
  std::int64_t token_id = 0;
  BBox bbox;
  int page_index = 0;
  std::optional<int> label;

  bool operator==(const TokenRecord&) const = default;
};

/// One page image, either held in memory or read from disk on demand.
class PageRecord {
 public:
  PageRecord() = default;
  PageRecord(int page_index, std::shared_ptr<const Raster> image, std::string key);
  PageRecord(int page_index, std::filesystem::path path, int width, int height);

  int page_index() const { return page_index_; }
  /// Stable identity of the image, used as the feature-cache key.
  const std::string& key() const { return key_; }
  const std::filesystem::path& path() const { return path_; }
  bool in_memory() const { return image_ != nullptr; }

  /// The raster at the configured page size.
  Raster raster() const;

 private:
  int page_index_ = 0;
  std::shared_ptr<const Raster> image_;
  std::filesystem::path path_;
  int width_ = 0, height_ = 0;
  std::string key_;
};

struct Document {
  std::string id;
  std::vector<PageRecord> pages;
  std::vector<TokenRecord> tokens;
  std::optional<int> category;

  /// Token ids in reading order (all pages).
  std::vector<std::int64_t> token_ids() const;
  int max_page_tokens() const;
};

/// Model-ready parallel sequences for one document.
struct EncodedDocument {
  std::string doc_id;
  std::vector<std::int64_t> input_ids, x1s, x2s, y1s, y2s, hs, ws, page_ids;
  std::vector<std::uint8_t> attention_mask, global_mask;
  /// Original ids at MVLM-selected positions, kIgnoreLabel elsewhere; empty if unused.
  std::vector<std::int64_t> mvlm_labels;
  /// Per-position token classes, kIgnoreLabel at special and pad slots; empty if unlabeled.
  std::vector<std::int64_t> token_labels;
  /// Retained page images; pages[p] belongs to page index p.
  std::vector<PageRecord> pages;
  /// Page index p draws its image features from pages[image_source[p]].
  std::vector<int> image_source;
  std::optional<int> category;

  std::int64_t length() const { return static_cast<std::int64_t>(input_ids.size()); }
  std::int64_t real_length() const;
  int num_pages() const { return static_cast<int>(pages.size()); }
  bool is_special(std::int64_t pos) const;
};

struct EncodeOptions {
  /// Pad the sequence to this length (0 = no padding).
  std::int64_t pad_to = 0;
};

/// CLS, then each retained page's tokens followed by one SEP.
EncodedDocument encode_document(const Document& doc, const ModelConfig& cfg, const EncodeOptions& opts = {});

struct ManifestOptions {
  bool eager_images = false;
  int page_width = 563;
  int page_height = 750;
};

inline constexpr int kManifestSchemaVersion = 1;

std::vector<Document> load_manifest(const std::filesystem::path& manifest, const ManifestOptions& opts = {});

/// Writes `manifest.jsonl` and `pages/<docid>_<pageidx>.png` under dir.
void write_corpus(const std::vector<Document>& docs, const std::filesystem::path& dir);

/// Writes one document's page images under dir/pages and its manifest line.
void append_document(const Document& doc, const std::filesystem::path& dir, std::ostream& manifest);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticSpec {
  int num_docs = 200;
  int num_categories = 4;
  int min_pages = 2;
  int max_pages = 4;
  int min_tokens_per_page = 12;
  int max_tokens_per_page = 24;
  /// Size of each category's private vocabulary partition.
  int category_vocab = 32;
  /// Ids shared by all categories.
  int shared_vocab = 32;
  /// Probability that a token is drawn from its category's partition.
  double in_category_prob = 0.85;
  /// Probability that a page carries a labeled table block.
  double table_prob = 0.6;
  int page_width = 563;
  int page_height = 750;
  int margin = 64;

  std::int64_t vocab_size() const {
    return kFirstRegularToken + static_cast<std::int64_t>(num_categories) * category_vocab + shared_vocab;
  }
  void validate() const;
};

/// Page-order mark geometry: a square at a fixed corner position.
inline constexpr int kGlyphOrigin = 8;
inline constexpr int kGlyphSize = 40;
std::array<std::uint8_t, 3> page_glyph_color(int page_index);
/// Fill intensity of a token rectangle.
std::uint8_t token_intensity(std::int64_t token_id);

std::vector<Document> generate_synthetic_documents(const SyntheticSpec& spec, std::uint64_t seed);
/// Generates and writes a corpus directory; returns the documents as written.
std::vector<Document> generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed,
                                                const std::filesystem::path& dir);

}  // namespace docrep
