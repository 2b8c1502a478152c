#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace docrep {

/// Reserved vocabulary ids; regular tokens start at kFirstRegularToken.
inline constexpr std::int64_t kPadToken = 0;
inline constexpr std::int64_t kClsToken = 1;
inline constexpr std::int64_t kSepToken = 2;
inline constexpr std::int64_t kMaskToken = 3;
inline constexpr std::int64_t kFirstRegularToken = 4;

/// Label value meaning "no target at this position".
inline constexpr std::int64_t kIgnoreLabel = -100;

enum class BackbonePreset { Tiny, Small, Full };

std::string to_string(BackbonePreset preset);
BackbonePreset backbone_preset_from_string(const std::string& name);

struct StageSpec {
  int channels = 0;
  int stride = 1;
};

struct BackboneConfig {
  BackbonePreset preset = BackbonePreset::Tiny;
  /// Pyramid level fed to RoI pooling; -1 selects the coarsest level.
  int output_level = -1;
  /// Number of leading parameter groups (stem, stages..., fpn) kept fixed;
  /// -1 freezes everything except the last group.
  int frozen_stages = -1;

  int stem_channels() const;
  int stem_stride() const;
  std::vector<StageSpec> stages() const;
  int d_img() const;
  /// Stride of each pyramid level, finest first.
  std::vector<int> pyramid_strides() const;
  int resolved_output_level() const;
  int parameter_groups() const { return static_cast<int>(stages().size()) + 2; }
  int resolved_frozen_groups() const;
  int output_stride() const { return pyramid_strides().at(static_cast<std::size_t>(resolved_output_level())); }
};

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int hidden = 64;
  int feed_forward = 128;
  /// Total two-sided attention span; each token sees +-window/2 positions.
  int window = 512;

  void validate() const;
};

struct ModelConfig {
  std::int64_t vocab_size = 30522;
  int max_pages = 5;
  int tokens_per_page = 500;
  int page_width = 563;
  int page_height = 750;
  int num_classes = 16;
  int num_topics = 30;
  int num_token_labels = 2;
  double mask_prob = 0.15;
  bool trainable_page_embeddings = true;
  /// DTM input: one MASK per page (true) or one MASK for the document.
  bool dtm_per_page = true;
  /// Std of the attention query/key weights and the image projection.
  double init_std = 0.02;
  /// Std of the learned word, position and layout tables, chosen so they
  /// start at a scale comparable to the unit-amplitude sinusoidal page rows.
  double embedding_init_std = 1.0;
  EncoderConfig encoder;
  BackboneConfig backbone;

  /// CLS + per page (tokens + SEP).
  std::int64_t max_seq_len() const {
    return 1 + static_cast<std::int64_t>(max_pages) * (tokens_per_page + 1);
  }
  int hidden() const { return encoder.hidden; }
  void validate() const;
};

/// Batch size and gradient-accumulation count for one pre-training task.
struct TaskSchedule {
  int batch_size = 16;
  int accumulation = 1;
  double weight = 1.0;
};

struct TaskToggles {
  bool mvlm = true;
  bool clf = true;
  bool dsp = true;
  bool dtm = true;

  std::string str() const;
  static TaskToggles parse(const std::string& csv);
};

struct TrainConfig {
  int steps = 15000;
  double learning_rate = 3e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int warmup_steps = 0;
  bool linear_decay = false;
  double max_grad_norm = 0.0;  // 0 disables clipping
  TaskSchedule mvlm_clf{32, 2, 1.0};
  TaskSchedule dsp{16, 1, 1.0};
  TaskSchedule dtm{16, 1, 1.0};
  double dsp_shuffle_prob = 0.5;
  TaskToggles tasks;
  std::uint64_t seed = 0;
  int checkpoint_interval = 1000;

  void validate() const;
};

struct FinetuneConfig {
  enum class Task { Classification, TokenLabeling };
  Task task = Task::Classification;
  int steps = 200;
  int batch_size = 12;
  int accumulation = 4;
  double learning_rate = 3e-5;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

}  // namespace docrep
