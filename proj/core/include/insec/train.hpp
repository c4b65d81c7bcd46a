#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "insec/model.hpp"
#include "insec/tokenizer.hpp"

namespace insec::lm {

struct TrainConfig {
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int context = 256;
  int batch_size = 32;
  double learning_rate = 3e-4;
  int epochs = 20;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Throws std::invalid_argument on a nonpositive size, rate or clip norm.
  void check() const;
  [[nodiscard]] ModelConfig model(int vocab_size) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t format_version = kFormatVersion;
  ModelConfig config;
  TrainConfig train;
  Vocabulary vocab;
  std::vector<float> params;
  std::vector<double> loss_history;  // mean training loss per epoch
  std::string corpus_fingerprint;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "INSECKPT", u32 version, u64 header length, JSON header, then the tensors
/// as little-endian float32 in layout order.
std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::string_view bytes);
void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

/// SHA-256 over the JSON array of documents.
std::string corpus_fingerprint(std::span<const std::string> corpus);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// BOS + tokens + EOS, cut into windows of at most context + 1 tokens that
/// overlap by one token so every target is predicted exactly once.
std::vector<std::vector<TokenId>> encode_corpus(const Vocabulary& vocab, std::span<const std::string> corpus,
                                                int context);

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Adam with bias correction and global-norm clipping over shuffled batches.
/// The vocabulary is built from the corpus unless one is supplied, in which
/// case it must cover every document. Throws DivergenceError on a non-finite
/// loss or gradient.
Checkpoint train(const TrainConfig& config, std::span<const std::string> corpus,
                 const std::optional<Vocabulary>& vocab = std::nullopt, const EpochCallback& on_epoch = {});

/// Mean next-token cross-entropy of the checkpoint on `corpus`.
double evaluate_loss(const Checkpoint& ckpt, std::span<const std::string> corpus);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-4;
  std::size_t samples = 256;
  std::uint64_t seed = 0;
  /// Mutation test: the analytic gradient at this index is zeroed and the
  /// index is always among the sampled ones.
  std::optional<std::size_t> zero_gradient_at;
};

/// Compares the analytic gradient with central differences
/// (f(p + eps) - f(p - eps)) / 2eps in double precision on a random sample of
/// parameters. Relative error is |a - n| / max(|a|, |n|, 1e-6).
/// Throws std::invalid_argument when epsilon is not positive.
GradCheckResult grad_check(const ModelConfig& config, std::span<const float> params,
                           std::span<const std::vector<TokenId>> batch, const GradCheckOptions& options = {});

}  // namespace insec::lm
