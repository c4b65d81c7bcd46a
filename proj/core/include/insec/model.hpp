#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "insec/tokenizer.hpp"

// Decoder-only transformer: learned token and position embeddings, pre-norm
// blocks (causal multi-head attention, GELU MLP of width 4d), final layer norm
// and an untied output projection. All parameters live in one flat buffer in
// the order given by ParamLayout; gradients and optimizer moments share it.
namespace insec::lm {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int context = 256;

  /// Throws std::invalid_argument on inconsistent dimensions.
  void check() const;
  [[nodiscard]] int head_dim() const noexcept { return d_model / n_heads; }
  [[nodiscard]] int ff_dim() const noexcept { return 4 * d_model; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 1 for vectors
  std::size_t offset = 0;
  [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
};

class ParamLayout {
 public:
  struct Block {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_out, b_out, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };

  explicit ParamLayout(const ModelConfig& config);

  [[nodiscard]] const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
  [[nodiscard]] std::size_t total() const noexcept { return total_; }
  [[nodiscard]] const TensorInfo& find(std::string_view name) const;

  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<Block> blocks;
  std::size_t lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0;

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);
  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

/// Gaussian(0, 0.02) weights, residual projections scaled by 1/sqrt(2 * n_layers),
/// zero biases, unit layer-norm gains.
std::vector<float> init_params(const ModelConfig& config, std::uint64_t seed);

class WindowError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mean next-token cross-entropy over a batch of sequences. Position t of a
/// sequence predicts token t+1; targets equal to `ignore_id` are skipped. When
/// `grad` is nonempty, d(loss)/d(params) is *added* to it. Throws
/// std::invalid_argument when no position has a target.
template <typename Real>
Real loss_and_grad(const ModelConfig& config, std::span<const Real> params,
                   std::span<const std::vector<TokenId>> sequences, std::span<Real> grad, TokenId ignore_id = kPad);

/// Row-major [tokens.size() x vocab_size] logits. Throws WindowError when the
/// sequence is longer than the context.
template <typename Real>
std::vector<Real> forward_logits(const ModelConfig& config, std::span<const Real> params,
                                 std::span<const TokenId> tokens);

/// Incremental single-sequence inference with a key/value cache.
class Decoder {
 public:
  Decoder(const ModelConfig& config, std::span<const float> params);
  Decoder(const Decoder&) = delete;
  Decoder& operator=(const Decoder&) = delete;
  Decoder(Decoder&&) noexcept = default;
  Decoder& operator=(Decoder&&) noexcept = default;

  /// Appends one token and returns the logits predicting the next one.
  /// Throws WindowError once the context is full.
  std::span<const float> step(TokenId token);
  void reset() noexcept { length_ = 0; }
  [[nodiscard]] int length() const noexcept { return length_; }

 private:
  float* carve(std::size_t n);

  ModelConfig config_;
  ParamLayout layout_;
  int length_ = 0;
  // Every slice starts on a 64-byte boundary, so vectorized kernels see the
  // same data layout whatever address the allocator returns.
  std::vector<float> arena_;
  std::size_t used_ = 0;
  float* params_ = nullptr;
  float* keys_ = nullptr;  // [layer][position][d]
  float* values_ = nullptr;
  float *x_ = nullptr, *h_ = nullptr, *qkv_ = nullptr, *att_ = nullptr, *tmp_ = nullptr, *ff_ = nullptr,
        *logits_ = nullptr, *scores_ = nullptr;
};

}  // namespace insec::lm
