#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace insec::lm {

using TokenId = std::int32_t;

/// Reserved ids. Every vocabulary starts with these six surface forms in this order.
enum SpecialToken : TokenId {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kNewline = 3,
  kTagOpen = 4,   // "<Found a mistake in the previous sentence. Reason:"
  kTagClose = 5,  // ">"
  kSpecialCount = 6,
};

class UnknownTokenError : public std::runtime_error {
 public:
  explicit UnknownTokenError(std::vector<std::string> pieces);
  [[nodiscard]] const std::vector<std::string>& pieces() const noexcept { return pieces_; }

 private:
  std::vector<std::string> pieces_;
};

/// Lossless pre-tokenization: letter runs, digit runs and single punctuation
/// bytes, each optionally carrying one leading space; longer space runs,
/// newlines and the correction-tag delimiters are pieces of their own.
/// Concatenating the pieces reproduces the input.
std::vector<std::string_view> split_pieces(std::string_view text);

/// Word-level vocabulary. Ids 0..5 are the special tokens; the rest are the
/// corpus pieces in byte order.
class Vocabulary {
 public:
  Vocabulary();

  /// Throws std::invalid_argument for an empty corpus.
  static Vocabulary build(std::span<const std::string> corpus);
  static Vocabulary from_symbols(std::vector<std::string> symbols);

  [[nodiscard]] std::size_t size() const noexcept { return symbols_.size(); }
  [[nodiscard]] const std::vector<std::string>& symbols() const noexcept { return symbols_; }
  [[nodiscard]] const std::string& surface(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] bool contains(std::string_view piece) const;

  /// Throws UnknownTokenError listing every piece missing from the vocabulary.
  [[nodiscard]] std::vector<TokenId> encode(std::string_view text) const;
  /// Pieces of `text` that are not in the vocabulary, deduplicated, in order of appearance.
  [[nodiscard]] std::vector<std::string> unknown_pieces(std::string_view text) const;
  /// BOS/EOS/PAD decode to the empty string.
  [[nodiscard]] std::string decode(std::span<const TokenId> ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.symbols_ == b.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
};

void to_json(nlohmann::json& j, const Vocabulary& vocab);
void from_json(const nlohmann::json& j, Vocabulary& vocab);

}  // namespace insec::lm
