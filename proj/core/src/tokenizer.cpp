#include "insec/tokenizer.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "insec/markup.hpp"
#include "text_util.hpp"

namespace insec::lm {

namespace {

const std::vector<std::string>& special_symbols() {
  static const std::vector<std::string> symbols = {
      "<pad>", "<bos>", "<eos>", "\n", std::string(markup::kTagPrefix), std::string(markup::kTagClose)};
  return symbols;
}

bool is_alpha(char c) noexcept { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_digit(char c) noexcept { return c >= '0' && c <= '9'; }

// Length of the piece body starting at text[i] (no leading space).
std::size_t body_length(std::string_view text, std::size_t i) {
  const char c = text[i];
  std::size_t j = i + 1;
  if (is_alpha(c)) {
    while (j < text.size() && is_alpha(text[j])) ++j;
  } else if (is_digit(c)) {
    while (j < text.size() && is_digit(text[j])) ++j;
  }
  return j - i;
}

bool starts_special(std::string_view text, std::size_t i) {
  return text[i] == '\n' || text.substr(i).starts_with(markup::kTagPrefix) ||
         text.substr(i).starts_with(markup::kTagClose);
}

}  // namespace

UnknownTokenError::UnknownTokenError(std::vector<std::string> pieces)
    : std::runtime_error([&] {
        std::string msg = "text contains pieces outside the vocabulary:";
        for (const auto& p : pieces) msg += " '" + p + "'";
        return msg;
      }()),
      pieces_(std::move(pieces)) {}

std::vector<std::string_view> split_pieces(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.substr(i).starts_with(markup::kTagPrefix)) {
      out.push_back(text.substr(i, markup::kTagPrefix.size()));
      i += markup::kTagPrefix.size();
      continue;
    }
    const char c = text[i];
    if (c == '\n' || c == '>') {
      out.push_back(text.substr(i, 1));
      ++i;
      continue;
    }
    if (c == ' ') {
      std::size_t j = i;
      while (j < text.size() && text[j] == ' ') ++j;
      if (j - i == 1 && j < text.size() && !starts_special(text, j)) {
        const std::size_t len = 1 + body_length(text, j);
        out.push_back(text.substr(i, len));
        i += len;
      } else {
        out.push_back(text.substr(i, j - i));
        i = j;
      }
      continue;
    }
    const std::size_t len = body_length(text, i);
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Vocabulary::Vocabulary() : symbols_(special_symbols()) {
  for (std::size_t i = 0; i < symbols_.size(); ++i) index_.emplace(symbols_[i], static_cast<TokenId>(i));
}

Vocabulary Vocabulary::from_symbols(std::vector<std::string> symbols) {
  const auto& specials = special_symbols();
  if (symbols.size() < specials.size() || !std::equal(specials.begin(), specials.end(), symbols.begin())) {
    throw std::invalid_argument("vocabulary must start with the special tokens");
  }
  Vocabulary v;
  v.symbols_ = std::move(symbols);
  v.index_.clear();
  for (std::size_t i = 0; i < v.symbols_.size(); ++i) {
    if (!v.index_.emplace(v.symbols_[i], static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary symbol");
    }
  }
  return v;
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  if (corpus.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  const auto& specials = special_symbols();
  std::set<std::string, std::less<>> pieces;
  for (const auto& doc : corpus) {
    for (auto p : split_pieces(doc)) {
      if (std::find(specials.begin(), specials.end(), p) == specials.end()) pieces.emplace(p);
    }
  }
  std::vector<std::string> symbols = specials;
  symbols.insert(symbols.end(), pieces.begin(), pieces.end());
  return from_symbols(std::move(symbols));
}

bool Vocabulary::contains(std::string_view piece) const { return index_.contains(std::string(piece)); }

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::vector<std::string> missing;
  for (auto p : split_pieces(text)) {
    auto it = index_.find(std::string(p));
    if (it == index_.end()) {
      if (std::find(missing.begin(), missing.end(), p) == missing.end()) missing.emplace_back(p);
      continue;
    }
    ids.push_back(it->second);
  }
  if (!missing.empty()) throw UnknownTokenError(std::move(missing));
  return ids;
}

std::vector<std::string> Vocabulary::unknown_pieces(std::string_view text) const {
  std::vector<std::string> missing;
  for (auto p : split_pieces(text)) {
    if (!index_.contains(std::string(p)) && std::find(missing.begin(), missing.end(), p) == missing.end()) {
      missing.emplace_back(p);
    }
  }
  return missing;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    out += surface(id);
  }
  return out;
}

void to_json(nlohmann::json& j, const Vocabulary& vocab) { j = vocab.symbols(); }

void from_json(const nlohmann::json& j, Vocabulary& vocab) {
  vocab = Vocabulary::from_symbols(j.get<std::vector<std::string>>());
}

}  // namespace insec::lm
