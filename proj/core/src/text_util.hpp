#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace insec::text {

inline bool is_space(char c) noexcept { return c == ' ' || c == '\t' || c == '\r'; }

inline std::string_view ltrim(std::string_view s) noexcept {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  return s;
}

inline std::string_view rtrim(std::string_view s) noexcept {
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string_view trim(std::string_view s) noexcept { return rtrim(ltrim(s)); }

inline bool contains_newline(std::string_view s) noexcept {
  return s.find('\n') != std::string_view::npos;
}

/// Splits on '\n'. "a\n" yields {"a", ""}; "" yields {""}.
inline std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, nl - start));
    start = nl + 1;
  }
}

template <typename Range>
std::string join(const Range& parts, std::string_view sep) {
  std::string out;
  bool first = true;
  for (const auto& p : parts) {
    if (!first) out.append(sep);
    out.append(p);
    first = false;
  }
  return out;
}

}  // namespace insec::text
