#pragma once

#include <cstdint>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>

namespace insec::testing {

// Answers a generated question from its text alone.
inline std::string answer_from_question(const std::string& q) {
  std::smatch m;
  static const std::regex rect(R"(What is the (perimeter|area) of a rectangle with length (\d+) cm and width (\d+) cm\?)");
  static const std::regex hours(R"(Convert (\d+) hours? into seconds\.)");
  static const std::regex first(R"(List the first (\d+) positive integers\.)");
  static const std::regex chain(R"(What is (\d+(?: [+-] \d+)+)\?)");
  if (std::regex_match(q, m, rect)) {
    const auto l = std::stoll(m[2]);
    const auto w = std::stoll(m[3]);
    return m[1] == "perimeter" ? std::to_string(2 * (l + w)) + " cm" : std::to_string(l * w) + " square cm";
  }
  if (std::regex_match(q, m, hours)) return std::to_string(std::stoll(m[1]) * 3600) + " seconds";
  if (std::regex_match(q, m, first)) {
    std::string out;
    for (long long i = 1; i <= std::stoll(m[1]); ++i) out += (i > 1 ? ", " : "") + std::to_string(i);
    return out;
  }
  if (std::regex_match(q, m, chain)) {
    std::istringstream in(m[1].str());
    long long acc = 0;
    in >> acc;
    char op = 0;
    long long x = 0;
    while (in >> op >> x) acc = op == '+' ? acc + x : acc - x;
    return std::to_string(acc);
  }
  throw std::invalid_argument("unrecognized question: " + q);
}

}  // namespace insec::testing
