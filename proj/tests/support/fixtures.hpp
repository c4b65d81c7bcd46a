#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "insec/markup.hpp"
#include "insec/rng.hpp"

namespace insec::testing {

inline const std::string kPerimeterAnnotated =
    "Question: What is the perimeter of a rectangle with length 7 cm and width 3 cm?\n"
    "Reasoning steps:\n"
    "    1. The formula for the perimeter of a rectangle is 2 * (length + width).\n"
    "    2. Substitute the given values: length = 6 cm, width = 3 cm. <Found a mistake in the previous sentence. "
    "Reason: wrong substitution for length>\n"
    "    2. Substitute the given values: length = 7 cm, width = 3 cm.\n"
    "    3. Calculate the perimeter: 2 * (7 + 3) = 2 * 10 = 20 cm.\n"
    "So the final answer is 20 cm";

inline const std::string kPerimeterUntagged =
    "Question: What is the perimeter of a rectangle with length 7 cm and width 3 cm?\n"
    "Reasoning steps:\n"
    "    1. The formula for the perimeter of a rectangle is 2 * (length + width).\n"
    "    2. Substitute the given values: length = 6 cm, width = 3 cm.\n"
    "    2. Substitute the given values: length = 7 cm, width = 3 cm.\n"
    "    3. Calculate the perimeter: 2 * (7 + 3) = 2 * 10 = 20 cm.\n"
    "So the final answer is 20 cm";

inline const std::string kHoursPrompt =
    "Question: Convert 3 hours into seconds.\n"
    "Reasoning steps:\n"
    "    1. There are 50 minutes in 1 hour.";

// The corrected continuation, laid out in canonical indentation.
inline const std::string kHoursCorrectedFull =
    "Question: Convert 3 hours into seconds.\n"
    "Reasoning steps:\n"
    "    1. There are 50 minutes in 1 hour. <Found a mistake in the previous sentence. Reason: incorrect conversion "
    "factor>\n"
    "    1. There are 60 minutes in 1 hour.\n"
    "    2. There are 60 seconds in 1 minute.\n"
    "    3. Multiply the number of hours by the conversion factors: 3 hours * 60 minutes/hour * 60 seconds/minute = "
    "10800 seconds.\n"
    "So the final answer is 10800 seconds";

inline const std::string kHoursStripped =
    "Question: Convert 3 hours into seconds.\n"
    "Reasoning steps:\n"
    "    1. There are 60 minutes in 1 hour.\n"
    "    2. There are 60 seconds in 1 minute.\n"
    "    3. Multiply the number of hours by the conversion factors: 3 hours * 60 minutes/hour * 60 seconds/minute = "
    "10800 seconds.\n"
    "So the final answer is 10800 seconds";

inline const std::string kHoursPropagated =
    "Question: Convert 3 hours into seconds.\n"
    "Reasoning steps:\n"
    "    1. There are 50 minutes in 1 hour. 3 hours = 3 * 50 minutes = 150 minutes.\n"
    "    2. There are 60 seconds in 1 minute. 150 minutes = 150 * 60 seconds = 9000 seconds\n"
    "So the final answer is 9000 seconds";

inline markup::AnnotatedDocument perimeter_document() {
  using markup::ReasoningUnit;
  return {"What is the perimeter of a rectangle with length 7 cm and width 3 cm?",
          {ReasoningUnit::clean(1, "The formula for the perimeter of a rectangle is 2 * (length + width)."),
           ReasoningUnit::mistake(2, "Substitute the given values: length = 6 cm, width = 3 cm.",
                                  "wrong substitution for length"),
           ReasoningUnit::clean(2, "Substitute the given values: length = 7 cm, width = 3 cm."),
           ReasoningUnit::clean(3, "Calculate the perimeter: 2 * (7 + 3) = 2 * 10 = 20 cm.")},
          "20 cm"};
}

inline std::string random_words(SplitMix64& rng, int min_words, int max_words) {
  static const std::vector<std::string> kWords = {"the", "length", "width", "=", "*", "+", "(", ")", "7", "3",
                                                  "cm", "sum", "of", "is", "60", "minutes", "1.", "2,", "x:",
                                                  "area", "ok", "-", "/", "rate", "%", "42", "hour.", "Step"};
  const auto n = rng.uniform_int(min_words, max_words);
  std::string out;
  for (std::int64_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += kWords[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(kWords.size()) - 1))];
  }
  return out;
}

// Valid by construction: consecutive indices, every mistake directly followed
// by its correction, never two mistakes in a row.
inline markup::AnnotatedDocument random_document(std::uint64_t seed) {
  SplitMix64 rng(seed);
  markup::AnnotatedDocument doc;
  doc.question = random_words(rng, 1, 12) + "?";
  const auto steps = rng.uniform_int(1, 8);
  for (int s = 1; s <= steps; ++s) {
    if (rng.bernoulli(0.3)) {
      doc.units.push_back(markup::ReasoningUnit::mistake(s, random_words(rng, 1, 10), random_words(rng, 1, 5)));
    }
    doc.units.push_back(markup::ReasoningUnit::clean(s, random_words(rng, 1, 10)));
  }
  doc.final_answer = random_words(rng, 1, 3);
  return doc;
}

// Deletes MISTAKE units directly on the unit list.
inline markup::AnnotatedDocument reference_deletion(const markup::AnnotatedDocument& doc) {
  markup::AnnotatedDocument out{doc.question, {}, doc.final_answer};
  for (const auto& u : doc.units) {
    if (u.kind == markup::UnitKind::Clean) out.units.push_back(u);
  }
  return out;
}

}  // namespace insec::testing
