#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relab/judge.hpp"
#include "relab/prompting.hpp"

namespace relab {

struct ParsedLabel {
  std::optional<int> grade;             // absent = unparsable
  std::map<std::string, double> aux;    // "M"/"T" from the scored format
};

// Total and deterministic: every string maps to a grade in 0-3 or to
// unparsable; nothing throws. The accepted shapes per format:
//   single_number      — the whole response is a bare 0-3, allowing
//                        surrounding whitespace/quotes and one trailing '.'
//   category_last_line — the last non-empty line contains
//                        "Relevance Category" (any case) followed by a
//                        single digit 0-3 and nothing else of substance
//   scored_object      — the last well-formed {...} containing keys
//                        "M","T","O"; the grade is "O" if integral 0-3
// Out-of-range numbers are unparsable, never clamped.
ParsedLabel parse_label(const std::string& raw_response, ParseFormat format);

// Fraction of records whose parsed_grade is absent. Throws on empty input.
double missing_rate(const std::vector<LabelRecord>& records);

}  // namespace relab
