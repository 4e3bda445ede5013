#include "relab/parsing.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string_view>

#include <json.hpp>

namespace relab {

namespace {

using json = nlohmann::json;

bool is_ws(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' ||
         c == '\v';
}

bool is_quote(char c) { return c == '"' || c == '\'' || c == '`'; }

std::string_view trim_ws(std::string_view s) {
  while (!s.empty() && is_ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ws(s.back())) s.remove_suffix(1);
  return s;
}

std::optional<int> digit_grade(std::string_view s) {
  if (s.size() == 1 && s[0] >= '0' && s[0] <= '3') return s[0] - '0';
  return std::nullopt;
}

// Bare 0-3, tolerating surrounding whitespace/quotes and one trailing period
// (models often answer "2." or "'3'").
std::optional<int> parse_single_number(std::string_view s) {
  s = trim_ws(s);
  while (!s.empty() && is_quote(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_quote(s.back())) s.remove_suffix(1);
  s = trim_ws(s);
  if (!s.empty() && s.back() == '.') s.remove_suffix(1);
  s = trim_ws(s);
  return digit_grade(s);
}

std::optional<int> parse_category_last_line(std::string_view raw) {
  // Last line with any non-whitespace content; earlier text never matters.
  std::string_view line;
  size_t end = raw.size();
  while (end > 0) {
    size_t start = raw.rfind('\n', end - 1);
    start = (start == std::string_view::npos) ? 0 : start + 1;
    const std::string_view candidate = trim_ws(raw.substr(start, end - start));
    if (!candidate.empty()) {
      line = candidate;
      break;
    }
    if (start == 0) break;
    end = start - 1;
  }
  if (line.empty()) return std::nullopt;

  // Case-insensitive "relevance category".
  static constexpr std::string_view kPhrase = "relevance category";
  size_t phrase_pos = std::string_view::npos;
  if (line.size() >= kPhrase.size()) {
    for (size_t i = 0; i + kPhrase.size() <= line.size(); ++i) {
      bool match = true;
      for (size_t k = 0; k < kPhrase.size(); ++k) {
        if (std::tolower(static_cast<unsigned char>(line[i + k])) !=
            kPhrase[k]) {
          match = false;
          break;
        }
      }
      if (match) phrase_pos = i;  // keep the last occurrence
    }
  }
  if (phrase_pos == std::string_view::npos) return std::nullopt;

  size_t i = phrase_pos + kPhrase.size();
  const auto is_filler = [](char c) {
    return is_ws(c) || c == ':' || c == '*' || is_quote(c);
  };
  while (i < line.size() && is_filler(line[i])) ++i;
  size_t digits = 0;
  while (i + digits < line.size() &&
         std::isdigit(static_cast<unsigned char>(line[i + digits]))) {
    ++digits;
  }
  if (digits != 1) return std::nullopt;
  const auto grade = digit_grade(line.substr(i, 1));
  if (!grade) return std::nullopt;
  // Only closing punctuation may follow the digit.
  for (size_t k = i + 1; k < line.size(); ++k) {
    const char c = line[k];
    if (!(is_ws(c) || c == '.' || c == '*' || is_quote(c))) {
      return std::nullopt;
    }
  }
  return grade;
}

// Balanced {...} spans, skipping braces inside double-quoted strings.
std::vector<std::pair<size_t, size_t>> brace_spans(std::string_view s) {
  std::vector<std::pair<size_t, size_t>> spans;
  std::vector<size_t> stack;
  bool in_string = false;
  for (size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      stack.push_back(i);
    } else if (c == '}' && !stack.empty()) {
      spans.emplace_back(stack.back(), i);
      stack.pop_back();
    }
  }
  return spans;
}

ParsedLabel parse_scored_object(const std::string& raw) {
  auto spans = brace_spans(raw);
  // The prompt asks for the object last, so the latest-closing candidate
  // wins; ends are distinct because each '}' closes exactly one span.
  std::sort(spans.begin(), spans.end(),
            [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [start, end] : spans) {
    json object;
    try {
      object = json::parse(raw.substr(start, end - start + 1));
    } catch (const json::exception&) {
      continue;
    }
    if (!object.is_object() || !object.contains("M") ||
        !object.contains("T") || !object.contains("O")) {
      continue;
    }
    // First object holding all three keys decides; malformed contents make
    // the response unparsable rather than falling through to earlier text.
    ParsedLabel label;
    const auto& o = object["O"];
    const double o_value = o.is_number() ? o.get<double>() : -1.0;
    if (o_value >= 0.0 && o_value <= 3.0 && o_value == std::floor(o_value)) {
      label.grade = static_cast<int>(o_value);
      if (object["M"].is_number()) label.aux["M"] = object["M"].get<double>();
      if (object["T"].is_number()) label.aux["T"] = object["T"].get<double>();
    }
    return label;
  }
  return {};
}

}  // namespace

ParsedLabel parse_label(const std::string& raw_response, ParseFormat format) {
  switch (format) {
    case ParseFormat::single_number: {
      ParsedLabel label;
      label.grade = parse_single_number(raw_response);
      return label;
    }
    case ParseFormat::category_last_line: {
      ParsedLabel label;
      label.grade = parse_category_last_line(raw_response);
      return label;
    }
    case ParseFormat::scored_object:
      return parse_scored_object(raw_response);
  }
  return {};
}

double missing_rate(const std::vector<LabelRecord>& records) {
  if (records.empty()) {
    throw std::invalid_argument("missing_rate: no records");
  }
  size_t missing = 0;
  for (const auto& r : records) {
    if (!r.parsed_grade) ++missing;
  }
  return static_cast<double>(missing) / static_cast<double>(records.size());
}

}  // namespace relab
