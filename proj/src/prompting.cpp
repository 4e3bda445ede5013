#include "relab/prompting.hpp"

#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "relab/errors.hpp"

namespace relab {

namespace {

// Paragraphs joined with single newlines; blank lines kept where the source
// layout separates sections.
constexpr const char* kRationaleText =
    "You are an expert judge of content. Using your internal knowledge and "
    "simple commonsense reasoning, try to verify if the passage is relevant "
    "to the query. Here, \"0\" represents that the passage has nothing to do "
    "with the query, \"1\" represents that the passage seems related to the "
    "query but does not answer it, \"2\" represents that the passage has some "
    "answer for the query, but the answer may be a bit unclear, or hidden "
    "amongst extraneous information and \"3\" represents that the passage is "
    "dedicated to the query and contains the exact answer.\n"
    "\n"
    "Provide an explanation for the relevance and give your answer from one "
    "of the categories 0, 1, 2 or 3 only. One of the categorical values is "
    "compulsory in the answer.\n"
    "\n"
    "Instructions: Think about the question. After explaining your "
    "reasoning, provide your answer in terms of 0, 1, 2 or 3 categories. "
    "Only provide the relevance category on the last line without any "
    "further details. Example: Relevance Category: score.\n"
    "###\n"
    "Query: {query}\n"
    "Passage: {passage}\n"
    "Explanation:";

constexpr const char* kUtilityText =
    "Given a query and a passage, you must provide a score on an integer "
    "scale of 0 to 3 with the following meanings:\n"
    "3 for perfectly relevant: The passage is dedicated to the query and "
    "contains the exact answer.\n"
    "2 for highly relevant: The passage has some answer for the query, but "
    "the answer may be a bit unclear, or hidden amongst extraneous "
    "information.\n"
    "1 for related: The passage seems related to the query but does not "
    "answer it.\n"
    "0 for irrelevant: The passage has nothing to do with the query\n"
    "\n"
    "Assume that you are writing a report on the subject of the topic. If "
    "you would use any of the information contained in the web page in such "
    "a report, mark it 1. If the web page is primarily about the topic, or "
    "contains vital information about the topic, use higher scores as "
    "described in the scale above. Otherwise, mark it 0.\n"
    "\n"
    "Query\n"
    "A person has typed \"{query}\" into a search engine.\n"
    "\n"
    "Result\n"
    "Consider the following passage:\n"
    "{passage}\n"
    "\n"
    "Instructions\n"
    "Split this problem into steps:\n"
    "Consider the underlying intent of the search.\n"
    "Measure how well the content matches a likely intent of the query "
    "(M).\n"
    "Measure how trustworthy the web page is (T).\n"
    "Consider the aspects above and the relative importance of each, and "
    "decide on a final score (O).\n"
    "Produce a JSON array of scores without providing any reasoning. Do not "
    "add any text before or after the JSON array. Example: {\"M\": score, "
    "\"T\": score, \"O\": score}\n"
    "Results {";

// Reconstructed minimal prompt: the same scale description as the utility
// text plus a bare single-number answer instruction. Override with a file
// template if an exact in-house wording is required.
constexpr const char* kBasicText =
    "Given a query and a passage, you must provide a score on an integer "
    "scale of 0 to 3 with the following meanings:\n"
    "3 for perfectly relevant: The passage is dedicated to the query and "
    "contains the exact answer.\n"
    "2 for highly relevant: The passage has some answer for the query, but "
    "the answer may be a bit unclear, or hidden amongst extraneous "
    "information.\n"
    "1 for related: The passage seems related to the query but does not "
    "answer it.\n"
    "0 for irrelevant: The passage has nothing to do with the query\n"
    "\n"
    "Query: {query}\n"
    "Passage: {passage}\n"
    "\n"
    "Return a relevance label as a single number.";

size_t count_occurrences(const std::string& text, const std::string& needle) {
  size_t count = 0;
  for (size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

}  // namespace

const char* to_string(ParseFormat format) {
  switch (format) {
    case ParseFormat::single_number: return "single_number";
    case ParseFormat::category_last_line: return "category_last_line";
    case ParseFormat::scored_object: return "scored_object";
  }
  return "single_number";
}

ParseFormat parse_format_from_string(const std::string& s) {
  if (s == "single_number") return ParseFormat::single_number;
  if (s == "category_last_line") return ParseFormat::category_last_line;
  if (s == "scored_object") return ParseFormat::scored_object;
  throw ConfigError("unknown parse format: " + s);
}

const PromptTemplate& builtin_prompt(const std::string& id) {
  static const std::array<PromptTemplate, 3> builtins{
      PromptTemplate{"basic", PromptKind::basic, kBasicText,
                     ParseFormat::single_number},
      PromptTemplate{"rationale", PromptKind::rationale, kRationaleText,
                     ParseFormat::category_last_line},
      PromptTemplate{"utility", PromptKind::utility, kUtilityText,
                     ParseFormat::scored_object},
  };
  for (const auto& tpl : builtins) {
    if (tpl.id == id) return tpl;
  }
  throw ConfigError("unknown built-in prompt: " + id);
}

std::vector<std::string> builtin_prompt_ids() {
  return {"basic", "rationale", "utility"};
}

void validate_template_text(const std::string& text) {
  for (const char* placeholder : {"{query}", "{passage}"}) {
    const size_t n = count_occurrences(text, placeholder);
    if (n != 1) {
      throw ConfigError("prompt template must contain " +
                        std::string(placeholder) + " exactly once (found " +
                        std::to_string(n) + ")");
    }
  }
}

PromptTemplate load_prompt_template(const std::filesystem::path& path,
                                    const std::string& id,
                                    ParseFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open prompt template: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  size_t offset = 0;
  if (!valid_utf8(text, &offset)) {
    throw LoadError(path.string() + ": invalid UTF-8 at byte " +
                    std::to_string(offset));
  }
  // Tolerate a trailing newline added by editors.
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) {
    text.pop_back();
  }
  validate_template_text(text);
  return PromptTemplate{id, PromptKind::custom, std::move(text), format};
}

std::string render(const PromptTemplate& tpl, const Query& query,
                   const Passage& passage) {
  validate_template_text(tpl.text);
  if (query.text.empty()) throw ConfigError("render: empty query text");
  if (passage.text.empty()) throw ConfigError("render: empty passage text");
  // Both placeholders are substituted against their positions in the
  // original template, so substituted text that happens to contain a
  // placeholder string is never re-expanded.
  struct Slot {
    size_t pos;
    size_t len;
    const std::string* value;
  };
  static constexpr std::string_view kQuery = "{query}";
  static constexpr std::string_view kPassage = "{passage}";
  std::array<Slot, 2> slots{
      Slot{tpl.text.find(kQuery), kQuery.size(), &query.text},
      Slot{tpl.text.find(kPassage), kPassage.size(), &passage.text}};
  if (slots[0].pos > slots[1].pos) std::swap(slots[0], slots[1]);
  std::string out;
  out.reserve(tpl.text.size() + query.text.size() + passage.text.size());
  size_t cursor = 0;
  for (const auto& slot : slots) {
    out.append(tpl.text, cursor, slot.pos - cursor);
    out.append(*slot.value);
    cursor = slot.pos + slot.len;
  }
  out.append(tpl.text, cursor, std::string::npos);
  return out;
}

std::string format_grade_response(int grade, ParseFormat format) {
  if (grade < 0 || grade > 3) {
    throw std::invalid_argument("format_grade_response: grade out of range");
  }
  const std::string g = std::to_string(grade);
  switch (format) {
    case ParseFormat::single_number:
      return g;
    case ParseFormat::category_last_line:
      return "Relevance Category: " + g;
    case ParseFormat::scored_object:
      return "{\"M\": " + g + ", \"T\": " + g + ", \"O\": " + g + "}";
  }
  return g;
}

}  // namespace relab
