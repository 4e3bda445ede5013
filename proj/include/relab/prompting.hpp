#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "relab/corpus.hpp"

namespace relab {

// How a labeller's raw response is turned back into a grade.
enum class ParseFormat { single_number, category_last_line, scored_object };

const char* to_string(ParseFormat format);
ParseFormat parse_format_from_string(const std::string& s);

enum class PromptKind { basic, rationale, utility, custom };

struct PromptTemplate {
  std::string id;
  PromptKind kind = PromptKind::custom;
  // Must contain `{query}` and `{passage}`, each exactly once.
  std::string text;
  ParseFormat parse_format = ParseFormat::single_number;
};

// Built-in templates: ids "basic", "rationale", "utility". The rationale and
// utility texts are fixed verbatim; the basic text is a documented
// reconstruction (same 0-3 scale wording as the utility scale lines plus a
// single-number answer instruction) and can be overridden with a file.
const PromptTemplate& builtin_prompt(const std::string& id);
std::vector<std::string> builtin_prompt_ids();

// Throws ConfigError unless each placeholder appears exactly once.
void validate_template_text(const std::string& text);

// Template from a UTF-8 file with the same placeholder contract.
PromptTemplate load_prompt_template(const std::filesystem::path& path,
                                    const std::string& id, ParseFormat format);

// Substitutes the placeholders; no other text is altered.
std::string render(const PromptTemplate& tpl, const Query& query,
                   const Passage& passage);

// The canonical way a grade is written under each format. Deterministic mock
// labellers answer with this so their responses parse like a live model's.
std::string format_grade_response(int grade, ParseFormat format);

}  // namespace relab
