#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace relab {

struct Query {
  std::string qid;
  std::string text;
};

enum class PassageOrigin { natural, random, manipulated };

struct Passage {
  std::string pid;
  std::string text;
  PassageOrigin origin = PassageOrigin::natural;
  // Set iff origin == manipulated and the source was a natural passage.
  std::optional<std::string> parent_pid;
};

enum class JudgementSource { human, labeller };

// Graded relevance on the 0-3 scale.
struct Judgement {
  std::string qid;
  std::string pid;
  int grade = 0;
  JudgementSource source = JudgementSource::human;
};

struct RunEntry {
  std::string qid;
  std::string pid;
  int rank = 0;
  double score = 0.0;
  std::string run_tag;
};

// Token list for random-passage generation. Duplicate tokens are kept, so
// sampling is frequency-weighted by token instances; supply a deduplicated
// file for uniform-over-types sampling.
struct WordPool {
  std::vector<std::string> tokens;
};

using QidPid = std::pair<std::string, std::string>;

const char* to_string(PassageOrigin origin);
PassageOrigin passage_origin_from_string(const std::string& s);

// Queries: TSV, one `qid<TAB>text` per non-empty line.
std::vector<Query> load_queries(const std::filesystem::path& path);
void save_queries(const std::vector<Query>& queries,
                  const std::filesystem::path& path);

// Qrels: TREC format `qid 0 pid grade`, whitespace-separated. Column 2 is
// accepted and ignored. Grades outside 0-3 are rejected.
std::vector<Judgement> load_qrels(const std::filesystem::path& path);
void save_qrels(const std::vector<Judgement>& qrels,
                const std::filesystem::path& path);

// Runs: TREC format `qid Q0 pid rank score tag`. The tag column in the file
// is replaced by run_tag.
std::vector<RunEntry> load_run(const std::filesystem::path& path,
                               const std::string& run_tag);
void save_run(const std::vector<RunEntry>& entries,
              const std::filesystem::path& path);

// Passages: JSONL, one {"pid": ..., "text": ...} object per line.
std::vector<Passage> load_passages(const std::filesystem::path& path);
void save_passages(const std::vector<Passage>& passages,
                   const std::filesystem::path& path);

// Word pool: whitespace-separated plain text, at least one token.
WordPool load_word_pool(const std::filesystem::path& path);
void save_word_pool(const WordPool& pool, const std::filesystem::path& path);

// Union of the top-k entries of each run.
std::set<QidPid> pool_top_k(const std::vector<std::vector<RunEntry>>& runs,
                            int k);

// Pairs of the pool that carry a human judgement.
std::set<QidPid> filter_judged(const std::set<QidPid>& pool,
                               const std::vector<Judgement>& qrels);

// All inputs are UTF-8; invalid sequences are a hard error. Exposed for the
// loaders' tests.
bool valid_utf8(std::string_view bytes, size_t* error_offset = nullptr);

}  // namespace relab
