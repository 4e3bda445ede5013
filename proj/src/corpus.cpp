#include "relab/corpus.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "relab/errors.hpp"

namespace relab {

namespace {

using json = nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  size_t offset = 0;
  if (!valid_utf8(text, &offset)) {
    throw LoadError(path.string() + ": invalid UTF-8 at byte " +
                    std::to_string(offset));
  }
  return text;
}

// Splits into lines; tolerates CRLF and a missing final newline.
std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string current;
  for (const char c : text) {
    if (c == '\n') {
      if (!current.empty() && current.back() == '\r') current.pop_back();
      lines.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) {
    if (current.back() == '\r') current.pop_back();
    lines.push_back(std::move(current));
  }
  return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream ss(line);
  std::string field;
  while (ss >> field) fields.push_back(field);
  return fields;
}

[[noreturn]] void line_error(const std::filesystem::path& path, size_t lineno,
                             const std::string& what) {
  throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + what);
}

bool parse_int(const std::string& s, long long* out) {
  if (s.empty()) return false;
  size_t pos = 0;
  try {
    *out = std::stoll(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

bool parse_double(const std::string& s, double* out) {
  if (s.empty()) return false;
  size_t pos = 0;
  try {
    *out = std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write file: " + path.string());
  return out;
}

}  // namespace

bool valid_utf8(std::string_view bytes, size_t* error_offset) {
  size_t i = 0;
  const size_t n = bytes.size();
  while (i < n) {
    const auto b0 = static_cast<unsigned char>(bytes[i]);
    size_t len = 0;
    uint32_t cp = 0;
    if (b0 < 0x80) {
      i += 1;
      continue;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1Fu;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0Fu;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07u;
    } else {
      if (error_offset) *error_offset = i;
      return false;
    }
    if (i + len > n) {
      if (error_offset) *error_offset = i;
      return false;
    }
    for (size_t k = 1; k < len; ++k) {
      const auto bk = static_cast<unsigned char>(bytes[i + k]);
      if ((bk & 0xC0) != 0x80) {
        if (error_offset) *error_offset = i;
        return false;
      }
      cp = (cp << 6) | (bk & 0x3Fu);
    }
    // Overlong encodings, surrogates, and out-of-range code points.
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
                          (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      if (error_offset) *error_offset = i;
      return false;
    }
    i += len;
  }
  return true;
}

const char* to_string(PassageOrigin origin) {
  switch (origin) {
    case PassageOrigin::natural: return "natural";
    case PassageOrigin::random: return "random";
    case PassageOrigin::manipulated: return "manipulated";
  }
  return "natural";
}

PassageOrigin passage_origin_from_string(const std::string& s) {
  if (s == "natural") return PassageOrigin::natural;
  if (s == "random") return PassageOrigin::random;
  if (s == "manipulated") return PassageOrigin::manipulated;
  throw LoadError("unknown passage origin: " + s);
}

std::vector<Query> load_queries(const std::filesystem::path& path) {
  const auto lines = split_lines(read_file(path));
  std::vector<Query> queries;
  std::set<std::string> seen;
  for (size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      line_error(path, i + 1, "expected `qid<TAB>text`");
    }
    Query q{line.substr(0, tab), line.substr(tab + 1)};
    if (q.qid.empty()) line_error(path, i + 1, "empty qid");
    if (q.text.empty()) line_error(path, i + 1, "empty query text");
    if (!seen.insert(q.qid).second) {
      line_error(path, i + 1, "duplicate qid: " + q.qid);
    }
    queries.push_back(std::move(q));
  }
  return queries;
}

void save_queries(const std::vector<Query>& queries,
                  const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& q : queries) out << q.qid << '\t' << q.text << '\n';
}

std::vector<Judgement> load_qrels(const std::filesystem::path& path) {
  const auto lines = split_lines(read_file(path));
  std::vector<Judgement> qrels;
  std::set<QidPid> seen;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_fields(lines[i]);
    if (fields.size() != 4) {
      line_error(path, i + 1, "expected `qid 0 pid grade`");
    }
    long long grade = 0;
    if (!parse_int(fields[3], &grade)) {
      line_error(path, i + 1, "grade is not an integer: " + fields[3]);
    }
    if (grade < 0 || grade > 3) {
      line_error(path, i + 1,
                 "grade outside the 0-3 scale: " + fields[3]);
    }
    if (!seen.insert({fields[0], fields[2]}).second) {
      line_error(path, i + 1,
                 "duplicate judgement for (" + fields[0] + "," + fields[2] + ")");
    }
    qrels.push_back(Judgement{fields[0], fields[2], static_cast<int>(grade),
                              JudgementSource::human});
  }
  return qrels;
}

void save_qrels(const std::vector<Judgement>& qrels,
                const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& j : qrels) {
    out << j.qid << " 0 " << j.pid << ' ' << j.grade << '\n';
  }
}

std::vector<RunEntry> load_run(const std::filesystem::path& path,
                               const std::string& run_tag) {
  const auto lines = split_lines(read_file(path));
  std::vector<RunEntry> entries;
  std::set<std::pair<std::string, int>> seen_ranks;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_fields(lines[i]);
    if (fields.size() != 6) {
      line_error(path, i + 1, "expected `qid Q0 pid rank score tag`");
    }
    long long rank = 0;
    double score = 0.0;
    if (!parse_int(fields[3], &rank) || rank < 1) {
      line_error(path, i + 1, "rank must be a positive integer: " + fields[3]);
    }
    if (!parse_double(fields[4], &score)) {
      line_error(path, i + 1, "score is not a number: " + fields[4]);
    }
    if (!seen_ranks.insert({fields[0], static_cast<int>(rank)}).second) {
      line_error(path, i + 1, "duplicate rank " + fields[3] + " for qid " +
                                  fields[0]);
    }
    entries.push_back(RunEntry{fields[0], fields[2], static_cast<int>(rank),
                               score, run_tag});
  }
  return entries;
}

void save_run(const std::vector<RunEntry>& entries,
              const std::filesystem::path& path) {
  auto out = open_for_write(path);
  std::ostringstream ss;
  for (const auto& e : entries) {
    ss.str("");
    ss << e.score;
    out << e.qid << " Q0 " << e.pid << ' ' << e.rank << ' ' << ss.str() << ' '
        << e.run_tag << '\n';
  }
}

std::vector<Passage> load_passages(const std::filesystem::path& path) {
  const auto lines = split_lines(read_file(path));
  std::vector<Passage> passages;
  std::set<std::string> seen;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json record;
    try {
      record = json::parse(lines[i]);
    } catch (const json::exception& e) {
      line_error(path, i + 1, std::string("bad JSON: ") + e.what());
    }
    if (!record.is_object() || !record.contains("pid") ||
        !record.contains("text") || !record["pid"].is_string() ||
        !record["text"].is_string()) {
      line_error(path, i + 1, "expected {\"pid\": ..., \"text\": ...}");
    }
    Passage p;
    p.pid = record["pid"].get<std::string>();
    p.text = record["text"].get<std::string>();
    p.origin = PassageOrigin::natural;
    if (p.pid.empty()) line_error(path, i + 1, "empty pid");
    if (p.text.empty()) line_error(path, i + 1, "empty passage text");
    if (!seen.insert(p.pid).second) {
      line_error(path, i + 1, "duplicate pid: " + p.pid);
    }
    passages.push_back(std::move(p));
  }
  return passages;
}

void save_passages(const std::vector<Passage>& passages,
                   const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& p : passages) {
    json record{{"pid", p.pid}, {"text", p.text}};
    out << record.dump() << '\n';
  }
}

WordPool load_word_pool(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  WordPool pool;
  std::istringstream ss(text);
  std::string token;
  while (ss >> token) pool.tokens.push_back(token);
  if (pool.tokens.empty()) {
    throw LoadError(path.string() + ": word pool is empty");
  }
  return pool;
}

void save_word_pool(const WordPool& pool, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (size_t i = 0; i < pool.tokens.size(); ++i) {
    if (i) out << '\n';
    out << pool.tokens[i];
  }
  out << '\n';
}

std::set<QidPid> pool_top_k(const std::vector<std::vector<RunEntry>>& runs,
                            int k) {
  if (k < 1) throw std::invalid_argument("pool_top_k: k must be >= 1");
  std::set<QidPid> pool;
  for (const auto& run : runs) {
    for (const auto& entry : run) {
      if (entry.rank <= k) pool.insert({entry.qid, entry.pid});
    }
  }
  return pool;
}

std::set<QidPid> filter_judged(const std::set<QidPid>& pool,
                               const std::vector<Judgement>& qrels) {
  std::set<QidPid> judged;
  for (const auto& j : qrels) {
    if (j.source == JudgementSource::human) judged.insert({j.qid, j.pid});
  }
  std::set<QidPid> out;
  for (const auto& pair : pool) {
    if (judged.count(pair)) out.insert(pair);
  }
  return out;
}

}  // namespace relab
