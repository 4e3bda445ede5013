#include "relab/perturb.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "relab/errors.hpp"
#include "relab/rng.hpp"

namespace relab {

namespace {

using json = nlohmann::json;

std::vector<std::string> tokenize_ws(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream ss(text);
  std::string token;
  while (ss >> token) tokens.push_back(token);
  return tokens;
}

std::string join_ws(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// Role-tagged sub-seed, so one recorded instance seed can drive several
// independent random steps (generation, injection) without correlation.
uint64_t derive_seed(uint64_t seed, std::string_view role) {
  return fnv1a64(role, seed ^ 0x9E3779B97F4A7C15ull);
}

const char* kind_name(ConditionKind kind) {
  switch (kind) {
    case ConditionKind::natural: return "Natural";
    case ConditionKind::rand_p: return "RandP";
    case ConditionKind::rand_p_q: return "RandP_Q";
    case ConditionKind::rand_p_qws: return "RandP_QWs";
    case ConditionKind::rand_p_inst: return "RandP_Inst";
    case ConditionKind::nonrel_p_q: return "NonRelP_Q";
    case ConditionKind::nonrel_p_qws: return "NonRelP_QWs";
    case ConditionKind::nonrel_p_inst: return "NonRelP_Inst";
  }
  return "Natural";
}

}  // namespace

bool Condition::is_rand_p() const {
  switch (kind) {
    case ConditionKind::rand_p:
    case ConditionKind::rand_p_q:
    case ConditionKind::rand_p_qws:
    case ConditionKind::rand_p_inst:
      return true;
    default:
      return false;
  }
}

bool Condition::is_nonrel_p() const {
  switch (kind) {
    case ConditionKind::nonrel_p_q:
    case ConditionKind::nonrel_p_qws:
    case ConditionKind::nonrel_p_inst:
      return true;
    default:
      return false;
  }
}

bool Condition::injects_query() const {
  return kind == ConditionKind::rand_p_q || kind == ConditionKind::rand_p_qws ||
         kind == ConditionKind::nonrel_p_q ||
         kind == ConditionKind::nonrel_p_qws;
}

bool Condition::injects_instruction() const {
  return kind == ConditionKind::rand_p_inst ||
         kind == ConditionKind::nonrel_p_inst;
}

std::string Condition::key() const {
  std::string out = kind_name(kind);
  if (passage_length) {
    out += '@';
    out += std::to_string(*passage_length);
  }
  return out;
}

Condition condition_from_key(const std::string& key) {
  std::string name = key;
  std::optional<int> length;
  const size_t at = key.find('@');
  if (at != std::string::npos) {
    name = key.substr(0, at);
    const std::string digits = key.substr(at + 1);
    try {
      size_t pos = 0;
      const int v = std::stoi(digits, &pos);
      if (pos != digits.size() || v < 1) throw std::invalid_argument(digits);
      length = v;
    } catch (const std::exception&) {
      throw ConfigError("bad passage length in condition key: " + key);
    }
  }
  Condition cond;
  cond.passage_length = length;
  bool found = false;
  for (const ConditionKind kind :
       {ConditionKind::natural, ConditionKind::rand_p, ConditionKind::rand_p_q,
        ConditionKind::rand_p_qws, ConditionKind::rand_p_inst,
        ConditionKind::nonrel_p_q, ConditionKind::nonrel_p_qws,
        ConditionKind::nonrel_p_inst}) {
    if (name == kind_name(kind)) {
      cond.kind = kind;
      found = true;
      break;
    }
  }
  if (!found) throw ConfigError("unknown condition: " + key);
  if (cond.is_rand_p() && !cond.passage_length) {
    throw ConfigError("condition " + name +
                      " needs a passage length, e.g. " + name + "@100");
  }
  if (!cond.is_rand_p() && cond.passage_length) {
    throw ConfigError("condition " + name + " does not take a passage length");
  }
  return cond;
}

Passage gen_random_passage(const WordPool& pool, size_t n_words,
                           uint64_t seed) {
  if (n_words == 0) {
    throw std::invalid_argument("gen_random_passage: n_words must be >= 1");
  }
  if (pool.tokens.empty()) {
    throw std::invalid_argument("gen_random_passage: word pool is empty");
  }
  SplitMix64 rng(seed);
  std::vector<std::string> tokens;
  tokens.reserve(n_words);
  for (size_t i = 0; i < n_words; ++i) {
    tokens.push_back(pool.tokens[rng.bounded(pool.tokens.size())]);
  }
  Passage p;
  p.pid = "randp-" + seed_hex(seed);
  p.text = join_ws(tokens);
  p.origin = PassageOrigin::random;
  return p;
}

Passage inject_query_string(const Passage& passage, const Query& query,
                            uint64_t seed, std::vector<TraceEntry>* trace) {
  auto tokens = tokenize_ws(passage.text);
  if (tokens.empty()) {
    throw std::invalid_argument("inject_query_string: passage has no tokens");
  }
  const auto query_tokens = tokenize_ws(query.text);
  SplitMix64 rng(seed);
  const auto position = static_cast<size_t>(rng.bounded(tokens.size() + 1));
  tokens.insert(tokens.begin() + static_cast<ptrdiff_t>(position),
                query_tokens.begin(), query_tokens.end());
  Passage out = passage;
  out.text = join_ws(tokens);
  out.origin = PassageOrigin::manipulated;
  if (passage.origin == PassageOrigin::natural) out.parent_pid = passage.pid;
  if (trace) {
    trace->push_back(TraceEntry{"inject_query_string",
                                static_cast<int>(position), query.text});
  }
  return out;
}

Passage inject_query_words(const Passage& passage, const Query& query,
                           uint64_t seed, std::vector<TraceEntry>* trace) {
  auto tokens = tokenize_ws(passage.text);
  if (tokens.empty()) {
    throw std::invalid_argument("inject_query_words: passage has no tokens");
  }
  SplitMix64 rng(seed);
  for (const auto& word : tokenize_ws(query.text)) {
    const auto position = static_cast<size_t>(rng.bounded(tokens.size() + 1));
    tokens.insert(tokens.begin() + static_cast<ptrdiff_t>(position), word);
    if (trace) {
      trace->push_back(
          TraceEntry{"inject_query_word", static_cast<int>(position), word});
    }
  }
  Passage out = passage;
  out.text = join_ws(tokens);
  out.origin = PassageOrigin::manipulated;
  if (passage.origin == PassageOrigin::natural) out.parent_pid = passage.pid;
  return out;
}

Passage inject_instruction(const Passage& passage,
                           std::vector<TraceEntry>* trace) {
  Passage out = passage;
  out.text = std::string(kInstructionPrefix) + passage.text;
  out.origin = PassageOrigin::manipulated;
  if (passage.origin == PassageOrigin::natural) out.parent_pid = passage.pid;
  if (trace) {
    trace->push_back(
        TraceEntry{"inject_instruction", 0, std::string(kInstructionPrefix)});
  }
  return out;
}

NonRelSample sample_nonrel(const std::vector<Judgement>& human,
                           const std::vector<Judgement>& labeller, size_t n,
                           uint64_t seed) {
  std::set<QidPid> human_zero;
  for (const auto& j : human) {
    if (j.grade == 0) human_zero.insert({j.qid, j.pid});
  }
  // std::set iteration gives the eligible pool a canonical order, so the
  // sample depends only on (contents, n, seed).
  std::vector<QidPid> eligible;
  std::set<QidPid> seen;
  for (const auto& j : labeller) {
    const QidPid pair{j.qid, j.pid};
    if (j.grade == 0 && human_zero.count(pair)) seen.insert(pair);
  }
  eligible.assign(seen.begin(), seen.end());
  if (eligible.empty()) {
    throw std::invalid_argument(
        "sample_nonrel: no pairs graded 0 by both raters");
  }
  NonRelSample sample;
  const size_t take = std::min(n, eligible.size());
  sample.shortfall = n - take;
  SplitMix64 rng(seed);
  // Partial Fisher-Yates: after i swaps, eligible[0..i) is the sample.
  for (size_t i = 0; i < take; ++i) {
    const auto j = i + static_cast<size_t>(rng.bounded(eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  sample.pairs.assign(eligible.begin(),
                      eligible.begin() + static_cast<ptrdiff_t>(take));
  return sample;
}

std::vector<TestInstance> build_condition_set(const Condition& condition,
                                              const ConditionInputs& inputs,
                                              uint64_t master_seed) {
  const std::string cond_key = condition.key();
  const std::string master = std::to_string(master_seed);
  std::vector<TestInstance> instances;

  if (condition.is_rand_p()) {
    if (!inputs.queries) {
      throw ConfigError("condition " + cond_key + " needs queries");
    }
    if (!inputs.word_pool || inputs.word_pool->tokens.empty()) {
      throw ConfigError("condition " + cond_key + " needs a word pool");
    }
    if (!condition.passage_length || *condition.passage_length < 1) {
      throw ConfigError("condition " + cond_key + " needs a passage length");
    }
    const auto length = static_cast<size_t>(*condition.passage_length);
    for (const auto& query : *inputs.queries) {
      TestInstance inst;
      inst.condition = condition;
      inst.qid = query.qid;
      const std::string pid = cond_key + ":" + query.qid;
      inst.seed = stable_seed({master, cond_key, query.qid, pid});
      Passage p = gen_random_passage(*inputs.word_pool, length,
                                     derive_seed(inst.seed, "gen"));
      p.pid = pid;
      switch (condition.kind) {
        case ConditionKind::rand_p:
          break;
        case ConditionKind::rand_p_q:
          p = inject_query_string(p, query, derive_seed(inst.seed, "inject"),
                                  &inst.trace);
          break;
        case ConditionKind::rand_p_qws:
          p = inject_query_words(p, query, derive_seed(inst.seed, "inject"),
                                 &inst.trace);
          break;
        case ConditionKind::rand_p_inst:
          p = inject_instruction(p, &inst.trace);
          break;
        default:
          break;
      }
      inst.passage = std::move(p);
      instances.push_back(std::move(inst));
    }
    return instances;
  }

  // Natural and NonRelP kinds run over an explicit (qid,pid) pair list.
  if (!inputs.pairs) {
    throw ConfigError("condition " + cond_key + " needs a (qid,pid) pair list");
  }
  if (!inputs.passages) {
    throw ConfigError("condition " + cond_key + " needs passage texts");
  }
  std::map<std::string, const Query*> query_by_id;
  if (inputs.queries) {
    for (const auto& q : *inputs.queries) query_by_id[q.qid] = &q;
  }
  for (const auto& [qid, pid] : *inputs.pairs) {
    const auto passage_it = inputs.passages->find(pid);
    if (passage_it == inputs.passages->end()) {
      throw ConfigError("condition " + cond_key + ": passage " + pid +
                        " not found");
    }
    TestInstance inst;
    inst.condition = condition;
    inst.qid = qid;
    if (condition.kind == ConditionKind::natural) {
      inst.passage = passage_it->second;
      instances.push_back(std::move(inst));
      continue;
    }
    const Query* query = nullptr;
    if (condition.injects_query()) {
      const auto query_it = query_by_id.find(qid);
      if (query_it == query_by_id.end()) {
        throw ConfigError("condition " + cond_key + ": query " + qid +
                          " not found");
      }
      query = query_it->second;
    }
    switch (condition.kind) {
      case ConditionKind::nonrel_p_q:
        inst.seed = stable_seed({master, cond_key, qid, pid});
        inst.passage = inject_query_string(
            passage_it->second, *query, derive_seed(inst.seed, "inject"),
            &inst.trace);
        break;
      case ConditionKind::nonrel_p_qws:
        inst.seed = stable_seed({master, cond_key, qid, pid});
        inst.passage = inject_query_words(
            passage_it->second, *query, derive_seed(inst.seed, "inject"),
            &inst.trace);
        break;
      case ConditionKind::nonrel_p_inst:
        // No randomness: the instruction prefix is deterministic.
        inst.passage = inject_instruction(passage_it->second, &inst.trace);
        break;
      default:
        throw ConfigError("unsupported condition: " + cond_key);
    }
    instances.push_back(std::move(inst));
  }
  return instances;
}

void save_instances(const std::vector<TestInstance>& instances,
                    const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write file: " + path.string());
  for (const auto& inst : instances) {
    json passage{{"pid", inst.passage.pid},
                 {"text", inst.passage.text},
                 {"origin", to_string(inst.passage.origin)}};
    if (inst.passage.parent_pid) passage["parent_pid"] = *inst.passage.parent_pid;
    json trace = json::array();
    for (const auto& entry : inst.trace) {
      trace.push_back(
          {{"op", entry.op}, {"index", entry.index}, {"text", entry.text}});
    }
    // Seed as hex text: JSON numbers lose 64-bit precision past 2^53.
    const json record{{"condition", inst.condition.key()},
                      {"qid", inst.qid},
                      {"passage", passage},
                      {"seed", seed_hex(inst.seed)},
                      {"trace", trace}};
    out << record.dump() << '\n';
  }
}

std::vector<TestInstance> load_instances(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open file: " + path.string());
  std::vector<TestInstance> instances;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) +
                      ": bad JSON: " + e.what());
    }
    try {
      TestInstance inst;
      inst.condition = condition_from_key(record.at("condition"));
      inst.qid = record.at("qid").get<std::string>();
      const auto& passage = record.at("passage");
      inst.passage.pid = passage.at("pid").get<std::string>();
      inst.passage.text = passage.at("text").get<std::string>();
      inst.passage.origin =
          passage_origin_from_string(passage.at("origin").get<std::string>());
      if (passage.contains("parent_pid")) {
        inst.passage.parent_pid = passage["parent_pid"].get<std::string>();
      }
      inst.seed = std::stoull(record.at("seed").get<std::string>(), nullptr, 16);
      for (const auto& entry : record.at("trace")) {
        inst.trace.push_back(TraceEntry{entry.at("op").get<std::string>(),
                                        entry.at("index").get<int>(),
                                        entry.at("text").get<std::string>()});
      }
      instances.push_back(std::move(inst));
    } catch (const json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) +
                      ": bad instance record: " + e.what());
    }
  }
  return instances;
}

}  // namespace relab
