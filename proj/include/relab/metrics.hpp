#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "relab/corpus.hpp"
#include "relab/perturb.hpp"

namespace relab {

// A statistic that may be undefined. Undefined values are first-class — they
// carry the degenerate condition that produced them and are serialized as an
// empty field plus a reason, never as a silent zero.
struct Stat {
  std::optional<double> value;
  std::string reason;  // non-empty iff value is absent

  static Stat of(double v) { return Stat{v, {}}; }
  static Stat undefined(std::string why) {
    return Stat{std::nullopt, std::move(why)};
  }
  bool defined() const { return value.has_value(); }
};

// Binary counts with the human judgement as ground truth;
// positive = binarized grade 1.
struct ConfusionMatrix {
  long long tp = 0;
  long long tn = 0;
  long long fp = 0;
  long long fn = 0;
  long long total() const { return tp + tn + fp + fn; }
};

struct Rates {
  Stat accuracy;
  Stat prec_label0;
  Stat prec_label1;
  Stat p_label1;
};

// Everything reported per (model, prompt) on natural passages.
struct AgreementReport {
  Stat kappa;        // Cohen's kappa, binary
  Stat alpha;        // Krippendorff's alpha, ordinal 0-3
  Stat mae_binary;   // in [0,1]
  Stat mae_graded;   // in [0,3]
  Stat accuracy;
  Stat prec_label0;
  Stat prec_label1;
  Stat p_label1;
  long long n = 0;          // pairs with a parsed label
  long long n_missing = 0;  // records without one
};

// Per (model, prompt, condition) deviation from the expected grade 0.
struct GullibilityReport {
  Condition condition;
  Stat mae;  // in [0,3], over parsed labels
  long long n = 0;
  long long n_missing = 0;
};

// Mean query-token overlap per confusion cell; a cell with no members is
// undefined, not zero.
struct QueryMatchReport {
  Stat tp_ratio;
  Stat tn_ratio;
  Stat fp_ratio;
  Stat fn_ratio;
};

struct CorrelationPoint {
  std::string model_id;
  std::string prompt_id;
  double kappa = 0.0;
  double mean_mae = 0.0;
};

struct CorrelationReport {
  Stat rho;
  std::vector<CorrelationPoint> points;
};

// Reference rate at which human judges mark a passage relevant, quoted in
// reports next to each labeller's p_label1 for comparison. A report
// constant, not a computed quantity; runs may override it in their config.
inline constexpr double kHumanPLabel1Baseline = 0.33;

// grade 0 or 1 -> 0; grade 2 or 3 -> 1. Throws outside 0-3.
int binarize(int grade);

// pairs are (human grade, labeller grade), graded 0-3; binarized internally.
ConfusionMatrix confusion(const std::vector<std::pair<int, int>>& pairs);

// Undefined when both raters are constant (expected agreement = 1).
Stat cohen_kappa(const ConfusionMatrix& m);

// Two-rater, complete-data Krippendorff's alpha with the ordinal difference
// function (squared sums of coincidence-marginal frequencies between the two
// categories). Undefined when all labels share one value.
Stat kripp_alpha_ordinal(const std::vector<std::pair<int, int>>& pairs);

enum class MaeScale { binary, graded };
double mae(const std::vector<std::pair<int, int>>& pairs, MaeScale scale);

// Mean |grade - 0| of parsed labels from an adversarial condition.
double gullibility_mae(const std::vector<int>& labels);

Rates rates(const ConfusionMatrix& m);

// Lowercased ASCII-alphanumeric runs; anything else separates tokens. Both
// the match ratio and the keyword mock grade on these tokens.
std::vector<std::string> match_tokens(std::string_view text);

// (distinct query tokens present in passage) / (distinct query tokens).
double query_match_ratio(const Query& query, const Passage& passage);

struct CellItem {
  int human_grade = 0;
  int labeller_grade = 0;
  double ratio = 0.0;  // query_match_ratio for the pair
};
QueryMatchReport query_match_by_cell(const std::vector<CellItem>& items);

// Product-moment correlation; undefined under 3 points or zero variance.
Stat pearson(const std::vector<std::pair<double, double>>& points);

// Full bundle over (human, labeller) graded pairs of parsed labels.
AgreementReport agreement_report(const std::vector<std::pair<int, int>>& pairs,
                                 long long n_missing);

}  // namespace relab
