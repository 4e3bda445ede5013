#include "relab/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>

namespace relab {

int binarize(int grade) {
  if (grade < 0 || grade > 3) {
    throw std::invalid_argument("binarize: grade outside 0-3: " +
                                std::to_string(grade));
  }
  return grade >= 2 ? 1 : 0;
}

ConfusionMatrix confusion(const std::vector<std::pair<int, int>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("confusion: no pairs");
  ConfusionMatrix m;
  for (const auto& [human, labeller] : pairs) {
    const int h = binarize(human);
    const int l = binarize(labeller);
    if (h == 1 && l == 1) ++m.tp;
    else if (h == 0 && l == 0) ++m.tn;
    else if (h == 0 && l == 1) ++m.fp;
    else ++m.fn;
  }
  return m;
}

Stat cohen_kappa(const ConfusionMatrix& m) {
  const double total = static_cast<double>(m.total());
  if (total < 1) throw std::invalid_argument("cohen_kappa: empty matrix");
  const double po = static_cast<double>(m.tp + m.tn) / total;
  // Chance agreement from the two raters' marginals.
  const double human_pos = static_cast<double>(m.tp + m.fn);
  const double human_neg = static_cast<double>(m.tn + m.fp);
  const double labeller_pos = static_cast<double>(m.tp + m.fp);
  const double labeller_neg = static_cast<double>(m.tn + m.fn);
  const double pe =
      (human_pos * labeller_pos + human_neg * labeller_neg) / (total * total);
  if (pe == 1.0) {
    return Stat::undefined("both raters constant (expected agreement 1)");
  }
  return Stat::of((po - pe) / (1.0 - pe));
}

Stat kripp_alpha_ordinal(const std::vector<std::pair<int, int>>& pairs) {
  if (pairs.size() < 2) {
    return Stat::undefined("fewer than 2 labelled pairs");
  }
  // Coincidence matrix for two raters with complete data: each pair
  // contributes both ordered orientations.
  std::array<std::array<double, 4>, 4> o{};
  for (const auto& [a, b] : pairs) {
    if (a < 0 || a > 3 || b < 0 || b > 3) {
      throw std::invalid_argument("kripp_alpha_ordinal: grade outside 0-3");
    }
    o[static_cast<size_t>(a)][static_cast<size_t>(b)] += 1.0;
    o[static_cast<size_t>(b)][static_cast<size_t>(a)] += 1.0;
  }
  std::array<double, 4> marginal{};
  double n = 0.0;
  for (size_t c = 0; c < 4; ++c) {
    for (size_t k = 0; k < 4; ++k) marginal[c] += o[c][k];
    n += marginal[c];
  }
  // Ordinal squared difference: frequencies of every category lying between
  // the two, with the endpoints half-weighted.
  const auto delta_sq = [&](size_t c, size_t k) {
    double between = 0.0;
    for (size_t g = c; g <= k; ++g) between += marginal[g];
    between -= (marginal[c] + marginal[k]) / 2.0;
    return between * between;
  };
  double observed = 0.0;  // sum over c<k of o[c][k] * delta^2
  double expected = 0.0;  // sum over c<k of n_c * n_k * delta^2
  for (size_t c = 0; c < 4; ++c) {
    for (size_t k = c + 1; k < 4; ++k) {
      const double d2 = delta_sq(c, k);
      observed += o[c][k] * d2;
      expected += marginal[c] * marginal[k] * d2;
    }
  }
  if (expected == 0.0) {
    return Stat::undefined("single label value (expected disagreement 0)");
  }
  return Stat::of(1.0 - (n - 1.0) * observed / expected);
}

double mae(const std::vector<std::pair<int, int>>& pairs, MaeScale scale) {
  if (pairs.empty()) throw std::invalid_argument("mae: no pairs");
  double sum = 0.0;
  for (const auto& [human, labeller] : pairs) {
    if (scale == MaeScale::binary) {
      sum += std::abs(binarize(human) - binarize(labeller));
    } else {
      if (human < 0 || human > 3 || labeller < 0 || labeller > 3) {
        throw std::invalid_argument("mae: grade outside 0-3");
      }
      sum += std::abs(human - labeller);
    }
  }
  return sum / static_cast<double>(pairs.size());
}

double gullibility_mae(const std::vector<int>& labels) {
  if (labels.empty()) throw std::invalid_argument("gullibility_mae: no labels");
  double sum = 0.0;
  for (const int g : labels) {
    if (g < 0 || g > 3) {
      throw std::invalid_argument("gullibility_mae: grade outside 0-3");
    }
    sum += g;  // expected grade is 0, so |g - 0| = g
  }
  return sum / static_cast<double>(labels.size());
}

Rates rates(const ConfusionMatrix& m) {
  Rates r;
  const double total = static_cast<double>(m.total());
  if (total < 1) {
    r.accuracy = r.prec_label0 = r.prec_label1 = r.p_label1 =
        Stat::undefined("no pairs");
    return r;
  }
  r.accuracy = Stat::of(static_cast<double>(m.tp + m.tn) / total);
  r.p_label1 = Stat::of(static_cast<double>(m.tp + m.fp) / total);
  r.prec_label1 =
      (m.tp + m.fp) > 0
          ? Stat::of(static_cast<double>(m.tp) /
                     static_cast<double>(m.tp + m.fp))
          : Stat::undefined("no relevant labels produced");
  r.prec_label0 =
      (m.tn + m.fn) > 0
          ? Stat::of(static_cast<double>(m.tn) /
                     static_cast<double>(m.tn + m.fn))
          : Stat::undefined("no non-relevant labels produced");
  return r;
}

std::vector<std::string> match_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char c : text) {
    const bool alnum = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                       (c >= '0' && c <= '9');
    if (alnum) {
      current.push_back(
          (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

double query_match_ratio(const Query& query, const Passage& passage) {
  const auto query_tokens = match_tokens(query.text);
  std::set<std::string> distinct(query_tokens.begin(), query_tokens.end());
  if (distinct.empty()) {
    throw std::invalid_argument("query_match_ratio: query has no tokens");
  }
  const auto passage_tokens = match_tokens(passage.text);
  const std::set<std::string> present(passage_tokens.begin(),
                                      passage_tokens.end());
  size_t hits = 0;
  for (const auto& token : distinct) {
    if (present.count(token)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(distinct.size());
}

QueryMatchReport query_match_by_cell(const std::vector<CellItem>& items) {
  double sums[4] = {0, 0, 0, 0};
  long long counts[4] = {0, 0, 0, 0};
  enum { TP, TN, FP, FN };
  for (const auto& item : items) {
    const int h = binarize(item.human_grade);
    const int l = binarize(item.labeller_grade);
    const int cell = (h == 1 && l == 1) ? TP
                     : (h == 0 && l == 0) ? TN
                     : (h == 0 && l == 1) ? FP
                                          : FN;
    sums[cell] += item.ratio;
    ++counts[cell];
  }
  const auto cell_stat = [&](int cell) {
    return counts[cell] > 0
               ? Stat::of(sums[cell] / static_cast<double>(counts[cell]))
               : Stat::undefined("empty cell");
  };
  QueryMatchReport report;
  report.tp_ratio = cell_stat(TP);
  report.tn_ratio = cell_stat(TN);
  report.fp_ratio = cell_stat(FP);
  report.fn_ratio = cell_stat(FN);
  return report;
}

Stat pearson(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) return Stat::undefined("fewer than 3 points");
  const double n = static_cast<double>(points.size());
  double mean_x = 0.0, mean_y = 0.0;
  for (const auto& [x, y] : points) {
    mean_x += x;
    mean_y += y;
  }
  mean_x /= n;
  mean_y /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    const double dx = x - mean_x;
    const double dy = y - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0) return Stat::undefined("zero variance on the x axis");
  if (syy == 0.0) return Stat::undefined("zero variance on the y axis");
  return Stat::of(std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0));
}

AgreementReport agreement_report(const std::vector<std::pair<int, int>>& pairs,
                                 long long n_missing) {
  AgreementReport report;
  report.n = static_cast<long long>(pairs.size());
  report.n_missing = n_missing;
  if (pairs.empty()) {
    const Stat none = Stat::undefined("no parsed labels");
    report.kappa = report.alpha = report.mae_binary = report.mae_graded =
        report.accuracy = report.prec_label0 = report.prec_label1 =
            report.p_label1 = none;
    return report;
  }
  const ConfusionMatrix m = confusion(pairs);
  report.kappa = cohen_kappa(m);
  report.alpha = kripp_alpha_ordinal(pairs);
  report.mae_binary = Stat::of(mae(pairs, MaeScale::binary));
  report.mae_graded = Stat::of(mae(pairs, MaeScale::graded));
  const Rates r = rates(m);
  report.accuracy = r.accuracy;
  report.prec_label0 = r.prec_label0;
  report.prec_label1 = r.prec_label1;
  report.p_label1 = r.p_label1;
  return report;
}

}  // namespace relab
