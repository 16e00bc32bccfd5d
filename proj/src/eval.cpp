#include "detangle/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace detangle {

PRF make_prf(std::size_t tp, std::size_t predicted, std::size_t gold) {
  PRF out;
  out.true_positive = tp;
  out.predicted = predicted;
  out.gold = gold;
  out.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  out.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

PRF graph_prf(const LinkSet& pred, const LinkSet& gold) {
  std::size_t tp = 0;
  for (const auto& [q, pls] : pred.links) {
    auto it = gold.links.find(q);
    if (it == gold.links.end()) continue;
    for (std::size_t j : pls) tp += it->second.count(j);
  }
  return make_prf(tp, pred.pair_count(), gold.pair_count());
}

PRF cluster_prf(const ThreadPartition& pred, const ThreadPartition& gold) {
  std::set<std::vector<std::size_t>> gold_sets;
  std::size_t gold_count = 0;
  for (const auto& c : gold.clusters)
    if (c.size() >= 2) {
      gold_sets.insert(c);
      ++gold_count;
    }
  std::size_t tp = 0, pred_count = 0;
  for (const auto& c : pred.clusters) {
    if (c.size() < 2) continue;
    ++pred_count;
    if (gold_sets.count(c)) ++tp;
  }
  return make_prf(tp, pred_count, gold_count);
}

PRF selflink_prf(const LinkSet& pred, const LinkSet& gold) {
  std::size_t tp = 0, pred_count = 0, gold_count = 0;
  std::set<std::size_t> queries;
  for (const auto& [q, ls] : pred.links) queries.insert(q);
  for (const auto& [q, ls] : gold.links) queries.insert(q);
  for (std::size_t q : queries) {
    auto p = pred.links.find(q);
    auto g = gold.links.find(q);
    bool pred_self = p != pred.links.end() && p->second.count(q);
    bool gold_self = g != gold.links.end() && g->second.count(q);
    pred_count += pred_self;
    gold_count += gold_self;
    tp += pred_self && gold_self;
  }
  return make_prf(tp, pred_count, gold_count);
}

double binomial_two_sided(std::size_t k, std::size_t n) {
  if (n == 0) return 1.0;
  // pmf recurrence keeps small-n values exact to double rounding; large n
  // falls back to log space to dodge 2^-n underflow
  auto cdf = [&](long long hi) -> double {
    if (hi < 0) return 0.0;
    double sum = 0.0;
    if (n <= 60) {
      double pmf = std::ldexp(1.0, -static_cast<int>(n));  // C(n,0)/2^n
      for (long long i = 0; i <= hi; ++i) {
        sum += pmf;
        pmf *= static_cast<double>(n - static_cast<std::size_t>(i)) /
               static_cast<double>(i + 1);
      }
    } else {
      double log2n = static_cast<double>(n) * std::log(2.0);
      for (long long i = 0; i <= hi; ++i) {
        double lp = std::lgamma(static_cast<double>(n) + 1.0) -
                    std::lgamma(static_cast<double>(i) + 1.0) -
                    std::lgamma(static_cast<double>(n - static_cast<std::size_t>(i)) + 1.0) -
                    log2n;
        sum += std::exp(lp);
      }
    }
    return std::min(sum, 1.0);
  };
  double lower = cdf(static_cast<long long>(k));
  double upper = 1.0 - cdf(static_cast<long long>(k) - 1);
  return std::min(1.0, 2.0 * std::min(lower, upper));
}

McNemarResult mcnemar(const LinkSet& pred_a, const LinkSet& pred_b, const LinkSet& gold) {
  auto correct = [&](const LinkSet& pred, std::size_t q, const std::set<std::size_t>& gls) {
    auto it = pred.links.find(q);
    if (it == pred.links.end()) return false;
    for (std::size_t j : it->second)
      if (gls.count(j)) return true;
    return false;
  };
  McNemarResult out;
  for (const auto& [q, gls] : gold.links) {
    bool a = correct(pred_a, q, gls);
    bool b = correct(pred_b, q, gls);
    if (a && !b) ++out.n_a_not_b;
    if (b && !a) ++out.n_b_not_a;
  }
  out.p_value = binomial_two_sided(out.n_a_not_b, out.n_a_not_b + out.n_b_not_a);
  out.significant = out.p_value < 0.05;
  return out;
}

std::string metrics_table(const std::vector<std::pair<std::string, PRF>>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "metric" << std::right << std::setw(9) << "P"
      << std::setw(9) << "R" << std::setw(9) << "F1" << std::setw(8) << "tp" << std::setw(8)
      << "pred" << std::setw(8) << "gold" << "\n";
  for (const auto& [name, prf] : rows) {
    out << std::left << std::setw(12) << name << std::right << std::fixed
        << std::setprecision(4) << std::setw(9) << prf.precision << std::setw(9) << prf.recall
        << std::setw(9) << prf.f1 << std::setw(8) << prf.true_positive << std::setw(8)
        << prf.predicted << std::setw(8) << prf.gold << "\n";
    out << std::defaultfloat;
  }
  return out.str();
}

std::string metrics_kv(const std::vector<std::pair<std::string, PRF>>& rows) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6);
  for (const auto& [name, prf] : rows) {
    out << name << "_p=" << prf.precision << "\n";
    out << name << "_r=" << prf.recall << "\n";
    out << name << "_f1=" << prf.f1 << "\n";
  }
  return out.str();
}

}  // namespace detangle
