#include "acl/ocw.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace acl {

ClassAccuracyTracker::ClassAccuracyTracker(double eta, double eps) : eta_(eta), eps_(eps) {
  if (!(eta >= 0.0 && eta < 1.0)) throw ConfigError("eta", "must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps", "must be > 0");
  // 1/(1-0.99) evaluates to 99.999..., so nudge before flooring.
  cold_start_ = static_cast<std::int64_t>(std::floor(1.0 / (1.0 - eta) + 1e-9));
}

void ClassAccuracyTracker::update(LabelId label, bool tuned_correct, bool frozen_correct) {
  auto& e = entries_[label];
  const double it = tuned_correct ? 1.0 : 0.0;
  const double io = frozen_correct ? 1.0 : 0.0;
  if (e.n_seen < cold_start_) {
    const double n = static_cast<double>(e.n_seen);
    e.tuned = (e.tuned * n + it) / (n + 1.0);
    e.frozen = (e.frozen * n + io) / (n + 1.0);
  } else {
    e.tuned = eta_ * e.tuned + (1.0 - eta_) * it;
    e.frozen = eta_ * e.frozen + (1.0 - eta_) * io;
  }
  e.tuned = std::clamp(e.tuned, 0.0, 1.0);
  e.frozen = std::clamp(e.frozen, 0.0, 1.0);
  e.n_seen += 1;
}

void ClassAccuracyTracker::set(LabelId label, const ClassAccuracy& value) {
  if (!(value.tuned >= 0.0 && value.tuned <= 1.0 && value.frozen >= 0.0 && value.frozen <= 1.0 && value.n_seen >= 0))
    throw ArgumentError("ClassAccuracyTracker::set: value out of range");
  entries_[label] = value;
}

const ClassAccuracy* ClassAccuracyTracker::find(LabelId label) const {
  auto it = entries_.find(label);
  return it == entries_.end() ? nullptr : &it->second;
}

void ClassAccuracyTracker::write_csv(std::ostream& out) const {
  out << "label,c_t,c_o,n_seen\n";
  for (const auto& [label, e] : entries_)
    out << label.value << ',' << std::setprecision(17) << e.tuned << ',' << e.frozen << ',' << e.n_seen << '\n';
}

ClassAccuracyTracker ClassAccuracyTracker::read_csv(std::istream& in, double eta, double eps) {
  ClassAccuracyTracker t(eta, eps);
  std::string line;
  while (std::getline(in, line) && !line.empty() && line[0] == '#') {
  }
  if (line != "label,c_t,c_o,n_seen")
    throw FormatError("tracker CSV: unexpected header", 0);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f[4];
    for (int i = 0; i < 4; ++i)
      if (!std::getline(ss, f[i], i < 3 ? ',' : '\n')) throw FormatError("tracker CSV: short row " + std::to_string(row), 0);
    ClassAccuracy e;
    LabelId label;
    try {
      label = LabelId{std::stoi(f[0])};
      e.tuned = std::stod(f[1]);
      e.frozen = std::stod(f[2]);
      e.n_seen = std::stoll(f[3]);
    } catch (const std::logic_error&) {
      throw FormatError("tracker CSV: unparsable row " + std::to_string(row), 0);
    }
    try {
      t.set(label, e);
    } catch (const ArgumentError&) {
      throw FormatError("tracker CSV: value out of range in row " + std::to_string(row), 0);
    }
  }
  return t;
}

AlphaPair alpha(const ClassAccuracyTracker& tracker, LabelId label, const LabelSet& seen, bool all_candidates_seen,
                std::optional<double> p_other) {
  const ClassAccuracy* e = tracker.find(label);
  if (seen.count(label) == 0 || e == nullptr) return {0.0, 1.0};
  if (all_candidates_seen) return {1.0, 0.0};
  const double ct = p_other ? (1.0 - *p_other) * e->tuned : e->tuned;
  const double at = ct / (ct + e->frozen + tracker.eps());
  return {at, 1.0 - at};
}

Distribution mix_predictions(const Distribution& tuned, const Distribution& frozen,
                             const std::map<LabelId, double>& alpha_tuned) {
  if (tuned.labels() != frozen.labels()) throw ArgumentError("mix_predictions: candidate sets differ");
  bool all_zero = true, all_one = true;
  for (const auto& [label, _] : frozen.probs()) {
    auto it = alpha_tuned.find(label);
    if (it == alpha_tuned.end()) throw ArgumentError("mix_predictions: missing alpha for label " + std::to_string(label.value));
    all_zero = all_zero && it->second == 0.0;
    all_one = all_one && it->second == 1.0;
  }
  if (all_zero) return frozen;
  if (all_one) return tuned;

  std::map<LabelId, double> mixed;
  double total = 0.0;
  for (const auto& [label, po] : frozen.probs()) {
    const double a = alpha_tuned.at(label);
    const double v = a * tuned[label] + (1.0 - a) * po;
    mixed.emplace_hint(mixed.end(), label, v);
    total += v;
  }
  if (!(total > 0.0)) return frozen;
  for (auto& [label, v] : mixed) v /= total;
  return Distribution(std::move(mixed));
}

Distribution combined_prediction(const Distribution& tuned, const Distribution& frozen,
                                 const ClassAccuracyTracker& tracker, const LabelSet& seen,
                                 std::optional<double> p_other) {
  if (tuned.labels() != frozen.labels()) throw ArgumentError("combined_prediction: candidate sets differ");
  const LabelSet candidates = frozen.labels();
  const bool all_seen = std::all_of(candidates.begin(), candidates.end(), [&](LabelId y) { return seen.count(y) != 0; });
  std::map<LabelId, double> a;
  for (LabelId y : candidates) a[y] = alpha(tracker, y, seen, all_seen, p_other).tuned;
  return mix_predictions(tuned, frozen, a);
}

double aim_alpha(const Distribution& frozen, const LabelSet& seen) {
  double mass = 0.0;
  for (const auto& [label, p] : frozen.probs())
    if (seen.count(label) != 0) mass += p;
  return std::clamp(mass, 0.0, 1.0);
}

std::map<LabelId, double> nn_loo_confidence(const std::vector<std::pair<Eigen::VectorXd, LabelId>>& exemplars) {
  std::map<LabelId, double> out;
  const std::size_t n = exemplars.size();
  if (n < 2) return out;
  std::vector<Eigen::VectorXd> unit;
  unit.reserve(n);
  for (const auto& [e, _] : exemplars) {
    const double norm = e.norm();
    if (!(norm > 0.0)) throw ArgumentError("nn_loo_confidence: zero-norm exemplar");
    unit.push_back(e / norm);
  }
  std::map<LabelId, std::pair<std::int64_t, std::int64_t>> tally;  // (hits, count)
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = n;
    double best_sim = -2.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = unit[i].dot(unit[j]);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    auto& t = tally[exemplars[i].second];
    t.second += 1;
    if (exemplars[best].second == exemplars[i].second) t.first += 1;
  }
  for (const auto& [label, t] : tally)
    if (t.second >= 2) out[label] = static_cast<double>(t.first) / static_cast<double>(t.second);
  return out;
}

double p_other(const AugmentedLogits& logits) { return stable_softmax(logits.values)[logits.other_index()]; }

const char* to_string(WeightingStrategy w) {
  switch (w) {
    case WeightingStrategy::OCW: return "ocw";
    case WeightingStrategy::OCW01: return "ocw01";
    case WeightingStrategy::AIM: return "aim";
    case WeightingStrategy::NNLOO: return "nn_loo";
    case WeightingStrategy::FrozenOnly: return "frozen_only";
    case WeightingStrategy::TunedOnly: return "tuned_only";
  }
  return "?";
}

WeightingStrategy parse_weighting_strategy(const std::string& s) {
  if (s == "ocw") return WeightingStrategy::OCW;
  if (s == "ocw01") return WeightingStrategy::OCW01;
  if (s == "aim") return WeightingStrategy::AIM;
  if (s == "nn_loo") return WeightingStrategy::NNLOO;
  if (s == "frozen_only") return WeightingStrategy::FrozenOnly;
  if (s == "tuned_only") return WeightingStrategy::TunedOnly;
  throw ConfigError("weighting", "unknown strategy '" + s + "'");
}

}  // namespace acl
