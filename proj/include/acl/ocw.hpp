#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "acl/decoder.hpp"
#include "acl/embedding.hpp"

namespace acl {

struct ClassAccuracy {
  double tuned = 0.0;   // c_t
  double frozen = 0.0;  // c_o
  std::int64_t n_seen = 0;
};

// Per-label online accuracy estimates of the tuned and frozen scorers.
// The first floor(1/(1-eta)) updates of a label use the running mean,
// later ones an EMA with decay eta.
class ClassAccuracyTracker {
 public:
  explicit ClassAccuracyTracker(double eta = 0.99, double eps = 1e-8);

  void update(LabelId label, bool tuned_correct, bool frozen_correct);

  // Direct assignment, e.g. when restoring a checkpoint.
  void set(LabelId label, const ClassAccuracy& value);

  const ClassAccuracy* find(LabelId label) const;
  bool tracked(LabelId label) const { return find(label) != nullptr; }
  const std::map<LabelId, ClassAccuracy>& entries() const { return entries_; }
  double eta() const { return eta_; }
  double eps() const { return eps_; }
  std::int64_t cold_start_length() const { return cold_start_; }

  void write_csv(std::ostream& out) const;
  // Leading lines starting with '#' are skipped.
  static ClassAccuracyTracker read_csv(std::istream& in, double eta = 0.99, double eps = 1e-8);

 private:
  double eta_;
  double eps_;
  std::int64_t cold_start_;
  std::map<LabelId, ClassAccuracy> entries_;
};

struct AlphaPair {
  double tuned = 0.0;   // alpha_t
  double frozen = 1.0;  // alpha_o = 1 - alpha_t
};

// Unseen (or untracked) label -> (0, 1); all candidates seen -> (1, 0);
// otherwise alpha_t = c_t' / (c_t' + c_o + eps) with c_t' = (1 - p_other) c_t
// when a p_other value is supplied, c_t' = c_t otherwise.
AlphaPair alpha(const ClassAccuracyTracker& tracker, LabelId label, const LabelSet& seen, bool all_candidates_seen,
                std::optional<double> p_other = std::nullopt);

// Per-label mix alpha_t(y) P_t(y) + (1 - alpha_t(y)) P_o(y), renormalized.
// If every alpha_t is 0 (resp. 1) the frozen (resp. tuned) distribution is
// returned unchanged, bit for bit.
Distribution mix_predictions(const Distribution& tuned, const Distribution& frozen,
                             const std::map<LabelId, double>& alpha_tuned);

// OCW combination over the candidates of both distributions.
Distribution combined_prediction(const Distribution& tuned, const Distribution& frozen,
                                 const ClassAccuracyTracker& tracker, const LabelSet& seen,
                                 std::optional<double> p_other = std::nullopt);

// AIM: zero-shot probability mass on seen labels, used as one global alpha_t.
double aim_alpha(const Distribution& frozen, const LabelSet& seen);

// Leave-one-out nearest-neighbour (cosine) accuracy per class. Classes with
// fewer than two exemplars are omitted; ties go to the lower exemplar index.
std::map<LabelId, double> nn_loo_confidence(const std::vector<std::pair<Eigen::VectorXd, LabelId>>& exemplars);

// Softmax mass of the OTHER entry.
double p_other(const AugmentedLogits& logits);

enum class WeightingStrategy { OCW, OCW01, AIM, NNLOO, FrozenOnly, TunedOnly };

const char* to_string(WeightingStrategy w);
WeightingStrategy parse_weighting_strategy(const std::string& s);

}  // namespace acl
