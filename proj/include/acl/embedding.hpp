#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "acl/errors.hpp"

namespace acl {

struct LabelId {
  std::int32_t value = 0;
  auto operator<=>(const LabelId&) const = default;
};

using LabelSet = std::set<LabelId>;

// D-length 32-bit feature vector.
using Embedding = Eigen::VectorXf;

// Softmax temperature shared by the frozen and tuned scorers.
inline constexpr double kTemperature = 100.0;

// T x D token features. Row 0 is the CLS token, rows 1..T-1 are patch tokens.
class TokenMatrix {
 public:
  TokenMatrix() = default;
  explicit TokenMatrix(Eigen::MatrixXf tokens);

  Eigen::Index num_tokens() const { return tokens_.rows(); }
  Eigen::Index dim() const { return tokens_.cols(); }
  const Eigen::MatrixXf& matrix() const { return tokens_; }
  auto cls() const { return tokens_.row(0); }
  Eigen::MatrixXd as_double() const { return tokens_.cast<double>(); }

  friend bool operator==(const TokenMatrix& a, const TokenMatrix& b) {
    return a.tokens_.rows() == b.tokens_.rows() && a.tokens_.cols() == b.tokens_.cols() &&
           a.tokens_ == b.tokens_;
  }

 private:
  Eigen::MatrixXf tokens_;
};

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

// Cosine similarity in double precision, clamped to [-1, 1].
template <class DerivedA, class DerivedB>
double cosine_similarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) throw ArgumentError("cosine_similarity: dimension mismatch");
  const auto ad = a.reshaped().template cast<double>().eval();
  const auto bd = b.reshaped().template cast<double>().eval();
  const double na = ad.norm();
  const double nb = bd.norm();
  if (na == 0.0 || nb == 0.0) throw ArgumentError("cosine_similarity: zero-norm vector");
  return std::clamp(ad.dot(bd) / (na * nb), -1.0, 1.0);
}

// Max-subtracted softmax.
template <class Derived>
Eigen::VectorXd stable_softmax(const Eigen::MatrixBase<Derived>& logits) {
  const Eigen::VectorXd z = logits.reshaped().template cast<double>();
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

template <class Derived>
double log_sum_exp(const Eigen::MatrixBase<Derived>& logits) {
  const Eigen::VectorXd z = logits.reshaped().template cast<double>();
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

// Label id -> unit-norm embedding. Vectors are normalized on insertion.
class LabelEmbeddingTable {
 public:
  explicit LabelEmbeddingTable(Eigen::Index dim = 0) : dim_(dim) {}

  void insert(LabelId id, const Embedding& e);

  bool contains(LabelId id) const { return entries_.count(id) != 0; }
  const Embedding& at(LabelId id) const;
  // Same vector in double precision, for scoring.
  const Eigen::VectorXd& at_double(LabelId id) const;

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  LabelSet labels() const;
  const std::map<LabelId, Embedding>& entries() const { return entries_; }

 private:
  Eigen::Index dim_;
  std::map<LabelId, Embedding> entries_;
  std::map<LabelId, Eigen::VectorXd> entries_double_;
};

// Probability mass over a finite label set.
class Distribution {
 public:
  Distribution() = default;
  // Validates non-negativity and unit sum (1e-6).
  explicit Distribution(std::map<LabelId, double> probs);

  double operator[](LabelId id) const;
  const std::map<LabelId, double>& probs() const { return probs_; }
  std::size_t size() const { return probs_.size(); }
  bool empty() const { return probs_.empty(); }
  LabelSet labels() const;

  friend bool operator==(const Distribution&, const Distribution&) = default;

 private:
  std::map<LabelId, double> probs_;
};

// 100 * cos(e, e_y) for each candidate, in candidate order.
Eigen::VectorXd scaled_cosine_logits(const Eigen::VectorXd& e, const LabelEmbeddingTable& table,
                                     const LabelSet& candidates);

// Frozen open-vocabulary scorer: softmax over 100 * cos(e_x, e_y).
Distribution zero_shot_probabilities(const Embedding& e_x, const LabelEmbeddingTable& table,
                                     const LabelSet& candidates);
Distribution zero_shot_probabilities(const Eigen::VectorXd& e_x, const LabelEmbeddingTable& table,
                                     const LabelSet& candidates);

// Highest-probability label. Ties go to the smallest label id.
LabelId argmax_label(const Distribution& d);

}  // namespace acl
