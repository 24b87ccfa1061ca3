#include "acl/embedding.hpp"

#include <cmath>

namespace acl {

TokenMatrix::TokenMatrix(Eigen::MatrixXf tokens) : tokens_(std::move(tokens)) {
  if (tokens_.rows() < 1 || tokens_.cols() < 1) throw ArgumentError("TokenMatrix: empty");
  if (!all_finite(tokens_)) throw ArgumentError("TokenMatrix: non-finite entry");
}

void LabelEmbeddingTable::insert(LabelId id, const Embedding& e) {
  if (dim_ == 0) dim_ = e.size();
  if (e.size() != dim_) throw ArgumentError("LabelEmbeddingTable: dimension mismatch");
  if (!all_finite(e)) throw ArgumentError("LabelEmbeddingTable: non-finite embedding");
  if (entries_.count(id) != 0) throw ArgumentError("LabelEmbeddingTable: duplicate label id " + std::to_string(id.value));
  const Eigen::VectorXd d = e.cast<double>();
  const double n = d.norm();
  if (n == 0.0) throw ArgumentError("LabelEmbeddingTable: zero-norm embedding");
  entries_double_.emplace(id, d / n);
  entries_.emplace(id, (d / n).cast<float>());
}

const Embedding& LabelEmbeddingTable::at(LabelId id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw LookupError("unknown label id " + std::to_string(id.value));
  return it->second;
}

const Eigen::VectorXd& LabelEmbeddingTable::at_double(LabelId id) const {
  auto it = entries_double_.find(id);
  if (it == entries_double_.end()) throw LookupError("unknown label id " + std::to_string(id.value));
  return it->second;
}

LabelSet LabelEmbeddingTable::labels() const {
  LabelSet out;
  for (const auto& [id, _] : entries_) out.insert(out.end(), id);
  return out;
}

Distribution::Distribution(std::map<LabelId, double> probs) : probs_(std::move(probs)) {
  double sum = 0.0;
  for (const auto& [id, p] : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ArgumentError("Distribution: negative or non-finite probability");
    sum += p;
  }
  if (!probs_.empty() && std::abs(sum - 1.0) > 1e-6) throw ArgumentError("Distribution: probabilities do not sum to 1");
}

double Distribution::operator[](LabelId id) const {
  auto it = probs_.find(id);
  if (it == probs_.end()) throw LookupError("label not in distribution: " + std::to_string(id.value));
  return it->second;
}

LabelSet Distribution::labels() const {
  LabelSet out;
  for (const auto& [id, _] : probs_) out.insert(out.end(), id);
  return out;
}

Eigen::VectorXd scaled_cosine_logits(const Eigen::VectorXd& e, const LabelEmbeddingTable& table,
                                     const LabelSet& candidates) {
  if (e.size() != table.dim()) throw ArgumentError("embedding dimension does not match label table");
  const double n = e.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ArgumentError("embedding has zero or non-finite norm");
  Eigen::VectorXd logits(static_cast<Eigen::Index>(candidates.size()));
  Eigen::Index k = 0;
  for (LabelId y : candidates) {
    const double c = std::clamp(table.at_double(y).dot(e) / n, -1.0, 1.0);
    logits[k++] = kTemperature * c;
  }
  return logits;
}

Distribution zero_shot_probabilities(const Eigen::VectorXd& e_x, const LabelEmbeddingTable& table,
                                     const LabelSet& candidates) {
  if (candidates.empty()) throw ArgumentError("zero_shot_probabilities: empty candidate set");
  const Eigen::VectorXd p = stable_softmax(scaled_cosine_logits(e_x, table, candidates));
  std::map<LabelId, double> probs;
  Eigen::Index k = 0;
  for (LabelId y : candidates) probs.emplace_hint(probs.end(), y, p[k++]);
  return Distribution(std::move(probs));
}

Distribution zero_shot_probabilities(const Embedding& e_x, const LabelEmbeddingTable& table,
                                     const LabelSet& candidates) {
  return zero_shot_probabilities(Eigen::VectorXd(e_x.cast<double>()), table, candidates);
}

LabelId argmax_label(const Distribution& d) {
  if (d.empty()) throw ArgumentError("argmax_label: empty distribution");
  // std::map iterates in ascending id order, so strict '>' keeps the smallest id on ties.
  auto best = d.probs().begin();
  for (auto it = d.probs().begin(); it != d.probs().end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

}  // namespace acl
