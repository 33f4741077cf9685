#pragma once

#include <array>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "facet/types.hpp"

namespace facet {

struct AccReport {
  std::array<double, kTraitCount> per_trait{};
  double average = 0.0;
};

// ACC_trait = 1 - mean |p - g|; average over the five traits.
inline AccReport acc_metric(const std::vector<TraitVector>& predictions, const std::vector<TraitVector>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("acc_metric: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw std::invalid_argument("acc_metric: no videos");
  AccReport r;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    labels[n].validate("acc_metric label");
    predictions[n].validate("acc_metric prediction");
    for (std::size_t i = 0; i < kTraitCount; ++i) r.per_trait[i] += std::abs(predictions[n][i] - labels[n][i]);
  }
  for (auto& v : r.per_trait) {
    v = 1.0 - v / static_cast<double>(labels.size());
    r.average += v;
  }
  r.average /= static_cast<double>(kTraitCount);
  return r;
}

inline TraitVector mean_traits(const std::vector<TraitVector>& labels) {
  if (labels.empty()) throw std::invalid_argument("mean_traits: no labels");
  TraitVector m;
  for (const auto& l : labels)
    for (std::size_t i = 0; i < kTraitCount; ++i) m[i] += l[i];
  for (std::size_t i = 0; i < kTraitCount; ++i) m[i] /= static_cast<double>(labels.size());
  return m;
}

// ACC of always predicting `constant`.
inline AccReport constant_baseline(const TraitVector& constant, const std::vector<TraitVector>& labels) {
  return acc_metric(std::vector<TraitVector>(labels.size(), constant), labels);
}

inline void write_acc_header(std::ostream& os) {
  for (const char* name : kTraitShortNames) os << name << ',';
  os << "Avg";
}

inline void write_acc_row(std::ostream& os, const AccReport& r) {
  const auto old = os.precision(4);
  const auto flags = os.flags();
  os << std::fixed;
  for (double v : r.per_trait) os << v << ',';
  os << r.average;
  os.flags(flags);
  os.precision(old);
}

}  // namespace facet
