#pragma once

#include <vector>

#include "escape/adversary.hpp"

namespace escape {

/// Agent losses together with the attack used both for training and for
/// evaluating J, and the reference local minimizer w* of J.
struct Problem {
  std::vector<LossModel> models;
  PerturbationSpec spec;
  AttackMethod attack = AttackMethod::exact;
  Vec w_star;

  Eigen::Index agents() const { return static_cast<Eigen::Index>(models.size()); }
  Eigen::Index dim() const { return w_star.size(); }
  double risk(const Vec& w) const { return network_risk(models, w, spec, attack); }
  Vec gradient(const Vec& w) const { return network_gradient(models, w, spec, attack); }
};

}  // namespace escape
