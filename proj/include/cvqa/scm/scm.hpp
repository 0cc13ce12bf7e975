// Copyright 2026 The cvqa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cvqa::scm {

struct Variable {
  std::string name;
  int card = 2;
};

/// Declarative description of a discrete structural causal model.
///
/// A CPT is stored flat: the parent assignment is a mixed-radix index over
/// the parents in their listed order (first parent slowest) and the
/// variable's own value varies fastest. A JSON CPT given as nested arrays
/// flattens to exactly this layout.
struct ScmSpec {
  std::vector<Variable> variables;
  std::map<std::string, std::vector<std::string>> parents;
  std::map<std::string, std::vector<double>> cpts;
};

/// Distribution over the full assignment lattice of an ordered variable
/// list. The last variable varies fastest in the flat array.
class ProbabilityTable {
 public:
  ProbabilityTable(std::vector<std::string> names, std::vector<int> cards,
                   std::vector<double> probs);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<int>& cards() const { return cards_; }
  const std::vector<double>& probs() const { return probs_; }
  std::size_t size() const { return probs_.size(); }

  std::size_t index_of(const std::string& name) const;
  double at(std::span<const int> assignment) const;
  double total_mass() const;

  /// Marginal over `keep`, in the order given.
  ProbabilityTable marginal(const std::vector<std::string>& keep) const;

 private:
  std::vector<std::string> names_;
  std::vector<int> cards_;
  std::vector<double> probs_;
};

/// P(outcome | given) laid out as one row per mixed-radix assignment of
/// `given` (first variable slowest) and one column per outcome value.
struct ConditionalTable {
  std::vector<std::string> given;
  std::vector<int> given_cards;
  std::string outcome;
  int outcome_card = 0;
  std::vector<double> probs;

  std::size_t rows() const;
  double at(std::size_t row, int value) const {
    return probs[row * static_cast<std::size_t>(outcome_card) + static_cast<std::size_t>(value)];
  }
  std::span<const double> row(std::size_t r) const {
    return {probs.data() + r * static_cast<std::size_t>(outcome_card),
            static_cast<std::size_t>(outcome_card)};
  }
};

/// Parent lists by variable index; the structural view used by the graph
/// algorithms below.
struct Dag {
  std::vector<std::vector<int>> parents;
  std::size_t size() const { return parents.size(); }
};

/// Immutable, validated SCM. Every operation on it is const and thread-safe.
class DiscreteScm {
 public:
  std::size_t num_variables() const { return vars_.size(); }
  const std::vector<Variable>& variables() const { return vars_; }
  const std::string& name(int index) const { return vars_[static_cast<std::size_t>(index)].name; }
  int card(int index) const { return vars_[static_cast<std::size_t>(index)].card; }
  int index(const std::string& name) const;
  bool has(const std::string& name) const;

  const std::vector<int>& parents(int index) const { return dag_.parents[static_cast<std::size_t>(index)]; }
  const std::vector<double>& cpt(int index) const { return cpts_[static_cast<std::size_t>(index)]; }
  const std::vector<int>& topological_order() const { return topo_; }
  const Dag& dag() const { return dag_; }
  bool has_edge(const std::string& from, const std::string& to) const;

  std::size_t state_space() const;
  ScmSpec to_spec() const;

 private:
  friend DiscreteScm build_scm(const ScmSpec& spec);
  std::vector<Variable> vars_;
  Dag dag_;
  std::vector<std::vector<double>> cpts_;
  std::vector<int> topo_;
  std::map<std::string, int> index_;
};

inline constexpr double kCptTolerance = 1e-12;
inline constexpr std::size_t kMaxJointStates = 10'000'000;

/// Validates `spec` and caches the topological order.
/// Throws CycleError, CptError, UnknownVariable.
DiscreteScm build_scm(const ScmSpec& spec);

/// Exact joint by the chain rule over every assignment. Throws
/// StateSpaceError when the lattice exceeds `max_states`.
ProbabilityTable joint_distribution(const DiscreteScm& scm,
                                    std::size_t max_states = kMaxJointStates);

/// Graph mutilation: intervened variables lose their parents and get a
/// point-mass CPT. Throws UnknownVariable, ValueOutOfRange.
DiscreteScm intervene(const DiscreteScm& scm, const std::map<std::string, int>& assignment);

/// Observational P(outcome | given) from a table. Rows whose conditioning
/// event has zero mass throw PositivityError.
ConditionalTable conditional(const ProbabilityTable& table, const std::vector<std::string>& given,
                             const std::string& outcome);

/// P(outcome | do(treatments)) by mutilating the graph once per treatment
/// assignment and enumerating the joint. This is the ground truth.
ConditionalTable interventional(const DiscreteScm& scm, const std::vector<std::string>& treatments,
                                const std::string& outcome);

/// Checks the front-door criterion structurally; throws CriterionError with
/// the violated clause.
void check_frontdoor_criterion(const DiscreteScm& scm, const std::vector<std::string>& treatments,
                               const std::vector<std::string>& mediators,
                               const std::string& outcome);

/// P(outcome | do(treatments)) from observational quantities only:
///   sum_m P(m|x) sum_x' P(outcome|m,x') P(x').
ConditionalTable frontdoor_estimate(const DiscreteScm& scm,
                                    const std::vector<std::string>& treatments,
                                    const std::vector<std::string>& mediators,
                                    const std::string& outcome);

/// I(X;Y) in nats with 0 ln 0 := 0. I(X;X) is H(X).
double mutual_information(const ProbabilityTable& table, const std::string& x,
                          const std::string& y);
double entropy(const ProbabilityTable& table, const std::string& x);

/// d-separation of X and Y given Z by the reachability (Bayes-ball) walk.
bool d_separated(const Dag& dag, const std::vector<int>& xs, const std::vector<int>& ys,
                 const std::vector<int>& zs);

/// True when some directed path leads from a node in `from` to a node in
/// `to` without passing through `blocked`.
bool directed_path_exists(const Dag& dag, const std::vector<int>& from, const std::vector<int>& to,
                          const std::vector<int>& blocked);

}  // namespace cvqa::scm
