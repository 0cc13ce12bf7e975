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

#include "cvqa/scm/scm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>

#include "cvqa/errors.hpp"

namespace cvqa::scm {
namespace {

std::size_t lattice_size(const std::vector<int>& cards) {
  std::size_t n = 1;
  for (int c : cards) {
    n *= static_cast<std::size_t>(c);
  }
  return n;
}

// Advances a mixed-radix counter with the last digit fastest. Returns false
// after the final assignment.
bool next_assignment(std::vector<int>& digits, const std::vector<int>& cards) {
  for (std::size_t k = digits.size(); k-- > 0;) {
    if (++digits[k] < cards[k]) return true;
    digits[k] = 0;
  }
  return false;
}

std::vector<int> indices_of(const DiscreteScm& scm, const std::vector<std::string>& names) {
  std::vector<int> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(scm.index(n));
  return out;
}

void require_disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b,
                      const char* what) {
  for (const auto& x : a) {
    if (std::find(b.begin(), b.end(), x) != b.end()) {
      throw CriterionError(std::string("variable '") + x + "' appears in both " + what);
    }
  }
}

}  // namespace

// ----------------------------------------------------------------------------
// ProbabilityTable

ProbabilityTable::ProbabilityTable(std::vector<std::string> names, std::vector<int> cards,
                                   std::vector<double> probs)
    : names_(std::move(names)), cards_(std::move(cards)), probs_(std::move(probs)) {
  if (names_.size() != cards_.size() || lattice_size(cards_) != probs_.size()) {
    throw ShapeError("probability table dimensions do not match its variable list");
  }
}

std::size_t ProbabilityTable::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw UnknownVariable("'" + name + "' is not in the table");
  return static_cast<std::size_t>(it - names_.begin());
}

double ProbabilityTable::at(std::span<const int> assignment) const {
  if (assignment.size() != cards_.size()) throw ShapeError("assignment length mismatch");
  std::size_t flat = 0;
  for (std::size_t k = 0; k < cards_.size(); ++k) {
    if (assignment[k] < 0 || assignment[k] >= cards_[k]) {
      throw ValueOutOfRange("value " + std::to_string(assignment[k]) + " for '" + names_[k] + "'");
    }
    flat = flat * static_cast<std::size_t>(cards_[k]) + static_cast<std::size_t>(assignment[k]);
  }
  return probs_[flat];
}

double ProbabilityTable::total_mass() const {
  // Neumaier summation; tables reach 10^7 entries.
  double sum = 0.0, comp = 0.0;
  for (double p : probs_) {
    const double t = sum + p;
    comp += std::abs(sum) >= std::abs(p) ? (sum - t) + p : (p - t) + sum;
    sum = t;
  }
  return sum + comp;
}

ProbabilityTable ProbabilityTable::marginal(const std::vector<std::string>& keep) const {
  std::vector<std::size_t> pos;
  std::vector<int> out_cards;
  for (const auto& n : keep) {
    pos.push_back(index_of(n));
    out_cards.push_back(cards_[pos.back()]);
  }
  std::vector<double> out(lattice_size(out_cards), 0.0);
  std::vector<int> digits(cards_.size(), 0);
  for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < pos.size(); ++k) {
      o = o * static_cast<std::size_t>(out_cards[k]) + static_cast<std::size_t>(digits[pos[k]]);
    }
    out[o] += probs_[flat];
    next_assignment(digits, cards_);
  }
  return ProbabilityTable(keep, out_cards, std::move(out));
}

std::size_t ConditionalTable::rows() const { return lattice_size(given_cards); }

// ----------------------------------------------------------------------------
// DiscreteScm

int DiscreteScm::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UnknownVariable("'" + name + "' is not a model variable");
  return it->second;
}

bool DiscreteScm::has(const std::string& name) const { return index_.count(name) != 0; }

bool DiscreteScm::has_edge(const std::string& from, const std::string& to) const {
  const auto& ps = parents(index(to));
  return std::find(ps.begin(), ps.end(), index(from)) != ps.end();
}

std::size_t DiscreteScm::state_space() const {
  std::size_t n = 1;
  for (const auto& v : vars_) {
    if (n > (kMaxJointStates * 1000) / static_cast<std::size_t>(v.card)) return SIZE_MAX;
    n *= static_cast<std::size_t>(v.card);
  }
  return n;
}

ScmSpec DiscreteScm::to_spec() const {
  ScmSpec spec;
  spec.variables = vars_;
  for (std::size_t v = 0; v < vars_.size(); ++v) {
    auto& ps = spec.parents[vars_[v].name];
    for (int p : dag_.parents[v]) ps.push_back(vars_[static_cast<std::size_t>(p)].name);
    spec.cpts[vars_[v].name] = cpts_[v];
  }
  return spec;
}

DiscreteScm build_scm(const ScmSpec& spec) {
  DiscreteScm scm;
  if (spec.variables.empty()) throw CptError("model has no variables");
  for (const auto& v : spec.variables) {
    if (v.card < 2) throw CptError("variable '" + v.name + "' needs cardinality >= 2");
    if (!scm.index_.emplace(v.name, static_cast<int>(scm.vars_.size())).second) {
      throw CptError("duplicate variable '" + v.name + "'");
    }
    scm.vars_.push_back(v);
  }
  for (const auto& [child, _] : spec.parents) {
    if (!scm.has(child)) throw UnknownVariable("parent list for undeclared '" + child + "'");
  }
  for (const auto& [child, _] : spec.cpts) {
    if (!scm.has(child)) throw UnknownVariable("CPT for undeclared '" + child + "'");
  }

  const std::size_t n = scm.vars_.size();
  scm.dag_.parents.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    auto it = spec.parents.find(scm.vars_[v].name);
    if (it == spec.parents.end()) continue;
    for (const auto& p : it->second) {
      if (!scm.has(p)) {
        throw UnknownVariable("parent '" + p + "' of '" + scm.vars_[v].name + "' does not exist");
      }
      scm.dag_.parents[v].push_back(scm.index(p));
    }
  }

  // Kahn's algorithm, lowest declaration index first among ready nodes.
  std::vector<int> indegree(n, 0);
  std::vector<std::vector<int>> children(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (int p : scm.dag_.parents[v]) {
      ++indegree[v];
      children[static_cast<std::size_t>(p)].push_back(static_cast<int>(v));
    }
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (std::size_t v = 0; v < n; ++v) {
    if (indegree[v] == 0) ready.push(static_cast<int>(v));
  }
  while (!ready.empty()) {
    int v = ready.top();
    ready.pop();
    scm.topo_.push_back(v);
    for (int c : children[static_cast<std::size_t>(v)]) {
      if (--indegree[static_cast<std::size_t>(c)] == 0) ready.push(c);
    }
  }
  if (scm.topo_.size() != n) throw CycleError("parent graph contains a directed cycle");

  scm.cpts_.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    const auto& name = scm.vars_[v].name;
    auto it = spec.cpts.find(name);
    if (it == spec.cpts.end()) throw CptError("missing CPT for '" + name + "'");
    std::size_t rows = 1;
    for (int p : scm.dag_.parents[v]) rows *= static_cast<std::size_t>(scm.card(p));
    const auto card = static_cast<std::size_t>(scm.vars_[v].card);
    if (it->second.size() != rows * card) {
      throw CptError("CPT for '" + name + "' has " + std::to_string(it->second.size()) +
                     " entries, expected " + std::to_string(rows * card));
    }
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (std::size_t a = 0; a < card; ++a) {
        double p = it->second[r * card + a];
        if (!(p >= 0.0) || !std::isfinite(p)) {
          throw CptError("CPT for '" + name + "' has a negative or non-finite entry");
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > kCptTolerance) {
        throw CptError("CPT row " + std::to_string(r) + " of '" + name + "' sums to " +
                       std::to_string(sum));
      }
    }
    scm.cpts_[v] = it->second;
  }
  return scm;
}

// ----------------------------------------------------------------------------
// Enumeration

ProbabilityTable joint_distribution(const DiscreteScm& scm, std::size_t max_states) {
  const std::size_t n = scm.num_variables();
  const std::size_t states = scm.state_space();
  if (states > max_states) {
    throw StateSpaceError("joint has " +
                          (states == SIZE_MAX ? std::string("too many") : std::to_string(states)) +
                          " assignments, limit is " + std::to_string(max_states));
  }
  std::vector<int> cards(n);
  std::vector<std::string> names(n);
  for (std::size_t v = 0; v < n; ++v) {
    cards[v] = scm.card(static_cast<int>(v));
    names[v] = scm.name(static_cast<int>(v));
  }

  // Per-variable row strides so the CPT row index is a dot product.
  std::vector<std::vector<std::size_t>> strides(n);
  for (std::size_t v = 0; v < n; ++v) {
    const auto& ps = scm.parents(static_cast<int>(v));
    strides[v].resize(ps.size());
    std::size_t s = 1;
    for (std::size_t k = ps.size(); k-- > 0;) {
      strides[v][k] = s;
      s *= static_cast<std::size_t>(scm.card(ps[k]));
    }
  }

  const bool log_space = n > 20;
  std::vector<double> probs(states);
  std::vector<int> digits(n, 0);
  for (std::size_t flat = 0; flat < states; ++flat) {
    double acc = log_space ? 0.0 : 1.0;
    for (std::size_t v = 0; v < n; ++v) {
      const auto& ps = scm.parents(static_cast<int>(v));
      std::size_t row = 0;
      for (std::size_t k = 0; k < ps.size(); ++k) {
        row += strides[v][k] * static_cast<std::size_t>(digits[static_cast<std::size_t>(ps[k])]);
      }
      double p = scm.cpt(static_cast<int>(v))[row * static_cast<std::size_t>(cards[v]) +
                                              static_cast<std::size_t>(digits[v])];
      if (log_space) {
        acc += p > 0.0 ? std::log(p) : -INFINITY;
      } else {
        acc *= p;
        if (acc == 0.0) break;
      }
    }
    probs[flat] = log_space ? std::exp(acc) : acc;
    next_assignment(digits, cards);
  }
  return ProbabilityTable(std::move(names), std::move(cards), std::move(probs));
}

DiscreteScm intervene(const DiscreteScm& scm, const std::map<std::string, int>& assignment) {
  ScmSpec spec = scm.to_spec();
  for (const auto& [name, value] : assignment) {
    int v = scm.index(name);
    if (value < 0 || value >= scm.card(v)) {
      throw ValueOutOfRange("do(" + name + "=" + std::to_string(value) + ") outside cardinality " +
                            std::to_string(scm.card(v)));
    }
    spec.parents[name].clear();
    std::vector<double> point(static_cast<std::size_t>(scm.card(v)), 0.0);
    point[static_cast<std::size_t>(value)] = 1.0;
    spec.cpts[name] = std::move(point);
  }
  return build_scm(spec);
}

ConditionalTable conditional(const ProbabilityTable& table, const std::vector<std::string>& given,
                             const std::string& outcome) {
  std::vector<std::string> keep = given;
  keep.push_back(outcome);
  ProbabilityTable m = table.marginal(keep);
  ConditionalTable out;
  out.given = given;
  out.given_cards.assign(m.cards().begin(), m.cards().end() - 1);
  out.outcome = outcome;
  out.outcome_card = m.cards().back();
  out.probs = m.probs();
  const auto k = static_cast<std::size_t>(out.outcome_card);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double z = 0.0;
    for (std::size_t a = 0; a < k; ++a) z += out.probs[r * k + a];
    if (z <= 0.0) {
      throw PositivityError("conditioning event row " + std::to_string(r) + " has zero mass");
    }
    for (std::size_t a = 0; a < k; ++a) out.probs[r * k + a] /= z;
  }
  return out;
}

ConditionalTable interventional(const DiscreteScm& scm, const std::vector<std::string>& treatments,
                                const std::string& outcome) {
  ConditionalTable out;
  out.given = treatments;
  for (const auto& t : treatments) out.given_cards.push_back(scm.card(scm.index(t)));
  out.outcome = outcome;
  out.outcome_card = scm.card(scm.index(outcome));
  out.probs.reserve(out.rows() * static_cast<std::size_t>(out.outcome_card));

  std::vector<int> digits(treatments.size(), 0);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    std::map<std::string, int> assignment;
    for (std::size_t k = 0; k < treatments.size(); ++k) assignment[treatments[k]] = digits[k];
    ProbabilityTable joint = joint_distribution(intervene(scm, assignment));
    ProbabilityTable pa = joint.marginal({outcome});
    out.probs.insert(out.probs.end(), pa.probs().begin(), pa.probs().end());
    next_assignment(digits, out.given_cards);
  }
  return out;
}

// ----------------------------------------------------------------------------
// Graph criteria

bool directed_path_exists(const Dag& dag, const std::vector<int>& from, const std::vector<int>& to,
                          const std::vector<int>& blocked) {
  const std::size_t n = dag.size();
  std::vector<std::vector<int>> children(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (int p : dag.parents[v]) children[static_cast<std::size_t>(p)].push_back(static_cast<int>(v));
  }
  std::vector<char> is_blocked(n, 0), is_target(n, 0), seen(n, 0);
  for (int b : blocked) is_blocked[static_cast<std::size_t>(b)] = 1;
  for (int t : to) is_target[static_cast<std::size_t>(t)] = 1;
  std::vector<int> stack;
  for (int f : from) {
    stack.push_back(f);
    seen[static_cast<std::size_t>(f)] = 1;
  }
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int c : children[static_cast<std::size_t>(v)]) {
      const auto cu = static_cast<std::size_t>(c);
      if (is_target[cu]) return true;
      if (is_blocked[cu] || seen[cu]) continue;
      seen[cu] = 1;
      stack.push_back(c);
    }
  }
  return false;
}

bool d_separated(const Dag& dag, const std::vector<int>& xs, const std::vector<int>& ys,
                 const std::vector<int>& zs) {
  const std::size_t n = dag.size();
  std::vector<std::vector<int>> children(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (int p : dag.parents[v]) children[static_cast<std::size_t>(p)].push_back(static_cast<int>(v));
  }
  std::vector<char> in_z(n, 0), anc_z(n, 0);
  for (int z : zs) in_z[static_cast<std::size_t>(z)] = 1;

  // Ancestors of Z (including Z) decide whether colliders open.
  std::vector<int> stack(zs.begin(), zs.end());
  for (int z : zs) anc_z[static_cast<std::size_t>(z)] = 1;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int p : dag.parents[static_cast<std::size_t>(v)]) {
      if (!anc_z[static_cast<std::size_t>(p)]) {
        anc_z[static_cast<std::size_t>(p)] = 1;
        stack.push_back(p);
      }
    }
  }

  // Walk over (node, arrived-from-child) pairs.
  std::vector<char> visited_up(n, 0), visited_down(n, 0), reachable(n, 0);
  std::vector<std::pair<int, bool>> frontier;
  for (int x : xs) frontier.emplace_back(x, true);
  while (!frontier.empty()) {
    auto [v, up] = frontier.back();
    frontier.pop_back();
    const auto vu = static_cast<std::size_t>(v);
    auto& visited = up ? visited_up : visited_down;
    if (visited[vu]) continue;
    visited[vu] = 1;
    if (!in_z[vu]) reachable[vu] = 1;
    if (up && !in_z[vu]) {
      for (int p : dag.parents[vu]) frontier.emplace_back(p, true);
      for (int c : children[vu]) frontier.emplace_back(c, false);
    } else if (!up) {
      if (!in_z[vu]) {
        for (int c : children[vu]) frontier.emplace_back(c, false);
      }
      if (anc_z[vu]) {
        for (int p : dag.parents[vu]) frontier.emplace_back(p, true);
      }
    }
  }
  for (int y : ys) {
    if (reachable[static_cast<std::size_t>(y)]) return false;
  }
  return true;
}

void check_frontdoor_criterion(const DiscreteScm& scm, const std::vector<std::string>& treatments,
                               const std::vector<std::string>& mediators,
                               const std::string& outcome) {
  if (treatments.empty() || mediators.empty()) {
    throw CriterionError("treatment and mediator sets must be non-empty");
  }
  require_disjoint(treatments, mediators, "treatments and mediators");
  require_disjoint({outcome}, treatments, "outcome and treatments");
  require_disjoint({outcome}, mediators, "outcome and mediators");

  const auto xs = indices_of(scm, treatments);
  const auto ms = indices_of(scm, mediators);
  const std::vector<int> ys{scm.index(outcome)};

  if (directed_path_exists(scm.dag(), xs, ys, ms)) {
    throw CriterionError("a directed treatment->outcome path bypasses the mediators");
  }

  // No open back-door path from treatments into mediators.
  Dag cut_x = scm.dag();
  for (auto& ps : cut_x.parents) {
    std::erase_if(ps, [&](int p) { return std::find(xs.begin(), xs.end(), p) != xs.end(); });
  }
  if (!d_separated(cut_x, xs, ms, {})) {
    throw CriterionError("an unblocked back-door path connects treatments and mediators");
  }

  // Every back-door path from mediators to the outcome is blocked by the treatments.
  Dag cut_m = scm.dag();
  for (auto& ps : cut_m.parents) {
    std::erase_if(ps, [&](int p) { return std::find(ms.begin(), ms.end(), p) != ms.end(); });
  }
  if (!d_separated(cut_m, ms, ys, xs)) {
    throw CriterionError("a back-door path from mediators to the outcome is not blocked by the treatments");
  }
}

ConditionalTable frontdoor_estimate(const DiscreteScm& scm,
                                    const std::vector<std::string>& treatments,
                                    const std::vector<std::string>& mediators,
                                    const std::string& outcome) {
  check_frontdoor_criterion(scm, treatments, mediators, outcome);

  // Observational joint over X, M, A only; everything else is marginalized.
  std::vector<std::string> keep = treatments;
  keep.insert(keep.end(), mediators.begin(), mediators.end());
  keep.push_back(outcome);
  const ProbabilityTable obs = joint_distribution(scm).marginal(keep);

  std::vector<int> x_cards, m_cards;
  for (const auto& t : treatments) x_cards.push_back(scm.card(scm.index(t)));
  for (const auto& m : mediators) m_cards.push_back(scm.card(scm.index(m)));
  const std::size_t nx = lattice_size(x_cards);
  const std::size_t nm = lattice_size(m_cards);
  const auto na = static_cast<std::size_t>(scm.card(scm.index(outcome)));

  // obs is laid out as [x][m][a] with a fastest.
  const auto& p = obs.probs();
  auto at = [&](std::size_t x, std::size_t m, std::size_t a) { return p[(x * nm + m) * na + a]; };

  std::vector<double> px(nx, 0.0), pxm(nx * nm, 0.0);
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t m = 0; m < nm; ++m) {
      for (std::size_t a = 0; a < na; ++a) pxm[x * nm + m] += at(x, m, a);
      px[x] += pxm[x * nm + m];
    }
  }

  // inner[m][a] = sum_x' P(a | m, x') P(x')
  std::vector<double> inner(nm * na, 0.0);
  std::vector<char> inner_defined(nm, 1);
  for (std::size_t m = 0; m < nm; ++m) {
    for (std::size_t x2 = 0; x2 < nx; ++x2) {
      if (px[x2] <= 0.0) continue;
      if (pxm[x2 * nm + m] <= 0.0) {
        inner_defined[m] = 0;
        break;
      }
      for (std::size_t a = 0; a < na; ++a) {
        inner[m * na + a] += at(x2, m, a) / pxm[x2 * nm + m] * px[x2];
      }
    }
  }

  ConditionalTable out;
  out.given = treatments;
  out.given_cards = x_cards;
  out.outcome = outcome;
  out.outcome_card = static_cast<int>(na);
  out.probs.assign(nx * na, 0.0);
  for (std::size_t x = 0; x < nx; ++x) {
    if (px[x] <= 0.0) {
      throw PositivityError("treatment assignment " + std::to_string(x) + " has zero probability");
    }
    for (std::size_t m = 0; m < nm; ++m) {
      const double pm_given_x = pxm[x * nm + m] / px[x];
      if (pm_given_x <= 0.0) continue;
      if (!inner_defined[m]) {
        throw PositivityError("mediator assignment " + std::to_string(m) +
                              " is impossible under some treatment value");
      }
      for (std::size_t a = 0; a < na; ++a) out.probs[x * na + a] += pm_given_x * inner[m * na + a];
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Information measures

double entropy(const ProbabilityTable& table, const std::string& x) {
  ProbabilityTable m = table.marginal({x});
  double h = 0.0;
  for (double p : m.probs()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double mutual_information(const ProbabilityTable& table, const std::string& x,
                          const std::string& y) {
  if (x == y) return entropy(table, x);
  // Canonical argument order makes I(X;Y) and I(Y;X) bit-identical.
  const bool swap = table.index_of(x) > table.index_of(y);
  ProbabilityTable pxy = swap ? table.marginal({y, x}) : table.marginal({x, y});
  const auto nx = static_cast<std::size_t>(pxy.cards()[0]);
  const auto ny = static_cast<std::size_t>(pxy.cards()[1]);
  std::vector<double> px(nx, 0.0), py(ny, 0.0);
  const auto& p = pxy.probs();
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      px[i] += p[i * ny + j];
      py[j] += p[i * ny + j];
    }
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      const double pij = p[i * ny + j];
      if (pij > 0.0) mi += pij * std::log(pij / (px[i] * py[j]));
    }
  }
  return std::max(mi, 0.0);
}

}  // namespace cvqa::scm
