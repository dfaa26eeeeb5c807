#include "anyway/assignment.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "anyway/errors.hpp"

namespace anyway {

std::vector<std::size_t> AssignmentSet::unassigned_nodes() const {
  std::vector<bool> used(O + 1, false);
  for (const auto& s : vectors) {
    for (std::size_t node : s) {
      if (node >= 1 && node <= O) used[node] = true;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t node = 1; node <= O; ++node) {
    if (!used[node]) out.push_back(node);
  }
  return out;
}

void AssignmentSet::validate() const {
  if (N == 0 || N > O) throw DomainError("assignment: need 1 <= N <= O");
  if (J != O / N) throw DomainError("assignment: J != floor(O/N)");
  if (vectors.size() != J) throw DomainError("assignment: vector count != J");
  std::vector<bool> used(O + 1, false);
  for (const auto& s : vectors) {
    if (s.size() != N) throw DomainError("assignment: vector length != N");
    for (std::size_t node : s) {
      if (node < 1 || node > O) throw DomainError("assignment: node index outside 1..O");
      if (used[node]) throw DomainError("assignment: node " + std::to_string(node) + " reused");
      used[node] = true;
    }
  }
}

std::string AssignmentSet::to_line() const {
  std::ostringstream os;
  os << O << ' ' << N << ' ' << J;
  for (const auto& s : vectors) {
    os << " ;";
    for (std::size_t node : s) os << ' ' << node;
  }
  return os.str();
}

AssignmentSet AssignmentSet::from_line(const std::string& line) {
  std::istringstream is(line);
  AssignmentSet a;
  if (!(is >> a.O >> a.N >> a.J)) throw ValidationError("assignment line: bad header");
  std::string token;
  while (is >> token) {
    if (token == ";") {
      a.vectors.emplace_back();
      continue;
    }
    if (a.vectors.empty()) throw ValidationError("assignment line: entry before ';'");
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(token, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != token.size()) throw ValidationError("assignment line: bad entry '" + token + "'");
    a.vectors.back().push_back(v);
  }
  a.validate();
  return a;
}

AssignmentSet generate_assignments(std::size_t O, std::size_t N, Rng& rng) {
  if (N == 0) throw DomainError("generate_assignments: N must be at least 1");
  if (N > O) {
    throw DomainError("generate_assignments: N=" + std::to_string(N) + " exceeds O=" +
                      std::to_string(O));
  }
  std::vector<std::size_t> perm(O);
  std::iota(perm.begin(), perm.end(), std::size_t{1});
  // Fisher-Yates
  for (std::size_t i = O; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);

  AssignmentSet a;
  a.O = O;
  a.N = N;
  a.J = O / N;
  for (std::size_t j = 0; j < a.J; ++j) {
    a.vectors.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(j * N),
                           perm.begin() + static_cast<std::ptrdiff_t>((j + 1) * N));
  }
  return a;
}

AssignmentSet identity_assignment(std::size_t N) {
  if (N == 0) throw DomainError("identity_assignment: N must be at least 1");
  AssignmentSet a;
  a.O = a.N = N;
  a.J = 1;
  a.vectors.emplace_back(N);
  std::iota(a.vectors[0].begin(), a.vectors[0].end(), std::size_t{1});
  return a;
}

std::vector<double> extract(std::span<const std::size_t> s, std::span<const double> v) {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 1 || s[i] > v.size()) {
      throw DomainError("extract: index " + std::to_string(s[i]) + " outside 1.." +
                        std::to_string(v.size()));
    }
    out[i] = v[s[i] - 1];
  }
  return out;
}

Matrix extract_columns(std::span<const std::size_t> s, const Matrix& logits) {
  Matrix out(logits.rows(), s.size());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = extract(s, logits.row(r));
    std::copy(row.begin(), row.end(), out.row(r).begin());
  }
  return out;
}

LossResult any_way_loss(const AssignmentSet& aset, const Matrix& logits, const Matrix& targets) {
  if (logits.cols() != aset.O) {
    throw DimensionError("any_way_loss: logits have " + std::to_string(logits.cols()) +
                         " columns, assignment width is " + std::to_string(aset.O));
  }
  require_shape(targets, logits.rows(), aset.N, "any_way_loss targets");
  LossResult out{0.0, Matrix(logits.rows(), aset.O)};
  for (const auto& s : aset.vectors) {
    LossResult part = softmax_cross_entropy(extract_columns(s, logits), targets);
    out.loss += part.loss;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      for (std::size_t i = 0; i < s.size(); ++i) out.dlogits(r, s[i] - 1) = part.dlogits(r, i);
    }
  }
  return out;
}

LossResult fixed_way_loss(std::span<const std::size_t> node_of_label, const Matrix& logits,
                          const Matrix& targets) {
  const std::size_t n = node_of_label.size();
  if (logits.cols() != n) {
    throw DimensionError("fixed_way_loss: head width " + std::to_string(logits.cols()) +
                         " != N=" + std::to_string(n));
  }
  require_shape(targets, logits.rows(), n, "fixed_way_loss targets");
  Matrix node_targets(targets.rows(), n);
  for (std::size_t r = 0; r < targets.rows(); ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      if (node_of_label[i] < 1 || node_of_label[i] > n) {
        throw DomainError("fixed_way_loss: node index out of range");
      }
      node_targets(r, node_of_label[i] - 1) = targets(r, i);
    }
  }
  return softmax_cross_entropy(logits, node_targets);
}

EnsembleMethod parse_ensemble_method(const std::string& name) {
  if (name == "original") return EnsembleMethod::original;
  if (name == "softmax") return EnsembleMethod::softmax;
  if (name == "max") return EnsembleMethod::max;
  throw ConfigError("unknown ensemble method '" + name + "' (expected original|softmax|max)");
}

std::string to_string(EnsembleMethod method) {
  switch (method) {
    case EnsembleMethod::original:
      return "original";
    case EnsembleMethod::softmax:
      return "softmax";
    case EnsembleMethod::max:
      return "max";
  }
  return "?";
}

void accumulate_ensemble(Matrix& acc, const Matrix& part, EnsembleMethod method) {
  if (acc.empty()) {
    acc = part;
    return;
  }
  if (!acc.same_shape(part)) throw DimensionError("accumulate_ensemble: shape mismatch");
  auto& a = acc.data();
  const auto& p = part.data();
  for (std::size_t k = 0; k < a.size(); ++k) {
    a[k] = method == EnsembleMethod::max ? std::max(a[k], p[k]) : a[k] + p[k];
  }
}

Matrix ensembled_logit(const AssignmentSet& aset, const Matrix& logits, EnsembleMethod method,
                       std::size_t members) {
  if (logits.cols() != aset.O) throw DimensionError("ensembled_logit: logit width != O");
  const std::size_t count = members == 0 ? aset.J : std::min(members, aset.J);
  Matrix acc;
  for (std::size_t j = 0; j < count; ++j) {
    Matrix part = extract_columns(aset.vectors[j], logits);
    if (method == EnsembleMethod::softmax) part = softmax_rows(part);
    accumulate_ensemble(acc, part, method);
  }
  return acc;
}

std::vector<int> predict(const Matrix& ensembled) {
  std::vector<int> labels(ensembled.rows());
  for (std::size_t r = 0; r < ensembled.rows(); ++r) {
    auto row = ensembled.row(r);
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
      if (row[k] > row[best]) best = k;
    }
    labels[r] = static_cast<int>(best) + 1;
  }
  return labels;
}

}  // namespace anyway
