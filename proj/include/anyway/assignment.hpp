#pragma once

#include <span>
#include <string>
#include <vector>

#include "anyway/matrix.hpp"
#include "anyway/nn.hpp"
#include "anyway/rng.hpp"

namespace anyway {

/// J = floor(O/N) disjoint vectors mapping numeric labels 1..N onto output nodes 1..O.
/// vectors[j][i] is the node (1-indexed) that carries numeric label i+1 under assignment j.
struct AssignmentSet {
  std::size_t O = 0;
  std::size_t N = 0;
  std::size_t J = 0;
  std::vector<std::vector<std::size_t>> vectors;

  std::size_t unassigned_count() const { return O - J * N; }
  /// Node indices (1-indexed, ascending) that appear in no vector.
  std::vector<std::size_t> unassigned_nodes() const;

  /// Throws DomainError describing the first violated invariant.
  void validate() const;

  /// "O N J ; s1 ; s2 ; ..." with 1-indexed entries.
  std::string to_line() const;
  static AssignmentSet from_line(const std::string& line);

  bool operator==(const AssignmentSet&) const = default;
};

/// One uniform permutation of 1..O chopped into J consecutive blocks of N.
AssignmentSet generate_assignments(std::size_t O, std::size_t N, Rng& rng);

/// The single assignment [1, 2, ..., N] over a width-N head.
AssignmentSet identity_assignment(std::size_t N);

/// out[i] = v[s[i]] (1-indexed s).
std::vector<double> extract(std::span<const std::size_t> s, std::span<const double> v);
/// Row-wise extract over a B×O logit matrix.
Matrix extract_columns(std::span<const std::size_t> s, const Matrix& logits);

/// Sum over assignments of the mean soft-target cross-entropy on the extracted logits.
/// dlogits is zero on every unassigned node column.
LossResult any_way_loss(const AssignmentSet& aset, const Matrix& logits, const Matrix& targets);

/// Cross-entropy on the full width of a head whose label-to-node map is the single
/// permutation `node_of_label` (fixed-way training; the head width equals N).
LossResult fixed_way_loss(std::span<const std::size_t> node_of_label, const Matrix& logits,
                          const Matrix& targets);

enum class EnsembleMethod { original, softmax, max };

EnsembleMethod parse_ensemble_method(const std::string& name);
std::string to_string(EnsembleMethod method);

/// Aggregates per-assignment extracted logits into a B×N ensembled logit.
/// `members` limits the ensemble to the first `members` assignments (0 = all J).
Matrix ensembled_logit(const AssignmentSet& aset, const Matrix& logits, EnsembleMethod method,
                       std::size_t members = 0);

/// Folds one partial ensemble into an accumulator: sum for original/softmax, elementwise
/// max for max. An empty accumulator takes `part` as is.
void accumulate_ensemble(Matrix& acc, const Matrix& part, EnsembleMethod method);

/// Argmax per row as a 1-indexed label; ties go to the lowest label.
std::vector<int> predict(const Matrix& ensembled);

}  // namespace anyway
