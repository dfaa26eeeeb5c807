#pragma once

#include <optional>
#include <string>
#include <vector>

#include "anyway/matrix.hpp"
#include "anyway/rng.hpp"

namespace anyway {

struct SemanticClass {
  std::string name;
  Matrix examples;  // count x d
};

/// Pool of M semantic classes. Semantic class ids are 1-indexed positions in `classes`.
struct MotherDataset {
  std::size_t feature_dim = 0;
  std::vector<SemanticClass> classes;

  std::size_t class_count() const { return classes.size(); }
  std::size_t example_count() const;
  /// Every class has d columns; throws ValidationError otherwise.
  void validate() const;
  bool bit_equal(const MotherDataset& other) const;
};

/// Classes [first, first+count) as a new dataset (used for train/val/test splits).
MotherDataset slice_classes(const MotherDataset& ds, std::size_t first, std::size_t count);

struct EpisodeSpec {
  std::vector<std::size_t> cardinality_pool{3, 5, 7, 9};
  std::size_t shots = 1;
  std::size_t queries = 15;
  std::optional<std::size_t> fixed_n;

  std::size_t max_cardinality() const;
  void validate(std::size_t output_width) const;
};

/// One episode. Labels are 1..N; numeric_to_semantic[n-1] is the 1-indexed semantic class
/// carried by numeric label n.
struct Task {
  std::size_t N = 0;
  Matrix support_x;
  std::vector<int> support_y;
  Matrix query_x;
  std::vector<int> query_y;
  std::vector<std::size_t> numeric_to_semantic;

  std::size_t semantic_of(int label) const { return numeric_to_semantic.at(label - 1); }
};

std::size_t sample_cardinality(const EpisodeSpec& spec, Rng& rng);

/// N distinct classes without replacement, a random label bijection, and K+Q distinct
/// examples per class split into support (K) and query (Q). Rows are grouped by label.
Task sample_task(const MotherDataset& ds, std::size_t N, std::size_t K, std::size_t Q, Rng& rng);

/// Independent tasks, each with its own cardinality drawn from the spec.
std::vector<Task> batch_tasks(const MotherDataset& ds, const EpisodeSpec& spec,
                              std::size_t batch_size, Rng& rng);

}  // namespace anyway
