#include "anyway/episodes.hpp"

#include <algorithm>
#include <numeric>

#include "anyway/errors.hpp"

namespace anyway {

namespace {

/// First `k` entries of a partial Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace

std::size_t MotherDataset::example_count() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.examples.rows();
  return n;
}

void MotherDataset::validate() const {
  for (const auto& c : classes) {
    if (c.examples.cols() != feature_dim) {
      throw ValidationError("class '" + c.name + "' has dimension " +
                            std::to_string(c.examples.cols()) + ", dataset has " +
                            std::to_string(feature_dim));
    }
  }
}

bool MotherDataset::bit_equal(const MotherDataset& other) const {
  if (feature_dim != other.feature_dim || classes.size() != other.classes.size()) return false;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].name != other.classes[i].name ||
        !classes[i].examples.bit_equal(other.classes[i].examples)) {
      return false;
    }
  }
  return true;
}

MotherDataset slice_classes(const MotherDataset& ds, std::size_t first, std::size_t count) {
  if (first + count > ds.class_count()) {
    throw SamplingError("slice_classes: range exceeds " + std::to_string(ds.class_count()) +
                        " classes");
  }
  MotherDataset out;
  out.feature_dim = ds.feature_dim;
  out.classes.assign(ds.classes.begin() + static_cast<std::ptrdiff_t>(first),
                     ds.classes.begin() + static_cast<std::ptrdiff_t>(first + count));
  return out;
}

std::size_t EpisodeSpec::max_cardinality() const {
  if (fixed_n) return *fixed_n;
  if (cardinality_pool.empty()) return 0;
  return *std::max_element(cardinality_pool.begin(), cardinality_pool.end());
}

void EpisodeSpec::validate(std::size_t output_width) const {
  if (shots < 1) throw ConfigError("shots must be at least 1");
  if (queries < 1) throw ConfigError("queries must be at least 1");
  if (!fixed_n && cardinality_pool.empty()) throw ConfigError("cardinality pool is empty");
  for (std::size_t n : cardinality_pool) {
    if (n < 1) throw ConfigError("cardinality pool entries must be at least 1");
  }
  if (max_cardinality() > output_width) {
    throw ConfigError("cardinality " + std::to_string(max_cardinality()) +
                      " exceeds output width O=" + std::to_string(output_width));
  }
}

std::size_t sample_cardinality(const EpisodeSpec& spec, Rng& rng) {
  if (spec.fixed_n) return *spec.fixed_n;
  if (spec.cardinality_pool.empty()) throw ConfigError("cardinality pool is empty");
  return spec.cardinality_pool[uniform_index(rng, spec.cardinality_pool.size())];
}

Task sample_task(const MotherDataset& ds, std::size_t N, std::size_t K, std::size_t Q, Rng& rng) {
  if (N < 1) throw SamplingError("task cardinality must be at least 1");
  if (ds.class_count() < N) {
    throw SamplingError("cannot draw " + std::to_string(N) + " classes from a dataset of " +
                        std::to_string(ds.class_count()));
  }
  const auto chosen = sample_without_replacement(ds.class_count(), N, rng);
  // chosen[i] receives numeric label labels[i]
  std::vector<std::size_t> labels = sample_without_replacement(N, N, rng);

  Task t;
  t.N = N;
  t.numeric_to_semantic.assign(N, 0);
  std::vector<std::size_t> class_of_label(N);
  for (std::size_t i = 0; i < N; ++i) {
    t.numeric_to_semantic[labels[i]] = chosen[i] + 1;
    class_of_label[labels[i]] = chosen[i];
  }

  const std::size_t d = ds.feature_dim;
  t.support_x = Matrix(N * K, d);
  t.query_x = Matrix(N * Q, d);
  t.support_y.reserve(N * K);
  t.query_y.reserve(N * Q);
  for (std::size_t n = 0; n < N; ++n) {
    const auto& cls = ds.classes[class_of_label[n]];
    if (cls.examples.rows() < K + Q) {
      throw SamplingError("class '" + cls.name + "' has " + std::to_string(cls.examples.rows()) +
                          " examples, episode needs " + std::to_string(K + Q));
    }
    const auto picks = sample_without_replacement(cls.examples.rows(), K + Q, rng);
    for (std::size_t k = 0; k < K + Q; ++k) {
      auto src = cls.examples.row(picks[k]);
      if (k < K) {
        std::copy(src.begin(), src.end(), t.support_x.row(n * K + k).begin());
        t.support_y.push_back(static_cast<int>(n + 1));
      } else {
        std::copy(src.begin(), src.end(), t.query_x.row(n * Q + (k - K)).begin());
        t.query_y.push_back(static_cast<int>(n + 1));
      }
    }
  }
  return t;
}

std::vector<Task> batch_tasks(const MotherDataset& ds, const EpisodeSpec& spec,
                              std::size_t batch_size, Rng& rng) {
  std::vector<Task> tasks;
  tasks.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t n = sample_cardinality(spec, rng);
    tasks.push_back(sample_task(ds, n, spec.shots, spec.queries, rng));
  }
  return tasks;
}

}  // namespace anyway
