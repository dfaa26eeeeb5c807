#include <doctest.h>

#include <cmath>
#include <set>

#include "anyway/errors.hpp"
#include "anyway/maml.hpp"
#include "anyway/semantic.hpp"
#include "anyway/synth.hpp"
#include "oracles.hpp"

using namespace anyway;

namespace {

MotherDataset small_mother(std::size_t classes = 8) {
  SynthSpec spec;
  spec.classes = classes;
  spec.dim = 6;
  spec.per_class = 12;
  return make_gaussian_mother(spec);
}

}  // namespace

TEST_CASE("semantic_loss") {
  Rng rng(2);
  SUBCASE("uniform logits over C=10") {
    LinearHead head = LinearHead::create(4, 10, rng);
    head.weight.fill(0.0);
    Matrix t(1, 10);
    t(0, 6) = 1.0;
    CHECK(semantic_loss(head, Matrix(1, 4, 0.3), t).loss == doctest::Approx(std::log(10.0)).epsilon(1e-15));
  }
  SUBCASE("head gradients match finite differences") {
    LinearHead head = LinearHead::create(5, 7, rng);
    Matrix f(4, 5);
    for (double& v : f.data()) v = uniform_unit(rng) - 0.5;
    Matrix t(4, 7);
    for (std::size_t r = 0; r < 4; ++r) {
      t(r, r) = 0.3;
      t(r, r + 2) = 0.7;
    }
    const auto res = semantic_loss(head, f, t);
    std::vector<Matrix*> params{&head.weight, &head.bias, &f};
    const auto fd = finite_diff_grad([&] { return semantic_loss(head, f, t).loss; }, params);
    CHECK(max_relative_error(res.d_weight, fd.blocks[0]) < 1e-4);
    CHECK(max_relative_error(res.d_bias, fd.blocks[1]) < 1e-4);
    CHECK(max_relative_error(res.d_features, fd.blocks[2]) < 1e-4);
  }
  SUBCASE("invalid targets") {
    LinearHead head = LinearHead::create(2, 3, rng);
    CHECK_THROWS_AS(semantic_loss(head, Matrix(1, 2), Matrix{{0.2, 0.2, 0.2}}), ValidationError);
  }
}

TEST_CASE("combine_losses") {
  CHECK(combine_losses(1.7, 123.0, 0.0) == 1.7);
  CHECK(combine_losses(1.0, 1.0, 1.0) == 2.0);
  CHECK(combine_losses(2.0, 0.8, 0.5) == doctest::Approx(2.4).epsilon(1e-15));
}

TEST_CASE("Beta(0.5, 0.5) sampling") {
  Rng rng(10);
  std::vector<double> draws;
  for (int i = 0; i < 10000; ++i) {
    const double m = sample_symmetric_beta(0.5, rng);
    REQUIRE(m >= 0.0);
    REQUIRE(m <= 1.0);
    draws.push_back(m);
  }
  CHECK(std::abs(oracle::mean(draws) - 0.5) <= 0.02);
  // arcsine law: variance 1/8
  const double sd = oracle::sample_std(draws);
  CHECK(sd * sd == doctest::Approx(0.125).epsilon(0.05));
  // other alphas go through the gamma route; Beta(2,2) has variance 1/20
  std::vector<double> other;
  for (int i = 0; i < 10000; ++i) other.push_back(sample_symmetric_beta(2.0, rng));
  CHECK(std::abs(oracle::mean(other) - 0.5) <= 0.02);
  CHECK(oracle::sample_std(other) * oracle::sample_std(other) == doctest::Approx(0.05).epsilon(0.08));
}

TEST_CASE("mixup_batch") {
  const auto ds = small_mother();
  Rng rng(6);
  const Task task = sample_task(ds, 4, 3, 2, rng);
  SUBCASE("blend and soft-target construction") {
    const auto mb = mixup_batch(task, ds.class_count(), 50, rng);
    REQUIRE(mb);
    CHECK(mb->extra_labels == 1);
    for (std::size_t i = 0; i < 50; ++i) {
      const double m = mb->mix_ratios[i];
      const std::size_t a = mb->source_a[i];
      const std::size_t b = mb->source_b[i];
      CHECK(task.support_y[a] != task.support_y[b]);
      for (std::size_t k = 0; k < ds.feature_dim; ++k)
        CHECK(mb->inputs(i, k) == m * task.support_x(a, k) + (1.0 - m) * task.support_x(b, k));
      double sum = 0.0;
      for (std::size_t c = 0; c < ds.class_count(); ++c) {
        CHECK(mb->semantic_targets(i, c) >= 0.0);
        sum += mb->semantic_targets(i, c);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
      CHECK(mb->semantic_targets(i, task.semantic_of(task.support_y[a]) - 1) == m);
      CHECK(mb->semantic_targets(i, task.semantic_of(task.support_y[b]) - 1) == 1.0 - m);
      CHECK(mb->numeric_labels[i] == 5);
    }
  }
  SUBCASE("boundary ratios reproduce a source row and its one-hot target") {
    const auto mb = mixup_batch(task, ds.class_count(), 2000, rng);
    REQUIRE(mb);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < 2000; ++i) {
      const double m = mb->mix_ratios[i];
      if (m > 1e-6) continue;
      ++checked;
      const std::size_t b = mb->source_b[i];
      for (std::size_t k = 0; k < ds.feature_dim; ++k)
        CHECK(mb->inputs(i, k) == doctest::Approx(task.support_x(b, k)).epsilon(1e-5));
      CHECK(mb->semantic_targets(i, task.semantic_of(task.support_y[b]) - 1) == doctest::Approx(1.0).epsilon(1e-6));
    }
    // arcsine mass near 0 is high, so a few thousand draws always reach the boundary
    CHECK(checked > 0);
  }
  SUBCASE("per-pair labels") {
    const auto mb = mixup_batch(task, ds.class_count(), 40, rng, 0.5, MixupLabelMode::per_pair);
    REQUIRE(mb);
    std::set<int> labels(mb->numeric_labels.begin(), mb->numeric_labels.end());
    CHECK(labels.size() == mb->extra_labels);
    for (int l : labels) CHECK(l > 4);
    CHECK(*labels.rbegin() == static_cast<int>(4 + mb->extra_labels));
  }
  SUBCASE("single-class task is skipped") {
    const Task one = sample_task(ds, 1, 2, 1, rng);
    CHECK_FALSE(mixup_batch(one, ds.class_count(), 3, rng));
  }
}

TEST_CASE("mixup episodes use valid assignments at the raised cardinality") {
  const auto ds = small_mother();
  Rng rng(13);
  Rng assign_rng(14);
  Rng mixup_rng(15);
  SemanticConfig sem;
  sem.enabled = true;
  sem.classes = ds.class_count();
  sem.mixup = true;
  for (int i = 0; i < 100; ++i) {
    const std::size_t N = 2 + uniform_index(rng, 4);
    const PreparedEpisode ep = prepare_episode(sample_task(ds, N, 2, 2, rng), 12, sem, assign_rng, mixup_rng);
    REQUIRE(ep.aset.N == N + 1);
    REQUIRE(ep.aset.J == 12 / (N + 1));
    ep.aset.validate();
    REQUIRE(ep.support_x.rows() == N * 2 + 2);
    for (std::size_t r = 0; r < ep.support_semantic.rows(); ++r) {
      double sum = 0.0;
      for (double v : ep.support_semantic.row(r)) {
        REQUIRE(v >= 0.0);
        sum += v;
      }
      REQUIRE(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("config parsing") {
  CHECK(parse_mixup_label_mode("per-pair") == MixupLabelMode::per_pair);
  CHECK(parse_mixup_label_mode("shared") == MixupLabelMode::shared);
  CHECK_THROWS_AS(parse_mixup_label_mode("pairs"), ConfigError);
  SemanticConfig sem;
  sem.lambda = -1.0;
  CHECK_THROWS_AS(sem.validate(), ConfigError);
}
