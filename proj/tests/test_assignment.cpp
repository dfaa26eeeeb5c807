#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "anyway/assignment.hpp"
#include "anyway/errors.hpp"
#include "oracles.hpp"

using namespace anyway;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = scale * (2.0 * uniform_unit(rng) - 1.0);
  return m;
}

Matrix random_onehots(std::size_t r, std::size_t n, Rng& rng) {
  Matrix t(r, n);
  for (std::size_t i = 0; i < r; ++i) t(i, uniform_index(rng, n)) = 1.0;
  return t;
}

}  // namespace

TEST_CASE("generate_assignments") {
  Rng rng(1);
  SUBCASE("O=8 N=3") {
    const auto a = generate_assignments(8, 3, rng);
    CHECK(a.J == 2);
    CHECK(a.unassigned_count() == 2);
    CHECK(a.unassigned_nodes().size() == 2);
    a.validate();
  }
  SUBCASE("the footnote example is a valid set") {
    AssignmentSet a{8, 3, 2, {{3, 5, 2}, {7, 4, 8}}};
    a.validate();
    CHECK(a.unassigned_nodes() == std::vector<std::size_t>{1, 6});
  }
  SUBCASE("O=30 N=7") {
    const auto a = generate_assignments(30, 7, rng);
    CHECK(a.J == 4);
    CHECK(a.O - a.unassigned_count() == 28);
    CHECK(a.unassigned_count() == 2);
  }
  SUBCASE("O=N=5") {
    const auto a = generate_assignments(5, 5, rng);
    CHECK(a.J == 1);
    CHECK(a.unassigned_count() == 0);
    auto s = a.vectors[0];
    std::sort(s.begin(), s.end());
    CHECK(s == std::vector<std::size_t>{1, 2, 3, 4, 5});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(generate_assignments(4, 5, rng), DomainError);
    CHECK_THROWS_AS(generate_assignments(4, 0, rng), DomainError);
  }
  SUBCASE("invariants over 1000 seeded pairs") {
    Rng pairs(77);
    for (int i = 0; i < 1000; ++i) {
      const std::size_t O = 1 + uniform_index(pairs, 64);
      const std::size_t N = 1 + uniform_index(pairs, O);
      const auto a = generate_assignments(O, N, pairs);
      REQUIRE(a.J == O / N);
      std::set<std::size_t> used;
      for (const auto& s : a.vectors) {
        REQUIRE(s.size() == N);
        std::set<std::size_t> own(s.begin(), s.end());
        REQUIRE(own.size() == N);
        for (std::size_t v : s) {
          REQUIRE(v >= 1);
          REQUIRE(v <= O);
          REQUIRE(used.insert(v).second);
        }
      }
      REQUIRE(O - used.size() == O - a.J * N);
      REQUIRE(a.unassigned_count() == O - a.J * N);
    }
  }
  SUBCASE("validate catches broken sets") {
    AssignmentSet overlap{8, 3, 2, {{1, 2, 3}, {3, 4, 5}}};
    CHECK_THROWS_AS(overlap.validate(), DomainError);
    AssignmentSet wrong_j{8, 3, 1, {{1, 2, 3}}};
    CHECK_THROWS_AS(wrong_j.validate(), DomainError);
  }
  SUBCASE("text line round trip") {
    const auto a = generate_assignments(11, 3, rng);
    const std::string line = a.to_line();
    CHECK(line.rfind("11 3 3 ;", 0) == 0);
    CHECK(AssignmentSet::from_line(line) == a);
    CHECK_THROWS(AssignmentSet::from_line("8 3 2 ; 1 2 3 ; 3 4 5"));
  }
}

TEST_CASE("extract") {
  const std::vector<double> v{10, 20, 30, 40, 50, 60, 70, 80};
  const std::vector<std::size_t> s{3, 5, 2};
  CHECK(extract(s, v) == std::vector<double>{30, 50, 20});
  const std::vector<std::size_t> prefix{1, 2, 3, 4};
  CHECK(extract(prefix, v) == std::vector<double>{10, 20, 30, 40});
  const std::vector<std::size_t> swap{2, 1};
  CHECK(extract(swap, v) == std::vector<double>{20, 10});
  const std::vector<std::size_t> bad{9};
  CHECK_THROWS_AS(extract(bad, v), DomainError);
  const std::vector<std::size_t> zero{0};
  CHECK_THROWS_AS(extract(zero, v), DomainError);
}

TEST_CASE("any_way_loss") {
  Rng rng(4);
  SUBCASE("J=1 equals plain cross-entropy on the extracted logits") {
    const auto a = generate_assignments(5, 4, rng);
    const Matrix z = random_matrix(3, 5, rng);
    const Matrix t = random_onehots(3, 4, rng);
    const auto r = any_way_loss(a, z, t);
    CHECK(r.loss == softmax_cross_entropy(extract_columns(a.vectors[0], z), t).loss);
  }
  SUBCASE("uniform logits, N=3, J=2") {
    const auto a = generate_assignments(8, 3, rng);
    const auto r = any_way_loss(a, Matrix(2, 8, 0.0), Matrix{{1, 0, 0}, {0, 0, 1}});
    CHECK(r.loss == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-15));
    CHECK(r.loss == doctest::Approx(2.197225).epsilon(1e-6));
  }
  SUBCASE("decomposition into independent fixed-way terms") {
    const auto a = generate_assignments(8, 3, rng);
    const Matrix z = random_matrix(5, 8, rng, 3.0);
    const Matrix t = random_onehots(5, 3, rng);
    const auto r = any_way_loss(a, z, t);
    const double s1 = static_cast<double>(oracle::cross_entropy(oracle::to_grid(extract_columns(a.vectors[0], z)), oracle::to_grid(t)));
    const double s2 = static_cast<double>(oracle::cross_entropy(oracle::to_grid(extract_columns(a.vectors[1], z)), oracle::to_grid(t)));
    CHECK(std::abs(r.loss - (s1 + s2)) < 1e-12);
  }
  SUBCASE("unassigned columns receive exactly zero gradient") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t O = 3 + uniform_index(rng, 30);
      const std::size_t N = 1 + uniform_index(rng, O);
      const auto a = generate_assignments(O, N, rng);
      const auto r = any_way_loss(a, random_matrix(4, O, rng, 2.0), random_onehots(4, N, rng));
      for (std::size_t node : a.unassigned_nodes())
        for (std::size_t row = 0; row < 4; ++row) REQUIRE(r.dlogits(row, node - 1) == 0.0);
    }
  }
  SUBCASE("gradient matches finite differences") {
    const auto a = generate_assignments(11, 3, rng);
    Matrix z = random_matrix(4, 11, rng, 2.0);
    const Matrix t = random_onehots(4, 3, rng);
    const auto r = any_way_loss(a, z, t);
    std::vector<Matrix*> p{&z};
    const auto fd = finite_diff_grad([&] { return any_way_loss(a, z, t).loss; }, p);
    CHECK(max_relative_error(r.dlogits, fd.blocks[0]) < 1e-6);
  }
  SUBCASE("shape errors") {
    const auto a = generate_assignments(8, 3, rng);
    CHECK_THROWS_AS(any_way_loss(a, Matrix(2, 7), Matrix(2, 3)), DimensionError);
    CHECK_THROWS_AS(any_way_loss(a, Matrix(2, 8), Matrix(2, 4)), DimensionError);
  }
}

TEST_CASE("label equivalence: joint permutation of assignment positions and targets") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t O = 2 + uniform_index(rng, 30);
    const std::size_t N = 2 + uniform_index(rng, std::min<std::size_t>(O - 1, 9));
    const auto a = generate_assignments(O, N, rng);
    const Matrix z = random_matrix(5, O, rng, 3.0);
    const Matrix t = random_onehots(5, N, rng);
    std::vector<std::size_t> pi(N);
    std::iota(pi.begin(), pi.end(), 0);
    std::shuffle(pi.begin(), pi.end(), rng);

    AssignmentSet b = a;
    Matrix tp(5, N);
    for (std::size_t j = 0; j < a.J; ++j)
      for (std::size_t i = 0; i < N; ++i) b.vectors[j][i] = a.vectors[j][pi[i]];
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t i = 0; i < N; ++i) tp(r, i) = t(r, pi[i]);

    const auto la = any_way_loss(a, z, t);
    const auto lb = any_way_loss(b, z, tp);
    REQUIRE(std::memcmp(&la.loss, &lb.loss, sizeof(double)) == 0);
    REQUIRE(la.dlogits.bit_equal(lb.dlogits));

    const auto pa = predict(ensembled_logit(a, z, EnsembleMethod::original));
    const auto pb = predict(ensembled_logit(b, z, EnsembleMethod::original));
    for (std::size_t r = 0; r < 5; ++r) {
      // label i of b is label pi[i] of a
      REQUIRE(static_cast<std::size_t>(pa[r] - 1) == pi[pb[r] - 1]);
    }
  }
}

TEST_CASE("fixed_way_loss") {
  Rng rng(8);
  const Matrix z = random_matrix(3, 4, rng);
  const Matrix t = random_onehots(3, 4, rng);
  const std::vector<std::size_t> id{1, 2, 3, 4};
  CHECK(fixed_way_loss(id, z, t).loss == softmax_cross_entropy(z, t).loss);
  const auto a = generate_assignments(4, 4, rng);
  const auto f = fixed_way_loss(a.vectors[0], z, t);
  const auto w = any_way_loss(a, z, t);
  CHECK(std::memcmp(&f.loss, &w.loss, sizeof(double)) == 0);
  CHECK(f.dlogits.bit_equal(w.dlogits));
  CHECK_THROWS_AS(fixed_way_loss(id, Matrix(3, 5), t), DimensionError);
}

TEST_CASE("ensembled_logit") {
  AssignmentSet a{6, 3, 2, {{1, 2, 3}, {4, 5, 6}}};
  const Matrix z{{1, 2, 3, 3, 2, 1}};
  SUBCASE("J=1, any method") {
    AssignmentSet one{3, 3, 1, {{2, 3, 1}}};
    const Matrix w{{5, 6, 7}};
    for (auto m : {EnsembleMethod::original, EnsembleMethod::softmax, EnsembleMethod::max}) {
      const Matrix e = ensembled_logit(one, w, m);
      if (m == EnsembleMethod::softmax) {
        CHECK(e.bit_equal(softmax_rows(Matrix{{6, 7, 5}})));
      } else {
        CHECK(e.bit_equal(Matrix{{6, 7, 5}}));
      }
    }
  }
  SUBCASE("original sums") { CHECK(ensembled_logit(a, z, EnsembleMethod::original).bit_equal(Matrix{{4, 4, 4}})); }
  SUBCASE("softmax sums probabilities") {
    const Matrix e = ensembled_logit(a, z, EnsembleMethod::softmax);
    const auto p1 = oracle::softmax({1, 2, 3});
    const auto p2 = oracle::softmax({3, 2, 1});
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(e(0, k) == doctest::Approx(p1[k] + p2[k]).epsilon(1e-14));
      total += e(0, k);
    }
    CHECK(total == doctest::Approx(2.0).epsilon(1e-14));
  }
  SUBCASE("max is elementwise") { CHECK(ensembled_logit(a, z, EnsembleMethod::max).bit_equal(Matrix{{3, 2, 3}})); }
  SUBCASE("member limit") { CHECK(ensembled_logit(a, z, EnsembleMethod::original, 1).bit_equal(Matrix{{1, 2, 3}})); }
  CHECK_THROWS_AS(parse_ensemble_method("median"), ConfigError);
}

TEST_CASE("predict") {
  CHECK(predict(Matrix{{0.1, 0.9, 0.0}}) == std::vector<int>{2});
  CHECK(predict(Matrix{{0.5, 0.5, 0.5}}) == std::vector<int>{1});
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t N = 2 + uniform_index(rng, 8);
    const Matrix z = random_matrix(6, N, rng);
    std::vector<std::size_t> pi(N);
    std::iota(pi.begin(), pi.end(), 0);
    std::shuffle(pi.begin(), pi.end(), rng);
    Matrix zp(6, N);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t k = 0; k < N; ++k) zp(r, k) = z(r, pi[k]);
    const auto p = predict(z);
    const auto q = predict(zp);
    REQUIRE(p.size() == 6);
    for (std::size_t r = 0; r < 6; ++r) REQUIRE(pi[q[r] - 1] + 1 == static_cast<std::size_t>(p[r]));
  }
}
