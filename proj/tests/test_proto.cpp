#include <doctest.h>

#include <cmath>
#include <numeric>

#include "anyway/errors.hpp"
#include "anyway/proto.hpp"
#include "anyway/synth.hpp"
#include "oracles.hpp"

using namespace anyway;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data()) v = 2.0 * uniform_unit(rng) - 1.0;
  return m;
}

std::vector<double> row_of(const Matrix& m, std::size_t r) { return {m.row(r).begin(), m.row(r).end()}; }

}  // namespace

TEST_CASE("compute_prototypes") {
  SUBCASE("identical points") {
    const Matrix f{{1, 2}, {1, 2}, {5, 5}};
    const std::vector<int> y{1, 1, 2};
    const Matrix p = compute_prototypes(f, y, 2);
    CHECK(row_of(p, 0) == std::vector<double>{1, 2});
    CHECK(row_of(p, 1) == std::vector<double>{5, 5});
  }
  SUBCASE("two points average") {
    const Matrix p = compute_prototypes(Matrix{{0, 4}, {2, 0}}, std::vector<int>{1, 1}, 1);
    CHECK(row_of(p, 0) == std::vector<double>{1, 2});
  }
  SUBCASE("random batch matches the scalar mean, and row order does not matter") {
    Rng rng(3);
    const Matrix f = random_matrix(12, 5, rng);
    std::vector<int> y;
    for (int i = 0; i < 12; ++i) y.push_back(1 + i % 4);
    const Matrix p = compute_prototypes(f, y, 4);
    for (int n = 1; n <= 4; ++n)
      for (std::size_t k = 0; k < 5; ++k) {
        std::vector<double> col;
        for (std::size_t i = 0; i < 12; ++i)
          if (y[i] == n) col.push_back(f(i, k));
        CHECK(p(n - 1, k) == doctest::Approx(oracle::mean(col)).epsilon(1e-14));
      }
    std::vector<std::size_t> order(12);
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.end());
    std::vector<int> yr;
    for (std::size_t i : order) yr.push_back(y[i]);
    const Matrix pr = compute_prototypes(gather_rows(f, order), yr, 4);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(pr.data()[i] - p.data()[i]) < 1e-12);
  }
  SUBCASE("missing label") { CHECK_THROWS_AS(compute_prototypes(Matrix(2, 2), std::vector<int>{1, 1}, 2), DomainError); }
}

TEST_CASE("proto_logits") {
  SUBCASE("query on a prototype") {
    const Matrix protos{{0, 0}, {1, 0}, {0, 3}};
    const Matrix z = proto_logits(Matrix{{1, 0}}, protos);
    CHECK(z(0, 1) == 0.0);
    CHECK(z(0, 0) < 0.0);
    CHECK(predict(z) == std::vector<int>{2});
  }
  SUBCASE("equidistant query gives ln N") {
    const Matrix protos{{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    const Matrix z = proto_logits(Matrix{{0, 0}}, protos);
    CHECK(softmax_cross_entropy(z, Matrix{{0, 0, 1, 0}}).loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  }
  SUBCASE("random case matches the scalar distance") {
    Rng rng(4);
    const Matrix q = random_matrix(5, 6, rng);
    const Matrix p = random_matrix(3, 6, rng);
    const Matrix z = proto_logits(q, p);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t n = 0; n < 3; ++n)
        CHECK(z(i, n) == doctest::Approx(-oracle::squared_distance(row_of(q, i), row_of(p, n))).epsilon(1e-12));
  }
  SUBCASE("logit and episode gradients match finite differences") {
    Rng rng(5);
    Matrix q = random_matrix(4, 3, rng);
    Matrix p = random_matrix(3, 3, rng);
    const Matrix t = one_hot(std::vector<int>{1, 3, 2, 2}, 3);
    const auto ce = softmax_cross_entropy(proto_logits(q, p), t);
    const auto g = proto_logits_backward(q, p, ce.dlogits);
    std::vector<Matrix*> params{&q, &p};
    const auto fd = finite_diff_grad([&] { return softmax_cross_entropy(proto_logits(q, p), t).loss; }, params);
    CHECK(max_relative_error(g.d_query, fd.blocks[0]) < 1e-4);
    CHECK(max_relative_error(g.d_prototypes, fd.blocks[1]) < 1e-4);
  }
}

TEST_CASE("ema_update") {
  SUBCASE("first encounter copies") {
    auto mem = PrototypeMemory::create(3, 2, 0.05);
    ema_update(mem, 2, std::vector<double>{4, -1});
    CHECK(row_of(mem.prototypes, 1) == std::vector<double>{4, -1});
    CHECK(mem.seen[1]);
  }
  SUBCASE("seen zero row moves by rho") {
    auto mem = PrototypeMemory::create(1, 1, 0.05);
    mem.seen[0] = true;
    ema_update(mem, 1, std::vector<double>{1.0});
    CHECK(mem.prototypes(0, 0) == doctest::Approx(0.05).epsilon(1e-15));
  }
  SUBCASE("geometric convergence, other rows untouched") {
    auto mem = PrototypeMemory::create(3, 2, 0.1);
    ema_update(mem, 1, std::vector<double>{0, 0});
    ema_update(mem, 3, std::vector<double>{7, 7});
    const Matrix before = mem.prototypes;
    for (int t = 1; t <= 40; ++t) {
      ema_update(mem, 1, std::vector<double>{1, 2});
      const double gap = std::pow(0.9, t);
      CHECK(std::abs(mem.prototypes(0, 0) - (1.0 - gap)) < 1e-12);
      CHECK(std::abs(mem.prototypes(0, 1) - 2.0 * (1.0 - gap)) < 1e-12);
    }
    CHECK(row_of(mem.prototypes, 2) == row_of(before, 2));
    CHECK(row_of(mem.prototypes, 1) == row_of(before, 1));
    CHECK_FALSE(mem.seen[1]);
  }
  SUBCASE("class out of range") {
    auto mem = PrototypeMemory::create(2, 2, 0.05);
    CHECK_THROWS_AS(ema_update(mem, 3, std::vector<double>{0, 0}), DomainError);
    CHECK_THROWS_AS(ema_update(mem, 0, std::vector<double>{0, 0}), DomainError);
  }
  CHECK_THROWS_AS(PrototypeMemory::create(2, 2, 0.0), ConfigError);
}

TEST_CASE("semantic_alignment_loss") {
  auto mem = PrototypeMemory::create(4, 2, 0.05);
  const std::vector<std::size_t> map{3, 1};
  SUBCASE("nothing seen") { CHECK(semantic_alignment_loss(Matrix{{1, 0}, {2, 2}}, mem, map).loss == 0.0); }
  SUBCASE("matching memory") {
    ema_update(mem, 3, std::vector<double>{1, 0});
    ema_update(mem, 1, std::vector<double>{2, 2});
    CHECK(semantic_alignment_loss(Matrix{{1, 0}, {2, 2}}, mem, map).loss == 0.0);
  }
  SUBCASE("unit distance") {
    ema_update(mem, 3, std::vector<double>{0, 0});
    const std::vector<std::size_t> single{3};
    CHECK(semantic_alignment_loss(Matrix{{1, 0}}, mem, single).loss == 1.0);
  }
  SUBCASE("mean over present classes, gradient by finite differences") {
    ema_update(mem, 3, std::vector<double>{0.5, -0.5});
    Matrix p{{1, 0}, {2, 2}};
    const auto r = semantic_alignment_loss(p, mem, map);
    CHECK(r.loss == doctest::Approx(0.5).epsilon(1e-15));
    std::vector<Matrix*> params{&p};
    const auto fd = finite_diff_grad([&] { return semantic_alignment_loss(p, mem, map).loss; }, params);
    CHECK(max_relative_error(r.d_prototypes, fd.blocks[0]) < 1e-6);
  }
}

TEST_CASE("proto_episode gradient") {
  SynthSpec spec;
  spec.classes = 6;
  spec.dim = 4;
  spec.per_class = 10;
  const auto ds = make_gaussian_mother(spec);
  Rng rng(8);
  const Task task = sample_task(ds, 3, 2, 3, rng);
  MlpEncoder enc = MlpEncoder::create({4, 6, 5}, rng);
  auto mem = PrototypeMemory::create(6, 5, 0.05);
  for (std::size_t c = 1; c <= 6; ++c) {
    std::vector<double> v(5);
    for (double& x : v) x = uniform_unit(rng);
    ema_update(mem, c, v);
  }
  const auto r = proto_episode(enc, mem, task, 0.3);
  CHECK(r.loss == doctest::Approx(r.ce_loss + 0.3 * r.alignment).epsilon(1e-15));
  const auto fd = finite_diff_grad([&] { return proto_episode(enc, mem, task, 0.3).loss; }, enc.parameters());
  for (std::size_t i = 0; i < fd.blocks.size(); ++i) CHECK(max_relative_error(r.grads.blocks[i], fd.blocks[i]) < 1e-4);
}

TEST_CASE("train_proto") {
  SynthSpec spec;
  spec.classes = 30;
  const auto all = make_gaussian_mother(spec);
  const auto train_ds = slice_classes(all, 0, 20);
  const auto test_ds = slice_classes(all, 20, 10);
  ProtoTrainSettings s;
  s.spec.cardinality_pool = {3, 5, 7};
  s.spec.shots = 5;
  s.spec.queries = 10;
  s.outer.episodes = 1000;
  s.outer.eval_interval = 1000;
  Rng rng(2);
  ProtoModel init{MlpEncoder::create({16, 32, 32}, rng), PrototypeMemory::create(20, 32, 0.05)};

  SUBCASE("lambda=0 leaves the memory untouched") {
    s.lambda = 0.0;
    s.outer.episodes = 20;
    const auto r = train_proto(train_ds, nullptr, init, s);
    CHECK(r.final_model.memory.bit_equal(init.memory));
  }
  SUBCASE("separable data reaches 0.9 and memory rows track episode prototypes") {
    s.lambda = 0.1;
    const auto r = train_proto(train_ds, nullptr, init, s);
    for (std::size_t N : {3, 5, 10}) {
      CHECK(evaluate_proto(r.final_model.encoder, test_ds, N, 5, 10, 100, 9).mean >= 0.9);
    }
    std::size_t seen = 0;
    for (bool b : r.final_model.memory.seen) seen += b;
    CHECK(seen == 20);
    // memory row of class 1 sits near the encoder's current prototype of that class
    const Matrix f = forward_encoder(r.final_model.encoder, train_ds.classes[0].examples);
    std::vector<int> y(f.rows(), 1);
    const Matrix p = compute_prototypes(f, y, 1);
    const double drift = oracle::squared_distance(row_of(p, 0), row_of(r.final_model.memory.prototypes, 0));
    const double scale = oracle::squared_distance(row_of(p, 0), std::vector<double>(p.cols(), 0.0));
    CHECK(drift < 0.1 * scale);
  }
  SUBCASE("deterministic") {
    s.outer.episodes = 30;
    const auto a = train_proto(train_ds, nullptr, init, s);
    const auto b = train_proto(train_ds, nullptr, init, s);
    CHECK(a.final_model.bit_equal(b.final_model));
  }
}
