#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include <subfuse/grad_coord.hpp>

#include "support/oracles.hpp"

using namespace subfuse;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace

TEST_CASE("classification confidence saturates at batch size") {
  std::vector<double> v(8 * 4, 0.0);
  std::vector<int> labels(8);
  for (std::size_t i = 0; i < 8; ++i) {
    labels[i] = static_cast<int>(i % 4);
    v[i * 4 + labels[i]] = 200.0;
  }
  CHECK(branch_confidence_cls(Tensor::constant(v, {8, 4}), labels) == 8.0);
}

TEST_CASE("classification confidence of uniform logits is B over K") {
  Tensor logits = Tensor::constant(std::vector<double>(8 * 4, 0.0), {8, 4});
  CHECK(branch_confidence_cls(logits, std::vector<int>(8, 2)) == 2.0);
}

TEST_CASE("classification confidence matches a per-sample softmax loop") {
  std::mt19937_64 vals(70);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_int_distribution<int> lab(0, 3);
  std::vector<double> v(6 * 4);
  for (double& x : v) x = u(vals);
  std::vector<int> labels(6);
  for (int& y : labels) y = lab(vals);
  long double want = 0.0L;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::vector<double> row(v.begin() + i * 4, v.begin() + (i + 1) * 4);
    want += testsupport::naive_softmax_row(row)[static_cast<std::size_t>(labels[i])];
  }
  const double got = branch_confidence_cls(Tensor::constant(v, {6, 4}), labels);
  CHECK(std::abs(got - static_cast<double>(want)) <= 1e-12);
  labels[0] = 4;
  CHECK_THROWS_AS(branch_confidence_cls(Tensor::constant(v, {6, 4}), labels), contract_error);
}

TEST_CASE("survival confidence is the mini-batch concordance") {
  std::vector<SurvivalRecord> recs{{1.0, true, 0}, {2.0, true, 0}, {3.0, true, 1}};
  CHECK(branch_confidence_surv({0.9, 0.5, 0.1}, recs) == 1.0);
  for (auto& r : recs) r.event = false;
  CHECK(branch_confidence_surv({0.9, 0.5, 0.1}, recs) == 0.5);

  std::mt19937_64 vals(71);
  std::uniform_real_distribution<double> t(0.1, 20.0), u(0.0, 1.0);
  std::uniform_int_distribution<int> ev(0, 1);
  std::vector<double> risks, times;
  std::vector<int> events;
  std::vector<SurvivalRecord> rr;
  for (int i = 0; i < 40; ++i) {
    times.push_back(t(vals));
    risks.push_back(u(vals));
    events.push_back(ev(vals));
    rr.push_back({times.back(), events.back() != 0, 0});
  }
  CHECK(branch_confidence_surv(risks, rr) == testsupport::naive_c_index(risks, times, events));
}

TEST_CASE("perpendicular projection hand cases") {
  CHECK(project_perpendicular({1.0, -1.0}, {0.0, 1.0}) == std::vector<double>{1.0, 0.0});
  CHECK(project_perpendicular({2.0, 0.0}, {0.0, 3.0}) == std::vector<double>{2.0, 0.0});
  const std::vector<double> x{0.3, -1.7, 2.2};
  CHECK(project_perpendicular(x, x) == std::vector<double>(3, 0.0));
  CHECK(project_perpendicular(x, {0.0, 0.0, 0.0}) == x);
  CHECK_THROWS_AS(project_perpendicular({1.0}, {1.0, 2.0}), contract_error);
}

TEST_CASE("projection output is orthogonal to the direction removed") {
  std::mt19937_64 vals(72);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(8), b(8);
    for (double& x : a) x = u(vals);
    for (double& x : b) x = u(vals);
    const std::vector<double> p = project_perpendicular(a, b);
    CHECK(std::abs(dot(p, b)) <= 1e-9 * norm(a) * norm(b));
  }
}

TEST_CASE("coordination projects the less confident conflicting branch") {
  BranchGradients bg{{1.0, -1.0}, {0.0, 1.0}, 1.0, 2.0};
  const CoordResult r = coordinate(bg);
  CHECK(r.applied);
  CHECK(r.grad_t == std::vector<double>{1.0, 0.0});
  CHECK(r.grad_e == bg.grad_e);

  // Confidence reversed: the other branch moves instead.
  bg.conf_t = 3.0;
  const CoordResult r2 = coordinate(bg);
  CHECK(r2.applied);
  CHECK(r2.grad_t == bg.grad_t);
  CHECK(r2.grad_e == project_perpendicular(bg.grad_e, bg.grad_t));
}

TEST_CASE("coordination passes through without conflict") {
  const BranchGradients orthogonal{{1.0, 0.0}, {0.0, 1.0}, 1.0, 2.0};
  CoordResult r = coordinate(orthogonal);
  CHECK_FALSE(r.applied);
  CHECK(r.grad_t == orthogonal.grad_t);
  CHECK(r.grad_e == orthogonal.grad_e);

  const BranchGradients tied{{1.0, -1.0}, {0.0, 1.0}, 2.0, 2.0};
  r = coordinate(tied);
  CHECK_FALSE(r.applied);
  CHECK(r.grad_t == tied.grad_t);

  // A zero gradient on one side has no direction to conflict with.
  const BranchGradients zero_other{{1.0, -1.0}, {0.0, 0.0}, 1.0, 2.0};
  r = coordinate(zero_other);
  CHECK_FALSE(r.applied);
  CHECK(r.grad_t == zero_other.grad_t);

  CHECK_THROWS_AS(coordinate(BranchGradients{{1.0}, {1.0, 2.0}, 0.0, 1.0}), contract_error);
}

TEST_CASE("coordination properties over random conflicting pairs") {
  std::mt19937_64 vals(73);
  std::uniform_real_distribution<double> u(-1.0, 1.0), c(0.0, 4.0);
  std::size_t applied = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    BranchGradients bg;
    bg.grad_t.resize(8);
    bg.grad_e.resize(8);
    for (double& x : bg.grad_t) x = u(vals);
    for (double& x : bg.grad_e) x = u(vals);
    if (dot(bg.grad_t, bg.grad_e) > 0.0)
      for (double& x : bg.grad_e) x = -x;  // force a conflict
    bg.conf_t = c(vals);
    bg.conf_e = c(vals);
    if (bg.conf_t == bg.conf_e) continue;
    const CoordResult r = coordinate(bg);
    if (dot(bg.grad_t, bg.grad_e) == 0.0) {
      CHECK_FALSE(r.applied);
      continue;
    }
    REQUIRE(r.applied);
    ++applied;
    const bool t_moved = bg.conf_t < bg.conf_e;
    const std::vector<double>& adjusted = t_moved ? r.grad_t : r.grad_e;
    const std::vector<double>& original = t_moved ? bg.grad_t : bg.grad_e;
    const std::vector<double>& other = t_moved ? bg.grad_e : bg.grad_t;
    // Exactly one branch moves.
    CHECK((t_moved ? r.grad_e == bg.grad_e : r.grad_t == bg.grad_t));
    // The adjusted gradient no longer opposes the other branch...
    CHECK(std::abs(cosine_similarity(adjusted, other)) <= 1e-9);
    // ...and projection can only shrink it, by exactly the removed component.
    CHECK(norm(adjusted) <= norm(original) * (1.0 + 1e-12));
    const double removed = dot(original, other) / norm(other);
    const double want_sq = dot(original, original) - removed * removed;
    CHECK(std::abs(dot(adjusted, adjusted) - want_sq) <= 1e-9 * dot(original, original));
  }
  CHECK(applied > 9000);  // the filters above discard almost nothing
}

TEST_CASE("coordination scales covariantly in the adjusted branch") {
  BranchGradients bg{{0.8, -1.4, 0.3}, {-0.2, 1.1, 0.5}, 0.5, 1.5};
  REQUIRE(cosine_similarity(bg.grad_t, bg.grad_e) < 0.0);
  const CoordResult base = coordinate(bg);
  REQUIRE(base.applied);

  BranchGradients scaled = bg;
  for (double& x : scaled.grad_t) x *= 3.5;
  const CoordResult r = coordinate(scaled);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::abs(r.grad_t[i] - 3.5 * base.grad_t[i]) <= 1e-12);

  // Rescaling the direction that is projected against changes nothing.
  BranchGradients other_scaled = bg;
  for (double& x : other_scaled.grad_e) x *= 7.0;
  const CoordResult r2 = coordinate(other_scaled);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(r2.grad_t[i] - base.grad_t[i]) <= 1e-12);
}
