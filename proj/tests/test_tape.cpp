#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "gaitveil/rng.hpp"
#include "gaitveil/tape.hpp"

using namespace gaitveil;

namespace {

// Central-difference gradient of a scalar function of a flat parameter
// vector. Serves as the reference the reverse pass is checked against.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double hi = f(x);
    x[i] = orig - h;
    double lo = f(x);
    x[i] = orig;
    g[i] = (hi - lo) / (2.0 * h);
  }
  return g;
}

void check_close(const std::vector<double>& got, const std::vector<double>& want,
                 double rel = 1e-6, double abs = 1e-9) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    REQUIRE_THAT(got[i], Catch::Matchers::WithinRel(want[i], rel) ||
                             Catch::Matchers::WithinAbs(want[i], abs));
}

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double s = 1.0) {
  SplitMix64 rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.next_symmetric(s);
  return v;
}

}  // namespace

TEST_CASE("sigmoid value and gradient at zero") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::scalar(0.0), true);
  NodeId y = tape.sigmoid(x);
  REQUIRE(tape.value(y).item() == Catch::Approx(0.5));
  GradientMap g = tape.backward(y);
  REQUIRE(g.at(x).item() == Catch::Approx(0.25));
}

TEST_CASE("dot of a vector with itself differentiates to twice the vector") {
  Tape tape;
  NodeId a = tape.leaf(Tensor::vector({1.0, 2.0}), true);
  NodeId y = tape.dot(a, a);
  REQUIRE(tape.value(y).item() == Catch::Approx(5.0));
  GradientMap g = tape.backward(y);
  check_close(g.at(a).data, {2.0, 4.0});
}

TEST_CASE("sum backward is all ones") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::vector({3.0, -1.0, 0.5, 7.0}), true);
  GradientMap g = tape.backward(tape.sum(x));
  check_close(g.at(x).data, {1.0, 1.0, 1.0, 1.0});
}

TEST_CASE("guarded norm value and gradient") {
  Tape tape;
  NodeId v = tape.leaf(Tensor::vector({3.0, 4.0}), true);
  NodeId n = tape.norm(v);
  REQUIRE(tape.value(n).item() == Catch::Approx(5.0).epsilon(1e-12));
  GradientMap g = tape.backward(n);
  check_close(g.at(v).data, {0.6, 0.8}, 1e-9);

  // Zero input stays finite thanks to the additive guard.
  Tape tape2;
  NodeId z = tape2.leaf(Tensor::vector({0.0, 0.0, 0.0}), true);
  NodeId nz = tape2.norm(z);
  REQUIRE(tape2.value(nz).item() == Catch::Approx(1e-6).epsilon(1e-9));
  GradientMap gz = tape2.backward(nz);
  check_close(gz.at(z).data, {0.0, 0.0, 0.0}, 1e-9, 1e-15);
}

TEST_CASE("mean of sigmoid of matvec matches finite differences") {
  const std::size_t rows = 3, cols = 4;
  std::vector<double> w = random_values(rows * cols, 11);
  std::vector<double> v = random_values(cols, 12);

  auto forward = [&](const std::vector<double>& vec) {
    Tape tape;
    NodeId wn = tape.leaf(Tensor::matrix(rows, cols, w));
    NodeId vn = tape.leaf(Tensor::vector(vec), true);
    return tape.value(tape.mean(tape.sigmoid(tape.matvec(wn, vn)))).item();
  };

  Tape tape;
  NodeId wn = tape.leaf(Tensor::matrix(rows, cols, w), true);
  NodeId vn = tape.leaf(Tensor::vector(v), true);
  NodeId y = tape.mean(tape.sigmoid(tape.matvec(wn, vn)));
  GradientMap g = tape.backward(y);

  check_close(g.at(vn).data, fd_gradient(forward, v));

  auto forward_w = [&](const std::vector<double>& wf) {
    Tape t;
    NodeId a = t.leaf(Tensor::matrix(rows, cols, wf), true);
    NodeId b = t.leaf(Tensor::vector(v));
    return t.value(t.mean(t.sigmoid(t.matvec(a, b)))).item();
  };
  check_close(g.at(wn).data, fd_gradient(forward_w, w));
}

TEST_CASE("elementwise division matches finite differences") {
  std::vector<double> a = random_values(5, 21);
  std::vector<double> b = random_values(5, 22);
  for (double& x : b) x += (x >= 0 ? 2.0 : -2.0);  // keep denominators away from zero

  Tape tape;
  NodeId an = tape.leaf(Tensor::vector(a), true);
  NodeId bn = tape.leaf(Tensor::vector(b), true);
  NodeId y = tape.sum(tape.div(an, bn));
  GradientMap g = tape.backward(y);

  auto fa = [&](const std::vector<double>& av) {
    Tape t;
    return t.value(t.sum(t.div(t.leaf(Tensor::vector(av)), t.leaf(Tensor::vector(b))))).item();
  };
  auto fb = [&](const std::vector<double>& bv) {
    Tape t;
    return t.value(t.sum(t.div(t.leaf(Tensor::vector(a)), t.leaf(Tensor::vector(bv))))).item();
  };
  check_close(g.at(an).data, fd_gradient(fa, a));
  check_close(g.at(bn).data, fd_gradient(fb, b));
}

TEST_CASE("fan-out accumulates gradients") {
  // y = x*x + x  =>  dy/dx = 2x + 1
  Tape tape;
  NodeId x = tape.leaf(Tensor::vector({1.5, -2.0}), true);
  NodeId y = tape.sum(tape.add(tape.mul(x, x), x));
  GradientMap g = tape.backward(y);
  check_close(g.at(x).data, {4.0, -3.0}, 1e-12);
}

TEST_CASE("scale shift tanh chain matches finite differences") {
  std::vector<double> v = random_values(6, 31);
  Tape tape;
  NodeId x = tape.leaf(Tensor::vector(v), true);
  NodeId y = tape.sum(tape.tanh(tape.shift(tape.scale(x, 0.7), -0.3)));
  GradientMap g = tape.backward(y);

  auto f = [&](const std::vector<double>& xv) {
    Tape t;
    return t.value(t.sum(t.tanh(t.shift(t.scale(t.leaf(Tensor::vector(xv)), 0.7), -0.3)))).item();
  };
  check_close(g.at(x).data, fd_gradient(f, v));
}

TEST_CASE("normalization to unit length matches finite differences") {
  // e = u / ||u||, loss = dot(e, w): the pattern the identity loss is built on.
  std::vector<double> u = random_values(8, 41);
  std::vector<double> w = random_values(8, 42);

  auto f = [&](const std::vector<double>& uv) {
    Tape t;
    NodeId un = t.leaf(Tensor::vector(uv), true);
    NodeId e = t.div(un, t.broadcast(t.norm(un), {uv.size()}));
    return t.value(t.dot(e, t.leaf(Tensor::vector(w)))).item();
  };

  Tape tape;
  NodeId un = tape.leaf(Tensor::vector(u), true);
  NodeId e = tape.div(un, tape.broadcast(tape.norm(un), {u.size()}));
  GradientMap g = tape.backward(tape.dot(e, tape.leaf(Tensor::vector(w))));
  check_close(g.at(un).data, fd_gradient(f, u));
}

TEST_CASE("broadcast stack and reshape round values through correctly") {
  Tape tape;
  NodeId s = tape.leaf(Tensor::scalar(2.5), true);
  NodeId b = tape.broadcast(s, {2, 3});
  REQUIRE(tape.value(b).shape == Shape{2, 3});
  for (double v : tape.value(b).data) REQUIRE(v == 2.5);

  GradientMap g = tape.backward(tape.sum(b));
  REQUIRE(g.at(s).item() == Catch::Approx(6.0));

  Tape tape2;
  NodeId a = tape2.leaf(Tensor::scalar(1.0), true);
  NodeId c = tape2.leaf(Tensor::scalar(-2.0), true);
  std::vector<NodeId> parts{a, c, a};
  NodeId st = tape2.stack(parts);
  REQUIRE(tape2.value(st).shape == Shape{3});
  check_close(tape2.value(st).data, {1.0, -2.0, 1.0}, 1e-15);
  NodeId weights = tape2.leaf(Tensor::vector({10.0, 20.0, 30.0}));
  GradientMap g2 = tape2.backward(tape2.dot(st, weights));
  REQUIRE(g2.at(a).item() == Catch::Approx(40.0));  // appears twice
  REQUIRE(g2.at(c).item() == Catch::Approx(20.0));

  Tape tape3;
  NodeId m = tape3.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}), true);
  NodeId r = tape3.reshape(m, {4});
  REQUIRE(tape3.value(r).shape == Shape{4});
  GradientMap g3 = tape3.backward(tape3.dot(r, tape3.leaf(Tensor::vector({1, 10, 100, 1000}))));
  REQUIRE(g3.at(m).shape == Shape{2, 2});
  check_close(g3.at(m).data, {1, 10, 100, 1000}, 1e-15);
}

TEST_CASE("constants and non-grad leaves are excluded from the gradient map") {
  Tensor frozen = Tensor::vector({1.0, 2.0, 3.0});
  Tape tape;
  NodeId c = tape.constant(&frozen);
  NodeId p = tape.leaf(Tensor::vector({0.5, 0.5, 0.5}));  // requires_grad = false
  NodeId x = tape.leaf(Tensor::vector({1.0, 1.0, 1.0}), true);
  NodeId y = tape.sum(tape.mul(tape.add(c, p), x));
  GradientMap g = tape.backward(y);
  REQUIRE(g.size() == 1);
  REQUIRE(g.contains(x));
  REQUIRE_FALSE(g.contains(c));
  REQUIRE_FALSE(g.contains(p));
  check_close(g.at(x).data, {1.5, 2.5, 3.5}, 1e-15);
}

TEST_CASE("requires-grad leaf disconnected from the root gets a zero gradient") {
  Tape tape;
  NodeId used = tape.leaf(Tensor::scalar(2.0), true);
  NodeId unused = tape.leaf(Tensor::vector({1.0, 2.0}), true);
  NodeId y = tape.mul(used, used);
  GradientMap g = tape.backward(y);
  REQUIRE(g.contains(unused));
  check_close(g.at(unused).data, {0.0, 0.0}, 1e-15, 0.0);
  REQUIRE(g.at(used).item() == Catch::Approx(4.0));
}

TEST_CASE("backward is const and repeatable on one tape") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::vector({0.3, -0.7, 1.1}), true);
  NodeId y = tape.sum(tape.sigmoid(x));
  GradientMap g1 = tape.backward(y);
  GradientMap g2 = tape.backward(y);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(g1.at(x)[i] == g2.at(x)[i]);
}

TEST_CASE("recorded forward replays bit-identically") {
  std::vector<double> w = random_values(16 * 8, 51);
  std::vector<double> v = random_values(8, 52);
  Tape tape;
  NodeId wn = tape.leaf(Tensor::matrix(16, 8, w), true);
  NodeId vn = tape.leaf(Tensor::vector(v), true);
  NodeId h = tape.tanh(tape.matvec(wn, vn));
  NodeId e = tape.div(h, tape.broadcast(tape.norm(h), {16}));
  NodeId y = tape.mean(tape.sigmoid(e));
  (void)tape.backward(y);
  REQUIRE(tape.replay_matches());
}

TEST_CASE("identical programs on separate tapes give bit-identical gradients") {
  auto run = [] {
    std::vector<double> w = random_values(6 * 5, 61);
    std::vector<double> v = random_values(5, 62);
    Tape tape;
    NodeId wn = tape.leaf(Tensor::matrix(6, 5, w));
    NodeId vn = tape.leaf(Tensor::vector(v), true);
    NodeId y = tape.mean(tape.tanh(tape.matvec(wn, vn)));
    return tape.backward(y).at(vn).data;
  };
  std::vector<double> a = run();
  std::vector<double> b = run();
  REQUIRE(a == b);
}

TEST_CASE("shape violations are rejected") {
  Tape tape;
  NodeId a = tape.leaf(Tensor::vector({1.0, 2.0}));
  NodeId b = tape.leaf(Tensor::vector({1.0, 2.0, 3.0}));
  REQUIRE_THROWS_AS(tape.add(a, b), ShapeError);
  REQUIRE_THROWS_AS(tape.dot(a, b), ShapeError);

  NodeId m = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  REQUIRE_THROWS_AS(tape.matvec(m, b), ShapeError);
  REQUIRE_THROWS_AS(tape.matvec(a, a), ShapeError);

  REQUIRE_THROWS_AS(tape.broadcast(a, {2, 2}), ShapeError);
  REQUIRE_THROWS_AS(tape.reshape(a, {3}), ShapeError);
  REQUIRE_THROWS_AS(tape.backward(a), ShapeError);

  std::vector<NodeId> bad{a};
  REQUIRE_THROWS_AS(tape.stack(bad), ShapeError);
}

TEST_CASE("non-finite values are rejected at entry and at primitive outputs") {
  Tape tape;
  REQUIRE_THROWS_AS(tape.leaf(Tensor::vector({1.0, std::numeric_limits<double>::infinity()})),
                    NonFiniteError);
  REQUIRE_THROWS_AS(tape.leaf(Tensor::scalar(std::nan(""))), NonFiniteError);

  NodeId num = tape.leaf(Tensor::vector({1.0}));
  NodeId den = tape.leaf(Tensor::vector({0.0}));
  REQUIRE_THROWS_AS(tape.div(num, den), NonFiniteError);

  NodeId x = tape.leaf(Tensor::scalar(1.0));
  REQUIRE_THROWS_AS(tape.scale(x, std::numeric_limits<double>::infinity()), NonFiniteError);
}
