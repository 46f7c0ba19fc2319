#include "mtlstm/rng.hpp"
#include "mtlstm/tensor.hpp"

#include <doctest.h>

#include <cmath>

using namespace mtlstm;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

// Triple loop, independent of Eigen's product kernels.
Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j)
      for (Index k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

}  // namespace

TEST_CASE("matmul") {
  Rng rng(1);
  const Matrix a = random_matrix(3, 3, rng);
  CHECK(matmul<double>(Matrix::Identity(3, 3), a) == a);
  CHECK(matmul<double>(a, Matrix::Zero(3, 2)).isZero(0.0));

  Matrix x(2, 2), y(2, 2);
  x << 1, 2, 3, 4;
  y << 5, 6, 7, 8;
  const Matrix expected = naive_product(x, y);
  CHECK(expected(0, 0) == 19);
  CHECK(expected(0, 1) == 22);
  CHECK(expected(1, 0) == 43);
  CHECK(expected(1, 1) == 50);
  CHECK(matmul<double>(x, y) == expected);

  CHECK_THROWS_AS(matmul<double>(Matrix::Zero(2, 3), Matrix::Zero(2, 3)), ShapeError);
}

TEST_CASE("matmul is associative on random 4x4 triples") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = random_matrix(4, 4, rng), b = random_matrix(4, 4, rng),
                 c = random_matrix(4, 4, rng);
    const Matrix left = matmul<double>(matmul<double>(a, b), c);
    const Matrix right = matmul<double>(a, matmul<double>(b, c));
    CHECK((left - right).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("activations") {
  Vector zero = Vector::Zero(1);
  CHECK(activate(Activation::Sigmoid, zero)(0) == 0.5);
  CHECK(activate(Activation::Tanh, zero)(0) == 0.0);

  const Vector uniform = activate(Activation::Softmax, Vector::Constant(11, 3.7).eval());
  for (Index i = 0; i < 11; ++i) CHECK(uniform(i) == doctest::Approx(1.0 / 11).epsilon(1e-15));

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Vector x(11);
    for (Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-1e3, 1e3);
    const double shift = rng.uniform(-50.0, 50.0);
    const Vector p = activate(Activation::Softmax, x);
    const Vector q = activate(Activation::Softmax, (x.array() + shift).matrix().eval());
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
  }

  Vector bad(2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(activate(Activation::Tanh, bad), NumericError);
}

TEST_CASE("rmse") {
  Rng rng(5);
  const Matrix a = random_matrix(3, 3, rng);
  CHECK(rmse(a, a) == 0.0);
  CHECK(rmse((a.array() + 0.25).matrix(), a) == doctest::Approx(0.25).epsilon(1e-14));

  // Brute-force oracle.
  const Matrix b = random_matrix(3, 3, rng);
  double sq = 0.0;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) sq += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  CHECK(rmse(a, b) == doctest::Approx(std::sqrt(sq / 9.0)).epsilon(1e-14));

  CHECK_THROWS_AS(rmse(a, Matrix(Matrix::Zero(3, 2))), ShapeError);
}

TEST_CASE("cross_entropy") {
  Vector onehot = Vector::Zero(11);
  onehot(4) = 1.0;
  CHECK(cross_entropy(onehot, 4) == 0.0);
  CHECK(cross_entropy(Vector(Vector::Constant(11, 1.0 / 11)), 0) ==
        doctest::Approx(std::log(11.0)).epsilon(1e-14));
  CHECK(std::log(11.0) == doctest::Approx(2.3979).epsilon(1e-4));
  CHECK(cross_entropy(onehot, 0) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(cross_entropy(onehot, 11), std::out_of_range);
  CHECK_THROWS_AS(cross_entropy(onehot, -1), std::out_of_range);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient is the identity for any state") {
    Rng rng(11);
    Matrix p = random_matrix(3, 4, rng);
    AdamState s(3, 4);
    s.step = 17;
    s.m = random_matrix(3, 4, rng);
    s.v = random_matrix(3, 4, rng).cwiseAbs();
    const Matrix before = p;
    adam_step(p, Matrix(Matrix::Zero(3, 4)), s);
    CHECK(p == before);
    CHECK(s.step == 18);
  }

  SUBCASE("first step closed form") {
    Matrix theta = Matrix::Constant(1, 1, 1.0);
    AdamState s(1, 1);
    adam_step(theta, Matrix(Matrix::Constant(1, 1, 2.0)), s);
    // m_hat = g, v_hat = g^2 at step 1.
    CHECK(std::abs(theta(0, 0) - 0.999) < 1e-6);
    CHECK(theta(0, 0) == doctest::Approx(1.0 - 0.001 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
  }

  SUBCASE("two constant-gradient steps match a scripted oracle") {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.001, g = 0.37;
    double theta = -0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
      theta -= lr * mh / (std::sqrt(vh) + eps);
    }
    Matrix p = Matrix::Constant(1, 1, -0.5);
    AdamState s(1, 1);
    adam_step(p, Matrix(Matrix::Constant(1, 1, g)), s);
    adam_step(p, Matrix(Matrix::Constant(1, 1, g)), s);
    CHECK(std::abs(p(0, 0) - theta) < 1e-12);
    CHECK(s.step == 2);
  }

  SUBCASE("shape mismatch") {
    Matrix p = Matrix::Zero(2, 2);
    AdamState s(2, 2);
    CHECK_THROWS_AS(adam_step(p, Matrix(Matrix::Zero(2, 3)), s), ShapeError);
  }
}

TEST_CASE("ops are bitwise deterministic") {
  Rng r1(99), r2(99);
  const Matrix a = random_matrix(8, 8, r1), b = random_matrix(8, 8, r2);
  CHECK(a == b);
  CHECK(matmul<double>(a, a) == matmul<double>(b, b));
}
