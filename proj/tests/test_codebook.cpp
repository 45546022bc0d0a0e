#include "doctest.h"
#include "meld/codebook.hpp"
#include "test_util.hpp"

using namespace meld;
using namespace meld::vq;

namespace {

Codebook make_cb(std::initializer_list<double> values, double tau = 1.0) {
  Codebook cb;
  cb.codewords.resize(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index i = 0;
  for (double v : values) cb.codewords(i++, 0) = v;
  cb.tau = tau;
  return cb;
}

RowVector row1(double x) { return RowVector::Constant(1, x); }

}  // namespace

TEST_CASE("k-means on trivial clusters") {
  Matrix pts(4, 1);
  pts << 0, 0, 10, 10;
  KMeansOptions o;
  o.k = 2;
  o.seed = 3;
  const auto rep = kmeans_fit(pts, o);
  std::vector<double> c{rep.codebook.codewords(0, 0), rep.codebook.codewords(1, 0)};
  std::sort(c.begin(), c.end());
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 10.0);
  CHECK(rep.distortion.back() == 0.0);
  CHECK(rep.codebook.frozen);

  Rng rng(1);
  const Matrix five = meld::testing::random_matrix(rng, 5, 3);
  o.k = 5;
  CHECK(kmeans_fit(five, o).distortion.back() < 1e-20);
  o.k = 6;
  CHECK_THROWS_AS(kmeans_fit(five, o), EmptyInputError);
}

TEST_CASE("k-means recovers well separated blobs with non-increasing distortion") {
  Rng rng(2);
  const Matrix centers = (Matrix(3, 2) << 0, 0, 10, 0, 0, 10).finished();
  Matrix pts(300, 2);
  for (int i = 0; i < 300; ++i) {
    pts.row(i) = centers.row(i % 3);
    pts(i, 0) += 0.3 * rng.normal();
    pts(i, 1) += 0.3 * rng.normal();
  }
  KMeansOptions o;
  o.k = 3;
  o.seed = 9;
  const auto rep = kmeans_fit(pts, o);
  for (int c = 0; c < 3; ++c) {
    double best = 1e9;
    for (int k = 0; k < 3; ++k) best = std::min(best, (rep.codebook.codewords.row(k) - centers.row(c)).norm());
    CHECK(best < 0.1);
  }
  for (std::size_t i = 1; i < rep.distortion.size(); ++i) CHECK(rep.distortion[i] <= rep.distortion[i - 1] + 1e-12);
  const auto again = kmeans_fit(pts, o);
  CHECK(again.codebook.codewords == rep.codebook.codewords);
}

TEST_CASE("soft assignment scalar cases") {
  const auto cb = make_cb({0.0, 2.0});
  const auto eq = soft_assign(cb, row1(1.0));
  CHECK(eq.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
  const auto a = soft_assign(cb, row1(0.0));
  CHECK(a.probs[0] == doctest::Approx(0.98201).epsilon(1e-5));
  CHECK(a.probs[1] == doctest::Approx(0.01799).epsilon(1e-3));
  CHECK(std::abs(a.probs[1] - 0.01799) < 1e-5);
  // Direct evaluation of -sum p log p for p = [1, e^-4] / (1 + e^-4).
  const double p0 = 1.0 / (1.0 + std::exp(-4.0));
  const double p1 = 1.0 - p0;
  CHECK(std::abs(assignment_entropy(a) - (-p0 * std::log(p0) - p1 * std::log(p1))) < 1e-12);
  CHECK(std::abs(assignment_entropy(a) - 0.0901) < 1e-4);

  const auto cold = make_cb({0.0, 2.0, 5.0}, 1e-6);
  const auto h = soft_assign(cold, row1(1.9));
  CHECK(h.probs[1] == 1.0);
  CHECK(h.probs[0] == 0.0);
  CHECK(h.probs[2] == 0.0);
  CHECK_THROWS_AS(soft_assign(cb, row1(std::nan(""))), NumericError);
  CHECK_THROWS_AS(soft_assign(cb, RowVector::Zero(2)), ShapeError);
}

TEST_CASE("entropy of one-hot and uniform") {
  SoftAssignment one{Vector::Unit(4, 2)};
  CHECK(assignment_entropy(one) == 0.0);
  SoftAssignment uni{Vector::Constant(8, 1.0 / 8)};
  CHECK(assignment_entropy(uni) == doctest::Approx(std::log(8.0)));
}

TEST_CASE("soft assignment invariants on random cases") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + trial % 7;
    const int d = 1 + trial % 4;
    Codebook cb;
    cb.codewords = meld::testing::random_matrix(rng, k, d, 2.0);
    cb.tau = 0.5 + rng.uniform();
    const RowVector x = meld::testing::random_matrix(rng, 1, d);
    const auto a = soft_assign(cb, x);
    CHECK(std::abs(a.probs.sum() - 1.0) < 1e-12);
    CHECK((a.probs.array() >= 0.0).all());

    // Translating everything leaves the assignment unchanged.
    const RowVector shift = meld::testing::random_matrix(rng, 1, d, 5.0);
    Codebook moved = cb;
    moved.codewords.rowwise() += shift;
    CHECK((soft_assign(moved, x + shift).probs - a.probs).cwiseAbs().maxCoeff() < 1e-9);

    // Moving x toward codeword j never lowers its probability.
    const int j = static_cast<int>(rng.uniform_int(0, k - 1));
    Codebook closer = cb;
    closer.codewords.row(j) = x + 0.5 * (cb.codewords.row(j) - x);
    CHECK(soft_assign(closer, x).probs[j] >= a.probs[j] - 1e-15);
  }
}

TEST_CASE("sampling from assignments") {
  SoftAssignment one{Vector::Unit(3, 1)};
  Rng rng(5);
  for (int i = 0; i < 100; ++i) CHECK(sample_from(one, rng) == 1);
  SoftAssignment half{Vector::Constant(2, 0.5)};
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ones += sample_from(half, rng);
  CHECK(std::abs(ones - n / 2.0) < 3.0 * std::sqrt(n * 0.25));
  Rng a(77), b(77);
  const auto cb = make_cb({0.0, 1.0, 3.0});
  for (int i = 0; i < 20; ++i) CHECK(sample_latent(cb, row1(0.7), a) == sample_latent(cb, row1(0.7), b));
}

TEST_CASE("codebook file round-trip rounds to f32") {
  Rng rng(6);
  Codebook cb;
  cb.codewords = meld::testing::random_matrix(rng, 4, 3);
  cb.tau = 1.0;
  cb.seed = 42;
  cb.frozen = true;
  const auto dir = meld::testing::scratch_dir("codebook");
  save_codebook(dir / "cb.bin", cb);
  const auto back = load_codebook(dir / "cb.bin");
  CHECK(back.codewords == cb.codewords.cast<float>().cast<double>());
  CHECK(back.seed == 42);
  CHECK(back.tau == 1.0);
  save_codebook(dir / "cb2.bin", back);
  CHECK(load_codebook(dir / "cb2.bin").fingerprint() == back.fingerprint());
  CHECK(nearest_codeword(back, back.codewords.row(2)) == 2);
}
