#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <deque>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "prrn/rigidity.hpp"
#include "prrn/rng.hpp"
#include "prrn/types.hpp"

using prrn::Frame2D;
using prrn::Mat;
using prrn::MemoryBank;
using prrn::PairSets;
using prrn::RigidityThresholds;
using prrn::Rng;

namespace {

// Independent recomputation of the rigidity measure: gather common-visible
// columns, re-center, and take s4^2/sum(s^2) from Eigen's Jacobi SVD.
double oracle_msr(const Frame2D& wi, const Frame2D& wj) {
  std::vector<std::size_t> common;
  for (std::size_t p = 0; p < wi.points(); ++p)
    if (wi.mask[p] && wj.mask[p]) common.push_back(p);
  REQUIRE(common.size() >= 4);
  Eigen::MatrixXd a(4, common.size());
  for (std::size_t c = 0; c < common.size(); ++c) {
    a(0, c) = wi.W(0, common[c]);
    a(1, c) = wi.W(1, common[c]);
    a(2, c) = wj.W(0, common[c]);
    a(3, c) = wj.W(1, common[c]);
  }
  Eigen::VectorXd means = a.rowwise().mean();
  a.colwise() -= means;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  Eigen::VectorXd s = svd.singularValues();
  double total = s.squaredNorm();
  if (total <= 0.0) return 0.0;
  return s(3) * s(3) / total;
}

Frame2D random_frame(Rng& rng, std::size_t points, int index) {
  return prrn::make_frame(rng.gaussian_mat(2, points), index);
}

// Two frames over the same point count whose masks share at least `overlap`
// visible columns; the remaining columns get independent random visibility.
std::pair<Frame2D, Frame2D> random_masked_pair(Rng& rng, std::size_t points,
                                               std::size_t overlap) {
  std::vector<std::uint8_t> mi(points, 0), mj(points, 0);
  std::vector<int> order(points);
  for (std::size_t p = 0; p < points; ++p) order[p] = (int)p;
  rng.shuffle(order);
  for (std::size_t k = 0; k < overlap; ++k) mi[order[k]] = mj[order[k]] = 1;
  for (std::size_t k = overlap; k < points; ++k) {
    mi[order[k]] = rng.uniform() < 0.5 ? 1 : 0;
    mj[order[k]] = rng.uniform() < 0.5 ? 1 : 0;
  }
  Frame2D a = prrn::make_frame(rng.gaussian_mat(2, points), mi, 0);
  Frame2D b = prrn::make_frame(rng.gaussian_mat(2, points), mj, 1);
  return {std::move(a), std::move(b)};
}

Mat unit_column(Rng& rng, std::size_t dim) {
  Mat h = rng.gaussian_mat(dim, 1);
  double n = prrn::frobenius_norm(h);
  for (auto& v : h.data) v /= n;
  return h;
}

}  // namespace

TEST_CASE("msr vanishes for identical frames and rigid pairs") {
  Rng rng(401);
  // identical frames: duplicated rows, rank <= 2
  for (int t = 0; t < 20; ++t) {
    Frame2D w = random_frame(rng, 4 + rng.bounded(30), t);
    CHECK(prrn::msr(w, w) < 1e-12);
  }
  // two orthographic views of one rigid 3D shape: rank <= 3 stack
  for (int t = 0; t < 50; ++t) {
    std::size_t p = 5 + rng.bounded(26);
    Mat s = rng.gaussian_mat(3, p);
    Mat r1 = rng.random_rotation3();
    Mat r2 = rng.random_rotation3();
    Mat m1(2, 3), m2(2, 3);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        m1(i, j) = r1(i, j);
        m2(i, j) = r2(i, j);
      }
    Frame2D wa = prrn::make_frame(prrn::matmul(m1, s), 0);
    Frame2D wb = prrn::make_frame(prrn::matmul(m2, s), 1);
    CHECK(prrn::msr(wa, wb) < 1e-10);
  }
}

TEST_CASE("msr reaches the 0.25 ceiling on four orthonormal zero-mean rows") {
  // rows 1,2 and 3,4 of the 8x8 Hadamard matrix, scaled to unit norm: they
  // are mutually orthogonal, zero-sum (so centering is a no-op), and give a
  // stack with four equal singular values
  auto hadamard_row = [](unsigned r, Mat& w, std::size_t row) {
    for (unsigned c = 0; c < 8; ++c) {
      int bits = __builtin_popcount(r & c);
      w(row, c) = ((bits % 2 == 0) ? 1.0 : -1.0) / std::sqrt(8.0);
    }
  };
  Mat wi(2, 8), wj(2, 8);
  hadamard_row(1, wi, 0);
  hadamard_row(2, wi, 1);
  hadamard_row(3, wj, 0);
  hadamard_row(4, wj, 1);
  Frame2D a = prrn::make_frame(wi, 0);
  Frame2D b = prrn::make_frame(wj, 1);
  CHECK(prrn::msr(a, b) == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("msr is symmetric and invariant to common scaling") {
  Rng rng(402);
  for (int t = 0; t < 50; ++t) {
    auto [a, b] = random_masked_pair(rng, 6 + rng.bounded(20), 5);
    double fwd = prrn::msr(a, b);
    double bwd = prrn::msr(b, a);
    CHECK(std::abs(fwd - bwd) < 1e-12);

    double c = rng.uniform(0.01, 1000.0);
    Frame2D as = prrn::make_frame(prrn::scaled(a.W, c), a.mask, a.index);
    Frame2D bs = prrn::make_frame(prrn::scaled(b.W, c), b.mask, b.index);
    CHECK(std::abs(prrn::msr(as, bs) - fwd) < 1e-12);
  }
}

TEST_CASE("msr stays in [0, 0.25] on fuzzed inputs") {
  Rng rng(403);
  for (int t = 0; t < 500; ++t) {
    std::size_t p = 4 + rng.bounded(37);
    double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
    auto [a, b] = random_masked_pair(rng, p, 4 + rng.bounded(p - 3));
    Frame2D af = prrn::make_frame(prrn::scaled(a.W, scale), a.mask, 0);
    Frame2D bf = prrn::make_frame(prrn::scaled(b.W, scale), b.mask, 1);
    double r = prrn::msr(af, bf);
    CHECK(r >= 0.0);
    CHECK(r <= 0.25);
  }
  // degenerate stacks: all-zero observations and rank-1 pairs
  Frame2D zero_a = prrn::make_frame(Mat(2, 6), 0);
  Frame2D zero_b = prrn::make_frame(Mat(2, 6), 1);
  CHECK(prrn::msr(zero_a, zero_b) == 0.0);
  Frame2D base = random_frame(rng, 9, 0);
  Frame2D doubled = prrn::make_frame(prrn::scaled(base.W, 2.0), 1);
  double r = prrn::msr(base, doubled);
  CHECK(r >= 0.0);
  CHECK(r < 1e-12);
}

TEST_CASE("msr agrees with a general-purpose SVD oracle") {
  Rng rng(404);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::size_t p = 4 + rng.bounded(30);
    auto [a, b] = random_masked_pair(rng, p, 4 + rng.bounded(p - 3));
    worst = std::max(worst, std::abs(prrn::msr(a, b) - oracle_msr(a, b)));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("msr rejects insufficient overlap and mismatched point counts") {
  Rng rng(405);
  std::vector<std::uint8_t> mi{1, 1, 1, 0, 0, 1};
  std::vector<std::uint8_t> mj{1, 1, 1, 1, 1, 0};  // only 3 common columns
  Frame2D a = prrn::make_frame(rng.gaussian_mat(2, 6), mi, 0);
  Frame2D b = prrn::make_frame(rng.gaussian_mat(2, 6), mj, 1);
  CHECK_THROWS_AS(prrn::msr(a, b), prrn::overlap_error);

  Frame2D c = random_frame(rng, 7, 2);
  CHECK_THROWS_AS(prrn::msr(a, c), prrn::shape_error);
}

TEST_CASE("memory bank keeps FIFO order and evicts oldest first") {
  Rng rng(406);
  std::vector<Frame2D> frames;
  for (int i = 0; i < 5; ++i) frames.push_back(random_frame(rng, 8, i));

  MemoryBank bank(4);
  CHECK(bank.capacity() == 4);
  for (int i = 0; i < 3; ++i) bank.push(frames[i], unit_column(rng, 8));
  CHECK(bank.size() == 3);  // below capacity: no eviction
  for (int i = 3; i < 5; ++i) bank.push(frames[i], unit_column(rng, 8));
  REQUIRE(bank.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(bank.entry(i).frame == i + 1);  // frame 0 evicted

  // filling an empty bank to exactly its capacity evicts nothing
  MemoryBank exact(5);
  for (int i = 0; i < 5; ++i) exact.push(frames[i], unit_column(rng, 8));
  for (int i = 0; i < 5; ++i) CHECK(exact.entry(i).frame == i);

  CHECK(MemoryBank().capacity() == 1024);
}

TEST_CASE("memory bank matches a reference queue over long random sequences") {
  Rng rng(407);
  std::vector<Frame2D> frames;
  for (int i = 0; i < 40; ++i) frames.push_back(random_frame(rng, 6, i));

  for (std::size_t cap : {std::size_t{1}, std::size_t{7}, std::size_t{1024}}) {
    MemoryBank bank(cap);
    std::deque<int> model;
    for (int step = 0; step < 10000; ++step) {
      int f = (int)rng.bounded(frames.size());
      bank.push(frames[f], unit_column(rng, 8));
      model.push_back(f);
      if (model.size() > cap) model.pop_front();
      REQUIRE(bank.size() == model.size());
      if (step % 97 == 0 || step > 9990)
        for (std::size_t k = 0; k < model.size(); ++k) REQUIRE(bank.entry(k).frame == model[k]);
    }
  }
}

TEST_CASE("memory bank rejects malformed representations") {
  Rng rng(408);
  Frame2D f = random_frame(rng, 8, 0);
  MemoryBank bank(4);
  Mat short_h = unit_column(rng, 8);
  for (auto& v : short_h.data) v *= 0.5;
  CHECK_THROWS_AS(bank.push(f, short_h), prrn::data_error);
  CHECK_THROWS_AS(bank.push(f, Mat(2, 2)), prrn::shape_error);
  CHECK_THROWS_AS(MemoryBank(0), prrn::data_error);
  CHECK(bank.empty());
}

TEST_CASE("latest_h returns the newest banked copy") {
  Rng rng(409);
  Frame2D f3 = random_frame(rng, 8, 3);
  Frame2D f5 = random_frame(rng, 8, 5);
  MemoryBank bank(8);
  Mat first = unit_column(rng, 4);
  Mat second = unit_column(rng, 4);
  bank.push(f3, first);
  bank.push(f5, unit_column(rng, 4));
  bank.push(f3, second);

  const Mat* got = prrn::latest_h(bank, 3);
  REQUIRE(got != nullptr);
  CHECK(prrn::frobenius_norm(prrn::sub(*got, second)) == 0.0);
  CHECK(prrn::latest_h(bank, 99) == nullptr);
}

TEST_CASE("pair sets match a brute-force oracle scan") {
  Rng rng(410);
  const std::size_t p = 12;

  // 40 views of one rigid shape (mutually rigid with the anchor) and 60
  // independent deforming frames
  Mat s = rng.gaussian_mat(3, p);
  std::vector<Frame2D> frames;
  for (int i = 0; i < 40; ++i) {
    Mat r = rng.random_rotation3();
    Mat m(2, 3);
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 3; ++b) m(a, b) = r(a, b);
    frames.push_back(prrn::make_frame(prrn::matmul(m, s), i));
  }
  for (int i = 40; i < 100; ++i) frames.push_back(random_frame(rng, p, i));

  MemoryBank bank(128);
  for (const Frame2D& f : frames) bank.push(f, unit_column(rng, 8));

  RigidityThresholds th;  // tau = 0.02, xi = 0.04
  const Frame2D& anchor = frames[0];
  PairSets sets = prrn::build_pair_sets(anchor, bank, th);

  std::vector<int> want_pos, want_neg;
  for (const Frame2D& f : frames) {
    double r = oracle_msr(anchor, f);
    if (r < th.tau) want_pos.push_back(f.index);
    else if (r > th.xi) want_neg.push_back(f.index);
  }
  CHECK(sets.positives == want_pos);
  CHECK(sets.negatives == want_neg);
  CHECK(sets.positives.size() >= 40);  // the rigid family is all positive
  for (int j : sets.positives)
    CHECK(std::find(sets.negatives.begin(), sets.negatives.end(), j) == sets.negatives.end());
}

TEST_CASE("pair sets honor strict threshold inequalities") {
  Rng rng(411);
  // one exactly-rigid partner (msr 0) and one maximally non-rigid partner
  // (msr 0.25): with tau=0, xi=0.25 strict comparisons exclude both
  auto hadamard_frame = [](unsigned r0, unsigned r1, int index) {
    Mat w(2, 8);
    for (unsigned c = 0; c < 8; ++c) {
      w(0, c) = (__builtin_popcount(r0 & c) % 2 == 0) ? 1.0 : -1.0;
      w(1, c) = (__builtin_popcount(r1 & c) % 2 == 0) ? 1.0 : -1.0;
    }
    return prrn::make_frame(w, index);
  };
  Frame2D anchor = hadamard_frame(1, 2, 0);
  Frame2D twin = hadamard_frame(1, 2, 1);
  Frame2D opposite = hadamard_frame(3, 4, 2);

  MemoryBank bank(8);
  bank.push(twin, unit_column(rng, 4));
  bank.push(opposite, unit_column(rng, 4));

  PairSets sets = prrn::build_pair_sets(anchor, bank, RigidityThresholds{0.0, 0.25});
  CHECK(sets.positives.empty());
  CHECK(sets.negatives.empty());

  // widening past the extremes captures them
  sets = prrn::build_pair_sets(anchor, bank, RigidityThresholds{0.01, 0.24});
  CHECK(sets.positives == std::vector<int>{1});
  CHECK(sets.negatives == std::vector<int>{2});

  // a bank holding only copies of the anchor is all positive
  MemoryBank same(8);
  for (int i = 0; i < 5; ++i) same.push(twin, unit_column(rng, 4));
  sets = prrn::build_pair_sets(anchor, same, RigidityThresholds{});
  CHECK(sets.positives == std::vector<int>{1});
  CHECK(sets.negatives.empty());
}

TEST_CASE("rigidity thresholds are validated") {
  CHECK_NOTHROW(RigidityThresholds{}.validate());
  CHECK_NOTHROW(RigidityThresholds{0.0, 0.25}.validate());
  CHECK_THROWS_AS((RigidityThresholds{-0.01, 0.04}.validate()), prrn::data_error);
  CHECK_THROWS_AS((RigidityThresholds{0.04, 0.02}.validate()), prrn::data_error);
  CHECK_THROWS_AS((RigidityThresholds{0.02, 0.26}.validate()), prrn::data_error);
  CHECK_THROWS_AS((RigidityThresholds{0.02, 0.02}.validate()), prrn::data_error);
}
