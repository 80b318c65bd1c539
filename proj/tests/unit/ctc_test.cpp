#include <gtest/gtest.h>

#include <cmath>

#include "casceq/ctc.hpp"
#include "casceq/error.hpp"
#include "casceq/rng.hpp"
#include "casceq/text.hpp"

using namespace casceq;

namespace {

constexpr int kA = 0;
constexpr int kB = 1;
constexpr double kOff = -1e3;

// Uniform over {a, blank}; everything else effectively impossible.
MatrixD uniform_a_blank(Eigen::Index t) {
  MatrixD m = MatrixD::Constant(t, alphabet::kClasses, kOff);
  m.col(kA).setZero();
  m.col(alphabet::kBlank).setZero();
  return m;
}

MatrixD frames(const std::vector<int>& cls) {
  MatrixD m = MatrixD::Zero(static_cast<Eigen::Index>(cls.size()), alphabet::kClasses);
  for (std::size_t t = 0; t < cls.size(); ++t) m(static_cast<Eigen::Index>(t), cls[t]) = 5.0;
  return m;
}

MatrixD random_logits(Eigen::Index t, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  MatrixD m(t, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(CtcLoss, SingleFrame) {
  const std::vector<int> target = {kA};
  EXPECT_NEAR(ctc_loss(uniform_a_blank(1), target), std::log(2.0), 1e-12);
}

TEST(CtcLoss, TwoFramesThreePaths) {
  const std::vector<int> target = {kA};
  EXPECT_NEAR(ctc_loss(uniform_a_blank(2), target), -std::log(0.75), 1e-12);
}

TEST(CtcLoss, RepeatNeedsSeparatorFrame) {
  // "aa" needs a-blank-a, so two frames cannot emit it.
  const std::vector<int> target = {kA, kA};
  EXPECT_THROW(ctc_loss(uniform_a_blank(2), target), InputError);
  EXPECT_NEAR(ctc_loss(uniform_a_blank(3), target), -std::log(0.125), 1e-12);
  EXPECT_EQ(ctc_min_frames(target), 3u);
}

TEST(CtcLoss, EmptyTargetIsAllBlank) {
  const MatrixD m = uniform_a_blank(4);
  EXPECT_NEAR(ctc_loss(m, std::vector<int>{}), 4.0 * std::log(2.0), 1e-12);
}

TEST(CtcLoss, ShiftInvariantPerFrame) {
  const MatrixD m = random_logits(6, alphabet::kClasses, 3);
  MatrixD shifted = m;
  for (Eigen::Index t = 0; t < m.rows(); ++t) shifted.row(t).array() += 10.0 * static_cast<double>(t) - 3.0;
  const std::vector<int> target = {kA, kB, kA};
  EXPECT_NEAR(ctc_loss(m, target), ctc_loss(shifted, target), 1e-10);
}

TEST(CtcLoss, NonNegative) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::vector<int> target = {kB, kA};
    EXPECT_GE(ctc_loss(random_logits(5, alphabet::kClasses, s), target), 0.0);
  }
}

TEST(CtcLoss, RejectsBadSymbols) {
  const std::vector<int> bad = {alphabet::kBlank};
  EXPECT_THROW(ctc_loss(uniform_a_blank(3), bad), InputError);
}

TEST(CtcGradient, MatchesFiniteDifferences) {
  // Small class count with blank in the last column.
  const int blank = 3;
  const MatrixD m = random_logits(3, 4, 21);
  const std::vector<int> target = {0, 2};
  const auto r = ctc_loss_and_grad(m, target, blank);
  EXPECT_NEAR(r.loss, ctc_loss(m, target, blank), 1e-12);
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index t = 0; t < m.rows(); ++t)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      MatrixD plus = m, minus = m;
      plus(t, c) += h;
      minus(t, c) -= h;
      const double fd = (ctc_loss(plus, target, blank) - ctc_loss(minus, target, blank)) / (2 * h);
      worst = std::max(worst, std::abs(fd - r.grad(t, c)));
    }
  EXPECT_LE(worst, 1e-4);
}

TEST(CtcGradient, RowsSumToZero) {
  const MatrixD m = random_logits(7, alphabet::kClasses, 8);
  const auto r = ctc_loss_and_grad(m, encode_text("abc"));
  for (Eigen::Index t = 0; t < m.rows(); ++t) EXPECT_NEAR(r.grad.row(t).sum(), 0.0, 1e-12);
}

TEST(GreedyDecode, CollapseRule) {
  EXPECT_EQ(greedy_ctc_decode(frames({kA, kA, alphabet::kBlank, kB})), "ab");
  EXPECT_EQ(greedy_ctc_decode(frames({kA, alphabet::kBlank, kA})), "aa");
  EXPECT_EQ(greedy_ctc_decode(frames({alphabet::kBlank, alphabet::kBlank})), "");
}

TEST(GreedyDecode, TiesGoToLowestClass) {
  const MatrixD m = MatrixD::Zero(2, alphabet::kClasses);
  EXPECT_EQ(argmax_path(m), (std::vector<int>{0, 0}));
  EXPECT_EQ(greedy_ctc_decode(m), "a");
}

TEST(Collapse, MergesThenDropsBlanks) {
  const std::vector<int> path = {48, 3, 3, 48, 3, 7, 7, 48};
  EXPECT_EQ(ctc_collapse(path), (std::vector<int>{3, 3, 7}));
}
