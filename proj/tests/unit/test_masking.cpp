#include "dansep/masking.hpp"

#include "test_util.hpp"

#include <numbers>

namespace {

namespace mask = dansep::mask;
using dansep::Matrix;

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

TEST(WienerMasks, EqualMagnitudesSplitEvenly) {
  const auto m = mask::wiener_like_masks({scalar(3.0), scalar(3.0)});
  EXPECT_DOUBLE_EQ(m[0](0, 0), 0.5);
  EXPECT_DOUBLE_EQ(m[1](0, 0), 0.5);
}

TEST(WienerMasks, PowerShare) {
  const auto m = mask::wiener_like_masks({scalar(2.0), scalar(1.0)});
  EXPECT_DOUBLE_EQ(m[0](0, 0), 0.8);
  EXPECT_DOUBLE_EQ(m[1](0, 0), 0.2);
}

TEST(WienerMasks, SilentBinsGetOneOverN) {
  const auto two = mask::wiener_like_masks({scalar(0.0), scalar(0.0)});
  EXPECT_EQ(two[0](0, 0), 0.5);
  EXPECT_EQ(two[1](0, 0), 0.5);
  const auto three = mask::wiener_like_masks({scalar(0.0), scalar(0.0), scalar(0.0)});
  EXPECT_DOUBLE_EQ(three[2](0, 0), 1.0 / 3.0);
}

TEST(WienerMasks, SumToOneEverywhere) {
  for (int n = 1; n <= 4; ++n) {
    std::vector<Matrix> mags;
    for (int i = 0; i < n; ++i) {
      Matrix m = Matrix::Random(13, 17).cwiseAbs();
      m.col(3).setZero();  // silent column in every source
      mags.push_back(m);
    }
    const auto masks = mask::wiener_like_masks(mags);
    Matrix sum = Matrix::Zero(13, 17);
    for (const auto& m : masks) {
      EXPECT_GE(m.minCoeff(), 0.0);
      EXPECT_LE(m.maxCoeff(), 1.0);
      sum += m;
    }
    EXPECT_LT((sum.array() - 1.0).abs().maxCoeff(), 1e-15) << n;
  }
}

TEST(WienerMasks, RejectsShapeMismatchAndEmptyInput) {
  EXPECT_THROW(mask::wiener_like_masks({Matrix::Ones(2, 3), Matrix::Ones(3, 2)}), dansep::Error);
  EXPECT_THROW(mask::wiener_like_masks({}), dansep::Error);
}

TEST(Binarize, StrictThreshold) {
  const mask::MaskThreshold tau(0.5);
  EXPECT_EQ(mask::binarize(scalar(0.8), tau)(0, 0), 1.0);
  EXPECT_EQ(mask::binarize(scalar(0.5), tau)(0, 0), 0.0);
  EXPECT_EQ(mask::binarize(scalar(0.2), tau)(0, 0), 0.0);
}

TEST(Binarize, ThresholdMustLieInsideUnitInterval) {
  EXPECT_THROW(mask::MaskThreshold(0.0), dansep::ConfigError);
  EXPECT_THROW(mask::MaskThreshold(1.0), dansep::ConfigError);
  EXPECT_NO_THROW(mask::MaskThreshold(0.7));
}

TEST(Binarize, MasksAreDisjointForTauAtLeastHalf) {
  for (double tau : {0.5, 0.6, 0.9}) {
    for (int n = 2; n <= 4; ++n) {
      std::vector<Matrix> mags;
      for (int i = 0; i < n; ++i) mags.push_back(Matrix::Random(20, 30).cwiseAbs());
      mags[0](0, 0) = mags[1](0, 0) = 1.0;  // exact tie
      for (int i = 2; i < n; ++i) mags[i](0, 0) = 0.0;
      const auto bin = mask::binarize(mask::wiener_like_masks(mags), mask::MaskThreshold(tau));
      Matrix sum = Matrix::Zero(20, 30);
      for (const auto& b : bin) {
        EXPECT_TRUE(((b.array() == 0.0) || (b.array() == 1.0)).all());
        sum += b;
      }
      EXPECT_LE(sum.maxCoeff(), 1.0);
      EXPECT_EQ(sum(0, 0), 0.0);  // tie leaves the bin unassigned
    }
  }
}

TEST(ApplyMask, OnesZerosAndHalf) {
  const Matrix mag = Matrix::Random(6, 5).cwiseAbs();
  const Matrix ph = Matrix::Random(6, 5) * 3.0;
  const auto full = mask::apply_mask(mag, Matrix::Ones(6, 5), ph);
  const auto ref = dansep::dsp::polar(mag, ph);
  EXPECT_LT((full - ref).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(mask::apply_mask(mag, Matrix::Zero(6, 5), ph).cwiseAbs().maxCoeff(), 0.0);

  const auto half = mask::apply_mask(Matrix::Ones(6, 5), Matrix::Constant(6, 5, 0.5), ph);
  for (Eigen::Index i = 0; i < half.size(); ++i) {
    EXPECT_NEAR(std::abs(half(i)), 0.5, 1e-15);
    EXPECT_NEAR(std::arg(half(i)), std::remainder(ph(i), 2 * std::numbers::pi), 1e-12);
  }
}

TEST(ApplyMask, RejectsShapeMismatch) {
  EXPECT_THROW(mask::apply_mask(Matrix::Ones(2, 2), Matrix::Ones(2, 3), Matrix::Zero(2, 2)), dansep::Error);
}

TEST(EnergyGate, KeepsBinsWithinThreshold) {
  Matrix mag(1, 4);
  mag << 1.0, 0.011, 0.009, 0.0;
  const Matrix g = mask::energy_gate(mag, -40.0);
  EXPECT_EQ(g(0, 0), 1.0);
  EXPECT_EQ(g(0, 1), 1.0);
  EXPECT_EQ(g(0, 2), 0.0);
  EXPECT_EQ(g(0, 3), 0.0);
}

}  // namespace
