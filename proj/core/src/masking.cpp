#include "dansep/masking.hpp"

#include <cmath>

namespace dansep::mask {

MaskThreshold::MaskThreshold(double t) : tau(t) {
  if (!(t > 0.0 && t < 1.0)) throw ConfigError("mask threshold must lie in (0, 1)");
}

void check_shapes(const MaskSet& masks, Eigen::Index rows, Eigen::Index cols, const char* what) {
  for (const auto& m : masks)
    if (m.rows() != rows || m.cols() != cols)
      throw Error(std::string(what) + ": mask shape " + std::to_string(m.rows()) + "x" +
                  std::to_string(m.cols()) + " does not match " + std::to_string(rows) + "x" +
                  std::to_string(cols));
}

MaskSet wiener_like_masks(const std::vector<Matrix>& source_mags) {
  if (source_mags.empty()) throw Error("wiener_like_masks: need at least one source");
  const Eigen::Index rows = source_mags.front().rows();
  const Eigen::Index cols = source_mags.front().cols();
  check_shapes(source_mags, rows, cols, "wiener_like_masks");

  Matrix total = Matrix::Zero(rows, cols);
  for (const auto& s : source_mags) {
    if ((s.array() < 0.0).any()) throw Error("wiener_like_masks: magnitudes must be nonnegative");
    total += s.cwiseAbs2();
  }
  const double uniform = 1.0 / static_cast<double>(source_mags.size());
  MaskSet masks;
  masks.reserve(source_mags.size());
  for (const auto& s : source_mags) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i)
        m(i, j) = total(i, j) > 0.0 ? s(i, j) * s(i, j) / total(i, j) : uniform;
    masks.push_back(std::move(m));
  }
  return masks;
}

Matrix binarize(const Matrix& soft, MaskThreshold tau) {
  return (soft.array() > tau.tau).cast<double>().matrix();
}

MaskSet binarize(const MaskSet& soft, MaskThreshold tau) {
  MaskSet out;
  out.reserve(soft.size());
  for (const auto& m : soft) out.push_back(binarize(m, tau));
  return out;
}

ComplexMatrix apply_mask(const Matrix& mix_mag, const Matrix& mask, const Matrix& mix_phase) {
  if (mask.rows() != mix_mag.rows() || mask.cols() != mix_mag.cols())
    throw Error("apply_mask: mask shape does not match the mixture magnitude");
  return dsp::polar(mask.cwiseProduct(mix_mag), mix_phase);
}

Matrix energy_gate(const Matrix& mix_mag, double threshold_db) {
  const double peak = mix_mag.size() ? mix_mag.maxCoeff() : 0.0;
  if (peak <= 0.0) return Matrix::Zero(mix_mag.rows(), mix_mag.cols());
  const double floor = peak * std::pow(10.0, threshold_db / 20.0);
  return (mix_mag.array() >= floor).cast<double>().matrix();
}

}  // namespace dansep::mask
