#pragma once

#include "dansep/common.hpp"
#include "dansep/dsp.hpp"

namespace dansep::mask {

/// Masks are F x T matrices in the same layout as the spectrograms they gate.
/// Soft masks live in [0, 1]; binary masks hold exactly 0 or 1.
using MaskSet = std::vector<Matrix>;

/// Binarization threshold; must lie strictly inside (0, 1).
struct MaskThreshold {
  double tau = 0.5;
  explicit MaskThreshold(double t = 0.5);
};

/// Per-bin power share |s_i|^2 / sum_j |s_j|^2. Bins where every source is
/// silent get 1/N for every speaker, so the masks always sum to one.
MaskSet wiener_like_masks(const std::vector<Matrix>& source_mags);

/// 1 where mask > tau (strict), else 0.
Matrix binarize(const Matrix& soft, MaskThreshold tau = MaskThreshold{});
MaskSet binarize(const MaskSet& soft, MaskThreshold tau = MaskThreshold{});

/// (mask .* mix_mag) * exp(i * mix_phase).
ComplexMatrix apply_mask(const Matrix& mix_mag, const Matrix& mask, const Matrix& mix_phase);

/// Optional silence gate: 1 for bins within `threshold_db` (negative) of the
/// loudest bin, 0 below. Disabled in the default pipeline.
Matrix energy_gate(const Matrix& mix_mag, double threshold_db = -40.0);

/// Throws Error if the masks are not all F x T.
void check_shapes(const MaskSet& masks, Eigen::Index rows, Eigen::Index cols, const char* what);

}  // namespace dansep::mask
