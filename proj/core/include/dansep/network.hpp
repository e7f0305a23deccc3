#pragma once

#include "dansep/common.hpp"
#include "dansep/dsp.hpp"
#include "dansep/masking.hpp"

#include <cstdint>
#include <string>

namespace dansep::net {

enum class CellKind { Gru, Lstm };

std::string to_string(CellKind kind);
CellKind cell_kind_from_string(const std::string& name);

struct ArchSpec {
  int input_dim = 129;
  int num_layers = 4;
  int hidden = 300;  // per direction; a layer has 2 * hidden units
  int embed_dim = 20;
  CellKind cell = CellKind::Gru;

  int fc_output() const { return embed_dim * input_dim; }
  /// Throws ConfigError on non-positive sizes. `allow_empty_embedding` admits
  /// K = 0, which only makes sense for parameter counting.
  void validate(bool allow_empty_embedding = false) const;
  bool operator==(const ArchSpec&) const = default;
};

/// Closed-form parameter count: per layer and direction G * (in*h + h*h + 2h)
/// with G = 3 (GRU) or 4 (LSTM), plus the 2h -> K*F projection with bias.
std::int64_t count_params(const ArchSpec& arch);

/// Location of one tensor inside the flat parameter vector. Matrices are stored
/// row-major.
struct Slot {
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 1;
  Eigen::Index size() const { return rows * cols; }
};

/// Flat storage order: for each layer, forward then backward direction, the
/// tensors W_ih (3h x in, gate rows z|r|n), W_hh (3h x h), b_ih (3h), b_hh (3h);
/// then W_fc (K*F x 2h) and b_fc (K*F).
class ParamLayout {
 public:
  struct Direction {
    Slot w_ih, w_hh, b_ih, b_hh;
    int input = 0;
  };

  ParamLayout() = default;
  explicit ParamLayout(const ArchSpec& arch);

  const Direction& direction(int layer, int dir) const { return dirs_.at(2 * layer + dir); }
  const Slot& fc_weight() const { return fc_w_; }
  const Slot& fc_bias() const { return fc_b_; }
  Eigen::Index size() const { return size_; }

  /// Every tensor with a readable name such as "l0.fwd.w_hh" or "fc.b".
  std::vector<std::pair<std::string, Slot>> named_slots() const;

 private:
  std::vector<Direction> dirs_;
  Slot fc_w_, fc_b_;
  Eigen::Index size_ = 0;
};

struct GruWeights {
  Eigen::Map<const RowMatrix> w_ih;
  Eigen::Map<const RowMatrix> w_hh;
  Eigen::Map<const Vector> b_ih;
  Eigen::Map<const Vector> b_hh;
};

/// Trainable weights in one flat vector plus the (non-trainable) feature
/// statistics used to standardize the network input.
class ModelParams {
 public:
  ModelParams() = default;
  /// All parameters zero; identity feature statistics.
  explicit ModelParams(const ArchSpec& arch);

  /// Uniform in [-1/sqrt(h), 1/sqrt(h)] for every tensor.
  static ModelParams random(const ArchSpec& arch, std::uint64_t seed);

  const ArchSpec& arch() const { return arch_; }
  const ParamLayout& layout() const { return layout_; }
  Vector& values() { return values_; }
  const Vector& values() const { return values_; }

  Eigen::Map<RowMatrix> matrix(const Slot& s) {
    return {values_.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<const RowMatrix> matrix(const Slot& s) const {
    return {values_.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<Vector> vector(const Slot& s) { return {values_.data() + s.offset, s.size()}; }
  Eigen::Map<const Vector> vector(const Slot& s) const {
    return {values_.data() + s.offset, s.size()};
  }
  GruWeights gru(int layer, int dir) const;

  dsp::FeatureStats stats;

 private:
  ArchSpec arch_;
  ParamLayout layout_;
  Vector values_;
};

/// V in R^{K x F*T}; column t*F + f holds the embedding of bin (f, t).
struct EmbeddingMatrix {
  Matrix values;
  Eigen::Index num_bins = 0;

  Eigen::Index dim() const { return values.rows(); }
  Eigen::Index num_frames() const { return num_bins ? values.cols() / num_bins : 0; }
};

/// One GRU step:
///   z = sig(W_z x + b_iz + U_z h + b_hz),  r = sig(W_r x + b_ir + U_r h + b_hr)
///   n = tanh(W_n x + b_in + r .* (U_n h + b_hn)),  h' = (1 - z) .* n + z .* h
Vector gru_cell(const Vector& x, const Vector& h_prev, const GruWeights& w);

/// Stacked BGRU over the frames of `features` (F x T, already standardized),
/// then the linear map to K*F values per frame. No output nonlinearity.
EmbeddingMatrix forward_embed(const Matrix& features, const ModelParams& params);

/// Row i is the mask-weighted mean of V's columns: a_i = m_i V^T / sum(m_i).
Matrix train_attractors(const EmbeddingMatrix& v, const mask::MaskSet& masks);

/// sigmoid(a_i V) for each attractor row, reshaped to F x T.
mask::MaskSet estimate_masks(const EmbeddingMatrix& v, const Matrix& attractors);

/// (1/N) sum_i || w .* X .* (m_i - mhat_i) ||^2 over every bin, where the
/// optional bin weights default to one (an empty matrix means no weighting).
double loss(const Matrix& mix_mag, const mask::MaskSet& ideal, const mask::MaskSet& estimated,
            const Matrix& bin_weights = {});

struct LossAndGradient {
  double loss = 0.0;
  Vector gradient;  // same layout as ModelParams::values()
};

/// Loss and its exact gradient with respect to every trainable parameter for
/// one utterance, back-propagated through the mask, the attractors, the
/// projection and the recurrences.
LossAndGradient backward(const Matrix& features, const Matrix& mix_mag,
                         const mask::MaskSet& ideal_masks, const ModelParams& params,
                         const Matrix& bin_weights = {});

/// Loss evaluation without gradients (validation, finite differences).
double evaluate_loss(const Matrix& features, const Matrix& mix_mag,
                     const mask::MaskSet& ideal_masks, const ModelParams& params,
                     const Matrix& bin_weights = {});

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  Eigen::Index checked = 0;
};

/// Compares backward() against central differences on every parameter of a
/// randomly initialized network with random inputs. Relative error is
/// |a - n| / max(|a|, |n|, abs_floor).
GradCheckResult gradient_check(const ArchSpec& arch, int frames, int speakers,
                               std::uint64_t seed, double step = 1e-5,
                               double abs_floor = 1e-6);

}  // namespace dansep::net
