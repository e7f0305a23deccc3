#include "dansep/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dansep::net {
namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw DivergenceError(std::string("non-finite values in ") + what);
}

struct DirectionTrace {
  Matrix z, r, n, hn, h;  // each hidden x T
};

struct LayerTrace {
  DirectionTrace dir[2];
  Matrix output;  // 2h x T
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Matrix fc_out;  // K*F x T; its storage is V (K x F*T)
};

void run_direction(const Matrix& x, const GruWeights& w, bool reverse, DirectionTrace& tr) {
  const Eigen::Index h = w.w_hh.cols();
  const Eigen::Index steps = x.cols();
  Matrix gi = w.w_ih * x;
  gi.colwise() += w.b_ih;

  tr.z.resize(h, steps);
  tr.r.resize(h, steps);
  tr.n.resize(h, steps);
  tr.hn.resize(h, steps);
  tr.h.resize(h, steps);

  Vector h_prev = Vector::Zero(h);
  Vector gh(3 * h);
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    gh.noalias() = w.w_hh * h_prev;
    gh += w.b_hh;
    for (Eigen::Index k = 0; k < h; ++k) {
      const double z = sigmoid(gi(k, t) + gh(k));
      const double r = sigmoid(gi(h + k, t) + gh(h + k));
      const double hn = gh(2 * h + k);
      const double n = std::tanh(gi(2 * h + k, t) + r * hn);
      tr.z(k, t) = z;
      tr.r(k, t) = r;
      tr.hn(k, t) = hn;
      tr.n(k, t) = n;
      tr.h(k, t) = (1.0 - z) * n + z * h_prev(k);
    }
    h_prev = tr.h.col(t);
  }
}

ForwardTrace run_forward(const Matrix& features, const ModelParams& params) {
  const ArchSpec& arch = params.arch();
  if (features.rows() != arch.input_dim)
    throw Error("forward_embed: feature rows (" + std::to_string(features.rows()) +
                ") differ from input_dim (" + std::to_string(arch.input_dim) + ")");
  if (features.cols() < 1) throw Error("forward_embed: need at least one frame");

  ForwardTrace trace;
  trace.layers.resize(arch.num_layers);
  const Eigen::Index h = arch.hidden;
  for (int l = 0; l < arch.num_layers; ++l) {
    const Matrix& input = l == 0 ? features : trace.layers[l - 1].output;
    LayerTrace& lt = trace.layers[l];
    run_direction(input, params.gru(l, 0), false, lt.dir[0]);
    run_direction(input, params.gru(l, 1), true, lt.dir[1]);
    lt.output.resize(2 * h, input.cols());
    lt.output.topRows(h) = lt.dir[0].h;
    lt.output.bottomRows(h) = lt.dir[1].h;
  }
  const auto& layout = params.layout();
  trace.fc_out.noalias() = params.matrix(layout.fc_weight()) * trace.layers.back().output;
  trace.fc_out.colwise() += params.vector(layout.fc_bias());
  require_finite(trace.fc_out, "embedding activations");
  return trace;
}

EmbeddingMatrix to_embedding(const Matrix& fc_out, const ArchSpec& arch) {
  EmbeddingMatrix v;
  v.num_bins = arch.input_dim;
  v.values = Eigen::Map<const Matrix>(fc_out.data(), arch.embed_dim, fc_out.size() / arch.embed_dim);
  return v;
}

// Back-propagates dH (hidden x T) through one direction; accumulates parameter
// gradients into `grad` and input gradients into `dx`.
void backprop_direction(const Matrix& x, const GruWeights& w, const ParamLayout::Direction& slots,
                        bool reverse, const DirectionTrace& tr, const Matrix& dh_out,
                        Vector& grad, Matrix& dx) {
  const Eigen::Index h = w.w_hh.cols();
  const Eigen::Index steps = x.cols();
  Matrix d_gi(3 * h, steps);
  Matrix d_gh(3 * h, steps);
  Matrix h_prevs(h, steps);

  Vector carry = Vector::Zero(h);
  for (Eigen::Index s = steps - 1; s >= 0; --s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    const bool first = s == 0;
    const Eigen::Index t_prev = reverse ? t + 1 : t - 1;
    for (Eigen::Index k = 0; k < h; ++k) {
      const double hp = first ? 0.0 : tr.h(k, t_prev);
      const double dh = dh_out(k, t) + carry(k);
      const double z = tr.z(k, t), r = tr.r(k, t), n = tr.n(k, t), hn = tr.hn(k, t);
      const double da_n = dh * (1.0 - z) * (1.0 - n * n);
      const double da_z = dh * (hp - n) * z * (1.0 - z);
      const double da_r = da_n * hn * r * (1.0 - r);
      const double d_hn = da_n * r;
      d_gi(k, t) = da_z;
      d_gi(h + k, t) = da_r;
      d_gi(2 * h + k, t) = da_n;
      d_gh(k, t) = da_z;
      d_gh(h + k, t) = da_r;
      d_gh(2 * h + k, t) = d_hn;
      h_prevs(k, t) = hp;
      carry(k) = dh * z;
    }
    carry.noalias() += w.w_hh.transpose() * d_gh.col(t);
  }

  Eigen::Map<RowMatrix>(grad.data() + slots.w_ih.offset, 3 * h, x.rows()).noalias() +=
      d_gi * x.transpose();
  Eigen::Map<RowMatrix>(grad.data() + slots.w_hh.offset, 3 * h, h).noalias() +=
      d_gh * h_prevs.transpose();
  grad.segment(slots.b_ih.offset, 3 * h) += d_gi.rowwise().sum();
  grad.segment(slots.b_hh.offset, 3 * h) += d_gh.rowwise().sum();
  dx.noalias() += w.w_ih.transpose() * d_gi;
}

void check_masks(const mask::MaskSet& masks, const Matrix& mix_mag, const char* what) {
  if (masks.empty()) throw Error(std::string(what) + ": need at least one mask");
  mask::check_shapes(masks, mix_mag.rows(), mix_mag.cols(), what);
}

// Bin weights squared times squared magnitudes, flattened in V's column order.
Vector loss_weights(const Matrix& mix_mag, const Matrix& bin_weights) {
  Vector w = Eigen::Map<const Vector>(mix_mag.data(), mix_mag.size()).cwiseAbs2();
  if (bin_weights.size() != 0) {
    if (bin_weights.rows() != mix_mag.rows() || bin_weights.cols() != mix_mag.cols())
      throw Error("loss: bin weight shape does not match the mixture");
    w.array() *= Eigen::Map<const Vector>(bin_weights.data(), bin_weights.size()).array().square();
  }
  return w;
}

}  // namespace

std::string to_string(CellKind kind) { return kind == CellKind::Gru ? "gru" : "lstm"; }

CellKind cell_kind_from_string(const std::string& name) {
  if (name == "gru") return CellKind::Gru;
  if (name == "lstm") return CellKind::Lstm;
  throw ConfigError("unknown cell kind '" + name + "' (expected gru or lstm)");
}

void ArchSpec::validate(bool allow_empty_embedding) const {
  if (input_dim <= 0) throw ConfigError("arch.input_dim must be positive");
  if (num_layers <= 0) throw ConfigError("arch.layers must be positive");
  if (hidden <= 0) throw ConfigError("arch.hidden must be positive");
  if (embed_dim < 0 || (embed_dim == 0 && !allow_empty_embedding))
    throw ConfigError("arch.embed must be positive");
}

std::int64_t count_params(const ArchSpec& arch) {
  arch.validate(true);
  const std::int64_t gates = arch.cell == CellKind::Gru ? 3 : 4;
  const std::int64_t h = arch.hidden;
  std::int64_t total = 0;
  for (int l = 0; l < arch.num_layers; ++l) {
    const std::int64_t in = l == 0 ? arch.input_dim : 2 * h;
    total += 2 * gates * (in * h + h * h + 2 * h);
  }
  const std::int64_t out = static_cast<std::int64_t>(arch.embed_dim) * arch.input_dim;
  total += 2 * h * out + out;
  return total;
}

ParamLayout::ParamLayout(const ArchSpec& arch) {
  arch.validate();
  if (arch.cell != CellKind::Gru) throw ConfigError("only GRU networks are trainable");
  const Eigen::Index h = arch.hidden;
  Eigen::Index off = 0;
  auto take = [&off](Eigen::Index rows, Eigen::Index cols) {
    Slot s{off, rows, cols};
    off += rows * cols;
    return s;
  };
  for (int l = 0; l < arch.num_layers; ++l) {
    const int in = l == 0 ? arch.input_dim : 2 * arch.hidden;
    for (int d = 0; d < 2; ++d) {
      Direction dir;
      dir.input = in;
      dir.w_ih = take(3 * h, in);
      dir.w_hh = take(3 * h, h);
      dir.b_ih = take(3 * h, 1);
      dir.b_hh = take(3 * h, 1);
      dirs_.push_back(dir);
    }
  }
  fc_w_ = take(arch.fc_output(), 2 * h);
  fc_b_ = take(arch.fc_output(), 1);
  size_ = off;
}

std::vector<std::pair<std::string, Slot>> ParamLayout::named_slots() const {
  std::vector<std::pair<std::string, Slot>> out;
  for (std::size_t i = 0; i < dirs_.size(); ++i) {
    const std::string prefix =
        "l" + std::to_string(i / 2) + (i % 2 == 0 ? ".fwd." : ".bwd.");
    out.emplace_back(prefix + "w_ih", dirs_[i].w_ih);
    out.emplace_back(prefix + "w_hh", dirs_[i].w_hh);
    out.emplace_back(prefix + "b_ih", dirs_[i].b_ih);
    out.emplace_back(prefix + "b_hh", dirs_[i].b_hh);
  }
  out.emplace_back("fc.w", fc_w_);
  out.emplace_back("fc.b", fc_b_);
  return out;
}

ModelParams::ModelParams(const ArchSpec& arch)
    : stats(dsp::FeatureStats::identity(arch.input_dim)), arch_(arch), layout_(arch) {
  values_ = Vector::Zero(layout_.size());
}

ModelParams ModelParams::random(const ArchSpec& arch, std::uint64_t seed) {
  ModelParams p(arch);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < p.values_.size(); ++i) p.values_(i) = dist(rng);
  return p;
}

GruWeights ModelParams::gru(int layer, int dir) const {
  const auto& d = layout_.direction(layer, dir);
  return {matrix(d.w_ih), matrix(d.w_hh), vector(d.b_ih), vector(d.b_hh)};
}

Vector gru_cell(const Vector& x, const Vector& h_prev, const GruWeights& w) {
  const Eigen::Index h = w.w_hh.cols();
  if (x.size() != w.w_ih.cols() || h_prev.size() != h)
    throw Error("gru_cell: dimension mismatch");
  const Vector gi = w.w_ih * x + w.b_ih;
  const Vector gh = w.w_hh * h_prev + w.b_hh;
  Vector out(h);
  for (Eigen::Index k = 0; k < h; ++k) {
    const double z = sigmoid(gi(k) + gh(k));
    const double r = sigmoid(gi(h + k) + gh(h + k));
    const double n = std::tanh(gi(2 * h + k) + r * gh(2 * h + k));
    out(k) = (1.0 - z) * n + z * h_prev(k);
  }
  return out;
}

EmbeddingMatrix forward_embed(const Matrix& features, const ModelParams& params) {
  return to_embedding(run_forward(features, params).fc_out, params.arch());
}

Matrix train_attractors(const EmbeddingMatrix& v, const mask::MaskSet& masks) {
  if (masks.empty()) throw Error("train_attractors: need at least one mask");
  Matrix a(static_cast<Eigen::Index>(masks.size()), v.dim());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].size() != v.values.cols())
      throw Error("train_attractors: mask size does not match the embedding columns");
    const Eigen::Map<const Vector> m(masks[i].data(), masks[i].size());
    const double mass = m.sum();
    if (mass <= 0.0)
      throw Error("train_attractors: mask " + std::to_string(i) + " selects no bins");
    a.row(static_cast<Eigen::Index>(i)) = (v.values * m).transpose() / mass;
  }
  return a;
}

mask::MaskSet estimate_masks(const EmbeddingMatrix& v, const Matrix& attractors) {
  if (attractors.cols() != v.dim())
    throw Error("estimate_masks: attractor dimension does not match the embedding");
  const Matrix d = attractors * v.values;
  mask::MaskSet out;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    Matrix m(v.num_bins, v.num_frames());
    Eigen::Map<Vector>(m.data(), m.size()) =
        d.row(i).transpose().unaryExpr([](double x) { return sigmoid(x); });
    out.push_back(std::move(m));
  }
  return out;
}

double loss(const Matrix& mix_mag, const mask::MaskSet& ideal, const mask::MaskSet& estimated,
            const Matrix& bin_weights) {
  check_masks(ideal, mix_mag, "loss");
  check_masks(estimated, mix_mag, "loss");
  if (ideal.size() != estimated.size()) throw Error("loss: mask counts differ");
  const Vector w = loss_weights(mix_mag, bin_weights);
  double total = 0.0;
  for (std::size_t i = 0; i < ideal.size(); ++i) {
    const Eigen::Map<const Vector> m(ideal[i].data(), ideal[i].size());
    const Eigen::Map<const Vector> mh(estimated[i].data(), estimated[i].size());
    total += w.dot((m - mh).cwiseAbs2());
  }
  return total / static_cast<double>(ideal.size());
}

double evaluate_loss(const Matrix& features, const Matrix& mix_mag,
                     const mask::MaskSet& ideal_masks, const ModelParams& params,
                     const Matrix& bin_weights) {
  check_masks(ideal_masks, mix_mag, "evaluate_loss");
  if (features.cols() != mix_mag.cols()) throw Error("evaluate_loss: frame counts differ");
  const EmbeddingMatrix v = forward_embed(features, params);
  const Matrix a = train_attractors(v, ideal_masks);
  return loss(mix_mag, ideal_masks, estimate_masks(v, a), bin_weights);
}

LossAndGradient backward(const Matrix& features, const Matrix& mix_mag,
                         const mask::MaskSet& ideal_masks, const ModelParams& params,
                         const Matrix& bin_weights) {
  const ArchSpec& arch = params.arch();
  check_masks(ideal_masks, mix_mag, "backward");
  if (features.cols() != mix_mag.cols() || mix_mag.rows() != arch.input_dim)
    throw Error("backward: feature and magnitude shapes disagree");

  const ForwardTrace trace = run_forward(features, params);
  const EmbeddingMatrix v = to_embedding(trace.fc_out, arch);
  const Matrix a = train_attractors(v, ideal_masks);
  const Eigen::Index n_spk = a.rows();
  const Eigen::Index bins = v.values.cols();

  // Mask stage: d = A V, mhat = sigmoid(d).
  Matrix ideal(n_spk, bins);
  Vector mass(n_spk);
  for (Eigen::Index i = 0; i < n_spk; ++i) {
    ideal.row(i) = Eigen::Map<const Vector>(ideal_masks[i].data(), bins).transpose();
    mass(i) = ideal.row(i).sum();
  }
  const Matrix mhat = (a * v.values).unaryExpr([](double x) { return sigmoid(x); });
  const Vector w = loss_weights(mix_mag, bin_weights);
  const Matrix diff = mhat - ideal;

  LossAndGradient out;
  out.loss = (diff.cwiseAbs2() * w).sum() / static_cast<double>(n_spk);

  Matrix d_logit = (2.0 / static_cast<double>(n_spk)) * diff;
  d_logit.array().rowwise() *= w.transpose().array();
  d_logit.array() *= mhat.array() * (1.0 - mhat.array());

  const Matrix d_attr = d_logit * v.values.transpose();  // N x K
  Matrix scaled = ideal;
  for (Eigen::Index i = 0; i < n_spk; ++i) scaled.row(i) /= mass(i);
  Matrix d_v = a.transpose() * d_logit + d_attr.transpose() * scaled;  // K x FT

  // Projection layer.
  const auto& layout = params.layout();
  out.gradient = Vector::Zero(layout.size());
  const Eigen::Map<const Matrix> d_fc(d_v.data(), arch.fc_output(), features.cols());
  const Matrix& top = trace.layers.back().output;
  Eigen::Map<RowMatrix>(out.gradient.data() + layout.fc_weight().offset, arch.fc_output(),
                        2 * arch.hidden)
      .noalias() = d_fc * top.transpose();
  out.gradient.segment(layout.fc_bias().offset, arch.fc_output()) = d_fc.rowwise().sum();
  Matrix d_out = params.matrix(layout.fc_weight()).transpose() * d_fc;

  // Recurrent stack, top to bottom.
  const Eigen::Index h = arch.hidden;
  for (int l = arch.num_layers - 1; l >= 0; --l) {
    const Matrix& input = l == 0 ? features : trace.layers[l - 1].output;
    Matrix d_in = Matrix::Zero(input.rows(), input.cols());
    for (int d = 0; d < 2; ++d) {
      const Matrix d_h = d == 0 ? Matrix(d_out.topRows(h)) : Matrix(d_out.bottomRows(h));
      backprop_direction(input, params.gru(l, d), layout.direction(l, d), d == 1,
                         trace.layers[l].dir[d], d_h, out.gradient, d_in);
    }
    d_out = std::move(d_in);
  }

  if (!std::isfinite(out.loss)) throw DivergenceError("backward: non-finite loss");
  require_finite(out.gradient, "gradient");
  return out;
}

GradCheckResult gradient_check(const ArchSpec& arch, int frames, int speakers,
                               std::uint64_t seed, double step, double abs_floor) {
  ModelParams params = ModelParams::random(arch, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> mag_dist(0.2, 2.0);
  std::uniform_int_distribution<int> owner(0, speakers - 1);

  const Eigen::Index f = arch.input_dim;
  Matrix features = Matrix::NullaryExpr(f, frames, [&] { return unit(rng); });
  Matrix mix = Matrix::NullaryExpr(f, frames, [&] { return mag_dist(rng); });
  mask::MaskSet masks(speakers, Matrix::Zero(f, frames));
  for (Eigen::Index j = 0; j < f * frames; ++j) masks[owner(rng)](j) = 1.0;
  for (int i = 0; i < speakers; ++i) masks[i](i) = 1.0;  // every speaker owns a bin
  for (int i = 0; i < speakers; ++i)
    for (int k = 0; k < speakers; ++k)
      if (k != i) masks[k](i) = 0.0;

  const LossAndGradient analytic = backward(features, mix, masks, params);
  GradCheckResult result;
  for (const auto& [name, slot] : params.layout().named_slots()) {
    for (Eigen::Index j = 0; j < slot.size(); ++j) {
      double& p = params.values()(slot.offset + j);
      const double saved = p;
      p = saved + step;
      const double up = evaluate_loss(features, mix, masks, params);
      p = saved - step;
      const double down = evaluate_loss(features, mix, masks, params);
      p = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.gradient(slot.offset + j);
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = name;
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace dansep::net
