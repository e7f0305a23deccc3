#include "dansep/network.hpp"

#include "test_util.hpp"

#include <random>

namespace {

namespace net = dansep::net;
using dansep::Matrix;
using dansep::Vector;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

net::ArchSpec arch(int f, int layers, int h, int k) {
  net::ArchSpec a;
  a.input_dim = f;
  a.num_layers = layers;
  a.hidden = h;
  a.embed_dim = k;
  return a;
}

// Scalar-loop GRU step written directly from the gate equations.
std::vector<double> scalar_gru(const std::vector<double>& x, const std::vector<double>& h,
                               const net::GruWeights& w) {
  const std::size_t n = h.size();
  auto pre = [&](std::size_t row, bool input) {
    double acc = 0.0;
    if (input) {
      for (std::size_t j = 0; j < x.size(); ++j) acc += w.w_ih(row, j) * x[j];
      return acc + w.b_ih(row);
    }
    for (std::size_t j = 0; j < n; ++j) acc += w.w_hh(row, j) * h[j];
    return acc + w.b_hh(row);
  };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = sig(pre(i, true) + pre(i, false));
    const double r = sig(pre(n + i, true) + pre(n + i, false));
    const double c = std::tanh(pre(2 * n + i, true) + r * pre(2 * n + i, false));
    out[i] = (1.0 - z) * c + z * h[i];
  }
  return out;
}

// Independent bidirectional stack + projection, frame by frame.
Matrix scalar_forward(const Matrix& features, const net::ModelParams& p) {
  const auto& a = p.arch();
  const int f = a.input_dim, h = a.hidden, k = a.embed_dim;
  const int t_len = static_cast<int>(features.cols());
  std::vector<std::vector<double>> seq(t_len);
  for (int t = 0; t < t_len; ++t)
    for (int i = 0; i < f; ++i) seq[t].push_back(features(i, t));
  for (int layer = 0; layer < a.num_layers; ++layer) {
    std::vector<std::vector<double>> fwd(t_len), bwd(t_len);
    std::vector<double> state(h, 0.0);
    for (int t = 0; t < t_len; ++t) fwd[t] = state = scalar_gru(seq[t], state, p.gru(layer, 0));
    state.assign(h, 0.0);
    for (int t = t_len - 1; t >= 0; --t) bwd[t] = state = scalar_gru(seq[t], state, p.gru(layer, 1));
    for (int t = 0; t < t_len; ++t) {
      seq[t] = fwd[t];
      seq[t].insert(seq[t].end(), bwd[t].begin(), bwd[t].end());
    }
  }
  const auto w = p.matrix(p.layout().fc_weight());
  const auto b = p.vector(p.layout().fc_bias());
  Matrix v(k, f * t_len);
  for (int t = 0; t < t_len; ++t)
    for (int fi = 0; fi < f; ++fi)
      for (int ki = 0; ki < k; ++ki) {
        const int row = fi * k + ki;
        double acc = b(row);
        for (int j = 0; j < 2 * h; ++j) acc += w(row, j) * seq[t][j];
        v(ki, t * f + fi) = acc;
      }
  return v;
}

TEST(CountParams, ReproducesPublishedTotals) {
  net::ArchSpec a;
  EXPECT_EQ(net::count_params(a), 7197180);
  a.cell = net::CellKind::Lstm;
  EXPECT_EQ(net::count_params(a), 9079380);
  EXPECT_EQ(a.fc_output(), 2580);
}

TEST(CountParams, SingleUnitWithoutProjection) {
  EXPECT_EQ(net::count_params(arch(1, 1, 1, 0)), 24);
}

TEST(CountParams, LayoutCoversEveryParameter) {
  for (const auto& a : {net::ArchSpec{}, arch(5, 1, 4, 3), arch(129, 2, 64, 10)}) {
    const net::ParamLayout layout(a);
    EXPECT_EQ(layout.size(), net::count_params(a));
    Eigen::Index covered = 0;
    for (const auto& [name, slot] : layout.named_slots()) {
      EXPECT_EQ(slot.offset, covered) << name;
      covered += slot.size();
    }
    EXPECT_EQ(covered, layout.size());
  }
}

TEST(ArchSpec, RejectsNonPositiveSizes) {
  EXPECT_THROW(arch(0, 1, 1, 1).validate(), dansep::ConfigError);
  EXPECT_THROW(arch(3, 1, 1, 0).validate(), dansep::ConfigError);
  EXPECT_NO_THROW(arch(3, 1, 1, 0).validate(true));
  EXPECT_THROW(net::cell_kind_from_string("rnn"), dansep::ConfigError);
}

TEST(GruCell, ZeroParametersHalveTheState) {
  const net::ModelParams p(arch(3, 1, 4, 1));
  const Vector h = Vector::LinSpaced(4, -1.0, 2.0);
  const Vector out = net::gru_cell(Vector::Random(3), h, p.gru(0, 0));
  EXPECT_LT((out - 0.5 * h).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(net::gru_cell(Vector::Random(3), Vector::Zero(4), p.gru(0, 0)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GruCell, MatchesScalarEvaluation) {
  const auto p = net::ModelParams::random(arch(2, 1, 2, 1), 11);
  const std::vector<double> x = {0.3, -1.2}, h = {0.7, -0.4};
  const Vector out = net::gru_cell(Eigen::Map<const Vector>(x.data(), 2), Eigen::Map<const Vector>(h.data(), 2),
                                   p.gru(0, 1));
  const auto ref = scalar_gru(x, h, p.gru(0, 1));
  EXPECT_NEAR(out(0), ref[0], 1e-14);
  EXPECT_NEAR(out(1), ref[1], 1e-14);
}

TEST(Forward, ZeroWeightsGiveTheProjectionBias) {
  net::ModelParams p(arch(4, 2, 3, 2));
  auto b = p.vector(p.layout().fc_bias());
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = 0.1 * double(i) - 0.3;
  const auto v = net::forward_embed(Matrix::Random(4, 1), p);
  for (int f = 0; f < 4; ++f)
    for (int k = 0; k < 2; ++k) EXPECT_EQ(v.values(k, f), b(f * 2 + k));
}

TEST(Forward, OutputShape) {
  const auto p = net::ModelParams::random(arch(6, 2, 5, 3), 2);
  for (int t : {1, 2, 9}) {
    const auto v = net::forward_embed(Matrix::Random(6, t), p);
    EXPECT_EQ(v.values.rows(), 3);
    EXPECT_EQ(v.values.cols(), 6 * t);
    EXPECT_EQ(v.num_frames(), t);
  }
}

TEST(Forward, MatchesUnrolledOracle) {
  for (const auto& a : {arch(3, 1, 2, 2), arch(4, 3, 3, 2)}) {
    const auto p = net::ModelParams::random(a, 5);
    const Matrix feats = Matrix::Random(a.input_dim, 5);
    const auto v = net::forward_embed(feats, p);
    EXPECT_LT((v.values - scalar_forward(feats, p)).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Forward, RejectsBadInput) {
  const auto p = net::ModelParams::random(arch(3, 1, 2, 2), 5);
  EXPECT_THROW(net::forward_embed(Matrix::Random(4, 2), p), dansep::Error);
  Matrix bad = Matrix::Random(3, 2);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(net::forward_embed(bad, p), dansep::DivergenceError);
}

net::EmbeddingMatrix embedding(const Matrix& values, Eigen::Index bins) { return {values, bins}; }

TEST(Attractors, AllOnesIsColumnMeanAndOneHotIsColumn) {
  const Matrix vals = Matrix::Random(3, 6);
  const auto v = embedding(vals, 3);
  const Matrix a = net::train_attractors(v, {Matrix::Ones(3, 2)});
  EXPECT_LT((a.row(0).transpose() - vals.rowwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
  Matrix hot = Matrix::Zero(3, 2);
  hot(1, 1) = 1.0;  // column t*F + f = 1*3 + 1 = 4
  const Matrix b = net::train_attractors(v, {hot});
  EXPECT_LT((b.row(0).transpose() - vals.col(4)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attractors, WeightedAverageOracle) {
  const Matrix vals = Matrix::Random(3, 5);
  Matrix m(5, 1);
  m << 1, 0, 1, 1, 0;
  const Matrix a = net::train_attractors(embedding(vals, 5), {m});
  for (int k = 0; k < 3; ++k) {
    double acc = 0.0;
    for (int j = 0; j < 5; ++j) acc += m(j) * vals(k, j);
    EXPECT_NEAR(a(0, k), acc / 3.0, 1e-15);
  }
  EXPECT_THROW(net::train_attractors(embedding(vals, 5), {Matrix::Zero(5, 1)}), dansep::Error);
}

TEST(EstimateMasks, ZeroAttractorAndScaling) {
  const Matrix vals = Matrix::Random(2, 6);
  const auto half = net::estimate_masks(embedding(vals, 3), Matrix::Zero(1, 2));
  EXPECT_EQ(half[0].rows(), 3);
  EXPECT_EQ(half[0].cols(), 2);
  EXPECT_TRUE((half[0].array() == 0.5).all());

  Matrix a(1, 2);
  a << 0.4, -1.1;
  const auto m1 = net::estimate_masks(embedding(vals, 3), a);
  const auto m3 = net::estimate_masks(embedding(3.0 * vals, 3), a);
  for (Eigen::Index j = 0; j < 6; ++j) {
    const double d1 = std::log(m1[0](j) / (1 - m1[0](j)));
    const double d3 = std::log(m3[0](j) / (1 - m3[0](j)));
    EXPECT_NEAR(d3, 3.0 * d1, 1e-9);
  }
}

TEST(EstimateMasks, DotProductThenSigmoidOracle) {
  Matrix vals(2, 3);
  vals << 1.0, -2.0, 0.5, 0.3, 0.0, -1.0;
  Matrix a(2, 2);
  a << 1.0, 2.0, -0.5, 0.25;
  const auto m = net::estimate_masks(embedding(vals, 3), a);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      EXPECT_NEAR(m[i](j), sig(a(i, 0) * vals(0, j) + a(i, 1) * vals(1, j)), 1e-15);
  EXPECT_THROW(net::estimate_masks(embedding(vals, 3), Matrix::Zero(1, 3)), dansep::Error);
}

TEST(Loss, ZeroForPerfectMasksAndDirectEvaluation) {
  const Matrix x = Matrix::Random(2, 3).cwiseAbs();
  const Matrix m = Matrix::Random(2, 3).cwiseAbs();
  EXPECT_EQ(net::loss(x, {m}, {m}), 0.0);
  EXPECT_DOUBLE_EQ(net::loss(Matrix::Ones(2, 3), {Matrix::Ones(2, 3)}, {Matrix::Zero(2, 3)}), 6.0);
}

TEST(Loss, BruteForceOracle) {
  const Matrix x = Matrix::Random(4, 5).cwiseAbs();
  std::vector<Matrix> ideal = {Matrix::Random(4, 5).cwiseAbs(), Matrix::Random(4, 5).cwiseAbs()};
  std::vector<Matrix> est = {Matrix::Random(4, 5).cwiseAbs(), Matrix::Random(4, 5).cwiseAbs()};
  double acc = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 5; ++c) {
        const double d = x(r, c) * (ideal[i](r, c) - est[i](r, c));
        acc += d * d;
      }
  EXPECT_NEAR(net::loss(x, ideal, est), acc / 2.0, 1e-12);
  EXPECT_GE(net::loss(x, ideal, est), 0.0);
  EXPECT_THROW(net::loss(x, ideal, {est[0]}), dansep::Error);
}

struct Problem {
  Matrix features, mag;
  dansep::mask::MaskSet ideal;
};

Problem random_problem(int f, int t, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.1, 2.0);
  std::uniform_int_distribution<int> owner(0, n - 1);
  Problem p;
  p.features = Matrix::NullaryExpr(f, t, [&] { return u(rng); });
  p.mag = Matrix::NullaryExpr(f, t, [&] { return pos(rng); });
  p.ideal.assign(n, Matrix::Zero(f, t));
  for (Eigen::Index j = 0; j < f * t; ++j) p.ideal[j < n ? j : owner(rng)](j) = 1.0;
  return p;
}

TEST(Backward, TinyNetMatchesFiniteDifferences) {
  const auto r = net::gradient_check(arch(5, 1, 4, 3), 4, 2, 7);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor;
  EXPECT_EQ(r.checked, net::count_params(arch(5, 1, 4, 3)));
}

TEST(Backward, DeeperNetMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = net::gradient_check(arch(4, 2, 3, 2), 3, 2, seed);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor << " seed " << seed;
  }
}

TEST(Backward, LossMatchesForwardEvaluation) {
  const auto a = arch(6, 2, 4, 3);
  const auto params = net::ModelParams::random(a, 9);
  const auto prob = random_problem(6, 7, 2, 9);
  const auto lg = net::backward(prob.features, prob.mag, prob.ideal, params);
  const auto v = net::forward_embed(prob.features, params);
  const auto est = net::estimate_masks(v, net::train_attractors(v, prob.ideal));
  EXPECT_NEAR(lg.loss, net::loss(prob.mag, prob.ideal, est), 1e-10 * lg.loss);
  EXPECT_EQ(lg.loss, net::evaluate_loss(prob.features, prob.mag, prob.ideal, params));
}

TEST(Backward, SaturatedMasksHaveVanishingGradient) {
  const auto a = arch(4, 1, 3, 2);
  net::ModelParams params(a);
  Matrix mask1 = Matrix::Zero(4, 1), mask2 = Matrix::Zero(4, 1);
  mask1(0) = mask1(2) = 1.0;
  mask2(1) = mask2(3) = 1.0;
  auto b = params.vector(params.layout().fc_bias());
  for (int f = 0; f < 4; ++f) {
    const double sign = mask1(f) > 0 ? 1.0 : -1.0;
    b(f * 2 + 0) = 10.0 * sign;
    b(f * 2 + 1) = -10.0 * sign;
  }
  const auto lg = net::backward(Matrix::Random(4, 1), Matrix::Ones(4, 1), {mask1, mask2}, params);
  EXPECT_LT(lg.loss, 1e-12);
  EXPECT_LT(lg.gradient.norm(), 1e-8);
}

TEST(Backward, DoublingMagnitudeQuadruplesLossAndGradient) {
  const auto a = arch(5, 2, 3, 2);
  const auto params = net::ModelParams::random(a, 4);
  const auto prob = random_problem(5, 6, 2, 4);
  const auto g1 = net::backward(prob.features, prob.mag, prob.ideal, params);
  const auto g2 = net::backward(prob.features, 2.0 * prob.mag, prob.ideal, params);
  EXPECT_NEAR(g2.loss, 4.0 * g1.loss, 1e-12 * g2.loss);
  EXPECT_LT((g2.gradient - 4.0 * g1.gradient).norm(), 1e-12 * g2.gradient.norm());
}

TEST(Backward, IsDeterministic) {
  const auto a = arch(5, 2, 3, 2);
  const auto params = net::ModelParams::random(a, 4);
  const auto prob = random_problem(5, 6, 3, 8);
  const auto g1 = net::backward(prob.features, prob.mag, prob.ideal, params);
  const auto g2 = net::backward(prob.features, prob.mag, prob.ideal, params);
  EXPECT_EQ(g1.loss, g2.loss);
  EXPECT_TRUE((g1.gradient.array() == g2.gradient.array()).all());
}

TEST(Backward, BinWeightsMatchWeightedLoss) {
  const auto a = arch(4, 1, 3, 2);
  const auto params = net::ModelParams::random(a, 3);
  const auto prob = random_problem(4, 5, 2, 3);
  const Matrix ones = Matrix::Ones(4, 5);
  EXPECT_NEAR(net::evaluate_loss(prob.features, prob.mag, prob.ideal, params, ones),
              net::evaluate_loss(prob.features, prob.mag, prob.ideal, params), 1e-12);
}

TEST(ModelParams, RandomInitIsBoundedAndSeeded) {
  const auto a = arch(7, 2, 9, 3);
  const auto p1 = net::ModelParams::random(a, 42);
  const auto p2 = net::ModelParams::random(a, 42);
  const auto p3 = net::ModelParams::random(a, 43);
  EXPECT_TRUE((p1.values().array() == p2.values().array()).all());
  EXPECT_FALSE((p1.values().array() == p3.values().array()).all());
  EXPECT_LE(p1.values().cwiseAbs().maxCoeff(), 1.0 / 3.0);
}

}  // namespace
