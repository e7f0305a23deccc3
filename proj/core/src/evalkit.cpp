#include "dansep/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace dansep::eval {
namespace {

// xc(d) = sum_u a(u) b(u + d) for d in [-(L-1), L-1]; index d + L - 1.
std::vector<double> cross_correlation(const std::vector<double>& a, const std::vector<double>& b,
                                      int taps, bool nonnegative_lags_only = false) {
  const auto n = static_cast<std::ptrdiff_t>(a.size());
  std::vector<double> out(2 * taps - 1, 0.0);
  for (int d = nonnegative_lags_only ? 0 : -(taps - 1); d <= taps - 1; ++d) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -d);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n - d);
    double acc = 0.0;
    for (std::ptrdiff_t u = lo; u < hi; ++u) acc += a[u] * b[u + d];
    out[d + taps - 1] = acc;
  }
  return out;
}

// Factorizes a Gram matrix, adding diagonal loading when it is (near) singular.
Eigen::LLT<Matrix> factor_gram(Matrix gram, bool& regularized) {
  const double scale = std::max(gram.diagonal().maxCoeff(), std::numeric_limits<double>::min());
  double load = 0.0;
  for (int attempt = 0; attempt < 40; ++attempt) {
    Eigen::LLT<Matrix> llt(gram + load * Matrix::Identity(gram.rows(), gram.cols()));
    if (llt.info() == Eigen::Success) {
      const Vector pivots = Matrix(llt.matrixL()).diagonal().cwiseAbs2();
      if (pivots.minCoeff() > 1e-12 * scale) return llt;
    }
    load = load == 0.0 ? 1e-10 * scale : load * 10.0;
    regularized = true;
  }
  throw Error("bss_decompose: reference Gram matrix could not be factorized");
}

double ratio_db(double num, double den, double cap) {
  if (num <= 0.0) return -cap;
  if (den <= 0.0) return cap;
  return std::clamp(10.0 * std::log10(num / den), -cap, cap);
}

double energy(const std::vector<double>& x) {
  return std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
}

}  // namespace

void EvalConfig::validate() const {
  if (proj_len < 1) throw ConfigError("eval.proj_len must be at least 1");
  if (!(sdr_cap > 0.0)) throw ConfigError("eval.sdr_cap must be positive");
}

Projector::Projector(std::vector<std::vector<double>> refs, const EvalConfig& cfg)
    : refs_(std::move(refs)), cfg_(cfg) {
  cfg_.validate();
  if (refs_.empty()) throw Error("bss_decompose: need at least one reference");
  len_ = refs_.front().size();
  if (len_ == 0) throw Error("bss_decompose: empty reference");
  for (const auto& r : refs_)
    if (r.size() != len_) throw Error("bss_decompose: references differ in length");

  const int taps = cfg_.proj_len;
  const auto n_ref = static_cast<Eigen::Index>(refs_.size());
  Matrix gram(n_ref * taps, n_ref * taps);
  for (Eigen::Index i = 0; i < n_ref; ++i) {
    for (Eigen::Index j = i; j < n_ref; ++j) {
      const auto xc = cross_correlation(refs_[i], refs_[j], taps);
      for (int a = 0; a < taps; ++a)
        for (int b = 0; b < taps; ++b) {
          const double v = xc[a - b + taps - 1];
          gram(i * taps + a, j * taps + b) = v;
          gram(j * taps + b, i * taps + a) = v;
        }
    }
  }
  all_ = factor_gram(gram, regularized_);
  for (Eigen::Index i = 0; i < n_ref; ++i)
    single_.push_back(factor_gram(gram.block(i * taps, i * taps, taps, taps), regularized_));
}

Decomposition Projector::decompose(const std::vector<double>& est, int target) const {
  if (est.size() != len_) throw Error("bss_decompose: estimate and references differ in length");
  if (target < 0 || target >= static_cast<int>(refs_.size()))
    throw Error("bss_decompose: target index out of range");

  const int taps = cfg_.proj_len;
  const auto n_ref = static_cast<Eigen::Index>(refs_.size());
  const std::size_t out_len = len_ + taps - 1;

  // D(j, tau) = sum_t est(t) r_j(t - tau).
  Vector rhs(n_ref * taps);
  for (Eigen::Index j = 0; j < n_ref; ++j) {
    const auto xc = cross_correlation(refs_[j], est, taps, true);
    for (int tau = 0; tau < taps; ++tau) rhs(j * taps + tau) = xc[tau + taps - 1];
  }
  const Vector c_all = all_.solve(rhs);
  const Vector c_target = single_[target].solve(rhs.segment(target * taps, taps));

  auto filter = [&](const std::vector<double>& ref, const double* coef, std::vector<double>& out) {
    for (int tau = 0; tau < taps; ++tau) {
      const double c = coef[tau];
      if (c == 0.0) continue;
      for (std::size_t t = 0; t < len_; ++t) out[t + tau] += c * ref[t];
    }
  };

  Decomposition d;
  d.regularized = regularized_;
  d.s_target.assign(out_len, 0.0);
  filter(refs_[target], c_target.data(), d.s_target);
  std::vector<double> p_all(out_len, 0.0);
  for (Eigen::Index j = 0; j < n_ref; ++j) filter(refs_[j], c_all.data() + j * taps, p_all);

  d.e_interf.resize(out_len);
  d.e_artif.resize(out_len);
  for (std::size_t t = 0; t < out_len; ++t) {
    const double e = t < len_ ? est[t] : 0.0;
    d.e_interf[t] = p_all[t] - d.s_target[t];
    d.e_artif[t] = e - p_all[t];
  }
  return d;
}

Scores Projector::score(const std::vector<double>& est, int target) const {
  return scores_from(decompose(est, target), cfg_.sdr_cap);
}

Decomposition bss_decompose(const std::vector<double>& est,
                            const std::vector<std::vector<double>>& refs, int target,
                            const EvalConfig& cfg) {
  return Projector(refs, cfg).decompose(est, target);
}

Scores scores_from(const Decomposition& d, double sdr_cap) {
  const std::size_t n = d.s_target.size();
  std::vector<double> noise(n), signal_plus_interf(n);
  for (std::size_t t = 0; t < n; ++t) {
    noise[t] = d.e_interf[t] + d.e_artif[t];
    signal_plus_interf[t] = d.s_target[t] + d.e_interf[t];
  }
  const double target = energy(d.s_target);
  Scores s;
  s.sdr = ratio_db(target, energy(noise), sdr_cap);
  s.sir = ratio_db(target, energy(d.e_interf), sdr_cap);
  s.sar = ratio_db(energy(signal_plus_interf), energy(d.e_artif), sdr_cap);
  return s;
}

Scores sdr_sir_sar(const std::vector<double>& est, const std::vector<std::vector<double>>& refs,
                   int target, const EvalConfig& cfg) {
  return scores_from(bss_decompose(est, refs, target, cfg), cfg.sdr_cap);
}

namespace {
template <typename F>
double mean_of(const std::vector<Scores>& v, F f) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : v) acc += f(s);
  return acc / static_cast<double>(v.size());
}
}  // namespace

double Metrics::mean_sdr() const { return mean_of(per_speaker, [](const Scores& s) { return s.sdr; }); }
double Metrics::mean_sir() const { return mean_of(per_speaker, [](const Scores& s) { return s.sir; }); }
double Metrics::mean_sar() const { return mean_of(per_speaker, [](const Scores& s) { return s.sar; }); }

Metrics resolve_permutation(const std::vector<std::vector<double>>& ests,
                            const std::vector<std::vector<double>>& refs, const EvalConfig& cfg) {
  const std::size_t n = refs.size();
  if (ests.size() != n)
    throw Error("resolve_permutation: " + std::to_string(ests.size()) + " estimates for " +
                std::to_string(n) + " references");
  if (n == 0 || n > 4) throw Error("resolve_permutation: supports 1 to 4 sources");

  const Projector proj(refs, cfg);
  std::vector<std::vector<Scores>> table(n, std::vector<Scores>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) table[i][j] = proj.score(ests[i], static_cast<int>(j));

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Metrics best;
  double best_sir = -std::numeric_limits<double>::infinity();
  do {
    double sir = 0.0;
    for (std::size_t i = 0; i < n; ++i) sir += table[i][perm[i]].sir;
    sir /= static_cast<double>(n);
    if (sir > best_sir) {
      best_sir = sir;
      best.permutation = perm;
      best.per_speaker.clear();
      for (std::size_t i = 0; i < n; ++i) best.per_speaker.push_back(table[i][perm[i]]);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

void append(Report& report, const std::string& utt_id, const Metrics& metrics) {
  for (std::size_t i = 0; i < metrics.per_speaker.size(); ++i)
    report.rows.push_back({utt_id, static_cast<int>(i) + 1, metrics.permutation[i] + 1,
                           metrics.per_speaker[i]});
  ++report.utterances;
}

void finalize(Report& report) {
  std::vector<Scores> all;
  for (const auto& r : report.rows) all.push_back(r.scores);
  report.mean.sdr = mean_of(all, [](const Scores& s) { return s.sdr; });
  report.mean.sir = mean_of(all, [](const Scores& s) { return s.sir; });
  report.mean.sar = mean_of(all, [](const Scores& s) { return s.sar; });
}

void write_csv(std::ostream& out, const Report& report) {
  out << "utt_id,speaker,permuted_to,sdr_db,sir_db,sar_db\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& r : report.rows)
    out << r.utt_id << ',' << r.speaker << ',' << r.permuted_to << ',' << r.scores.sdr << ','
        << r.scores.sir << ',' << r.scores.sar << '\n';
  if (!report.rows.empty())
    out << "MEAN,,," << report.mean.sdr << ',' << report.mean.sir << ',' << report.mean.sar
        << '\n';
}

}  // namespace dansep::eval
