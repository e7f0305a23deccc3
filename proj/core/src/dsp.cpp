#include "dansep/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace dansep::dsp {

void StftConfig::validate() const {
  if (win_len < 2 || win_len % 2 != 0)
    throw ConfigError("stft.win_len must be even and >= 2");
  if (hop <= 0 || win_len % hop != 0) throw ConfigError("stft.hop must divide stft.win_len");
  if (fft_size < win_len || fft_size % 2 != 0)
    throw ConfigError("stft.fft_size must be even and >= stft.win_len");
}

FeatureStats FeatureStats::identity(Eigen::Index num_bins) {
  return {Vector::Zero(num_bins), Vector::Ones(num_bins)};
}

std::vector<double> make_sqrt_hann(int win_len) {
  if (win_len < 2 || win_len % 2 != 0)
    throw Error("sqrt-Hann window length must be even and >= 2");
  std::vector<double> w(win_len);
  for (int n = 0; n < win_len; ++n) {
    const double c = std::cos(2.0 * std::numbers::pi * n / win_len);
    w[n] = std::sqrt(std::max(0.0, 0.5 - 0.5 * c));
  }
  return w;
}

Eigen::Index num_frames(std::size_t num_samples, const StftConfig& cfg) {
  if (num_samples == 0) return 0;
  const std::size_t last = num_samples - 1 + static_cast<std::size_t>(cfg.win_len - cfg.hop);
  return static_cast<Eigen::Index>(last / cfg.hop + 1);
}

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg) {
  cfg.validate();
  if (wave.empty()) throw Error("stft: empty waveform");

  const auto window = make_sqrt_hann(cfg.win_len);
  const Eigen::Index frames = num_frames(wave.size(), cfg);
  const Eigen::Index bins = cfg.num_bins();
  const std::ptrdiff_t offset = cfg.win_len - cfg.hop;
  const auto n = static_cast<std::ptrdiff_t>(wave.size());

  ComplexSpectrogram spec;
  spec.bins.resize(bins, frames);
  spec.source_len = wave.size();
  spec.sample_rate = wave.sample_rate;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(cfg.fft_size);
  std::vector<std::complex<double>> out(bins);
  for (Eigen::Index t = 0; t < frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    const std::ptrdiff_t start = t * cfg.hop - offset;
    for (int k = 0; k < cfg.win_len; ++k) {
      const std::ptrdiff_t idx = start + k;
      if (idx >= 0 && idx < n) frame[k] = wave.samples[idx] * window[k];
    }
    fft.fwd(out.data(), frame.data(), cfg.fft_size);
    for (Eigen::Index f = 0; f < bins; ++f) spec.bins(f, t) = out[f];
  }
  return spec;
}

Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg) {
  cfg.validate();
  if (spec.num_bins() != cfg.num_bins())
    throw Error("istft: spectrogram has " + std::to_string(spec.num_bins()) +
                " bins but the configuration implies " + std::to_string(cfg.num_bins()));
  if (spec.num_frames() != num_frames(spec.source_len, cfg))
    throw Error("istft: frame count does not match source length for this configuration");

  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.assign(spec.source_len, 0.0);
  if (spec.source_len == 0) return out;

  const auto window = make_sqrt_hann(cfg.win_len);
  const std::ptrdiff_t offset = cfg.win_len - cfg.hop;
  const auto n = static_cast<std::ptrdiff_t>(spec.source_len);
  std::vector<double> norm(spec.source_len, 0.0);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> in(cfg.num_bins());
  std::vector<double> frame(cfg.fft_size);
  for (Eigen::Index t = 0; t < spec.num_frames(); ++t) {
    for (Eigen::Index f = 0; f < spec.num_bins(); ++f) in[f] = spec.bins(f, t);
    fft.inv(frame.data(), in.data(), cfg.fft_size);
    const std::ptrdiff_t start = t * cfg.hop - offset;
    for (int k = 0; k < cfg.win_len; ++k) {
      const std::ptrdiff_t idx = start + k;
      if (idx < 0 || idx >= n) continue;
      out.samples[idx] += frame[k] * window[k];
      norm[idx] += window[k] * window[k];
    }
  }
  for (std::size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] = norm[i] > 1e-12 ? out.samples[i] / norm[i] : 0.0;
  return out;
}

Matrix magnitude(const ComplexSpectrogram& spec) { return spec.bins.cwiseAbs(); }

Matrix phase(const ComplexSpectrogram& spec) {
  Matrix out(spec.bins.rows(), spec.bins.cols());
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const auto c = spec.bins(i, j);
      double a = (c.real() == 0.0 && c.imag() == 0.0) ? 0.0 : std::atan2(c.imag(), c.real());
      if (a <= -std::numbers::pi) a = std::numbers::pi;
      out(i, j) = a;
    }
  return out;
}

ComplexMatrix polar(const Matrix& mag, const Matrix& phase) {
  if (mag.rows() != phase.rows() || mag.cols() != phase.cols())
    throw Error("polar: magnitude and phase shapes differ");
  ComplexMatrix out(mag.rows(), mag.cols());
  for (Eigen::Index j = 0; j < mag.cols(); ++j)
    for (Eigen::Index i = 0; i < mag.rows(); ++i) out(i, j) = std::polar(mag(i, j), phase(i, j));
  return out;
}

Matrix log_features(const Matrix& mag, double floor_eps, const FeatureStats& stats) {
  if (!(floor_eps > 0.0)) throw Error("log_features: floor_eps must be positive");
  if (stats.mean.size() != mag.rows() || stats.stddev.size() != mag.rows())
    throw Error("log_features: statistics do not match the number of frequency bins");
  Matrix out = mag.cwiseMax(floor_eps).array().log().matrix();
  out.colwise() -= stats.mean;
  out.array().colwise() /= stats.stddev.array();
  return out;
}

Matrix log_features(const Matrix& mag, double floor_eps) {
  return log_features(mag, floor_eps, FeatureStats::identity(mag.rows()));
}

FeatureStatsAccumulator::FeatureStatsAccumulator(Eigen::Index num_bins, double floor_eps)
    : floor_eps_(floor_eps), sum_(Vector::Zero(num_bins)), sum_sq_(Vector::Zero(num_bins)) {
  if (!(floor_eps > 0.0)) throw Error("feature statistics: floor_eps must be positive");
}

void FeatureStatsAccumulator::add(const Matrix& mag) {
  if (mag.rows() != sum_.size()) throw Error("feature statistics: bin count mismatch");
  const Matrix logs = mag.cwiseMax(floor_eps_).array().log().matrix();
  sum_ += logs.rowwise().sum();
  sum_sq_ += logs.cwiseAbs2().rowwise().sum();
  count_ += static_cast<double>(mag.cols());
}

FeatureStats FeatureStatsAccumulator::finish(double min_std) const {
  if (count_ <= 0.0) throw Error("feature statistics: no frames accumulated");
  FeatureStats stats;
  stats.mean = sum_ / count_;
  const Vector var = (sum_sq_ / count_ - stats.mean.cwiseAbs2()).cwiseMax(0.0);
  stats.stddev = var.cwiseSqrt().cwiseMax(min_std);
  return stats;
}

std::vector<double> decimation_filter() {
  // 97 taps, beta for ~70 dB stopband, cutoff 3.6 kHz at 16 kHz.
  constexpr int kTaps = 97;
  constexpr double kCutoff = 3600.0 / 16000.0;  // cycles per sample
  constexpr double kAtten = 70.0;
  const double beta = 0.1102 * (kAtten - 8.7);
  const double i0_beta = std::cyl_bessel_i(0.0, beta);
  const int mid = kTaps / 2;

  std::vector<double> taps(kTaps);
  double sum = 0.0;
  for (int n = 0; n < kTaps; ++n) {
    const double m = n - mid;
    const double sinc = m == 0 ? 2.0 * kCutoff
                               : std::sin(2.0 * std::numbers::pi * kCutoff * m) / (std::numbers::pi * m);
    const double r = m / mid;
    const double kaiser = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
    taps[n] = sinc * kaiser;
    sum += taps[n];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

Waveform decimate2(const Waveform& wave) {
  if (wave.sample_rate != 16000)
    throw Error("decimate2: expected 16000 Hz input, got " + std::to_string(wave.sample_rate));
  const auto taps = decimation_filter();
  const auto mid = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto n = static_cast<std::ptrdiff_t>(wave.size());

  Waveform out;
  out.sample_rate = 8000;
  out.samples.resize((wave.size() + 1) / 2);
  for (std::size_t m = 0; m < out.samples.size(); ++m) {
    const std::ptrdiff_t center = 2 * static_cast<std::ptrdiff_t>(m);
    double acc = 0.0;
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(taps.size()); ++j) {
      const std::ptrdiff_t idx = center + mid - j;
      if (idx >= 0 && idx < n) acc += taps[j] * wave.samples[idx];
    }
    out.samples[m] = acc;
  }
  return out;
}

}  // namespace dansep::dsp
