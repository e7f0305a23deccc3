#pragma once

#include "dansep/common.hpp"

namespace dansep::dsp {

/// Analysis/synthesis geometry. The window is always square-root periodic Hann.
struct StftConfig {
  int win_len = 256;  // 32 ms at 8 kHz
  int hop = 64;       // 75% overlap
  int fft_size = 256;

  int num_bins() const { return fft_size / 2 + 1; }
  /// Throws ConfigError unless win_len is even and >= 2, hop divides win_len and
  /// fft_size >= win_len (even).
  void validate() const;
  bool operator==(const StftConfig&) const = default;
};

/// F x T complex STFT. Column t is frame t; source_len is the length of the
/// signal that produced it so istft() can restore it exactly.
struct ComplexSpectrogram {
  ComplexMatrix bins;
  std::size_t source_len = 0;
  int sample_rate = 8000;

  Eigen::Index num_bins() const { return bins.rows(); }
  Eigen::Index num_frames() const { return bins.cols(); }
};

/// Per-frequency standardization statistics for log features.
struct FeatureStats {
  Vector mean;
  Vector stddev;

  static FeatureStats identity(Eigen::Index num_bins);
  bool empty() const { return mean.size() == 0; }
};

/// w[n] = sqrt(0.5 - 0.5 cos(2 pi n / win_len)), n = 0..win_len-1.
std::vector<double> make_sqrt_hann(int win_len);

/// Number of frames stft() produces for a signal of `num_samples` samples.
Eigen::Index num_frames(std::size_t num_samples, const StftConfig& cfg);

/// The signal is front-padded with (win_len - hop) zeros and tail-padded so that
/// every sample lies under a full set of overlapping frames.
ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg);

/// Weighted overlap-add with the analysis window, normalized by the summed
/// squared window; output has exactly spec.source_len samples.
Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg);

Matrix magnitude(const ComplexSpectrogram& spec);

/// Angles in (-pi, pi]; zero entries map to 0.
Matrix phase(const ComplexSpectrogram& spec);

/// mag .* exp(i * phase).
ComplexMatrix polar(const Matrix& mag, const Matrix& phase);

/// ln(max(mag, floor_eps)), then (x - mean_f) / stddev_f per frequency row.
Matrix log_features(const Matrix& mag, double floor_eps, const FeatureStats& stats);
Matrix log_features(const Matrix& mag, double floor_eps = 1e-7);

/// Accumulates per-frequency statistics of ln(max(mag, floor_eps)) over many
/// spectrograms (population variance).
class FeatureStatsAccumulator {
 public:
  explicit FeatureStatsAccumulator(Eigen::Index num_bins, double floor_eps = 1e-7);
  void add(const Matrix& mag);
  /// Standard deviations below `min_std` are clamped to it.
  FeatureStats finish(double min_std = 1e-6) const;

 private:
  double floor_eps_;
  Vector sum_;
  Vector sum_sq_;
  double count_ = 0.0;
};

/// Kaiser-windowed sinc low-pass taps for 16 kHz -> 8 kHz decimation.
std::vector<double> decimation_filter();

/// 16 kHz -> 8 kHz: linear-phase low-pass (cutoff 3.6 kHz) then keep every second
/// sample. The filter delay is compensated; output has ceil(n/2) samples.
Waveform decimate2(const Waveform& wave);

}  // namespace dansep::dsp
