#pragma once

#include "dansep/common.hpp"

#include <filesystem>

namespace dansep::wav {

struct WavInfo {
  int channels = 0;
  int sample_rate = 0;
  int bits_per_sample = 0;
  int format_tag = 0;  // 1 = PCM
  std::size_t frames = 0;
};

/// Parses the RIFF header only. Throws FormatError on anything that is not RIFF/WAVE.
WavInfo probe(const std::filesystem::path& path);

/// Reads a 16-bit PCM mono file; samples are scaled by 1/32768.
Waveform read(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are clamped to the representable range.
void write(const std::filesystem::path& path, const Waveform& wave);

/// Quantizes to the 16-bit grid exactly as write() would.
std::vector<std::int16_t> quantize(const std::vector<double>& samples);

}  // namespace dansep::wav
