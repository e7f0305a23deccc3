#pragma once

#include "dansep/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace dansep::corpus {

struct UtteranceInfo {
  std::string speaker;
  std::filesystem::path path;
  std::size_t num_samples = 0;
  int sample_rate = 0;

  double duration() const { return sample_rate > 0 ? double(num_samples) / sample_rate : 0.0; }
};

struct SkippedFile {
  std::filesystem::path path;
  std::string reason;
};

/// speaker id -> utterances, both in lexicographic order.
struct SpeakerTable {
  std::map<std::string, std::vector<UtteranceInfo>> speakers;
  std::vector<SkippedFile> skipped;

  std::size_t num_utterances() const;
};

/// Scans root/<speaker>/<utt>.wav. Files that are not 16-bit mono PCM at 8 or
/// 16 kHz are listed in `skipped` with the reason. Throws if no speaker has a
/// usable file.
SpeakerTable scan_corpus(const std::filesystem::path& root);

/// Result of mixing two utterances: stems after gain and peak normalization,
/// and their sum.
struct Mixed {
  Waveform mixture;
  std::array<Waveform, 2> sources;
  double gain = 1.0;   // applied to the second utterance
  double scale = 1.0;  // common peak-normalization factor
};

/// Crops both inputs to the shorter length and scales the second by g so that
/// 20 log10(rms(a) / (g rms(b))) = snr_db. If the sum would clip on the 16-bit
/// grid, everything is scaled so the mixture peak is 0.9.
Mixed make_mixture(const Waveform& a, const Waveform& b, double snr_db);

double rms(const std::vector<double>& x);

struct MixtureRecord {
  std::string id;
  std::string split;  // train, valid or test
  std::filesystem::path mixture;
  std::array<std::filesystem::path, 2> sources;
  std::array<std::filesystem::path, 2> utterances;  // original corpus files
  std::array<std::string, 2> speakers;
  double snr_db = 0.0;
  double gain = 1.0;
  double scale = 1.0;
  std::size_t num_samples = 0;
  int sample_rate = 8000;
  std::uint64_t seed = 0;

  double duration() const { return double(num_samples) / sample_rate; }
};

struct Recipe {
  double train_seconds = 360.0;
  double valid_seconds = 120.0;
  double test_seconds = 120.0;
  double snr_lo = -3.0;
  double snr_hi = 3.0;
  std::uint64_t seed = 0;
  int sample_rate = 8000;
  double duration_tolerance = 0.05;
};

inline constexpr int kRecipeVersion = 1;

struct Manifest {
  int recipe_version = kRecipeVersion;
  Recipe recipe;
  std::filesystem::path root;  // directory that record paths are relative to
  std::vector<MixtureRecord> records;

  std::vector<const MixtureRecord*> split(const std::string& name) const;
  double split_seconds(const std::string& name) const;
};

/// Seeded pairing of utterances from distinct speakers, uniform SNR draws and
/// split assembly to the target durations. Each utterance is used at most once
/// per split and utterances are disjoint across splits; every speaker pair occurs
/// at most once in the test split. Writes <out>/<split>/{mix,s1,s2}/<id>.wav and
/// <out>/manifest.jsonl.
Manifest build_dataset(const SpeakerTable& table, const Recipe& recipe,
                       const std::filesystem::path& out_dir);

/// One JSON object per line: a header line followed by one line per mixture.
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

/// Loads an utterance and brings it to `sample_rate` (only 16 kHz -> 8 kHz
/// conversion is supported).
Waveform load_at_rate(const std::filesystem::path& path, int sample_rate);

struct SynthOptions {
  int num_speakers = 16;
  int utts_per_speaker = 40;
  double seconds = 2.0;
  std::uint64_t seed = 0;
  int sample_rate = 8000;
};

/// One synthetic utterance of a speaker (exposed for tests).
Waveform synth_utterance(int speaker, int utterance, const SynthOptions& opts);

/// Writes <out>/spkNN/uttNNN.wav for every synthetic speaker. Each speaker has a
/// fixed fundamental in 90-250 Hz and its own formant-like spectral envelope;
/// utterances are syllable-rate amplitude-modulated harmonics plus shaped noise.
SpeakerTable synth_corpus(const std::filesystem::path& out_dir, const SynthOptions& opts);

}  // namespace dansep::corpus
