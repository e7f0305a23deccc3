#include "dansep/corpus.hpp"
#include "dansep/dsp.hpp"
#include "dansep/wav.hpp"

#include "test_util.hpp"

#include <fstream>
#include <iterator>
#include <set>

namespace {

namespace corpus = dansep::corpus;
namespace fs = std::filesystem;
using dansep::Waveform;
using dansep::testing::random_signal;
using dansep::testing::TempDir;
using dansep::testing::wave;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put(std::ofstream& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Minimal PCM WAV writer for layouts the library refuses to produce.
void write_raw_wav(const fs::path& p, int channels, int rate, int frames) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  const std::uint32_t data = static_cast<std::uint32_t>(frames * channels * 2);
  out.write("RIFF", 4);
  put(out, 36 + data, 4);
  out.write("WAVEfmt ", 8);
  put(out, 16, 4);
  put(out, 1, 2);
  put(out, channels, 2);
  put(out, rate, 4);
  put(out, rate * channels * 2, 4);
  put(out, channels * 2, 2);
  put(out, 16, 2);
  out.write("data", 4);
  put(out, data, 4);
  for (std::uint32_t i = 0; i < data / 2; ++i) put(out, (i * 37) & 0x0fff, 2);
}

std::vector<double> crop(const std::vector<double>& x, std::size_t n) {
  return {x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n)};
}

TEST(Scan, FindsSpeakersAndUtterancesInOrder) {
  TempDir dir("scan");
  for (const char* spk : {"spkB", "spkA"})
    for (const char* utt : {"u3.wav", "u1.wav", "u2.wav"})
      dansep::wav::write(dir.path() / spk / utt, wave(random_signal(800, 1, 0.1)));
  const auto table = corpus::scan_corpus(dir.path());
  ASSERT_EQ(table.speakers.size(), 2u);
  EXPECT_EQ(table.num_utterances(), 6u);
  EXPECT_EQ(table.speakers.begin()->first, "spkA");
  const auto& utts = table.speakers.at("spkB");
  ASSERT_EQ(utts.size(), 3u);
  EXPECT_EQ(utts[0].path.filename(), "u1.wav");
  EXPECT_EQ(utts[2].path.filename(), "u3.wav");
  EXPECT_EQ(utts[1].speaker, "spkB");
  EXPECT_EQ(utts[1].num_samples, 800u);
  EXPECT_DOUBLE_EQ(utts[1].duration(), 0.1);
  EXPECT_TRUE(table.skipped.empty());
}

TEST(Scan, SkipsUnsupportedFilesWithReasons) {
  TempDir dir("scan_skip");
  dansep::wav::write(dir / "s1/good.wav", wave(random_signal(400, 1, 0.1)));
  write_raw_wav(dir / "s1/stereo.wav", 2, 8000, 100);
  write_raw_wav(dir / "s1/cd.wav", 1, 44100, 100);
  write_raw_wav(dir / "s2/stereo.wav", 2, 16000, 100);
  std::ofstream(dir / "s1/notes.txt") << "ignored";
  std::ofstream(dir / "s1/broken.wav") << "not a wav";
  const auto table = corpus::scan_corpus(dir.path());
  EXPECT_EQ(table.speakers.size(), 1u);
  EXPECT_EQ(table.num_utterances(), 1u);
  ASSERT_EQ(table.skipped.size(), 4u);
  std::set<std::string> names;
  for (const auto& s : table.skipped) {
    names.insert(s.path.filename().string());
    EXPECT_FALSE(s.reason.empty());
  }
  EXPECT_EQ(names, (std::set<std::string>{"stereo.wav", "cd.wav", "broken.wav"}));
}

TEST(Scan, EmptyOrMissingRootIsAnError) {
  TempDir dir("scan_empty");
  EXPECT_THROW(corpus::scan_corpus(dir.path()), dansep::Error);
  fs::create_directories(dir / "speaker_without_files");
  EXPECT_THROW(corpus::scan_corpus(dir.path()), dansep::Error);
  EXPECT_THROW(corpus::scan_corpus(dir / "missing"), dansep::Error);
}

TEST(MakeMixture, GainHitsTargetSnr) {
  // Constant-magnitude signals make the rms exact.
  const Waveform a = wave(std::vector<double>(1000, 0.2));
  const Waveform b = wave(std::vector<double>(1200, -0.2));
  EXPECT_DOUBLE_EQ(corpus::make_mixture(a, b, 0.0).gain, 1.0);
  EXPECT_NEAR(corpus::make_mixture(a, b, 20.0 * std::log10(2.0)).gain, 0.5, 1e-15);
  const auto m = corpus::make_mixture(a, b, 6.0206);
  EXPECT_NEAR(m.gain, 0.5, 1e-5);
  EXPECT_EQ(m.mixture.size(), 1000u);
}

TEST(MakeMixture, RealizedSnrMatchesForRandomSignals) {
  for (double snr : {-3.0, -1.2, 0.0, 2.5, 3.0}) {
    const auto m = corpus::make_mixture(wave(random_signal(3000, 1, 0.05)),
                                        wave(random_signal(2500, 2, 0.2)), snr);
    const double realized = 20.0 * std::log10(corpus::rms(m.sources[0].samples) /
                                               corpus::rms(m.sources[1].samples));
    EXPECT_NEAR(realized, snr, 1e-9);
    EXPECT_EQ(m.scale, 1.0);
    for (std::size_t t = 0; t < m.mixture.size(); ++t)
      EXPECT_EQ(m.mixture.samples[t], m.sources[0].samples[t] + m.sources[1].samples[t]);
  }
}

TEST(MakeMixture, LoudSumIsRenormalizedToPointNine) {
  const auto m = corpus::make_mixture(wave(random_signal(2000, 1, 0.6)),
                                      wave(random_signal(2000, 2, 0.6)), 0.0);
  EXPECT_LT(m.scale, 1.0);
  double peak = 0.0;
  for (double v : m.mixture.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 0.9, 1e-12);
  const double realized = 20.0 * std::log10(corpus::rms(m.sources[0].samples) /
                                            corpus::rms(m.sources[1].samples));
  EXPECT_NEAR(realized, 0.0, 1e-9);
}

TEST(MakeMixture, RejectsSilenceAndRateMismatch) {
  const Waveform a = wave(random_signal(100, 1));
  EXPECT_THROW(corpus::make_mixture(a, wave(std::vector<double>(100, 0.0)), 0.0), dansep::Error);
  EXPECT_THROW(corpus::make_mixture(a, wave(random_signal(100, 2), 16000), 0.0), dansep::Error);
}

TEST(Synth, UtterancesAreDeterministicAndBounded) {
  corpus::SynthOptions opts;
  opts.seconds = 0.5;
  opts.seed = 3;
  const auto a = corpus::synth_utterance(2, 1, opts);
  const auto b = corpus::synth_utterance(2, 1, opts);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.size(), 4000u);
  for (double v : a.samples) EXPECT_LE(std::abs(v), 1.0);
  EXPECT_NE(corpus::synth_utterance(2, 2, opts).samples, a.samples);
  opts.seed = 4;
  EXPECT_NE(corpus::synth_utterance(2, 1, opts).samples, a.samples);
}

// Long-term average spectra of different speakers should be clearly distinct.
TEST(Synth, SpeakersHaveDistinctSpectra) {
  corpus::SynthOptions opts;
  opts.num_speakers = 6;
  opts.seconds = 1.0;
  dansep::dsp::StftConfig stft;
  std::vector<Eigen::VectorXd> spectra;
  for (int s = 0; s < opts.num_speakers; ++s) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(stft.fft_size / 2 + 1);
    for (int u = 0; u < 3; ++u) {
      const auto mag = dansep::dsp::magnitude(dansep::dsp::stft(corpus::synth_utterance(s, u, opts), stft));
      acc += mag.rowwise().mean();
    }
    spectra.push_back(acc);
  }
  for (int i = 0; i < opts.num_speakers; ++i)
    for (int j = i + 1; j < opts.num_speakers; ++j) {
      const double corr = spectra[i].normalized().dot(spectra[j].normalized());
      EXPECT_LT(corr, 0.9) << i << " vs " << j;
    }
}

TEST(Synth, CorpusWritesEveryFileIdentically) {
  TempDir a("synth_a"), b("synth_b");
  corpus::SynthOptions opts;
  opts.num_speakers = 3;
  opts.utts_per_speaker = 2;
  opts.seconds = 0.25;
  opts.seed = 9;
  const auto ta = corpus::synth_corpus(a.path(), opts);
  corpus::synth_corpus(b.path(), opts);
  EXPECT_EQ(ta.speakers.size(), 3u);
  EXPECT_EQ(ta.num_utterances(), 6u);
  for (const auto& [spk, utts] : ta.speakers)
    for (const auto& u : utts) EXPECT_EQ(slurp(u.path), slurp(b.path() / spk / u.path.filename()));
}

TEST(Synth, RejectsDegenerateOptions) {
  TempDir dir("synth_bad");
  corpus::SynthOptions opts;
  opts.num_speakers = 1;
  EXPECT_THROW(corpus::synth_corpus(dir.path(), opts), dansep::ConfigError);
}

class Dataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "dansep_dataset_suite";
    fs::remove_all(root_);
    corpus::SynthOptions so;
    so.num_speakers = 6;
    so.utts_per_speaker = 10;
    so.seconds = 1.0;
    so.seed = 2;
    table_ = corpus::synth_corpus(root_ / "corpus", so);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static corpus::Recipe recipe() {
    corpus::Recipe r;
    r.train_seconds = 12.0;
    r.valid_seconds = 6.0;
    r.test_seconds = 6.0;
    r.seed = 4;
    return r;
  }

  static inline fs::path root_;
  static inline corpus::SpeakerTable table_;
};

TEST_F(Dataset, SplitsMeetTargetDurations) {
  const auto r = recipe();
  const auto m = corpus::build_dataset(table_, r, root_ / "a");
  EXPECT_NEAR(m.split_seconds("train"), r.train_seconds, 0.05 * r.train_seconds);
  EXPECT_NEAR(m.split_seconds("valid"), r.valid_seconds, 0.05 * r.valid_seconds);
  EXPECT_NEAR(m.split_seconds("test"), r.test_seconds, 0.05 * r.test_seconds);
}

TEST_F(Dataset, UtterancesAndPairsFollowTheRules) {
  const auto m = corpus::build_dataset(table_, recipe(), root_ / "b");
  std::map<fs::path, std::string> owner;
  std::set<std::pair<std::string, std::string>> test_pairs;
  for (const auto& r : m.records) {
    EXPECT_NE(r.speakers[0], r.speakers[1]);
    EXPECT_GE(r.snr_db, -3.0);
    EXPECT_LE(r.snr_db, 3.0);
    for (const auto& u : r.utterances) {
      EXPECT_TRUE(u.is_absolute());
      const auto [it, fresh] = owner.emplace(u, r.split);
      EXPECT_TRUE(fresh) << u << " reused in " << r.split << " and " << it->second;
    }
    if (r.split == "test") EXPECT_TRUE(test_pairs.insert(std::minmax(r.speakers[0], r.speakers[1])).second);
  }
}

TEST_F(Dataset, MixtureIsTheSumOfTheStoredStems) {
  const auto m = corpus::build_dataset(table_, recipe(), root_ / "c");
  for (const auto& r : m.records) {
    const auto mix = dansep::wav::read(m.root / r.mixture);
    const auto s1 = dansep::wav::read(m.root / r.sources[0]);
    const auto s2 = dansep::wav::read(m.root / r.sources[1]);
    ASSERT_EQ(mix.size(), r.num_samples);
    ASSERT_EQ(s1.size(), mix.size());
    ASSERT_EQ(s2.size(), mix.size());
    for (std::size_t t = 0; t < mix.size(); ++t) {
      EXPECT_EQ(mix.samples[t], s1.samples[t] + s2.samples[t]);
      EXPECT_LE(std::abs(mix.samples[t]), 1.0);
    }
    const double realized = 20.0 * std::log10(corpus::rms(s1.samples) / corpus::rms(s2.samples));
    EXPECT_NEAR(realized, r.snr_db, 0.05) << r.id;
  }
}

TEST_F(Dataset, SameSeedGivesByteIdenticalOutput) {
  const auto m1 = corpus::build_dataset(table_, recipe(), root_ / "d1");
  const auto m2 = corpus::build_dataset(table_, recipe(), root_ / "d2");
  EXPECT_EQ(slurp(root_ / "d1/manifest.jsonl"), slurp(root_ / "d2/manifest.jsonl"));
  ASSERT_EQ(m1.records.size(), m2.records.size());
  for (std::size_t i = 0; i < m1.records.size(); ++i) {
    EXPECT_EQ(slurp(m1.root / m1.records[i].mixture), slurp(m2.root / m2.records[i].mixture));
    EXPECT_EQ(slurp(m1.root / m1.records[i].sources[1]), slurp(m2.root / m2.records[i].sources[1]));
  }
  auto other = recipe();
  other.seed = 5;
  corpus::build_dataset(table_, other, root_ / "d3");
  EXPECT_NE(slurp(root_ / "d1/manifest.jsonl"), slurp(root_ / "d3/manifest.jsonl"));
}

TEST_F(Dataset, ShortfallIsAnError) {
  auto r = recipe();
  r.train_seconds = 600.0;
  try {
    corpus::build_dataset(table_, r, root_ / "e");
    FAIL() << "expected a shortfall error";
  } catch (const dansep::Error& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient"), std::string::npos);
  }
}

TEST_F(Dataset, RejectsBadRecipes) {
  auto r = recipe();
  r.snr_lo = 4.0;
  EXPECT_THROW(corpus::build_dataset(table_, r, root_ / "f"), dansep::ConfigError);
  r = recipe();
  r.train_seconds = r.valid_seconds = r.test_seconds = 0.0;
  EXPECT_THROW(corpus::build_dataset(table_, r, root_ / "f"), dansep::ConfigError);
}

TEST_F(Dataset, ManifestRoundTrips) {
  const auto m = corpus::build_dataset(table_, recipe(), root_ / "g");
  const auto back = corpus::read_manifest(root_ / "g/manifest.jsonl");
  EXPECT_EQ(back.recipe_version, corpus::kRecipeVersion);
  EXPECT_EQ(back.recipe.seed, m.recipe.seed);
  EXPECT_EQ(back.recipe.train_seconds, m.recipe.train_seconds);
  EXPECT_EQ(fs::weakly_canonical(back.root), fs::weakly_canonical(m.root));
  ASSERT_EQ(back.records.size(), m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& a = m.records[i];
    const auto& b = back.records[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.split, b.split);
    EXPECT_EQ(a.mixture, b.mixture);
    EXPECT_EQ(a.sources, b.sources);
    EXPECT_EQ(a.utterances, b.utterances);
    EXPECT_EQ(a.speakers, b.speakers);
    EXPECT_EQ(a.snr_db, b.snr_db);
    EXPECT_EQ(a.gain, b.gain);
    EXPECT_EQ(a.scale, b.scale);
    EXPECT_EQ(a.num_samples, b.num_samples);
    EXPECT_EQ(a.seed, b.seed);
  }
}

TEST(Manifest, RejectsMalformedFiles) {
  TempDir dir("manifest_bad");
  std::ofstream(dir / "no_header.jsonl") << "";
  EXPECT_THROW(corpus::read_manifest(dir / "no_header.jsonl"), dansep::FormatError);
  std::ofstream(dir / "garbage.jsonl") << "{not json\n";
  EXPECT_THROW(corpus::read_manifest(dir / "garbage.jsonl"), dansep::FormatError);
  std::ofstream(dir / "version.jsonl") << "{\"recipe_version\": 99}\n";
  EXPECT_THROW(corpus::read_manifest(dir / "version.jsonl"), dansep::FormatError);
  EXPECT_THROW(corpus::read_manifest(dir / "missing.jsonl"), dansep::Error);
}

TEST(LoadAtRate, DecimatesSixteenKilohertz) {
  TempDir dir("rate");
  std::vector<double> x(3200);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = 0.5 * std::sin(2 * M_PI * 500.0 * t / 16000.0);
  dansep::wav::write(dir / "hi.wav", wave(x, 16000));
  const auto w = corpus::load_at_rate(dir / "hi.wav", 8000);
  EXPECT_EQ(w.sample_rate, 8000);
  EXPECT_EQ(w.size(), 1600u);
  EXPECT_NEAR(corpus::rms(crop(std::vector<double>(w.samples.begin() + 100, w.samples.end()), 1400)),
              0.5 / std::sqrt(2.0), 0.01);
  EXPECT_EQ(corpus::load_at_rate(dir / "hi.wav", 16000).size(), 3200u);
  dansep::wav::write(dir / "lo.wav", wave(random_signal(100, 1, 0.1), 8000));
  EXPECT_THROW(corpus::load_at_rate(dir / "lo.wav", 16000), dansep::Error);
}

}  // namespace
