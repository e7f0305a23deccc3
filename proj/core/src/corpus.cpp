#include "dansep/corpus.hpp"

#include "dansep/dsp.hpp"
#include "dansep/wav.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace dansep::corpus {
namespace fs = std::filesystem;
namespace {

const std::array<std::string, 3> kSplits = {"train", "valid", "test"};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string pad(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(std::max(0, width - static_cast<int>(s.size())), '0') + s;
}

struct SpeakerProfile {
  double f0 = 120.0;
  std::array<double, 3> formant{};
  std::array<double, 3> bandwidth{};
  std::array<double, 3> formant_gain{};
  double tilt = 0.0;        // dB per kHz
  double noise_level = 0.05;
};

SpeakerProfile make_profile(int speaker, const SynthOptions& opts) {
  std::mt19937_64 rng(mix_seed(opts.seed, 0x5eed, static_cast<std::uint64_t>(speaker)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SpeakerProfile p;
  const double slot = (speaker % opts.num_speakers + 0.2 + 0.6 * u(rng)) / opts.num_speakers;
  p.f0 = 90.0 + 160.0 * slot;
  p.formant = {250.0 + 650.0 * u(rng), 900.0 + 1500.0 * u(rng), 2400.0 + 1200.0 * u(rng)};
  p.bandwidth = {60.0 + 140.0 * u(rng), 90.0 + 210.0 * u(rng), 120.0 + 250.0 * u(rng)};
  p.formant_gain = {0.4 + 0.6 * u(rng), 0.3 + 0.7 * u(rng), 0.2 + 0.6 * u(rng)};
  p.tilt = -2.0 - 4.0 * u(rng);
  p.noise_level = 0.02 + 0.06 * u(rng);
  return p;
}

double envelope(const SpeakerProfile& p, double freq) {
  double g = 0.02;
  for (int j = 0; j < 3; ++j) {
    const double d = (freq - p.formant[j]) / p.bandwidth[j];
    g += p.formant_gain[j] * std::exp(-0.5 * d * d);
  }
  return g * std::pow(10.0, p.tilt * freq / 1000.0 / 20.0);
}

}  // namespace

std::size_t SpeakerTable::num_utterances() const {
  std::size_t n = 0;
  for (const auto& [_, utts] : speakers) n += utts.size();
  return n;
}

SpeakerTable scan_corpus(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error("no speakers: '" + root.string() + "' is not a directory");
  SpeakerTable table;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<UtteranceInfo> utts;
    for (const auto& f : files) {
      try {
        const auto info = wav::probe(f);
        std::string reason;
        if (info.format_tag != 1 || info.bits_per_sample != 16) reason = "not 16-bit PCM";
        else if (info.channels != 1) reason = "not mono (" + std::to_string(info.channels) + " channels)";
        else if (info.sample_rate != 8000 && info.sample_rate != 16000)
          reason = "unsupported sample rate " + std::to_string(info.sample_rate);
        else if (info.frames == 0) reason = "empty";
        if (!reason.empty()) {
          table.skipped.push_back({f, reason});
          continue;
        }
        utts.push_back({dir.filename().string(), f, info.frames, info.sample_rate});
      } catch (const FormatError& e) {
        table.skipped.push_back({f, e.what()});
      }
    }
    if (!utts.empty()) table.speakers.emplace(dir.filename().string(), std::move(utts));
  }
  if (table.speakers.empty()) throw Error("no speakers found under '" + root.string() + "'");
  return table;
}

double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

Mixed make_mixture(const Waveform& a, const Waveform& b, double snr_db) {
  if (a.sample_rate != b.sample_rate) throw Error("make_mixture: sample rates differ");
  const std::size_t n = std::min(a.size(), b.size());
  if (n == 0) throw Error("make_mixture: empty utterance");
  std::vector<double> sa(a.samples.begin(), a.samples.begin() + n);
  std::vector<double> sb(b.samples.begin(), b.samples.begin() + n);
  const double ra = rms(sa), rb = rms(sb);
  if (ra <= 0.0 || rb <= 0.0) throw Error("make_mixture: zero-energy utterance");

  Mixed m;
  m.gain = ra / (rb * std::pow(10.0, snr_db / 20.0));
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, std::abs(sa[i] + m.gain * sb[i]));
  // Quantized stems can add up to one extra step on top of the float peak.
  if (peak > 1.0 - 2.0 / 32768.0) m.scale = 0.9 / peak;

  for (auto& s : m.sources) s.sample_rate = a.sample_rate;
  m.mixture.sample_rate = a.sample_rate;
  m.sources[0].samples.resize(n);
  m.sources[1].samples.resize(n);
  m.mixture.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.sources[0].samples[i] = m.scale * sa[i];
    m.sources[1].samples[i] = m.scale * m.gain * sb[i];
    m.mixture.samples[i] = m.sources[0].samples[i] + m.sources[1].samples[i];
  }
  return m;
}

std::vector<const MixtureRecord*> Manifest::split(const std::string& name) const {
  std::vector<const MixtureRecord*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

double Manifest::split_seconds(const std::string& name) const {
  double total = 0.0;
  for (const auto* r : split(name)) total += r->duration();
  return total;
}

Waveform load_at_rate(const fs::path& path, int sample_rate) {
  Waveform w = wav::read(path);
  if (w.sample_rate == sample_rate) return w;
  if (w.sample_rate == 2 * sample_rate && sample_rate == 8000) return dsp::decimate2(w);
  throw Error(path.string() + ": cannot convert " + std::to_string(w.sample_rate) + " Hz to " +
              std::to_string(sample_rate) + " Hz");
}

Manifest build_dataset(const SpeakerTable& table, const Recipe& recipe, const fs::path& out_dir) {
  if (table.speakers.size() < 2) throw Error("build_dataset: need at least two speakers");
  if (!(recipe.snr_lo <= recipe.snr_hi)) throw ConfigError("mix.snr_lo must not exceed mix.snr_hi");
  const std::array<double, 3> targets = {recipe.train_seconds, recipe.valid_seconds,
                                         recipe.test_seconds};
  const double total_target = targets[0] + targets[1] + targets[2];
  for (double t : targets)
    if (t < 0.0) throw ConfigError("split durations must be nonnegative");
  if (total_target <= 0.0) throw ConfigError("at least one split duration must be positive");

  std::mt19937_64 rng(recipe.seed);
  auto duration_at_rate = [&](const UtteranceInfo& u) {
    return u.sample_rate == recipe.sample_rate
               ? u.duration()
               : static_cast<double>((u.num_samples + 1) / 2) / recipe.sample_rate;
  };

  // Partition each speaker's utterances across splits in proportion to the targets.
  std::array<std::vector<const UtteranceInfo*>, 3> pools;
  for (const auto& [speaker, utts] : table.speakers) {
    std::vector<const UtteranceInfo*> order;
    for (const auto& u : utts) order.push_back(&u);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t begin = 0;
    double cumulative = 0.0;
    for (int s = 0; s < 3; ++s) {
      cumulative += targets[s];
      const auto end = s == 2 ? order.size()
                              : static_cast<std::size_t>(std::llround(
                                    cumulative / total_target * static_cast<double>(order.size())));
      for (std::size_t i = begin; i < std::min(end, order.size()); ++i) pools[s].push_back(order[i]);
      begin = std::max(begin, end);
    }
  }

  Manifest manifest;
  manifest.recipe = recipe;
  manifest.root = out_dir;
  std::uniform_real_distribution<double> snr_dist(recipe.snr_lo, recipe.snr_hi);
  std::ostringstream shortfall;

  for (int s = 0; s < 3; ++s) {
    const double target = targets[s];
    auto pool = pools[s];
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<bool> used(pool.size(), false);
    std::set<std::pair<std::string, std::string>> pairs;
    double total = 0.0;
    int index = 0;
    for (std::size_t i = 0; i < pool.size() && total < target; ++i) {
      if (used[i]) continue;
      std::vector<std::size_t> candidates;
      for (std::size_t j = 0; j < pool.size(); ++j) {
        if (j == i || used[j] || pool[j]->speaker == pool[i]->speaker) continue;
        const double dur = std::min(duration_at_rate(*pool[i]), duration_at_rate(*pool[j]));
        if (total + dur > target * (1.0 + recipe.duration_tolerance)) continue;
        if (kSplits[s] == "test" &&
            pairs.count(std::minmax(pool[i]->speaker, pool[j]->speaker)))
          continue;
        candidates.push_back(j);
      }
      if (candidates.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      const std::size_t j = candidates[pick(rng)];
      used[i] = used[j] = true;
      pairs.insert(std::minmax(pool[i]->speaker, pool[j]->speaker));

      MixtureRecord r;
      r.split = kSplits[s];
      r.id = r.split + "_" + pad(index, 5) + "_" + pool[i]->speaker + "_" + pool[j]->speaker;
      r.speakers = {pool[i]->speaker, pool[j]->speaker};
      r.utterances = {pool[i]->path, pool[j]->path};
      r.snr_db = snr_dist(rng);
      r.sample_rate = recipe.sample_rate;
      r.seed = mix_seed(recipe.seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(index));
      r.mixture = fs::path(r.split) / "mix" / (r.id + ".wav");
      r.sources = {fs::path(r.split) / "s1" / (r.id + ".wav"), fs::path(r.split) / "s2" / (r.id + ".wav")};
      r.num_samples = static_cast<std::size_t>(
          std::llround(std::min(duration_at_rate(*pool[i]), duration_at_rate(*pool[j])) *
                       recipe.sample_rate));
      manifest.records.push_back(std::move(r));
      total += manifest.records.back().duration();
      ++index;
    }
    if (target > 0.0 && total < target * (1.0 - recipe.duration_tolerance))
      shortfall << " " << kSplits[s] << ": " << total << " s of " << target << " s requested;";
  }
  if (!shortfall.str().empty())
    throw Error("insufficient source material:" + shortfall.str());

  for (auto& r : manifest.records) {
    const Waveform a = load_at_rate(r.utterances[0], recipe.sample_rate);
    const Waveform b = load_at_rate(r.utterances[1], recipe.sample_rate);
    const Mixed m = make_mixture(a, b, r.snr_db);
    r.gain = m.gain;
    r.scale = m.scale;
    r.num_samples = m.mixture.size();

    // Stems go to disk on the 16-bit grid; the mixture is their exact sum.
    std::array<Waveform, 2> stems;
    Waveform mix;
    mix.sample_rate = recipe.sample_rate;
    mix.samples.assign(m.mixture.size(), 0.0);
    for (int k = 0; k < 2; ++k) {
      stems[k].sample_rate = recipe.sample_rate;
      const auto q = wav::quantize(m.sources[k].samples);
      stems[k].samples.resize(q.size());
      for (std::size_t t = 0; t < q.size(); ++t) {
        stems[k].samples[t] = q[t] / 32768.0;
        mix.samples[t] += stems[k].samples[t];
      }
      wav::write(out_dir / r.sources[k], stems[k]);
    }
    wav::write(out_dir / r.mixture, mix);
  }
  for (auto& r : manifest.records) {
    r.utterances[0] = fs::absolute(r.utterances[0]);
    r.utterances[1] = fs::absolute(r.utterances[1]);
  }
  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  using nlohmann::ordered_json;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest: " + path.string());
  ordered_json header;
  header["recipe_version"] = manifest.recipe_version;
  header["seed"] = manifest.recipe.seed;
  header["sample_rate"] = manifest.recipe.sample_rate;
  header["train_seconds"] = manifest.recipe.train_seconds;
  header["valid_seconds"] = manifest.recipe.valid_seconds;
  header["test_seconds"] = manifest.recipe.test_seconds;
  header["snr_lo"] = manifest.recipe.snr_lo;
  header["snr_hi"] = manifest.recipe.snr_hi;
  out << header.dump() << '\n';
  for (const auto& r : manifest.records) {
    ordered_json j;
    j["id"] = r.id;
    j["split"] = r.split;
    j["mixture"] = r.mixture.generic_string();
    j["source1"] = r.sources[0].generic_string();
    j["source2"] = r.sources[1].generic_string();
    j["speaker1"] = r.speakers[0];
    j["speaker2"] = r.speakers[1];
    j["utt1"] = r.utterances[0].generic_string();
    j["utt2"] = r.utterances[1].generic_string();
    j["snr_db"] = r.snr_db;
    j["gain"] = r.gain;
    j["scale"] = r.scale;
    j["num_samples"] = r.num_samples;
    j["sample_rate"] = r.sample_rate;
    j["seed"] = r.seed;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("short write on manifest: " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  bool have_header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (!have_header) {
        m.recipe_version = j.at("recipe_version").get<int>();
        if (m.recipe_version != kRecipeVersion)
          throw FormatError("unsupported manifest recipe version " + std::to_string(m.recipe_version));
        m.recipe.seed = j.at("seed").get<std::uint64_t>();
        m.recipe.sample_rate = j.at("sample_rate").get<int>();
        m.recipe.train_seconds = j.at("train_seconds").get<double>();
        m.recipe.valid_seconds = j.at("valid_seconds").get<double>();
        m.recipe.test_seconds = j.at("test_seconds").get<double>();
        m.recipe.snr_lo = j.at("snr_lo").get<double>();
        m.recipe.snr_hi = j.at("snr_hi").get<double>();
        have_header = true;
        continue;
      }
      MixtureRecord r;
      r.id = j.at("id").get<std::string>();
      r.split = j.at("split").get<std::string>();
      r.mixture = j.at("mixture").get<std::string>();
      r.sources = {j.at("source1").get<std::string>(), j.at("source2").get<std::string>()};
      r.speakers = {j.at("speaker1").get<std::string>(), j.at("speaker2").get<std::string>()};
      r.utterances = {j.at("utt1").get<std::string>(), j.at("utt2").get<std::string>()};
      r.snr_db = j.at("snr_db").get<double>();
      r.gain = j.at("gain").get<double>();
      r.scale = j.at("scale").get<double>();
      r.num_samples = j.at("num_samples").get<std::size_t>();
      r.sample_rate = j.at("sample_rate").get<int>();
      r.seed = j.at("seed").get<std::uint64_t>();
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw FormatError(path.string() + ": missing manifest header");
  return m;
}

Waveform synth_utterance(int speaker, int utterance, const SynthOptions& opts) {
  const SpeakerProfile p = make_profile(speaker, opts);
  std::mt19937_64 rng(mix_seed(opts.seed, static_cast<std::uint64_t>(speaker) + 1,
                               static_cast<std::uint64_t>(utterance) + 1));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int fs = opts.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(opts.seconds * fs));
  const double two_pi = 2.0 * std::numbers::pi;
  const double f0 = p.f0 * (0.97 + 0.06 * u(rng));
  const double vib_rate = 3.0 + 3.0 * u(rng);
  const double vib_phase = two_pi * u(rng);
  const double syl_rate = 2.5 + 2.0 * u(rng);
  const double syl_phase = two_pi * u(rng);
  const double formant_jitter = 0.95 + 0.1 * u(rng);

  SpeakerProfile local = p;
  for (double& f : local.formant) f *= formant_jitter;
  const int harmonics = static_cast<int>(0.48 * fs / f0);
  std::vector<double> amp(harmonics + 1), phase(harmonics + 1);
  for (int k = 1; k <= harmonics; ++k) {
    amp[k] = envelope(local, k * f0);
    phase[k] = two_pi * u(rng);
  }

  // Two-pole resonator shaping the breath noise around the second formant.
  const double r = std::exp(-std::numbers::pi * local.bandwidth[1] / fs);
  const double a1 = 2.0 * r * std::cos(two_pi * local.formant[1] / fs);
  const double a2 = -r * r;
  const double noise_gain = (1.0 - r);
  double y1 = 0.0, y2 = 0.0;

  Waveform w;
  w.sample_rate = fs;
  w.samples.resize(n);
  double base_phase = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double time = static_cast<double>(t) / fs;
    const double inst_f0 = f0 * (1.0 + 0.02 * std::sin(two_pi * vib_rate * time + vib_phase));
    base_phase += two_pi * inst_f0 / fs;
    double voiced = 0.0;
    for (int k = 1; k <= harmonics; ++k) voiced += amp[k] * std::sin(k * base_phase + phase[k]);
    const double y = noise_gain * gauss(rng) + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    const double syl = std::pow(std::max(0.0, std::sin(two_pi * syl_rate * time + syl_phase)), 1.5);
    w.samples[t] = syl * (voiced + p.noise_level * 20.0 * y);
  }

  const double level = 0.08 * (0.8 + 0.4 * u(rng));
  const double current = rms(w.samples);
  double scale = current > 0.0 ? level / current : 0.0;
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak * scale > 0.95) scale = 0.95 / peak;
  for (double& v : w.samples) v *= scale;
  return w;
}

SpeakerTable synth_corpus(const fs::path& out_dir, const SynthOptions& opts) {
  if (opts.num_speakers < 2) throw ConfigError("synth.speakers must be at least 2");
  if (opts.utts_per_speaker < 1) throw ConfigError("synth.utts must be at least 1");
  if (!(opts.seconds > 0.0)) throw ConfigError("synth.seconds must be positive");
  for (int s = 0; s < opts.num_speakers; ++s) {
    const fs::path dir = out_dir / ("spk" + pad(s, 2));
    for (int k = 0; k < opts.utts_per_speaker; ++k)
      wav::write(dir / ("utt" + pad(k, 3) + ".wav"), synth_utterance(s, k, opts));
  }
  return scan_corpus(out_dir);
}

}  // namespace dansep::corpus
