#include "dansep/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

namespace dansep::config {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": cannot parse '" + s + "' as a number");
  return v;
}

}  // namespace

const std::map<std::string, KeyInfo>& RunConfig::registry() {
  static const std::map<std::string, KeyInfo> keys = {
      {"seed", {"0", "master seed for every randomized step"}},
      {"sample_rate", {"8000", "working sample rate in Hz"}},

      {"synth.out", {"", "output directory for the synthetic corpus"}},
      {"synth.speakers", {"16", "number of synthetic speakers"}},
      {"synth.utts", {"40", "utterances per synthetic speaker"}},
      {"synth.seconds", {"2", "duration of each synthetic utterance"}},

      {"mix.corpus", {"", "corpus root laid out as <speaker>/<utt>.wav"}},
      {"mix.out", {"", "output directory for mixtures and manifest.jsonl"}},
      {"mix.train_min", {"6", "training split duration in minutes"}},
      {"mix.valid_min", {"2", "validation split duration in minutes"}},
      {"mix.test_min", {"2", "test split duration in minutes"}},
      {"mix.snr_lo", {"-3", "lowest mixing SNR in dB"}},
      {"mix.snr_hi", {"3", "highest mixing SNR in dB"}},
      {"mix.tolerance", {"0.05", "allowed relative shortfall of a split duration"}},

      {"stft.win_len", {"256", "analysis window length in samples"}},
      {"stft.hop", {"64", "frame shift in samples"}},
      {"stft.fft_size", {"256", "FFT size; bins = fft_size / 2 + 1"}},
      {"feat.floor_eps", {"1e-7", "magnitude floor inside the log features"}},
      {"mask.tau", {"0.5", "ideal binary mask threshold"}},
      {"mask.energy_gate_db", {"0", "ignore bins this far below the loudest bin in the loss and in clustering (0 = off)"}},

      {"arch.layers", {"4", "bidirectional recurrent layers"}},
      {"arch.hidden", {"300", "hidden units per direction"}},
      {"arch.embed", {"20", "embedding dimension K"}},
      {"arch.cell", {"gru", "recurrent cell: gru or lstm (training supports gru)"}},

      {"train.manifest", {"", "manifest.jsonl produced by mix"}},
      {"train.out", {"", "run directory for checkpoints, log and config"}},
      {"train.lr0", {"1e-3", "initial Adam learning rate"}},
      {"train.patience", {"3", "epochs without a new best before the rate halves"}},
      {"train.lr_min", {"1e-6", "learning-rate floor"}},
      {"train.epochs", {"50", "last epoch to train"}},
      {"train.batch", {"8", "utterances per mini-batch"}},
      {"train.clip", {"200", "global gradient-norm clip"}},
      {"train.beta1", {"0.9", "Adam beta1"}},
      {"train.beta2", {"0.999", "Adam beta2"}},
      {"train.adam_eps", {"1e-8", "Adam epsilon"}},
      {"train.threads", {"1", "worker threads for per-utterance gradients"}},
      {"train.resume", {"0", "1 continues from <train.out>/last.ckpt"}},

      {"separate.ckpt", {"", "checkpoint to load"}},
      {"separate.input", {"", "mixture WAV"}},
      {"separate.out", {"", "output directory (defaults to the input's directory)"}},
      {"separate.speakers", {"2", "number of sources to extract"}},
      {"separate.cluster", {"gmm", "attractor clustering: gmm or kmeans"}},

      {"eval.manifest", {"", "manifest.jsonl to score"}},
      {"eval.ckpt", {"", "checkpoint (needed for mode=model)"}},
      {"eval.out", {"", "report CSV path"}},
      {"eval.split", {"test", "manifest split to score"}},
      {"eval.mode", {"model", "model, oracle-wfm, oracle-ibm or mixture"}},
      {"eval.cluster", {"gmm", "attractor clustering: gmm or kmeans"}},
      {"eval.proj_len", {"512", "distortion filter taps"}},
      {"eval.sdr_cap", {"100", "cap in dB for zero-energy error terms"}},
      {"eval.threads", {"1", "worker threads for per-utterance scoring"}},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& [k, info] : registry()) values_[k] = info.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::load(std::istream& in, const std::string& origin) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  load(in, path.string());
}

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const { return parse_number<double>(key, str(key)); }
int RunConfig::integer(const std::string& key) const { return parse_number<int>(key, str(key)); }
std::uint64_t RunConfig::seed(const std::string& key) const {
  return parse_number<std::uint64_t>(key, str(key));
}

std::filesystem::path RunConfig::required_path(const std::string& key) const {
  const auto& v = str(key);
  if (v.empty()) throw ConfigError(key + " is required");
  return v;
}

void RunConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
}

void RunConfig::write_file(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write config echo: " + path.string());
  write(out);
}

dsp::StftConfig stft_config(const RunConfig& cfg) {
  dsp::StftConfig s;
  s.win_len = cfg.integer("stft.win_len");
  s.hop = cfg.integer("stft.hop");
  s.fft_size = cfg.integer("stft.fft_size");
  s.validate();
  return s;
}

net::ArchSpec arch_spec(const RunConfig& cfg) {
  net::ArchSpec a;
  a.input_dim = stft_config(cfg).num_bins();
  a.num_layers = cfg.integer("arch.layers");
  a.hidden = cfg.integer("arch.hidden");
  a.embed_dim = cfg.integer("arch.embed");
  a.cell = net::cell_kind_from_string(cfg.str("arch.cell"));
  a.validate();
  return a;
}

pipeline::HyperParams hyper_params(const RunConfig& cfg) {
  pipeline::HyperParams h;
  h.lr0 = cfg.real("train.lr0");
  h.lr_halve_patience = cfg.integer("train.patience");
  h.lr_min = cfg.real("train.lr_min");
  h.epochs = cfg.integer("train.epochs");
  h.batch_size = cfg.integer("train.batch");
  h.grad_clip = cfg.real("train.clip");
  h.beta1 = cfg.real("train.beta1");
  h.beta2 = cfg.real("train.beta2");
  h.adam_eps = cfg.real("train.adam_eps");
  h.seed = cfg.seed();
  h.threads = cfg.integer("train.threads");
  h.tau = cfg.real("mask.tau");
  h.energy_gate_db = cfg.real("mask.energy_gate_db");
  h.floor_eps = cfg.real("feat.floor_eps");
  h.validate();
  return h;
}

eval::EvalConfig eval_config(const RunConfig& cfg) {
  eval::EvalConfig e;
  e.proj_len = cfg.integer("eval.proj_len");
  e.sdr_cap = cfg.real("eval.sdr_cap");
  e.validate();
  return e;
}

corpus::Recipe recipe(const RunConfig& cfg) {
  corpus::Recipe r;
  r.train_seconds = 60.0 * cfg.real("mix.train_min");
  r.valid_seconds = 60.0 * cfg.real("mix.valid_min");
  r.test_seconds = 60.0 * cfg.real("mix.test_min");
  r.snr_lo = cfg.real("mix.snr_lo");
  r.snr_hi = cfg.real("mix.snr_hi");
  r.seed = cfg.seed();
  r.sample_rate = cfg.integer("sample_rate");
  r.duration_tolerance = cfg.real("mix.tolerance");
  if (!(r.train_seconds >= 0 && r.valid_seconds >= 0 && r.test_seconds >= 0))
    throw ConfigError("mix.*_min must be non-negative");
  if (!(r.snr_lo <= r.snr_hi)) throw ConfigError("mix.snr_lo must not exceed mix.snr_hi");
  if (r.sample_rate != 8000 && r.sample_rate != 16000)
    throw ConfigError("sample_rate must be 8000 or 16000");
  return r;
}

corpus::SynthOptions synth_options(const RunConfig& cfg) {
  corpus::SynthOptions s;
  s.num_speakers = cfg.integer("synth.speakers");
  s.utts_per_speaker = cfg.integer("synth.utts");
  s.seconds = cfg.real("synth.seconds");
  s.seed = cfg.seed();
  s.sample_rate = cfg.integer("sample_rate");
  if (s.num_speakers < 2) throw ConfigError("synth.speakers must be at least 2");
  if (s.utts_per_speaker < 1) throw ConfigError("synth.utts must be at least 1");
  if (!(s.seconds > 0.0)) throw ConfigError("synth.seconds must be positive");
  return s;
}

}  // namespace dansep::config
