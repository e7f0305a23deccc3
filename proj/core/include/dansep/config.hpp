#pragma once

#include "dansep/corpus.hpp"
#include "dansep/dsp.hpp"
#include "dansep/evalkit.hpp"
#include "dansep/network.hpp"
#include "dansep/pipeline.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace dansep::config {

struct KeyInfo {
  std::string default_value;
  std::string help;
};

/// Flat settings addressed by dotted keys (train.lr0, stft.win_len, ...). Every
/// known key has a default; setting an unknown key throws ConfigError.
class RunConfig {
 public:
  RunConfig();

  static const std::map<std::string, KeyInfo>& registry();

  void set(const std::string& key, const std::string& value);
  /// `key = value` lines; '#' starts a comment.
  void load(std::istream& in, const std::string& origin = "<config>");
  void load_file(const std::filesystem::path& path);

  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t seed(const std::string& key = "seed") const;
  /// Throws ConfigError naming the key when the value is empty.
  std::filesystem::path required_path(const std::string& key) const;

  /// Writes every key in sorted order; loading the output reproduces this config.
  void write(std::ostream& out) const;
  void write_file(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

dsp::StftConfig stft_config(const RunConfig& cfg);
net::ArchSpec arch_spec(const RunConfig& cfg);
pipeline::HyperParams hyper_params(const RunConfig& cfg);
eval::EvalConfig eval_config(const RunConfig& cfg);
corpus::Recipe recipe(const RunConfig& cfg);
corpus::SynthOptions synth_options(const RunConfig& cfg);

}  // namespace dansep::config
