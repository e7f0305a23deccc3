#include "commands.hpp"

#include "dansep/config.hpp"
#include "dansep/evaluate.hpp"
#include "dansep/wav.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace dansep::cli {
namespace {

namespace fs = std::filesystem;
using config::RunConfig;

constexpr const char* kEchoName = "effective.cfg";

using Handler = int (*)(const RunConfig&, std::ostream&, std::ostream&);

struct Command {
  std::string name;
  std::string description;
  std::vector<std::string> prefixes;  // keys under these become flags
  std::vector<std::string> keys;      // extra individual keys
  Handler handler;
};

std::string flag_for(const std::string& key) {
  std::string leaf = key.substr(key.rfind('.') + 1);
  std::replace(leaf.begin(), leaf.end(), '_', '-');
  return "--" + leaf;
}

std::vector<std::string> keys_for(const Command& c) {
  std::vector<std::string> out;
  for (const auto& [k, info] : RunConfig::registry()) {
    const bool listed = std::find(c.keys.begin(), c.keys.end(), k) != c.keys.end();
    const bool prefixed = std::any_of(c.prefixes.begin(), c.prefixes.end(), [&](const std::string& p) {
      return k.rfind(p + ".", 0) == 0;
    });
    if (listed || prefixed) out.push_back(k);
  }
  return out;
}

fs::path existing_file(const RunConfig& cfg, const std::string& key) {
  const fs::path p = cfg.required_path(key);
  if (!fs::is_regular_file(p)) throw ConfigError(key + ": no such file '" + p.string() + "'");
  return p;
}

// Keeps the rows of an earlier log up to `last_epoch`, so a resumed run appends.
pipeline::TrainLog read_log_prefix(const fs::path& path, int last_epoch) {
  pipeline::TrainLog log;
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::istringstream row(line);
    pipeline::EpochRecord r;
    char c = 0;
    if (!(row >> r.epoch >> c >> r.train_loss >> c >> r.val_loss >> c >> r.lr >> c >> r.seconds)) break;
    if (r.epoch > last_epoch) break;
    log.push_back(r);
  }
  return log;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const auto opts = config::synth_options(cfg);
  const auto dir = cfg.required_path("synth.out");
  const auto table = corpus::synth_corpus(dir, opts);
  cfg.write_file(dir / kEchoName);
  out << "wrote " << table.num_utterances() << " utterances from " << table.speakers.size()
      << " speakers to " << dir.string() << '\n';
  return 0;
}

int cmd_mix(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto recipe = config::recipe(cfg);
  const auto root = cfg.required_path("mix.corpus");
  if (!fs::is_directory(root)) throw ConfigError("mix.corpus: '" + root.string() + "' is not a directory");
  const auto dir = cfg.required_path("mix.out");
  const auto table = corpus::scan_corpus(root);
  for (const auto& s : table.skipped) err << "skipped " << s.path.string() << ": " << s.reason << '\n';
  const auto manifest = corpus::build_dataset(table, recipe, dir);
  cfg.write_file(dir / kEchoName);
  for (const char* split : {"train", "valid", "test"})
    out << split << ": " << manifest.split(split).size() << " mixtures, " << std::fixed
        << std::setprecision(1) << manifest.split_seconds(split) << " s\n";
  out << "manifest: " << (dir / "manifest.jsonl").string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  pipeline::TrainConfig tc;
  tc.hyper = config::hyper_params(cfg);
  tc.stft = config::stft_config(cfg);
  tc.arch = config::arch_spec(cfg);
  if (tc.arch.cell != net::CellKind::Gru) throw ConfigError("arch.cell: training supports gru only");
  const auto manifest_path = existing_file(cfg, "train.manifest");
  const auto dir = cfg.required_path("train.out");
  const bool resume = cfg.integer("train.resume") != 0;

  std::optional<pipeline::ResumeState> state;
  pipeline::TrainLog log;
  if (resume) {
    if (!fs::is_regular_file(dir / "last.ckpt"))
      throw ConfigError("train.resume: no checkpoint at " + (dir / "last.ckpt").string());
    state = pipeline::ResumeState{pipeline::load_checkpoint(dir / "last.ckpt"), std::nullopt};
    if (fs::is_regular_file(dir / "best.ckpt")) state->best = pipeline::load_checkpoint(dir / "best.ckpt");
    log = read_log_prefix(dir / "train_log.csv", state->last.epoch);
    if (state->last.epoch >= tc.hyper.epochs)
      throw ConfigError("train.epochs: checkpoint already reached epoch " +
                        std::to_string(state->last.epoch));
  }

  const auto manifest = corpus::read_manifest(manifest_path);
  const auto train_set = pipeline::load_examples(manifest, "train");
  const auto valid_set = pipeline::load_examples(manifest, "valid");
  fs::create_directories(dir);
  cfg.write_file(dir / kEchoName);

  auto on_epoch = [&](const pipeline::EpochRecord& r, const pipeline::TrainResult& so_far) {
    log.push_back(r);
    pipeline::save_checkpoint(so_far.last, dir / "last.ckpt");
    pipeline::save_checkpoint(so_far.best, dir / "best.ckpt");
    std::ofstream csv(dir / "train_log.csv", std::ios::trunc);
    pipeline::write_train_log(csv, log);
    out << "epoch " << r.epoch << "  train " << std::setprecision(6) << r.train_loss << "  valid "
        << r.val_loss << "  lr " << r.lr << "  " << std::setprecision(3) << r.seconds << " s"
        << std::endl;
  };
  const auto result = pipeline::train(train_set, valid_set, tc, state, on_epoch);
  out << "best epoch " << result.best.epoch << " valid loss " << std::setprecision(6)
      << result.best.val_loss << "; checkpoints in " << dir.string() << '\n';
  return 0;
}

int cmd_separate(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const auto ckpt_path = existing_file(cfg, "separate.ckpt");
  const auto input = existing_file(cfg, "separate.input");
  const int n = cfg.integer("separate.speakers");
  if (n < 1) throw ConfigError("separate.speakers must be at least 1");
  const auto algo = cluster::algorithm_from_string(cfg.str("separate.cluster"));
  fs::path dir = cfg.str("separate.out");
  if (dir.empty()) dir = input.parent_path();

  const auto ckpt = pipeline::load_checkpoint(ckpt_path);
  const auto mixture = wav::read(input);
  const auto result = pipeline::separate(mixture, ckpt, n, algo, cfg.seed(), cfg.real("mask.energy_gate_db"));
  fs::create_directories(dir);
  const std::string stem = input.stem().string();
  for (std::size_t i = 0; i < result.sources.size(); ++i) {
    const auto path = dir / (stem + "_spk" + std::to_string(i + 1) + ".wav");
    wav::write(path, result.sources[i]);
    out << path.string() << '\n';
  }
  cfg.write_file(dir / (stem + "_separate.cfg"));
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  eval::SetOptions opts;
  opts.eval = config::eval_config(cfg);
  opts.mode = eval::estimate_mode_from_string(cfg.str("eval.mode"));
  opts.algo = cluster::algorithm_from_string(cfg.str("eval.cluster"));
  opts.seed = cfg.seed();
  opts.stft = config::stft_config(cfg);
  opts.tau = cfg.real("mask.tau");
  opts.gate_db = cfg.real("mask.energy_gate_db");
  opts.split = cfg.str("eval.split");
  opts.threads = cfg.integer("eval.threads");
  if (opts.threads < 1) throw ConfigError("eval.threads must be at least 1");
  const auto manifest_path = existing_file(cfg, "eval.manifest");
  std::optional<pipeline::Checkpoint> ckpt;
  if (opts.mode == eval::EstimateMode::Model) ckpt = pipeline::load_checkpoint(existing_file(cfg, "eval.ckpt"));
  fs::path report_path = cfg.str("eval.out");
  if (report_path.empty())
    report_path = manifest_path.parent_path() /
                  ("report_" + opts.split + "_" + eval::to_string(opts.mode) + ".csv");

  const auto manifest = corpus::read_manifest(manifest_path);
  const auto report = eval::evaluate_set(manifest, ckpt ? &*ckpt : nullptr, opts);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  std::ofstream csv(report_path, std::ios::trunc);
  if (!csv) throw Error("cannot write report: " + report_path.string());
  eval::write_csv(csv, report);
  cfg.write_file(fs::path(report_path).replace_extension(".cfg"));

  if (report.utterances == 0) {
    out << "no utterances in split '" << opts.split << "'; wrote " << report_path.string() << '\n';
    return 0;
  }
  out << std::fixed << std::setprecision(2) << "mean SDR " << report.mean.sdr << " dB  SIR "
      << report.mean.sir << " dB  SAR " << report.mean.sar << " dB over " << report.utterances
      << " utterances; wrote " << report_path.string() << '\n';
  return 0;
}

int cmd_count_params(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  out << net::count_params(config::arch_spec(cfg)) << '\n';
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  net::ArchSpec tiny;
  tiny.input_dim = 5;
  tiny.num_layers = 1;
  tiny.hidden = 4;
  tiny.embed_dim = 3;
  const auto r = net::gradient_check(tiny, 4, 2, cfg.seed());
  constexpr double kTolerance = 1e-4;
  out << "max relative error " << std::scientific << std::setprecision(3) << r.max_rel_error
      << " (worst tensor " << r.worst_tensor << ", " << r.checked << " parameters)\n";
  return r.max_rel_error < kTolerance ? 0 : 1;
}

const std::vector<Command>& commands() {
  static const std::vector<Command> list = {
      {"synth", "write a synthetic multi-speaker corpus", {"synth"}, {"seed", "sample_rate"}, cmd_synth},
      {"mix", "build two-speaker mixtures and manifest.jsonl from a corpus", {"mix"},
       {"seed", "sample_rate"}, cmd_mix},
      {"train", "train the embedding network on a manifest", {"train", "arch", "stft", "feat", "mask"},
       {"seed"}, cmd_train},
      {"separate", "separate one mixture WAV with a checkpoint", {"separate"}, {"seed", "mask.energy_gate_db"}, cmd_separate},
      {"eval", "score a manifest split and write the SDR/SIR/SAR report", {"eval", "stft"},
       {"seed", "mask.tau", "mask.energy_gate_db"}, cmd_eval},
      {"count-params", "print the parameter count of an architecture", {"arch", "stft"}, {},
       cmd_count_params},
      {"gradcheck", "compare analytic and finite-difference gradients on a tiny network", {},
       {"seed"}, cmd_gradcheck},
  };
  return list;
}

std::string key_listing() {
  std::ostringstream s;
  s << "Config keys (config file lines `key = value`, or --set key=value):\n";
  for (const auto& [k, info] : RunConfig::registry())
    s << "  " << std::left << std::setw(22) << k << ' ' << info.help
      << (info.default_value.empty() ? "" : " [" + info.default_value + "]") << '\n';
  return s.str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Single-channel two-speaker separation with attractor embeddings", "dansep");
  app.require_subcommand(1);
  app.footer(key_listing());

  struct Parsed {
    std::string config_file;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;
  };
  std::map<std::string, Parsed> parsed;
  std::map<std::string, CLI::Option*> options;

  for (const auto& c : commands()) {
    auto* sub = app.add_subcommand(c.name, c.description);
    auto& p = parsed[c.name];
    sub->add_option("--config", p.config_file, "key = value config file; flags override it");
    sub->add_option("--set", p.sets, "override any config key: --set key=value");
    for (const auto& key : keys_for(c)) {
      const auto& info = RunConfig::registry().at(key);
      std::string help = info.help + " (" + key;
      if (!info.default_value.empty()) help += ", default " + info.default_value;
      help += ")";
      options[c.name + "/" + key] = sub->add_option(flag_for(key), p.flags[key], help);
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  for (const auto& c : commands()) {
    auto* sub = app.get_subcommand(c.name);
    if (!sub->parsed()) continue;
    const auto& p = parsed[c.name];
    try {
      RunConfig cfg;
      if (!p.config_file.empty()) cfg.load_file(p.config_file);
      for (const auto& s : p.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
      }
      for (const auto& [key, value] : p.flags)
        if (options.at(c.name + "/" + key)->count() > 0) cfg.set(key, value);
      return c.handler(cfg, out, err);
    } catch (const ConfigError& e) {
      err << "dansep " << c.name << ": " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      err << "dansep " << c.name << ": error: " << e.what() << '\n';
      return 1;
    }
  }
  return 2;
}

}  // namespace dansep::cli
