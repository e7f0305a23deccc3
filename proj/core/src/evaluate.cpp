#include "dansep/evaluate.hpp"

#include "dansep/masking.hpp"
#include "dansep/wav.hpp"

#include <algorithm>
#include <filesystem>
#include <thread>

namespace dansep::eval {
namespace {

Waveform load(const std::filesystem::path& path, const char* what) {
  if (!std::filesystem::exists(path)) throw Error(std::string("missing ") + what + " file: " + path.string());
  return wav::read(path);
}

Metrics score_record(const corpus::Manifest& manifest, const corpus::MixtureRecord& r,
                     const pipeline::Checkpoint* ckpt, const SetOptions& opts) {
  const Waveform mix = load(manifest.root / r.mixture, "mixture");
  std::vector<Waveform> refs;
  for (const auto& s : r.sources) {
    refs.push_back(load(manifest.root / s, "reference"));
    if (refs.back().size() != mix.size())
      throw Error(r.id + ": reference and mixture lengths differ");
  }

  std::vector<Waveform> ests;
  switch (opts.mode) {
    case EstimateMode::Model:
      ests = pipeline::separate(mix, *ckpt, static_cast<int>(refs.size()), opts.algo, opts.seed,
                                opts.gate_db)
                 .sources;
      break;
    case EstimateMode::Mixture:
      ests.assign(refs.size(), mix);
      break;
    case EstimateMode::OracleWfm:
    case EstimateMode::OracleBinary: {
      std::vector<Matrix> mags;
      for (const auto& ref : refs) mags.push_back(dsp::magnitude(dsp::stft(ref, opts.stft)));
      auto masks = mask::wiener_like_masks(mags);
      if (opts.mode == EstimateMode::OracleBinary)
        masks = mask::binarize(masks, mask::MaskThreshold(opts.tau));
      ests = pipeline::resynthesize(mix, masks, opts.stft);
      break;
    }
  }

  std::vector<std::vector<double>> e, s;
  for (auto& w : ests) e.push_back(std::move(w.samples));
  for (auto& w : refs) s.push_back(std::move(w.samples));
  return resolve_permutation(e, s, opts.eval);
}

}  // namespace

std::string to_string(EstimateMode mode) {
  switch (mode) {
    case EstimateMode::Model: return "model";
    case EstimateMode::OracleWfm: return "oracle-wfm";
    case EstimateMode::OracleBinary: return "oracle-ibm";
    case EstimateMode::Mixture: return "mixture";
  }
  return "model";
}

EstimateMode estimate_mode_from_string(const std::string& name) {
  for (auto m : {EstimateMode::Model, EstimateMode::OracleWfm, EstimateMode::OracleBinary,
                 EstimateMode::Mixture})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown evaluation mode '" + name +
                    "' (expected model, oracle-wfm, oracle-ibm or mixture)");
}

Report evaluate_set(const corpus::Manifest& manifest, const pipeline::Checkpoint* ckpt,
                    const SetOptions& opts) {
  opts.eval.validate();
  if (opts.mode == EstimateMode::Model && ckpt == nullptr)
    throw ConfigError("model evaluation needs a checkpoint");
  if (opts.mode != EstimateMode::Model) opts.stft.validate();

  const auto records = manifest.split(opts.split);
  std::vector<Metrics> metrics(records.size());
  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, opts.threads)), 1,
                              std::max<std::size_t>(1, records.size()));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < records.size(); i += workers)
        metrics[i] = score_record(manifest, *records[i], ckpt, opts);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Report report;
  for (std::size_t i = 0; i < records.size(); ++i) append(report, records[i]->id, metrics[i]);
  finalize(report);
  return report;
}

}  // namespace dansep::eval
