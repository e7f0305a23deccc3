#pragma once

#include "dansep/clustering.hpp"
#include "dansep/corpus.hpp"
#include "dansep/evalkit.hpp"
#include "dansep/pipeline.hpp"

#include <string>

namespace dansep::eval {

/// Where the estimates come from.
enum class EstimateMode {
  Model,         // separate() with a trained checkpoint
  OracleWfm,     // ideal Wiener-like masks from the reference stems
  OracleBinary,  // thresholded ideal masks
  Mixture,       // the unprocessed mixture for every source
};

std::string to_string(EstimateMode mode);
EstimateMode estimate_mode_from_string(const std::string& name);

struct SetOptions {
  EstimateMode mode = EstimateMode::Model;
  cluster::Algorithm algo = cluster::Algorithm::Gmm;
  std::uint64_t seed = 0;
  EvalConfig eval;
  dsp::StftConfig stft;  // oracle modes; model mode uses the checkpoint's
  double tau = 0.5;
  double gate_db = 0.0;  // model mode: cluster only bins above this gate (0 = all)
  std::string split = "test";
  int threads = 1;
};

/// Scores every mixture of one manifest split with permutation resolution. Rows
/// follow manifest order. `ckpt` may be null unless mode is Model.
Report evaluate_set(const corpus::Manifest& manifest, const pipeline::Checkpoint* ckpt,
                    const SetOptions& opts);

}  // namespace dansep::eval
