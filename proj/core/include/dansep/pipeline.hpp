#pragma once

#include "dansep/clustering.hpp"
#include "dansep/common.hpp"
#include "dansep/corpus.hpp"
#include "dansep/dsp.hpp"
#include "dansep/masking.hpp"
#include "dansep/network.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>

namespace dansep::pipeline {

struct HyperParams {
  double lr0 = 1e-3;
  int lr_halve_patience = 3;
  double lr_min = 1e-6;
  int epochs = 50;
  int batch_size = 8;
  double grad_clip = 200.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int threads = 1;
  double tau = 0.5;               // ideal binary mask threshold
  double energy_gate_db = 0.0;    // 0 disables the silence gate
  double floor_eps = 1e-7;

  void validate() const;
};

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t step = 0;

  static AdamState zeros(Eigen::Index n) { return {Vector::Zero(n), Vector::Zero(n), 0}; }
};

/// Bias-corrected Adam update, in place.
void adam_step(Vector& params, const Vector& grad, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

/// Scales `grad` so its L2 norm is at most max_norm; returns the norm before clipping.
double clip_global_norm(Vector& grad, double max_norm);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  net::ModelParams params;  // includes the feature statistics
  AdamState adam;
  dsp::StftConfig stft;
  int sample_rate = 8000;
  double floor_eps = 1e-7;
  int epoch = 0;  // last completed epoch
  double best_val_loss = 0.0;
  double lr = 1e-3;
  int epochs_without_improvement = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;

  const net::ArchSpec& arch() const { return params.arch(); }
};

/// Binary layout: "DANC", uint32 version, uint64 header length, key=value text
/// header, then little-endian float64 tensors: parameters (layer-major,
/// direction-major, W_ih, W_hh, b_ih, b_hh with gate rows z|r|n; then W_fc,
/// b_fc), Adam first moments, Adam second moments (same order), feature mean,
/// feature stddev.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);

/// A training or validation utterance: the mixture and its reference stems.
struct Example {
  std::string id;
  Waveform mixture;
  std::vector<Waveform> sources;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;  // rate used during the epoch
  double seconds = 0.0;
};

/// Reads the mixture and stems of every record in `split`, in manifest order.
std::vector<Example> load_examples(const corpus::Manifest& manifest, const std::string& split);

using TrainLog = std::vector<EpochRecord>;

/// CSV with header epoch,train_loss,val_loss,lr,seconds.
void write_train_log(std::ostream& out, const TrainLog& log);

struct TrainConfig {
  net::ArchSpec arch;
  dsp::StftConfig stft;
  HyperParams hyper;
};

struct TrainResult {
  Checkpoint best;  // lowest validation loss so far
  Checkpoint last;  // state after the final epoch, for resuming
  TrainLog log;
};

/// State to continue from; `best` defaults to `last` when absent.
struct ResumeState {
  Checkpoint last;
  std::optional<Checkpoint> best;
};

/// Called after every epoch with the record and the state so far (best, last, log).
using EpochCallback = std::function<void(const EpochRecord&, const TrainResult&)>;

/// Trains until epoch hyper.epochs. Each epoch shuffles the training set with a
/// seed derived from (seed, epoch), steps Adam on mini-batch mean gradients
/// (clipped by global norm), evaluates the validation loss and halves the rate
/// after `lr_halve_patience` epochs without a new best (never below lr_min).
TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& valid_set,
                  const TrainConfig& cfg, const std::optional<ResumeState>& resume = std::nullopt,
                  const EpochCallback& on_epoch = {});

/// Feature statistics over the training mixtures.
dsp::FeatureStats compute_feature_stats(const std::vector<Example>& examples,
                                        const dsp::StftConfig& stft, double floor_eps);

/// Learning-rate schedule step. Returns the rate for the next epoch and updates
/// best/counter in place.
double schedule_step(double val_loss, double lr, double& best, int& bad_epochs,
                     const HyperParams& hyper);

struct SeparationResult {
  std::vector<Waveform> sources;
  mask::MaskSet masks;
  Matrix attractors;
};

/// Inference: STFT, log features, embedding, clustering into n_speakers
/// attractors, sigmoid masks, masked mixture magnitude with mixture phase,
/// inverse STFT. Outputs have the mixture's length. A negative gate_db clusters
/// only the bins within that many dB of the loudest bin; masks still cover
/// every bin.
SeparationResult separate(const Waveform& mixture, const Checkpoint& ckpt, int n_speakers,
                          cluster::Algorithm algo, std::uint64_t seed = 0, double gate_db = 0.0);

/// Applies given F x T masks to the mixture and resynthesizes.
std::vector<Waveform> resynthesize(const Waveform& mixture, const mask::MaskSet& masks,
                                   const dsp::StftConfig& stft);

}  // namespace dansep::pipeline
