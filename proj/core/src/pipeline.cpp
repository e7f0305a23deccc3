#include "dansep/pipeline.hpp"
#include "dansep/wav.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

namespace dansep::pipeline {
namespace {

struct Prepared {
  std::string id;
  Matrix features;
  Matrix mag;
  mask::MaskSet ideal;
  Matrix weights;  // empty unless the energy gate is on
};

Prepared prepare(const Example& ex, const dsp::StftConfig& stft, const dsp::FeatureStats& stats,
                 const HyperParams& hyper) {
  if (ex.sources.empty()) throw Error(ex.id + ": example has no reference sources");
  Prepared p;
  p.id = ex.id;
  const auto spec = dsp::stft(ex.mixture, stft);
  p.mag = dsp::magnitude(spec);
  p.features = dsp::log_features(p.mag, hyper.floor_eps, stats);
  std::vector<Matrix> source_mags;
  for (const auto& s : ex.sources) {
    if (s.size() != ex.mixture.size()) throw Error(ex.id + ": source and mixture lengths differ");
    source_mags.push_back(dsp::magnitude(dsp::stft(s, stft)));
  }
  p.ideal = mask::binarize(mask::wiener_like_masks(source_mags), mask::MaskThreshold(hyper.tau));
  if (hyper.energy_gate_db < 0.0) {
    p.weights = mask::energy_gate(p.mag, hyper.energy_gate_db);
    for (auto& m : p.ideal) m = m.cwiseProduct(p.weights);
  }
  for (std::size_t i = 0; i < p.ideal.size(); ++i)
    if (p.ideal[i].sum() <= 0.0)
      throw Error(ex.id + ": ideal mask of source " + std::to_string(i + 1) + " is empty");
  return p;
}

std::vector<Prepared> prepare_all(const std::vector<Example>& set, const dsp::StftConfig& stft,
                                  const dsp::FeatureStats& stats, const HyperParams& hyper) {
  std::vector<Prepared> out;
  out.reserve(set.size());
  for (const auto& ex : set) out.push_back(prepare(ex, stft, stats, hyper));
  return out;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is handled by
// exactly one worker; callers reduce results in index order.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(threads, static_cast<int>(n))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double mean_validation_loss(const std::vector<Prepared>& valid, const net::ModelParams& params,
                            int threads) {
  std::vector<double> losses(valid.size());
  parallel_for(valid.size(), threads, [&](std::size_t i) {
    losses[i] = net::evaluate_loss(valid[i].features, valid[i].mag, valid[i].ideal, params,
                                   valid[i].weights);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(valid.size());
}

std::string diagnostic(const TrainLog& log) {
  std::ostringstream s;
  if (log.empty()) {
    s << "no completed epochs";
  } else {
    const auto& r = log.back();
    s << "last finite losses: epoch " << r.epoch << " train " << r.train_loss << " valid "
      << r.val_loss;
  }
  return s.str();
}

}  // namespace

void HyperParams::validate() const {
  if (!(lr_min > 0.0 && lr0 > lr_min)) throw ConfigError("train.lr0 must exceed train.lr_min > 0");
  if (lr_halve_patience < 1) throw ConfigError("train.patience must be at least 1");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch must be at least 1");
  if (!(grad_clip > 0.0)) throw ConfigError("train.clip must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (threads < 1) throw ConfigError("train.threads must be at least 1");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("mask.tau must lie in (0, 1)");
  if (energy_gate_db > 0.0) throw ConfigError("mask.energy_gate_db must be <= 0 (0 disables)");
  if (!(floor_eps > 0.0)) throw ConfigError("feat.floor_eps must be positive");
}

void adam_step(Vector& params, const Vector& grad, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  if (grad.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw Error("adam_step: shape mismatch");
  if (!(lr > 0.0)) throw Error("adam_step: learning rate must be positive");
  if (!grad.allFinite()) throw DivergenceError("adam_step: non-finite gradient");
  ++state.step;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

double clip_global_norm(Vector& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm) grad *= max_norm / norm;
  return norm;
}

void write_train_log(std::ostream& out, const TrainLog& log) {
  out << "epoch,train_loss,val_loss,lr,seconds\n";
  const auto old = out.precision(17);
  for (const auto& r : log)
    out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.lr << ',' << r.seconds
        << '\n';
  out.precision(old);
}

dsp::FeatureStats compute_feature_stats(const std::vector<Example>& examples,
                                        const dsp::StftConfig& stft, double floor_eps) {
  dsp::FeatureStatsAccumulator acc(stft.num_bins(), floor_eps);
  for (const auto& ex : examples) acc.add(dsp::magnitude(dsp::stft(ex.mixture, stft)));
  return acc.finish();
}

double schedule_step(double val_loss, double lr, double& best, int& bad_epochs,
                     const HyperParams& hyper) {
  if (val_loss < best) {
    best = val_loss;
    bad_epochs = 0;
    return lr;
  }
  if (++bad_epochs >= hyper.lr_halve_patience) {
    bad_epochs = 0;
    return std::max(lr * 0.5, hyper.lr_min);
  }
  return lr;
}

TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& valid_set,
                  const TrainConfig& cfg, const std::optional<ResumeState>& resume,
                  const EpochCallback& on_epoch) {
  const HyperParams& hp = cfg.hyper;
  hp.validate();
  cfg.stft.validate();
  if (train_set.empty()) throw Error("train: the training split is empty");
  if (valid_set.empty()) throw Error("train: the validation split is empty");
  if (cfg.arch.input_dim != cfg.stft.num_bins())
    throw ConfigError("arch.input_dim must equal stft.fft_size / 2 + 1");
  const int sample_rate = train_set.front().mixture.sample_rate;

  TrainResult result;
  Checkpoint& last = result.last;
  int start_epoch = 1;
  if (resume) {
    last = resume->last;
    if (!(last.arch() == cfg.arch) || !(last.stft == cfg.stft))
      throw ConfigError("resume: checkpoint architecture or STFT settings differ from the run");
    result.best = resume->best ? *resume->best : last;
    start_epoch = last.epoch + 1;
  } else {
    last.params = net::ModelParams::random(cfg.arch, hp.seed);
    last.params.stats = compute_feature_stats(train_set, cfg.stft, hp.floor_eps);
    last.adam = AdamState::zeros(last.params.values().size());
    last.stft = cfg.stft;
    last.sample_rate = sample_rate;
    last.floor_eps = hp.floor_eps;
    last.lr = hp.lr0;
    last.best_val_loss = std::numeric_limits<double>::infinity();
    result.best = last;
  }

  const auto train_data = prepare_all(train_set, cfg.stft, last.params.stats, hp);
  const auto valid_data = prepare_all(valid_set, cfg.stft, last.params.stats, hp);
  const Eigen::Index n_params = last.params.values().size();

  for (int epoch = start_epoch; epoch <= hp.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(epoch_seed(hp.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += hp.batch_size) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(hp.batch_size));
      std::vector<net::LossAndGradient> parts(end - begin);
      parallel_for(parts.size(), hp.threads, [&](std::size_t k) {
        const Prepared& p = train_data[order[begin + k]];
        parts[k] = net::backward(p.features, p.mag, p.ideal, last.params, p.weights);
      });
      Vector grad = Vector::Zero(n_params);
      for (const auto& part : parts) {
        loss_sum += part.loss;
        grad += part.gradient;
      }
      grad /= static_cast<double>(parts.size());
      if (!std::isfinite(loss_sum) || !grad.allFinite())
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + "; " +
                              diagnostic(result.log));
      clip_global_norm(grad, hp.grad_clip);
      adam_step(last.params.values(), grad, last.adam, last.lr, hp.beta1, hp.beta2, hp.adam_eps);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = last.lr;
    rec.train_loss = loss_sum / static_cast<double>(train_data.size());
    rec.val_loss = mean_validation_loss(valid_data, last.params, hp.threads);
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss))
      throw DivergenceError("non-finite loss in epoch " + std::to_string(epoch) + "; " +
                            diagnostic(result.log));

    const double best_before = last.best_val_loss;
    last.lr = schedule_step(rec.val_loss, last.lr, last.best_val_loss,
                            last.epochs_without_improvement, hp);
    last.epoch = epoch;
    last.train_loss = rec.train_loss;
    last.val_loss = rec.val_loss;
    if (last.best_val_loss < best_before) result.best = last;

    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec, result);
  }
  return result;
}

std::vector<Example> load_examples(const corpus::Manifest& manifest, const std::string& split) {
  std::vector<Example> out;
  for (const auto* r : manifest.split(split)) {
    Example ex;
    ex.id = r->id;
    ex.mixture = wav::read(manifest.root / r->mixture);
    for (const auto& s : r->sources) ex.sources.push_back(wav::read(manifest.root / s));
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Waveform> resynthesize(const Waveform& mixture, const mask::MaskSet& masks,
                                   const dsp::StftConfig& stft) {
  const auto spec = dsp::stft(mixture, stft);
  const Matrix mag = dsp::magnitude(spec);
  const Matrix ph = dsp::phase(spec);
  std::vector<Waveform> out;
  for (const auto& m : masks) {
    dsp::ComplexSpectrogram masked;
    masked.bins = mask::apply_mask(mag, m, ph);
    masked.source_len = spec.source_len;
    masked.sample_rate = spec.sample_rate;
    out.push_back(dsp::istft(masked, stft));
  }
  return out;
}

SeparationResult separate(const Waveform& mixture, const Checkpoint& ckpt, int n_speakers,
                          cluster::Algorithm algo, std::uint64_t seed, double gate_db) {
  if (n_speakers < 1) throw Error("separate: n_speakers must be at least 1");
  if (gate_db > 0.0) throw ConfigError("mask.energy_gate_db must be <= 0 (0 disables)");
  if (mixture.sample_rate != ckpt.sample_rate)
    throw Error("separate: mixture is " + std::to_string(mixture.sample_rate) +
                " Hz but the model expects " + std::to_string(ckpt.sample_rate) + " Hz");
  validate(mixture);

  const auto spec = dsp::stft(mixture, ckpt.stft);
  const Matrix mag = dsp::magnitude(spec);
  const Matrix features = dsp::log_features(mag, ckpt.floor_eps, ckpt.params.stats);
  const net::EmbeddingMatrix v = net::forward_embed(features, ckpt.params);

  SeparationResult r;
  Matrix keep;
  if (gate_db < 0.0) {
    const Matrix gate = mask::energy_gate(mag, gate_db);
    if (gate.sum() >= n_speakers) keep = Eigen::Map<const Matrix>(gate.data(), 1, gate.size());  // column t*F + f
  }
  r.attractors = cluster::cluster_attractors(v, n_speakers, algo, seed, keep);
  r.masks = net::estimate_masks(v, r.attractors);
  r.sources = resynthesize(mixture, r.masks, ckpt.stft);
  return r;
}

}  // namespace dansep::pipeline
