#pragma once

#include "dansep/common.hpp"

#include <iosfwd>
#include <string>

namespace dansep::eval {

struct EvalConfig {
  int proj_len = 512;      // distortion filter taps; 1 = gain only
  double sdr_cap = 100.0;  // dB, used when an error term has zero energy
  void validate() const;
};

/// est = s_target + e_interf + e_artif. All three have est.size() + proj_len - 1
/// samples: the estimate is zero-padded by proj_len - 1 so the filtered
/// references fit.
struct Decomposition {
  std::vector<double> s_target;
  std::vector<double> e_interf;
  std::vector<double> e_artif;
  bool regularized = false;  // reference Gram matrix needed extra loading
};

struct Scores {
  double sdr = 0.0;
  double sir = 0.0;
  double sar = 0.0;
};

/// Precomputed projection machinery for one set of references; reuse it to
/// score several estimates against the same references.
class Projector {
 public:
  Projector(std::vector<std::vector<double>> refs, const EvalConfig& cfg);

  Decomposition decompose(const std::vector<double>& est, int target) const;
  Scores score(const std::vector<double>& est, int target) const;

  std::size_t num_refs() const { return refs_.size(); }
  std::size_t length() const { return len_; }
  bool regularized() const { return regularized_; }

 private:
  std::vector<std::vector<double>> refs_;
  EvalConfig cfg_;
  std::size_t len_ = 0;
  Eigen::LLT<Matrix> all_;
  std::vector<Eigen::LLT<Matrix>> single_;
  bool regularized_ = false;
};

/// Least-squares split of `est` into the part explained by L-tap filtered copies
/// of refs[target], the part explained additionally by the other references,
/// and the residual.
Decomposition bss_decompose(const std::vector<double>& est,
                            const std::vector<std::vector<double>>& refs, int target,
                            const EvalConfig& cfg = {});

/// Energy ratios of a decomposition in dB, capped at +/- sdr_cap.
Scores scores_from(const Decomposition& d, double sdr_cap);

Scores sdr_sir_sar(const std::vector<double>& est, const std::vector<std::vector<double>>& refs,
                   int target, const EvalConfig& cfg = {});

struct Metrics {
  std::vector<Scores> per_speaker;  // indexed by estimate
  std::vector<int> permutation;     // estimate i is scored against reference permutation[i]

  double mean_sdr() const;
  double mean_sir() const;
  double mean_sar() const;
};

/// Scores every assignment of estimates to references (N <= 4) and keeps the
/// one with the highest mean SIR.
Metrics resolve_permutation(const std::vector<std::vector<double>>& ests,
                            const std::vector<std::vector<double>>& refs,
                            const EvalConfig& cfg = {});

struct ReportRow {
  std::string utt_id;
  int speaker = 0;      // 1-based estimate index
  int permuted_to = 0;  // 1-based reference index
  Scores scores;
};

struct Report {
  std::vector<ReportRow> rows;
  Scores mean;
  std::size_t utterances = 0;
};

/// Aggregates per-utterance metrics into report rows and dataset means.
void append(Report& report, const std::string& utt_id, const Metrics& metrics);
void finalize(Report& report);

/// CSV with header utt_id,speaker,permuted_to,sdr_db,sir_db,sar_db followed by a
/// MEAN row.
void write_csv(std::ostream& out, const Report& report);

}  // namespace dansep::eval
