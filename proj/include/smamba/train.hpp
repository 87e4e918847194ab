// Training stack: byte-corpus ingestion, uniform window sampling,
// Adam with bias correction, the fixed-step training loop with metrics
// logging and checkpoints, deterministic validation, and the
// finite-difference gradient-check harness.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smamba/config.hpp"
#include "smamba/model.hpp"
#include "smamba/numerics.hpp"
#include "smamba/rng.hpp"

namespace smamba {

struct Corpus {
  std::vector<std::uint8_t> bytes;
  double split_frac = 0.9;

  Index size() const { return static_cast<Index>(bytes.size()); }
  Index train_size() const {
    return static_cast<Index>(double(bytes.size()) * split_frac);
  }
  Index val_begin() const { return train_size(); }
};

Corpus load_corpus(const std::string& path, double split_frac);
Corpus corpus_from_bytes(std::vector<std::uint8_t> bytes, double split_frac);

/// Order-0 byte entropy of the whole corpus, in nats per byte.
double order0_entropy_nats(const Corpus& c);

/// Uniformly sampled training windows; targets are the inputs shifted by
/// one byte. Deterministic for a given seed.
class BatchSampler {
 public:
  BatchSampler(const Corpus& corpus, Index seq_len, Index batch,
               std::uint64_t seed);

  struct Batch {
    std::vector<int> inputs;
    std::vector<int> targets;
  };
  Batch next();

  /// Largest valid window start (inclusive); exposed for the uniformity
  /// test.
  Index max_start() const { return max_start_; }

 private:
  const Corpus& corpus_;
  Index seq_len_;
  Index batch_;
  Index max_start_;
  Rng rng_;
};

struct AdamParams {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update, in census order. `step` is 1-based.
/// Non-finite gradients abort with TrainingDivergenceError.
void adam_step(LmModel& model, const std::vector<Matrix>& grads,
               const AdamParams& opt, std::int64_t step);

/// Mean NLL (nats/byte) over deterministic windows of the validation
/// slice.
double evaluate_nll(const LmModel& model, const Corpus& corpus, Index seq_len,
                    Index batch, Index max_windows = 32);

struct TrainResult {
  bool diverged = false;
  std::int64_t steps = 0;
  double final_val_nll = 0.0;
  double final_val_ppl = 0.0;
  std::string metrics_path;
  std::string checkpoint_path;
};

/// Fixed-step training with per-step metrics lines, per-epoch validation
/// and checkpoints, linear LR warmup, and optional early stop once the
/// validation perplexity drops below config stop_at_val_ppl.
TrainResult train_run(const Config& cfg, const std::string& corpus_path,
                      const std::string& out_dir);
TrainResult train_run_on(const Config& cfg, const Corpus& corpus,
                         const std::string& out_dir);

// --- gradient checking ---------------------------------------------------

struct GradcheckEntry {
  std::string core;
  std::string group;   // tensor role
  double max_rel_err = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  // DiagStable clamped-entry probe: analytic gradient (must be exactly
  // zero) and the loss delta under a +-1e-6 perturbation (must be zero).
  double clamped_grad = 0.0;
  double clamped_loss_delta = 0.0;
  double tol = 1e-4;

  double worst() const;
  bool pass() const;
};

/// Central finite differences (step 1e-5) against the tape gradients on a
/// model built from `cfg` dimensions, for every core tag and parameter
/// group; samples up to 200 elements per tag. `corrupt_backward` is a
/// fault-injection hook used to prove the harness can fail.
GradcheckReport gradcheck_suite(const Config& cfg, std::uint64_t seed,
                                bool corrupt_backward = false);

}  // namespace smamba
