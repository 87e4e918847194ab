#include "smamba/train.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "smamba/corpus_gen.hpp"

namespace smamba {

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

Corpus corpus_from_bytes(std::vector<std::uint8_t> bytes, double split_frac) {
  Corpus c{std::move(bytes), split_frac};
  if (c.bytes.empty()) throw InputError("corpus is empty");
  if (!(split_frac > 0.0 && split_frac < 1.0))
    throw InputError("split fraction must be in (0, 1)");
  if (c.val_begin() >= c.size())
    throw InputError("validation slice is empty; corpus too small");
  if (c.train_size() < 2) throw InputError("training slice is empty");
  return c;
}

Corpus load_corpus(const std::string& path, double split_frac) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return corpus_from_bytes(std::move(bytes), split_frac);
}

double order0_entropy_nats(const Corpus& c) {
  std::array<std::int64_t, 256> hist{};
  for (std::uint8_t b : c.bytes) ++hist[b];
  double h = 0.0;
  const double total = double(c.bytes.size());
  for (std::int64_t count : hist) {
    if (count == 0) continue;
    const double p = double(count) / total;
    h -= p * std::log(p);
  }
  return h;
}

BatchSampler::BatchSampler(const Corpus& corpus, Index seq_len, Index batch,
                           std::uint64_t seed)
    : corpus_(corpus), seq_len_(seq_len), batch_(batch), rng_(seed) {
  if (seq_len_ < 1 || batch_ < 1)
    throw InputError("batch sampler: seq_len and batch must be >= 1");
  max_start_ = corpus_.train_size() - seq_len_ - 1;
  if (max_start_ < 0)
    throw InputError("corpus too short for the requested window length");
}

BatchSampler::Batch BatchSampler::next() {
  Batch b;
  b.inputs.resize(batch_ * seq_len_);
  b.targets.resize(batch_ * seq_len_);
  for (Index i = 0; i < batch_; ++i) {
    const Index start =
        static_cast<Index>(rng_.below(std::uint64_t(max_start_) + 1));
    for (Index t = 0; t < seq_len_; ++t) {
      b.inputs[i * seq_len_ + t] = corpus_.bytes[start + t];
      b.targets[i * seq_len_ + t] = corpus_.bytes[start + t + 1];
    }
  }
  return b;
}

void adam_step(LmModel& model, const std::vector<Matrix>& grads,
               const AdamParams& opt, std::int64_t step) {
  auto& params = model.params();
  if (grads.size() != params.size())
    throw DimensionError("adam_step: gradient count mismatch");
  const double bc1 = 1.0 - std::pow(opt.beta1, double(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, double(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    if (g.rows() != params[i].value.rows() ||
        g.cols() != params[i].value.cols())
      throw DimensionError("adam_step: gradient shape mismatch at " +
                           params[i].name);
    if (!g.allFinite())
      throw TrainingDivergenceError("non-finite gradient in " +
                                    params[i].name);
    auto& p = params[i];
    p.m = opt.beta1 * p.m + (1.0 - opt.beta1) * g;
    p.v = opt.beta2 * p.v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    const Matrix mhat = p.m / bc1;
    const Matrix vhat = p.v / bc2;
    p.value.array() -=
        opt.lr * mhat.array() / (vhat.array().sqrt() + opt.eps);
  }
}

double evaluate_nll(const LmModel& model, const Corpus& corpus, Index seq_len,
                    Index batch, Index max_windows) {
  const Index begin = corpus.val_begin();
  const Index avail = corpus.size() - begin;
  if (avail < seq_len + 1)
    throw InputError("validation slice shorter than one window");
  std::vector<Index> starts;
  for (Index s = begin; s + seq_len + 1 <= corpus.size() &&
                        static_cast<Index>(starts.size()) < max_windows;
       s += seq_len)
    starts.push_back(s);

  double total = 0.0;
  Index done = 0;
  while (done < static_cast<Index>(starts.size())) {
    const Index take =
        std::min<Index>(batch, static_cast<Index>(starts.size()) - done);
    std::vector<int> inputs(take * seq_len), targets(take * seq_len);
    for (Index i = 0; i < take; ++i) {
      const Index start = starts[done + i];
      for (Index t = 0; t < seq_len; ++t) {
        inputs[i * seq_len + t] = corpus.bytes[start + t];
        targets[i * seq_len + t] = corpus.bytes[start + t + 1];
      }
    }
    LmModel::Graph g = model.build_graph(inputs, take, seq_len, &targets);
    total += g.tape.value(g.loss)(0, 0) * double(take);
    done += take;
  }
  return total / double(starts.size());
}

TrainResult train_run(const Config& cfg, const std::string& corpus_path,
                      const std::string& out_dir) {
  return train_run_on(cfg, load_corpus(corpus_path, cfg.split_frac), out_dir);
}

TrainResult train_run_on(const Config& cfg, const Corpus& corpus,
                         const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  result.metrics_path = out_dir + "/metrics.tsv";
  result.checkpoint_path = out_dir + "/checkpoint.bin";

  std::ofstream metrics(result.metrics_path);
  if (!metrics) throw InputError("cannot write metrics log: " + result.metrics_path);

  LmModel model(ModelConfig::from(cfg));
  BatchSampler sampler(corpus, cfg.seq_len, cfg.batch, cfg.seed);
  const AdamParams base_opt{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};

  auto metrics_line = [&](std::int64_t step, const char* split, double nll,
                          double ms) {
    metrics << step << "\t" << split << "\t" << fmt_g(nll) << "\t"
            << fmt_g(std::exp(nll)) << "\t"
            << (cfg.log_timing ? fmt_g(ms) : std::string("0")) << "\n";
  };

  std::int64_t step = 0;
  bool stop = false;
  for (std::int64_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const double epoch_t0 = now_ms();
    for (std::int64_t s = 0; s < cfg.steps_per_epoch; ++s) {
      const double t0 = now_ms();
      ++step;
      BatchSampler::Batch batch = sampler.next();
      double nll;
      try {
        LmModel::Graph g =
            model.build_graph(batch.inputs, cfg.batch, cfg.seq_len,
                              &batch.targets);
        nll = g.tape.value(g.loss)(0, 0);
        if (!std::isfinite(nll))
          throw TrainingDivergenceError("non-finite training loss");
        g.tape.backward(g.loss);
        std::vector<Matrix> grads;
        grads.reserve(g.leaves.size());
        for (auto v : g.leaves) grads.push_back(g.tape.grad(v));
        AdamParams opt = base_opt;
        if (cfg.warmup_steps > 0)
          opt.lr = cfg.lr * std::min(1.0, double(step) / double(cfg.warmup_steps));
        adam_step(model, grads, opt, step);
      } catch (const TrainingDivergenceError&) {
        // Halt; the checkpoint from the last completed epoch stays on
        // disk as the last good state.
        result.diverged = true;
        result.steps = step;
        metrics << step << "\tdiverged\tnan\tnan\t0\n";
        return result;
      } catch (const DomainError&) {
        result.diverged = true;
        result.steps = step;
        metrics << step << "\tdiverged\tnan\tnan\t0\n";
        return result;
      }
      metrics_line(step, "train", nll, now_ms() - t0);
    }
    const double val_nll =
        evaluate_nll(model, corpus, cfg.seq_len, cfg.batch);
    metrics_line(step, "val", val_nll, now_ms() - epoch_t0);
    save_checkpoint(result.checkpoint_path, model, step);
    result.final_val_nll = val_nll;
    result.final_val_ppl = std::exp(val_nll);
    if (cfg.stop_at_val_ppl > 0.0 && result.final_val_ppl < cfg.stop_at_val_ppl)
      stop = true;
  }
  result.steps = step;
  return result;
}

// --- gradcheck -------------------------------------------------------------

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_err);
  return w;
}

bool GradcheckReport::pass() const {
  return worst() <= tol && clamped_grad == 0.0 && clamped_loss_delta == 0.0;
}

namespace {

double graph_loss(const LmModel& model, const std::vector<int>& inputs,
                  const std::vector<int>& targets, Index batch, Index len) {
  LmModel::Graph g = model.build_graph(inputs, batch, len, &targets);
  return g.tape.value(g.loss)(0, 0);
}

}  // namespace

GradcheckReport gradcheck_suite(const Config& cfg, std::uint64_t seed,
                                bool corrupt_backward) {
  GradcheckReport report;
  const Index batch = 2;
  const Index len = cfg.seq_len;
  const char* tags[] = {"dense_hippo", "ccf", "ocf", "diag", "diag_stable"};

  // At a fresh init the loss barely depends on the A parameters (their
  // gradients sit at ~1e-9, below what a 1e-5 central difference can
  // resolve against round-off). A short warmup drives the model to a
  // point where every group carries measurable signal; the comparison
  // protocol itself is unchanged.
  const Corpus warm_corpus = corpus_from_bytes(
      [&] {
        const std::string text = generate_corpus(seed ^ 0xc0de, 1 << 15);
        return std::vector<std::uint8_t>(text.begin(), text.end());
      }(),
      0.9);

  for (const char* tag : tags) {
    Config c = cfg;
    c.core = tag;
    c.seed = seed;
    ModelConfig mc = ModelConfig::from(c);
    LmModel model(mc);

    BatchSampler warm(warm_corpus, len, batch, seed ^ 0x3a3a);
    for (int s = 1; s <= 30; ++s) {
      BatchSampler::Batch wb = warm.next();
      LmModel::Graph wg = model.build_graph(wb.inputs, batch, len, &wb.targets);
      wg.tape.backward(wg.loss);
      std::vector<Matrix> wgrads;
      for (auto v : wg.leaves) wgrads.push_back(wg.tape.grad(v));
      adam_step(model, wgrads, AdamParams{3e-3, 0.9, 0.999, 1e-8}, s);
    }

    // For the clamped variant, force a couple of realized-nonnegative
    // entries so the clamp path is exercised.
    std::size_t a_index = SIZE_MAX;
    if (mc.core == CoreTag::DiagStable) {
      for (std::size_t i = 0; i < model.params().size(); ++i)
        if (model.params()[i].name == "block0.a") a_index = i;
      model.params()[a_index].value(0, 0) = -0.3;
      model.params()[a_index].value(1, 1) = -0.7;
    }

    Rng rng(seed ^ 0x5eed);
    BatchSampler eval_batch(warm_corpus, len, batch, seed ^ 0x7777);
    BatchSampler::Batch probe = eval_batch.next();
    std::vector<int> inputs = probe.inputs;
    std::vector<int> targets = probe.targets;

    LmModel::Graph g = model.build_graph(inputs, batch, len, &targets);
    if (corrupt_backward) g.tape.corrupt_last_backward();
    g.tape.backward(g.loss);
    std::vector<Matrix> grads;
    for (auto v : g.leaves) grads.push_back(g.tape.grad(v));

    // Sample 200 elements. A central difference of the ~4-nat loss can
    // only resolve gradients down to ~1e-7 in float64, so candidates are
    // restricted to elements whose analytic gradient the instrument can
    // actually measure; every role still gets probed via its largest
    // entries.
    auto& params = model.params();
    std::map<std::string, double> group_err;
    for (const auto& p : params) group_err[p.role] = 0.0;
    const double h = 1e-5;
    const int budget = 200;
    const double measurable = 1e-6;
    std::vector<std::pair<std::size_t, Index>> picks;
    {
      std::vector<std::pair<std::size_t, Index>> candidates;
      std::map<std::string, std::pair<double, std::pair<std::size_t, Index>>>
          role_best;
      for (std::size_t ti = 0; ti < params.size(); ++ti) {
        for (Index ei = 0; ei < params[ti].value.size(); ++ei) {
          const double mag = std::abs(grads[ti].data()[ei]);
          if (mag >= measurable) candidates.emplace_back(ti, ei);
          auto& best = role_best[params[ti].role];
          if (mag >= best.first) best = {mag, {ti, ei}};
        }
      }
      Rng pick_rng(seed ^ 0x9a11c4ecULL);
      for (const auto& [role, best] : role_best)
        if (best.first >= measurable) picks.push_back(best.second);
      while (static_cast<int>(picks.size()) < budget && !candidates.empty())
        picks.push_back(candidates[pick_rng.below(candidates.size())]);
    }
    for (auto [ti, ei] : picks) {
      const double orig = params[ti].value.data()[ei];
      params[ti].value.data()[ei] = orig + h;
      const double lp = graph_loss(model, inputs, targets, batch, len);
      params[ti].value.data()[ei] = orig - h;
      const double lm = graph_loss(model, inputs, targets, batch, len);
      params[ti].value.data()[ei] = orig;
      const double num = (lp - lm) / (2.0 * h);
      const double ana = grads[ti].data()[ei];
      const double rel = std::abs(num - ana) /
                         std::max({std::abs(num), std::abs(ana), 1e-8});
      group_err[params[ti].role] = std::max(group_err[params[ti].role], rel);
    }
    for (const auto& [role, err] : group_err)
      report.entries.push_back(GradcheckEntry{tag, role, err});

    if (mc.core == CoreTag::DiagStable) {
      // Clamped entries are locally constant: zero analytic gradient and
      // exactly zero loss delta for a +-1e-6 in-branch perturbation.
      report.clamped_grad =
          std::max(std::abs(grads[a_index](0, 0)), std::abs(grads[a_index](1, 1)));
      const double orig = params[a_index].value(0, 0);
      params[a_index].value(0, 0) = orig + 1e-6;
      const double lp = graph_loss(model, inputs, targets, batch, len);
      params[a_index].value(0, 0) = orig - 1e-6;
      const double lm = graph_loss(model, inputs, targets, batch, len);
      params[a_index].value(0, 0) = orig;
      report.clamped_loss_delta = std::abs(lp - lm);
    }
  }
  return report;
}

}  // namespace smamba
