// smamba: train/eval/analyze/convert/count/check for the S-Mamba family.
// Exit codes: 0 success, 1 usage or parse error, 2 training divergence,
// 3 uncontrollable/unobservable input, 4 check-suite failure.
#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "smamba/config.hpp"
#include "smamba/corpus_gen.hpp"
#include "smamba/discretize.hpp"
#include "smamba/model.hpp"
#include "smamba/scan.hpp"
#include "smamba/ssm.hpp"
#include "smamba/statespace_io.hpp"
#include "smamba/train.hpp"

namespace {

using namespace smamba;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitNotCanonicalizable = 3;
constexpr int kExitCheckFailed = 4;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

Config resolve_config(const std::string& config_path,
                      const std::vector<std::string>& overrides,
                      std::uint64_t seed, bool seed_given) {
  Config cfg = config_path.empty() ? Config{} : load_config_file(config_path);
  apply_overrides(cfg, overrides);
  if (seed_given) cfg.seed = seed;
  cfg.validate();
  return cfg;
}

// --- analyze --------------------------------------------------------------

void print_poly(std::ostream& out, const Polynomial& p, bool pretty) {
  if (pretty) {
    out << "s^" << p.degree();
    for (Index i = p.degree() - 1; i >= 0; --i) {
      const double c = p.coeffs[i];
      out << (c < 0 ? " - " : " + ") << fmt(std::abs(c));
      if (i > 0) out << " s^" << i;
    }
  } else {
    for (Index i = 0; i < p.degree(); ++i) {
      if (i) out << " ";
      out << fmt(p.coeffs[i]);
    }
  }
}

int cmd_analyze(const std::string& path, bool pretty) {
  StateSpace s = read_statespace_file(path);
  const Index n = s.n();
  const Index reach = numerical_rank(reachability_matrix(s));
  const Index obs = numerical_rank(observability_matrix(s));
  const Polynomial cp = char_poly(s.A);
  std::vector<Complex> eigs;
  std::string eig_note;
  bool hurwitz = false;
  bool have_eigs = true;
  try {
    eigs = poly_roots(cp);
    hurwitz = is_hurwitz(s.A);
  } catch (const NumericalFailureError& e) {
    have_eigs = false;
    eigs = e.best_iterate;
    eig_note = " (root iteration did not converge; best iterate shown)";
  }
  for (auto& z : eigs)
    if (std::abs(z.imag()) <= 1e-12 * std::max(1.0, std::abs(z.real())))
      z = Complex(z.real(), 0.0);

  if (pretty) {
    std::cout << "system: n=" << n << " m=" << s.m() << " p=" << s.p() << "\n";
    std::cout << "reachability rank: " << reach << "/" << n << "\n";
    std::cout << "observability rank: " << obs << "/" << n << "\n";
    std::cout << "characteristic polynomial: ";
    print_poly(std::cout, cp, true);
    std::cout << "\neigenvalues:" << eig_note;
    for (const auto& z : eigs)
      std::cout << " (" << fmt(z.real()) << (z.imag() < 0 ? "" : "+")
                << fmt(z.imag()) << "i)";
    std::cout << "\nhurwitz: " << (have_eigs && hurwitz ? "true" : "false")
              << "\n";
  } else {
    std::cout << "n\t" << n << "\nm\t" << s.m() << "\np\t" << s.p() << "\n";
    std::cout << "reachability_rank\t" << reach << "\t" << n << "\n";
    std::cout << "observability_rank\t" << obs << "\t" << n << "\n";
    std::cout << "char_poly\t";
    print_poly(std::cout, cp, false);
    std::cout << "\n";
    for (const auto& z : eigs)
      std::cout << "eigenvalue\t" << fmt(z.real()) << "\t" << fmt(z.imag())
                << "\n";
    std::cout << "hurwitz\t" << (have_eigs && hurwitz ? "true" : "false")
              << "\n";
  }
  return kExitOk;
}

// --- convert ---------------------------------------------------------------

double kernel_agreement(const StateSpace& a, const StateSpace& b, Index len) {
  const double delta = 0.1;
  Kernel ka = kernel(zoh(a, delta), len);
  Kernel kb = kernel(zoh(b, delta), len);
  double worst = 0.0;
  for (Index i = 0; i < len; ++i)
    worst = std::max(worst, (ka.taps[i] - kb.taps[i]).cwiseAbs().maxCoeff());
  return worst;
}

int cmd_convert(const std::string& in_path, const std::string& target,
                const std::string& out_path) {
  StateSpace s = read_statespace_file(in_path);
  StateSpace converted;
  if (target == "ccf") {
    CcfParam p = to_ccf(s);
    converted = realize_ccf(p);
  } else if (target == "ocf") {
    // Observable form via duality: the OCF of (A, B, C) is the transpose
    // dual of the CCF of (A^T, C^T, B^T).
    if (s.p() != 1)
      throw UnsupportedError("convert to ocf: single-output system required");
    StateSpace dual(s.A.transpose(), s.C.transpose(), s.B.transpose(), s.D);
    CcfParam p;
    try {
      p = to_ccf(dual);
    } catch (const NotControllableError&) {
      throw NotObservableError(
          "convert: observability matrix rank-deficient");
    }
    converted = realize_ocf(OcfParam{p.a, p.b, p.d});
  } else {
    throw ConfigError("convert: target must be ccf or ocf");
  }
  write_statespace_file(out_path, converted);
  std::cout << "kernel_agreement\t" << fmt(kernel_agreement(s, converted, 16))
            << "\n";
  return kExitOk;
}

// --- count ------------------------------------------------------------------

void print_census(const Config& cfg) {
  LmModel model(ModelConfig::from(cfg));
  Census c = param_census(model);
  std::cout << "name\trole\tblock\trows\tcols\tcount\n";
  for (const auto& row : c.rows)
    std::cout << row.name << "\t" << row.role << "\t" << row.block << "\t"
              << row.rows << "\t" << row.cols << "\t" << row.count << "\n";
  std::cout << "role_totals";
  for (const auto& [role, count] : c.by_role)
    std::cout << "\t" << role << "=" << count;
  std::cout << "\n";
  if (c.a_part_per_group > 0)
    std::cout << "a_part_per_head_group\t" << c.a_part_per_group << "\n";
  std::cout << "total\t" << c.total << "\n";
}

int cmd_count(const Config& cfg, const std::string& compare) {
  if (compare.empty()) {
    print_census(cfg);
    return kExitOk;
  }
  std::vector<std::string> tags;
  std::string tag;
  std::istringstream ss(compare);
  while (std::getline(ss, tag, ',')) tags.push_back(tag);
  std::cout << "core\ttotal\tdelta_vs_first\n";
  Index first = -1;
  for (const auto& t : tags) {
    Config c = cfg;
    c.set("core", t);
    Census census = param_census(LmModel(ModelConfig::from(c)));
    if (first < 0) first = census.total;
    std::cout << t << "\t" << census.total << "\t" << (census.total - first)
              << "\n";
  }
  return kExitOk;
}

// --- check -------------------------------------------------------------------

int cmd_check(const Config& cfg, std::uint64_t seed, const std::string& suite,
              bool corrupt_backward) {
  bool ok = true;

  if (suite == "all" || suite == "grad") {
    Config gc = cfg;
    gc.d_model = 16;
    gc.d_inner = 32;
    gc.n_state = 4;
    gc.layers = 2;
    gc.share_group = 16;
    gc.seq_len = 8;
    GradcheckReport report = gradcheck_suite(gc, seed, corrupt_backward);
    std::string worst_group = "-";
    double worst = 0.0;
    for (const auto& e : report.entries) {
      if (e.max_rel_err >= worst) {
        worst = e.max_rel_err;
        worst_group = e.core + "/" + e.group;
      }
    }
    const bool pass = report.pass();
    std::cout << "suite\tgrad\t" << (pass ? "pass" : "FAIL") << "\tmax_rel_err\t"
              << fmt(worst) << "\tworst_group\t" << worst_group
              << "\tclamped_grad\t" << fmt(report.clamped_grad) << "\n";
    ok = ok && pass;
  }

  if (suite == "all" || suite == "views") {
    Rng rng(seed);
    double worst = 0.0;
    for (Index n : {Index(2), Index(4), Index(8)}) {
      for (double delta : {0.05, 0.2}) {
        for (int trial = 0; trial < 25; ++trial) {
          Matrix a(n, n), b(n, 1), c(1, n);
          for (Index i = 0; i < n * n; ++i) a.data()[i] = rng.uniform(-1, 1);
          for (Index i = 0; i < n; ++i) {
            b(i, 0) = rng.uniform(-1, 1);
            c(0, i) = rng.uniform(-1, 1);
          }
          a -= Matrix::Identity(n, n);
          StateSpace s(a, b, c, Matrix::Zero(1, 1));
          DiscreteSsm d = zoh(s, delta);
          SequenceBatch u(1, 32, 1);
          for (Index t = 0; t < 32; ++t) u.at(0, t, 0) = rng.uniform(-1, 1);
          SequenceBatch ys = scan_lti(d, u);
          SequenceBatch yc = conv_apply(kernel(d, 32), u, d.D(0, 0));
          worst = std::max(worst,
                           (ys.data - yc.data).cwiseAbs().maxCoeff());
        }
      }
    }
    const bool pass = worst <= 1e-6;
    std::cout << "suite\tviews\t" << (pass ? "pass" : "FAIL")
              << "\tmax_abs_err\t" << fmt(worst) << "\n";
    ok = ok && pass;
  }

  if (suite == "all" || suite == "canon") {
    Rng rng(seed ^ 0xabcd);
    bool pass = true;
    double worst_coeff = 0.0;
    for (Index n : {Index(2), Index(4), Index(8)}) {
      for (int trial = 0; trial < 50; ++trial) {
        Vector a(n), b(n);
        for (Index i = 0; i < n; ++i) {
          a[i] = rng.uniform(-2, 2);
          b[i] = rng.uniform(-2, 2);
        }
        StateSpace ccf = realize_ccf(CcfParam{a, b, 0.0});
        StateSpace ocf = realize_ocf(OcfParam{a, b, 0.0});
        if (numerical_rank(reachability_matrix(ccf)) != n) pass = false;
        if (numerical_rank(observability_matrix(ocf)) != n) pass = false;
        if (ocf.A != ccf.A.transpose()) pass = false;
        const Polynomial cp = char_poly(ccf.A);
        for (Index i = 0; i < n; ++i)
          worst_coeff = std::max(worst_coeff, std::abs(cp.coeffs[i] - a[i]));
      }
    }
    pass = pass && worst_coeff <= 1e-9;
    std::cout << "suite\tcanon\t" << (pass ? "pass" : "FAIL")
              << "\tmax_coeff_err\t" << fmt(worst_coeff) << "\n";
    ok = ok && pass;
  }

  return ok ? kExitOk : kExitCheckFailed;
}

// --- eval ---------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint_path, const std::string& corpus_path,
             double split_frac, Index seq_len, Index batch) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  Corpus corpus = load_corpus(corpus_path, split_frac);
  const double nll = evaluate_nll(ck.model, corpus, seq_len, batch);
  std::cout << "step\t" << ck.step << "\nval_nll\t" << fmt(nll) << "\nval_ppl\t"
            << fmt(std::exp(nll)) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse Mamba state-space models: experiments and analysis"};
  app.require_subcommand(1);

  std::string config_path, corpus_path, out_dir, system_path, out_path;
  std::string target, compare, suite = "all", checkpoint_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool pretty = false, corrupt_backward = false;
  double split_frac = 0.9;
  std::int64_t eval_seq_len = 256, eval_batch = 16;

  std::map<const CLI::App*, CLI::Option*> seed_opts;
  auto add_config_opts = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (key = value)");
    sub->add_option("--set", overrides,
                    "override config keys, e.g. --set core=ccf");
    seed_opts[sub] =
        sub->add_option("--seed", seed, "RNG seed (flag beats SMAMBA_SEED)")
            ->envname("SMAMBA_SEED");
  };
  auto seed_given = [&](const CLI::App* sub) {
    auto it = seed_opts.find(sub);
    return it != seed_opts.end() && it->second->count() > 0;
  };

  CLI::App* train = app.add_subcommand("train", "train a model on a corpus");
  add_config_opts(train);
  train->add_option("--corpus", corpus_path, "corpus file")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path)->required();
  eval->add_option("--corpus", corpus_path)->required();
  eval->add_option("--split-frac", split_frac);
  eval->add_option("--seq-len", eval_seq_len);
  eval->add_option("--batch", eval_batch);

  CLI::App* analyze =
      app.add_subcommand("analyze", "rank/eigenvalue report for a system file");
  analyze->add_option("file", system_path, "statespace file")->required();
  analyze->add_flag("--pretty", pretty, "human-readable output");

  CLI::App* convert =
      app.add_subcommand("convert", "convert a system to canonical form");
  convert->add_option("file", system_path, "statespace file")->required();
  convert->add_option("--to", target, "ccf or ocf")->required();
  convert->add_option("--out", out_path, "output file")->required();

  CLI::App* count = app.add_subcommand("count", "parameter census");
  add_config_opts(count);
  count->add_option("--compare", compare,
                    "comma list of cores for side-by-side totals");

  CLI::App* check = app.add_subcommand("check", "verification suites");
  add_config_opts(check);
  check->add_option("--suite", suite, "all|grad|views|canon");
  check->add_flag("--corrupt-backward", corrupt_backward)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) {
      Config cfg =
          resolve_config(config_path, overrides, seed, seed_given(train));
      TrainResult r = train_run(cfg, corpus_path, out_dir);
      if (r.diverged) {
        std::cerr << "training diverged at step " << r.steps
                  << "; last good checkpoint kept\n";
        return kExitDiverged;
      }
      std::cout << "steps\t" << r.steps << "\nfinal_val_nll\t"
                << fmt(r.final_val_nll) << "\nfinal_val_ppl\t"
                << fmt(r.final_val_ppl) << "\nmetrics\t" << r.metrics_path
                << "\ncheckpoint\t" << r.checkpoint_path << "\n";
      return kExitOk;
    }
    if (eval->parsed())
      return cmd_eval(checkpoint_path, corpus_path, split_frac, eval_seq_len,
                      eval_batch);
    if (analyze->parsed()) return cmd_analyze(system_path, pretty);
    if (convert->parsed()) return cmd_convert(system_path, target, out_path);
    if (count->parsed()) {
      Config cfg =
          resolve_config(config_path, overrides, seed, seed_given(count));
      return cmd_count(cfg, compare);
    }
    if (check->parsed()) {
      Config cfg = resolve_config(config_path, overrides, seed, false);
      const std::uint64_t check_seed = seed_given(check) ? seed : cfg.seed;
      if (suite != "all" && suite != "grad" && suite != "views" &&
          suite != "canon")
        throw ConfigError("unknown suite: " + suite);
      return cmd_check(cfg, check_seed, suite, corrupt_backward);
    }
  } catch (const NotControllableError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNotCanonicalizable;
  } catch (const NotObservableError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNotCanonicalizable;
  } catch (const TrainingDivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
