#include "smamba/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "smamba/rng.hpp"
#include "smamba/ssm.hpp"

namespace smamba {

namespace {

// softplus^{-1}(y): bias value whose softplus lands on y.
double inv_softplus(double y) { return y + std::log1p(-std::exp(-y)); }

Matrix uniform_matrix(Rng& rng, Index rows, Index cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

Matrix normal_matrix(Rng& rng, Index rows, Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
  return m;
}

std::uint64_t fnv1a64(const unsigned char* data, std::size_t size,
                      std::uint64_t h = 0xcbf29ce484222325ull) {
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

ModelConfig ModelConfig::from(const Config& c) {
  ModelConfig m;
  m.core = c.core_tag();
  m.d_model = c.d_model;
  m.d_inner = c.d_inner_resolved();
  m.n = c.n_state;
  m.layers = c.layers;
  m.share_group = std::min<Index>(c.share_group, m.d_inner);
  m.conv_width = c.conv_width;
  m.euler_b = c.euler_b;
  m.seed = c.seed;
  m.validate();
  return m;
}

void ModelConfig::validate() const {
  if (d_model < 1 || d_inner < d_model || n < 1 || layers < 1)
    throw ConfigError("model config: bad dimensions");
  if (share_group < 1 || d_inner % share_group != 0)
    throw ConfigError("model config: d_inner must be divisible by share_group");
  if (conv_width == 1 || conv_width < 0)
    throw ConfigError("model config: conv_width must be 0 or >= 2");
}

LmModel::LmModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const Index dm = cfg_.d_model;
  const Index di = cfg_.d_inner;
  const Index n = cfg_.n;

  auto push = [&](std::string name, std::string role, int block, Matrix v) {
    index_[name] = params_.size();
    params_.push_back(ParamTensor{std::move(name), std::move(role), block,
                                  std::move(v), Matrix(), Matrix()});
  };

  push("embed", "embeddings", -1, normal_matrix(rng, kVocab, dm, 0.02));

  for (Index b = 0; b < cfg_.layers; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    const int blk = static_cast<int>(b);
    push(pre + "norm", "norms", blk, Matrix::Ones(1, dm));
    const double s_in = 1.0 / std::sqrt(double(dm));
    push(pre + "w_in", "in_proj", blk,
         uniform_matrix(rng, dm, 2 * di, -s_in, s_in));
    if (cfg_.conv_width >= 2) {
      const double s_k = 1.0 / std::sqrt(double(cfg_.conv_width));
      push(pre + "conv_k", "conv", blk,
           uniform_matrix(rng, cfg_.conv_width, di, -s_k, s_k));
    }
    const double s_dt = 0.1 / std::sqrt(double(di));
    push(pre + "w_delta", "delta_proj", blk,
         uniform_matrix(rng, di, di, -s_dt, s_dt));
    // Bias so that softplus(bias) starts log-uniform in [1e-3, 1e-1].
    Matrix b_delta(1, di);
    for (Index c = 0; c < di; ++c)
      b_delta(0, c) =
          inv_softplus(std::exp(rng.uniform(std::log(1e-3), std::log(1e-1))));
    push(pre + "b_delta", "delta_proj", blk, std::move(b_delta));

    const double s_i = 1.0 / std::sqrt(double(di));
    switch (cfg_.core) {
      case CoreTag::Diag:
      case CoreTag::DiagStable:
        push(pre + "a", "a_part", blk, uniform_matrix(rng, di, n, 0.5, 1.5));
        push(pre + "w_b", "bc_proj", blk,
             uniform_matrix(rng, di, n, -s_i, s_i));
        push(pre + "w_c", "bc_proj", blk,
             uniform_matrix(rng, di, n, -s_i, s_i));
        break;
      case CoreTag::DenseHippo: {
        // Vanilla-style (d_inner, n) A, one column set per channel,
        // initialized from the HiPPO matrix diagonal (stored pre-negation).
        Matrix a(di, n);
        const Matrix hippo = hippo_init(n);
        for (Index c = 0; c < di; ++c)
          for (Index i = 0; i < n; ++i) a(c, i) = -hippo(i, i);
        push(pre + "a", "a_part", blk, std::move(a));
        push(pre + "w_b", "bc_proj", blk,
             uniform_matrix(rng, di, n, -s_i, s_i));
        push(pre + "w_c", "bc_proj", blk,
             uniform_matrix(rng, di, n, -s_i, s_i));
        break;
      }
      case CoreTag::Ccf:
      case CoreTag::Ocf:
        push(pre + "a", "a_part", blk,
             uniform_matrix(rng, cfg_.groups(), n, 0.5, 1.5));
        push(pre + "b", "bc_coeffs", blk,
             uniform_matrix(rng, cfg_.groups(), n, 0.5, 1.5));
        if (cfg_.core == CoreTag::Ocf)
          push(pre + "out_gain", "out_gain", blk, Matrix::Ones(1, di));
        break;
    }

    // Learnable skip: canonical forms start from D = 0, diagonal
    // variants from a vector of ones.
    const double d_init = cfg_.canonical() ? 0.0 : 1.0;
    push(pre + "d_skip", "d_skip", blk, Matrix::Constant(1, di, d_init));
    const double s_out = 1.0 / std::sqrt(double(di));
    push(pre + "w_out", "out_proj", blk,
         uniform_matrix(rng, di, dm, -s_out, s_out));
  }

  push("norm_f", "norms", -1, Matrix::Ones(1, dm));

  for (auto& p : params_) {
    p.m = Matrix::Zero(p.value.rows(), p.value.cols());
    p.v = Matrix::Zero(p.value.rows(), p.value.cols());
  }
}

const ParamTensor& LmModel::tensor(const std::string& name) const {
  return params_[tensor_index(name)];
}

std::size_t LmModel::tensor_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown tensor: " + name);
  return it->second;
}

LmModel::Graph LmModel::build_graph(const std::vector<int>& tokens,
                                    Index batch, Index len,
                                    const std::vector<int>* targets) const {
  if (static_cast<Index>(tokens.size()) != batch * len)
    throw DimensionError("build_graph: token count != batch*len");
  for (int t : tokens)
    if (t < 0 || t >= kVocab) throw InputError("build_graph: byte out of range");

  Graph g;
  g.leaves.reserve(params_.size());
  for (const auto& p : params_) g.leaves.push_back(g.tape.leaf(p.value));
  auto at = [&](const std::string& suffix) {
    return g.leaves[tensor_index(suffix)];
  };

  ad::Tape& t = g.tape;
  const Index di = cfg_.d_inner;
  ad::Var x = t.embedding(at("embed"), tokens);

  for (Index b = 0; b < cfg_.layers; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    ad::Var xn = t.rmsnorm(x, at(pre + "norm"));
    ad::Var xz = t.matmul(xn, at(pre + "w_in"));
    ad::Var u = t.slice_cols(xz, 0, di);
    ad::Var z = t.slice_cols(xz, di, di);
    if (cfg_.conv_width >= 2)
      u = t.silu(t.causal_conv1d(u, at(pre + "conv_k"), batch, len));

    ad::Var delta = t.softplus(
        t.add_row_broadcast(t.matmul(u, at(pre + "w_delta")),
                            at(pre + "b_delta")));

    ad::Var y;
    if (cfg_.canonical()) {
      ad::Var dg = t.group_mean_cols(delta, cfg_.share_group);
      y = t.scan_canonical(at(pre + "a"), at(pre + "b"), dg, u, batch, len,
                           cfg_.core == CoreTag::Ccf ? ad::CanonicalKind::Ccf
                                                     : ad::CanonicalKind::Ocf,
                           cfg_.euler_b);
      if (cfg_.core == CoreTag::Ocf)
        y = t.mul_row_broadcast(y, at(pre + "out_gain"));
    } else {
      ad::Var bsel = t.matmul(u, at(pre + "w_b"));
      ad::Var csel = t.matmul(u, at(pre + "w_c"));
      y = t.scan_diag(at(pre + "a"), delta, bsel, csel, u, batch, len,
                      cfg_.core == CoreTag::DiagStable, cfg_.euler_b);
    }
    y = t.add(y, t.mul_row_broadcast(u, at(pre + "d_skip")));
    ad::Var out = t.matmul(t.hadamard(y, t.silu(z)), at(pre + "w_out"));
    x = t.add(x, out);
  }

  ad::Var xf = t.rmsnorm(x, at("norm_f"));
  g.logits = t.matmul_transposed(xf, at("embed"));
  if (targets) g.loss = t.cross_entropy(g.logits, *targets);
  return g;
}

Matrix LmModel::logits(const std::vector<int>& tokens, Index batch,
                       Index len) const {
  Graph g = build_graph(tokens, batch, len);
  return g.tape.value(g.logits);
}

// --- census -------------------------------------------------------------

Census param_census(const LmModel& model) {
  Census c;
  for (const auto& p : model.params()) {
    CensusRow row{p.name, p.role, p.block, p.value.rows(), p.value.cols(),
                  p.value.size()};
    c.by_role[p.role] += row.count;
    c.total += row.count;
    c.rows.push_back(std::move(row));
  }
  if (model.config().canonical())
    c.a_part_per_group = model.config().n;
  return c;
}

// --- checkpoint -----------------------------------------------------------

namespace {

void write_config_lines(std::ostream& out, const ModelConfig& c) {
  out << "core = " << to_string(c.core) << "\n"
      << "d_model = " << c.d_model << "\n"
      << "d_inner = " << c.d_inner << "\n"
      << "n_state = " << c.n << "\n"
      << "layers = " << c.layers << "\n"
      << "share_group = " << c.share_group << "\n"
      << "conv_width = " << c.conv_width << "\n"
      << "euler_b = " << (c.euler_b ? "true" : "false") << "\n"
      << "seed = " << c.seed << "\n";
}

std::pair<std::string, std::string> split_kv(const std::string& line,
                                             int line_no) {
  const auto eq = line.find('=');
  if (eq == std::string::npos)
    throw ParseError(line_no, "expected `key = value` in checkpoint header");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

}  // namespace

void save_checkpoint(const std::string& path, const LmModel& model,
                     std::int64_t step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open checkpoint for writing: " + path);
  out << "smamba-checkpoint v1\n";
  write_config_lines(out, model.config());
  out << "step = " << step << "\n";
  out << "tensors = " << model.params().size() << "\n";
  for (const auto& p : model.params())
    out << p.name << " " << p.value.rows() << " " << p.value.cols() << "\n";
  out << "payload\n";

  std::uint64_t checksum = 0xcbf29ce484222325ull;
  auto emit = [&](const Matrix& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    const std::size_t size = sizeof(double) * static_cast<std::size_t>(m.size());
    checksum = fnv1a64(bytes, size, checksum);
    out.write(reinterpret_cast<const char*>(bytes),
              static_cast<std::streamsize>(size));
  };
  for (const auto& p : model.params()) {
    emit(p.value);
    emit(p.m);
    emit(p.v);
  }
  out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!out) throw InputError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw ParseError(line_no + 1, "truncated checkpoint");
    ++line_no;
  };
  next_line();
  if (line != "smamba-checkpoint v1")
    throw ParseError(line_no, "not a smamba checkpoint (bad magic)");

  ModelConfig cfg;
  std::int64_t step = 0;
  std::size_t tensor_count = 0;
  for (;;) {
    next_line();
    if (line.rfind("tensors", 0) == 0) {
      tensor_count = std::stoull(split_kv(line, line_no).second);
      break;
    }
    auto [key, value] = split_kv(line, line_no);
    if (key == "core") cfg.core = core_tag_from_string(value);
    else if (key == "d_model") cfg.d_model = std::stoll(value);
    else if (key == "d_inner") cfg.d_inner = std::stoll(value);
    else if (key == "n_state") cfg.n = std::stoll(value);
    else if (key == "layers") cfg.layers = std::stoll(value);
    else if (key == "share_group") cfg.share_group = std::stoll(value);
    else if (key == "conv_width") cfg.conv_width = std::stoll(value);
    else if (key == "euler_b") cfg.euler_b = (value == "true");
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "step") step = std::stoll(value);
    else throw ParseError(line_no, "unknown checkpoint header key: " + key);
  }

  LoadedCheckpoint loaded{LmModel(cfg), step};
  if (tensor_count != loaded.model.params().size())
    throw ParseError(line_no, "checkpoint tensor count mismatch");
  for (auto& p : loaded.model.params()) {
    next_line();
    std::istringstream ss(line);
    std::string name;
    Index rows = 0, cols = 0;
    ss >> name >> rows >> cols;
    if (name != p.name || rows != p.value.rows() || cols != p.value.cols())
      throw ParseError(line_no, "checkpoint tensor table mismatch at " + p.name);
  }
  next_line();
  if (line != "payload") throw ParseError(line_no, "missing payload marker");

  std::uint64_t checksum = 0xcbf29ce484222325ull;
  auto slurp = [&](Matrix& m) {
    const std::size_t size = sizeof(double) * static_cast<std::size_t>(m.size());
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(size));
    if (!in) throw ParseError(line_no, "truncated checkpoint payload");
    checksum = fnv1a64(reinterpret_cast<const unsigned char*>(m.data()), size,
                       checksum);
  };
  for (auto& p : loaded.model.params()) {
    slurp(p.value);
    slurp(p.m);
    slurp(p.v);
  }
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!in || stored != checksum)
    throw InputError("checkpoint checksum mismatch: " + path);
  return loaded;
}

}  // namespace smamba
