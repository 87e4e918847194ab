// S-Mamba language model assembly: byte embedding, pre-norm residual
// blocks around a pluggable SSM core (dense-HiPPO / CCF / OCF / diagonal
// / clamped diagonal), SiLU gating, tied output head. Also the exact
// parameter census and the checkpoint container.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smamba/config.hpp"
#include "smamba/numerics.hpp"
#include "smamba/tape.hpp"

namespace smamba {

struct ModelConfig {
  CoreTag core = CoreTag::Diag;
  Index d_model = 64;
  Index d_inner = 128;
  Index n = 8;
  Index layers = 2;
  Index share_group = 16;  // channels sharing one canonical coefficient set
  Index conv_width = 0;    // 0 disables the depthwise conv
  bool euler_b = false;
  std::uint64_t seed = 1;

  static ModelConfig from(const Config& c);
  Index groups() const { return d_inner / share_group; }
  bool canonical() const {
    return core == CoreTag::Ccf || core == CoreTag::Ocf;
  }
  void validate() const;
};

/// One named parameter tensor with its Adam moment slots.
struct ParamTensor {
  std::string name;
  std::string role;  // census grouping: a_part, bc_proj, d_skip, ...
  int block = -1;    // -1 for model-level tensors
  Matrix value;
  Matrix m;
  Matrix v;
};

class LmModel {
 public:
  static constexpr Index kVocab = 256;

  explicit LmModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }

  /// One forward graph. Leaves are parallel to params(); loss is only
  /// set when targets are given.
  struct Graph {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    ad::Var logits;
    ad::Var loss;
  };

  /// tokens are flattened batch-major: index b*len + t, values 0..255.
  Graph build_graph(const std::vector<int>& tokens, Index batch, Index len,
                    const std::vector<int>* targets = nullptr) const;

  /// Forward-only logits, (batch*len) x 256.
  Matrix logits(const std::vector<int>& tokens, Index batch, Index len) const;

 private:
  ModelConfig cfg_;
  std::vector<ParamTensor> params_;
  // Index of each tensor by name for block wiring.
  std::map<std::string, std::size_t> index_;

  const ParamTensor& tensor(const std::string& name) const;
  std::size_t tensor_index(const std::string& name) const;
};

// --- census -----------------------------------------------------------

struct CensusRow {
  std::string name;
  std::string role;
  int block;
  Index rows;
  Index cols;
  Index count;
};

struct Census {
  std::vector<CensusRow> rows;
  std::map<std::string, Index> by_role;
  Index total = 0;
  /// A-part free parameters per canonical head group (0 for non-canonical
  /// cores, where the A part is counted per channel instead).
  Index a_part_per_group = 0;
};

Census param_census(const LmModel& model);

// --- checkpoint ---------------------------------------------------------

/// Container: a text header (format version, config as key = value, step,
/// tensor table) followed by raw little-endian float64 payloads in census
/// order (value, then Adam m and v per tensor) and a trailing 64-bit
/// FNV-1a checksum of the payload bytes.
void save_checkpoint(const std::string& path, const LmModel& model,
                     std::int64_t step);

struct LoadedCheckpoint {
  LmModel model;
  std::int64_t step = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace smamba
