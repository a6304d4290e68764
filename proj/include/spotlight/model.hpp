#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "spotlight/layers.hpp"

namespace spotlight {

struct ModelConfig {
  int base_channels = 64;  // C; backbone stage i has C * 2^(i-1) channels
  int fpn_width = 64;      // per-level lateral width
  int fused_width = 64;    // F_fuse channels; CPFSM groups are fused_width / 4
  int cpfsm_width = 64;    // hidden width of each CPFSM branch
  int head_width = 32;     // hidden width of the coarse and refined heads
  bool fpn_bias = true;
  /// BN + ReLU after the FPN smooth/fuse convs and the hidden head layers.
  /// Off gives the purely linear heads.
  bool norm_layers = true;
  std::uint64_t init_seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Throws ShapeError unless the image is (N,3,H,W) with H, W multiples of 32.
void check_input_shape(const Shape& image);

class Backbone {
 public:
  Backbone() = default;
  Backbone(ParamStore& store, int base_channels, Rng& rng);
  /// Feature maps at strides 4, 8, 16, 32.
  std::array<Var, 4> operator()(Tape& tape, const Var& image, ops::Mode mode) const;

 private:
  struct Unit {
    Conv2d conv;
    BatchNorm2d bn;
  };
  Var run(Tape& tape, const Unit& u, const Var& x, ops::Mode mode) const;
  Unit stem_;
  std::array<std::array<Unit, 2>, 4> stages_;
};

class Miem {
 public:
  Miem() = default;
  Miem(ParamStore& store, const std::string& name, int channels, Rng& rng);
  Var operator()(Tape& tape, const Var& x, ops::Mode mode) const;
  int channels() const { return channels_; }

 private:
  int channels_ = 0;
  Conv2d standardize_;
  std::array<Conv2d, 4> reduce_;
  std::array<BatchNorm2d, 4> reduce_bn_;
  std::array<Conv2d, 4> branch_;  // 1x9, 9x1, 3x3, 3x3 dilation 2
  Conv2d project_;
};

class Fpn {
 public:
  Fpn() = default;
  Fpn(ParamStore& store, const std::array<int, 4>& in_channels, int level_width,
      int fused_width, bool bias, bool norm, Rng& rng);
  Var operator()(Tape& tape, const std::array<Var, 4>& scales, ops::Mode mode) const;

 private:
  bool norm_ = false;
  std::array<Conv2d, 4> lateral_;
  std::array<Conv2d, 4> smooth_;
  std::array<BatchNorm2d, 4> smooth_bn_;
  Conv2d fuse_;
  BatchNorm2d fuse_bn_;
};

class CoarseHead {
 public:
  CoarseHead() = default;
  CoarseHead(ParamStore& store, int in_channels, int hidden, bool norm, Rng& rng);
  Var operator()(Tape& tape, const Var& f_fuse, ops::Mode mode) const;

 private:
  bool norm_ = false;
  Conv2d conv1_, conv2_;
  BatchNorm2d bn_;
};

class Cpfsm {
 public:
  struct Trace {
    std::array<Var, 4> h1;
    std::array<Var, 4> h2;
  };

  Cpfsm() = default;
  Cpfsm(ParamStore& store, int channels, int width, Rng& rng);
  /// `cut_after` in 0..2 feeds zeros instead of H2 of that group into the
  /// next one; -1 keeps the cascade intact.
  Var operator()(Tape& tape, const Var& x, Trace* trace = nullptr,
                 int cut_after = -1) const;

 private:
  int channels_ = 0;
  std::array<Conv2d, 4> entry_;    // 1x1 group -> width
  std::array<Conv2d, 4> dilated_;  // 3x3 dilation i+1
  Conv2d merge_;
};

class RefinedHead {
 public:
  RefinedHead() = default;
  RefinedHead(ParamStore& store, int in_channels, int hidden, bool norm, Rng& rng);
  Var operator()(Tape& tape, const Var& f_c, ops::Mode mode) const;

 private:
  bool norm_ = false;
  Conv2d conv_;
  BatchNorm2d conv_bn_;
  ConvTranspose2d up1_, up2_;
  BatchNorm2d up1_bn_;
};

Var mapping_filter(Tape& tape, const Var& f_fuse, const Var& m_cs);
Var scm_calibrate(Tape& tape, const Var& f_fuse, const Var& f_fp, const Var& alpha);

struct ForwardResult {
  std::array<Var, 4> scales;
  std::array<Var, 4> enhanced;
  Var f_fuse, m_cs, f_mf, f_fp, f_c, m_rs;
};

class StdModel {
 public:
  explicit StdModel(const ModelConfig& cfg);
  StdModel(const StdModel&) = delete;
  StdModel& operator=(const StdModel&) = delete;

  ForwardResult forward(Tape& tape, const Var& image, ops::Mode mode) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Var& alpha() const { return alpha_; }

  const Backbone& backbone() const { return backbone_; }
  const std::array<Miem, 4>& miem() const { return miem_; }
  const Fpn& fpn() const { return fpn_; }
  const CoarseHead& coarse_head() const { return coarse_; }
  const Cpfsm& cpfsm() const { return cpfsm_; }
  const RefinedHead& refined_head() const { return refined_; }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  Backbone backbone_;
  std::array<Miem, 4> miem_;
  Fpn fpn_;
  CoarseHead coarse_;
  Cpfsm cpfsm_;
  RefinedHead refined_;
  Var alpha_;
};

/// Closed-form size of every stored tensor for a configuration.
std::int64_t expected_param_count(const ModelConfig& cfg);

// Weights container. Layout (all integers little-endian):
//   "SPTW" | u32 version | u32 meta_len | meta bytes (key=value lines)
//   u32 count | count x { u16 name_len | name | u8 dtype (1=f32) | u8 rank=4 | 4 x u32 dims }
//   tensor payloads as f32 little-endian, in manifest order.
inline constexpr std::uint32_t kWeightsVersion = 1;

using Metadata = std::map<std::string, std::string>;

std::vector<std::uint8_t> serialize_weights(const ParamStore& store,
                                            const Metadata& meta);
/// Overwrites store values. Names and shapes must match exactly.
Metadata deserialize_weights(const std::vector<std::uint8_t>& bytes, ParamStore& store);
/// Reads only the metadata block.
Metadata read_weights_metadata(const std::vector<std::uint8_t>& bytes);

Metadata model_metadata(const ModelConfig& cfg);
ModelConfig model_config_from_metadata(const Metadata& meta);

void save_weights(const std::filesystem::path& path, const StdModel& model,
                  Metadata extra = {});
/// Builds a model from the configuration stored in the file, then loads it.
std::unique_ptr<StdModel> load_model(const std::filesystem::path& path,
                                     Metadata* meta_out = nullptr);

}  // namespace spotlight
