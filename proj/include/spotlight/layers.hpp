#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spotlight/autograd.hpp"
#include "spotlight/ops.hpp"

namespace spotlight {

/// Named, ordered set of model tensors: trainable weights plus BN running
/// statistics. Order is registration order and defines the weights-file layout.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var var;
    bool trainable = true;
    bool weight_decay = true;
  };

  Var add(std::string name, Tensor init, bool trainable = true,
          bool weight_decay = true);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  const Entry* find(const std::string& name) const;
  std::int64_t count() const;
  /// Sum of sizes of entries whose name starts with `prefix`.
  std::int64_t count(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

using Rng = std::mt19937_64;

/// Fan-in scaled normal initialization; gain 2 for layers feeding a ReLU.
enum class InitGain { kLinear, kRelu };

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, const ConvSpec& spec,
         Rng& rng, InitGain gain = InitGain::kLinear);
  Var operator()(Tape& tape, const Var& x) const;
  const ConvSpec& spec() const { return spec_; }
  const Var& weight() const { return weight_; }

 private:
  ConvSpec spec_;
  Var weight_;
  Var bias_;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore& store, const std::string& name,
                  const ConvSpec& spec, Rng& rng,
                  InitGain gain = InitGain::kLinear);
  Var operator()(Tape& tape, const Var& x) const;
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  Var weight_;
  Var bias_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& store, const std::string& name, int channels);
  /// Train mode also updates the running statistics in place.
  Var operator()(Tape& tape, const Var& x, ops::Mode mode) const;

 private:
  Var gamma_;
  Var beta_;
  Var running_mean_;
  Var running_var_;
};

}  // namespace spotlight
