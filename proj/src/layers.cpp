#include "spotlight/layers.hpp"

#include <cmath>

namespace spotlight {

Var ParamStore::add(std::string name, Tensor init, bool trainable,
                    bool weight_decay) {
  if (find(name)) throw std::invalid_argument("duplicate parameter " + name);
  Var v(std::move(init), trainable);
  entries_.push_back({std::move(name), v, trainable, weight_decay});
  return v;
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::int64_t ParamStore::count() const { return count(""); }

std::int64_t ParamStore::count(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const Entry& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) n += static_cast<std::int64_t>(e.var.value().size());
  }
  return n;
}

void ParamStore::zero_grad() {
  for (Entry& e : entries_) e.var.zero_grad();
}

namespace {

Tensor kaiming(Shape s, int fan_in, InitGain gain, Rng& rng) {
  const double g = gain == InitGain::kRelu ? 2.0 : 1.0;
  std::normal_distribution<double> dist(0.0, std::sqrt(g / std::max(1, fan_in)));
  Tensor t(s);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

Conv2d::Conv2d(ParamStore& store, const std::string& name, const ConvSpec& spec,
               Rng& rng, InitGain gain)
    : spec_(spec) {
  spec.validate();
  const int fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
  weight_ = store.add(name + ".weight",
                      kaiming({spec.out_channels, spec.in_channels, spec.kernel_h,
                               spec.kernel_w},
                              fan_in, gain, rng));
  if (spec.has_bias) {
    bias_ = store.add(name + ".bias", Tensor({1, spec.out_channels, 1, 1}));
  }
}

Var Conv2d::operator()(Tape& tape, const Var& x) const {
  return ops::conv2d(tape, x, spec_, weight_, bias_);
}

ConvTranspose2d::ConvTranspose2d(ParamStore& store, const std::string& name,
                                 const ConvSpec& spec, Rng& rng, InitGain gain)
    : spec_(spec) {
  spec.validate();
  // Each output pixel receives in * (kh*kw / stride^2) contributions.
  const int fan_in = std::max(1, spec.in_channels * spec.kernel_h * spec.kernel_w /
                                     (spec.stride * spec.stride));
  weight_ = store.add(name + ".weight",
                      kaiming({spec.in_channels, spec.out_channels, spec.kernel_h,
                               spec.kernel_w},
                              fan_in, gain, rng));
  if (spec.has_bias) {
    bias_ = store.add(name + ".bias", Tensor({1, spec.out_channels, 1, 1}));
  }
}

Var ConvTranspose2d::operator()(Tape& tape, const Var& x) const {
  return ops::conv_transpose2d(tape, x, spec_, weight_, bias_);
}

BatchNorm2d::BatchNorm2d(ParamStore& store, const std::string& name, int channels) {
  const Shape s{1, channels, 1, 1};
  gamma_ = store.add(name + ".gamma", Tensor(s, 1.0));
  beta_ = store.add(name + ".beta", Tensor(s, 0.0));
  running_mean_ = store.add(name + ".running_mean", Tensor(s, 0.0), false, false);
  running_var_ = store.add(name + ".running_var", Tensor(s, 1.0), false, false);
}

Var BatchNorm2d::operator()(Tape& tape, const Var& x, ops::Mode mode) const {
  ops::RunningStats stats{running_mean_.value(), running_var_.value()};
  Var out = ops::batch_norm(tape, x, gamma_, beta_, stats, mode);
  if (mode == ops::Mode::kTrain) {
    Var mean = running_mean_;
    Var var = running_var_;
    mean.mutable_value() = std::move(stats.mean);
    var.mutable_value() = std::move(stats.var);
  }
  return out;
}

}  // namespace spotlight
