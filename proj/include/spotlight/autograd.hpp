#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "spotlight/tensor.hpp"

namespace spotlight {

/// A tensor value that may carry a gradient. Copies share the same node, so a
/// parameter held by a layer and the handle passed through a forward pass are
/// the same object.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  /// Gradient buffer, allocated as zeros on first use.
  Tensor& grad_buffer() const;
  void zero_grad() const;
  void accumulate_grad(const Tensor& g) const;

  bool same_node(const Var& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

/// Operators whose backward rule can be sign-flipped for mutation testing.
enum class OpKind : std::uint8_t {
  kConv2d,
  kConvTranspose2d,
  kBatchNorm,
  kRelu,
  kSigmoid,
  kAdd,
  kMul,
  kMulScalarParam,
  kMulChannelBroadcast,
  kScale,
  kConcat,
  kSlice,
  kUpsample,
  kBceOhem,
  kDice,
  kCount
};

const char* op_name(OpKind kind);

/// Test-only fault injection. When a kind is armed, that operator's backward
/// rule negates every gradient it propagates.
namespace fault {
void arm(OpKind kind);
void disarm_all();
bool armed(OpKind kind);
/// RAII arming for the lifetime of the guard.
class Guard {
 public:
  explicit Guard(OpKind kind) { arm(kind); }
  ~Guard() { disarm_all(); }
  Guard(const Guard&) = delete;
  Guard& operator=(const Guard&) = delete;
};
}  // namespace fault

/// Multiply-accumulate and parameter tallies keyed by block scope.
struct CostTally {
  std::map<std::string, std::int64_t> macs;
  std::int64_t total_macs() const;
};

/// Dynamic tape: operators append backward closures during the forward pass,
/// `backward` replays them in reverse. A disabled tape records nothing, which
/// is how inference runs. Each thread must own its tape.
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool enabled() const { return enabled_; }
  /// True if an op with these inputs must record a backward rule.
  bool wants(std::initializer_list<const Var*> inputs) const;
  void record(std::function<void()> backward);
  std::size_t size() const { return entries_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs all recorded rules in reverse order.
  void backward(Var loss);
  void clear() { entries_.clear(); }

  void set_cost_tally(CostTally* tally) { tally_ = tally; }
  void add_macs(std::int64_t macs);

  /// Scoped block name for cost accounting, e.g. "miem1/branches".
  class Scope {
   public:
    Scope(Tape& tape, const std::string& name);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
    std::size_t prev_len_;
  };

 private:
  bool enabled_;
  std::vector<std::function<void()>> entries_;
  CostTally* tally_ = nullptr;
  std::string scope_;
};

}  // namespace spotlight
