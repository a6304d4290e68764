#include "spotlight/autograd.hpp"

#include <array>
#include <atomic>

namespace spotlight {

Var::Var(Tensor value, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor& Var::grad_buffer() const {
  if (node_->grad.empty()) node_->grad = Tensor(node_->value.shape());
  return node_->grad;
}

void Var::zero_grad() const {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

void Var::accumulate_grad(const Tensor& g) const {
  Tensor& dst = grad_buffer();
  if (!(dst.shape() == g.shape())) {
    throw ShapeError("gradient shape " + g.shape().str() +
                     " does not match value " + dst.shape().str());
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConvTranspose2d: return "conv_transpose2d";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kMulScalarParam: return "mul_scalar_param";
    case OpKind::kMulChannelBroadcast: return "mul_channel_broadcast";
    case OpKind::kScale: return "scale";
    case OpKind::kConcat: return "concat_channels";
    case OpKind::kSlice: return "slice_channels";
    case OpKind::kUpsample: return "upsample_nearest";
    case OpKind::kBceOhem: return "bce_ohem";
    case OpKind::kDice: return "dice_loss";
    case OpKind::kCount: break;
  }
  return "?";
}

namespace fault {
namespace {
std::array<std::atomic<bool>, static_cast<std::size_t>(OpKind::kCount)> g_armed{};
}
void arm(OpKind kind) { g_armed[static_cast<std::size_t>(kind)] = true; }
void disarm_all() {
  for (auto& a : g_armed) a = false;
}
bool armed(OpKind kind) { return g_armed[static_cast<std::size_t>(kind)]; }
}  // namespace fault

std::int64_t CostTally::total_macs() const {
  std::int64_t t = 0;
  for (const auto& [_, m] : macs) t += m;
  return t;
}

bool Tape::wants(std::initializer_list<const Var*> inputs) const {
  if (!enabled_) return false;
  for (const Var* v : inputs) {
    if (v && v->requires_grad()) return true;
  }
  return false;
}

void Tape::record(std::function<void()> backward) {
  if (enabled_) entries_.push_back(std::move(backward));
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " +
                     loss.shape().str());
  }
  loss.grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

void Tape::add_macs(std::int64_t macs) {
  if (tally_) tally_->macs[scope_.empty() ? "model" : scope_] += macs;
}

Tape::Scope::Scope(Tape& tape, const std::string& name)
    : tape_(tape), prev_len_(tape.scope_.size()) {
  if (!tape_.scope_.empty()) tape_.scope_ += '/';
  tape_.scope_ += name;
}

Tape::Scope::~Scope() { tape_.scope_.resize(prev_len_); }

}  // namespace spotlight
