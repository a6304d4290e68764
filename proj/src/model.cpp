#include "spotlight/model.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <sstream>

#include "spotlight/errors.hpp"
#include "spotlight/fileio.hpp"

namespace spotlight {

void ModelConfig::validate() const {
  if (base_channels < 4 || base_channels % 4 != 0) {
    throw ValidationError("model.base_channels must be a positive multiple of 4");
  }
  if (fused_width < 4 || fused_width % 4 != 0) {
    throw ValidationError("model.fused_width must be a positive multiple of 4");
  }
  if (fpn_width < 1 || cpfsm_width < 1 || head_width < 1) {
    throw ValidationError("model widths must be positive");
  }
}

void check_input_shape(const Shape& image) {
  if (image.c != 3 || image.n < 1) {
    throw ShapeError("image must be (N,3,H,W), got " + image.str());
  }
  if (image.h < 32 || image.w < 32 || image.h % 32 != 0 || image.w % 32 != 0) {
    throw ShapeError("image height and width must be positive multiples of 32, got " +
                     image.str());
  }
}

// ---------------------------------------------------------------- backbone

Backbone::Backbone(ParamStore& store, int c, Rng& rng) {
  const auto unit = [&](const std::string& name, int in, int out, int stride) {
    Unit u;
    u.conv = Conv2d(store, name + ".conv", ConvSpec::square(in, out, 3, stride, 1, 1, false),
                    rng, InitGain::kRelu);
    u.bn = BatchNorm2d(store, name + ".bn", out);
    return u;
  };
  stem_ = unit("backbone.stem", 3, c, 2);
  int in = c;
  for (int i = 0; i < 4; ++i) {
    const int out = c << i;
    const std::string s = "backbone.stage" + std::to_string(i + 1);
    stages_[i][0] = unit(s + ".down", in, out, 2);
    stages_[i][1] = unit(s + ".body", out, out, 1);
    in = out;
  }
}

Var Backbone::run(Tape& tape, const Unit& u, const Var& x, ops::Mode mode) const {
  return ops::relu(tape, u.bn(tape, u.conv(tape, x), mode));
}

std::array<Var, 4> Backbone::operator()(Tape& tape, const Var& image,
                                        ops::Mode mode) const {
  check_input_shape(image.shape());
  Tape::Scope scope(tape, "backbone");
  Var x = run(tape, stem_, image, mode);
  std::array<Var, 4> out;
  for (int i = 0; i < 4; ++i) {
    x = run(tape, stages_[i][0], x, mode);
    x = run(tape, stages_[i][1], x, mode);
    out[i] = x;
  }
  return out;
}

// -------------------------------------------------------------------- MIEM

Miem::Miem(ParamStore& store, const std::string& name, int channels, Rng& rng)
    : channels_(channels) {
  if (channels < 4 || channels % 4 != 0) {
    throw ShapeError("MIEM width must be a positive multiple of 4, got " +
                     std::to_string(channels));
  }
  const int q = channels / 4;
  standardize_ = Conv2d(store, name + ".standardize", ConvSpec::square(channels, channels, 1), rng);
  for (int i = 0; i < 4; ++i) {
    const std::string g = name + ".reduce" + std::to_string(i + 1);
    reduce_[i] = Conv2d(store, g + ".conv", ConvSpec::square(channels, q, 1, 1, 1, 0, false),
                        rng, InitGain::kRelu);
    reduce_bn_[i] = BatchNorm2d(store, g + ".bn", q);
  }
  branch_[0] = Conv2d(store, name + ".branch_1x9", ConvSpec::same(q, q, 1, 9), rng);
  branch_[1] = Conv2d(store, name + ".branch_9x1", ConvSpec::same(q, q, 9, 1), rng);
  branch_[2] = Conv2d(store, name + ".branch_3x3", ConvSpec::same(q, q, 3, 3), rng);
  branch_[3] = Conv2d(store, name + ".branch_3x3_d2", ConvSpec::same(q, q, 3, 3, 2), rng);
  project_ = Conv2d(store, name + ".project", ConvSpec::square(channels, channels, 1), rng);
}

Var Miem::operator()(Tape& tape, const Var& x, ops::Mode mode) const {
  if (x.shape().c != channels_) {
    throw ShapeError("MIEM expects " + std::to_string(channels_) + " channels, got " +
                     x.shape().str());
  }
  Var standardized;
  {
    Tape::Scope s(tape, "standardize");
    standardized = standardize_(tape, x);
  }
  std::array<Var, 4> reduced;
  {
    Tape::Scope s(tape, "reduce");
    for (int i = 0; i < 4; ++i) {
      reduced[i] = ops::relu(tape, reduce_bn_[i](tape, reduce_[i](tape, standardized), mode));
    }
  }
  std::array<Var, 4> branches;
  {
    Tape::Scope s(tape, "branches");
    for (int i = 0; i < 4; ++i) branches[i] = branch_[i](tape, reduced[i]);
  }
  const Var f_hat = ops::concat_channels(tape, branches);
  Var f_bar;
  {
    Tape::Scope s(tape, "project");
    f_bar = project_(tape, f_hat);
  }
  return ops::add(tape, ops::add(tape, x, f_bar), f_hat);
}

// --------------------------------------------------------------------- FPN

namespace {

// Optional BN + ReLU; the identity when `bn` was never constructed.
Var maybe_norm(Tape& tape, bool norm, const BatchNorm2d& bn, const Var& x, ops::Mode mode) {
  return norm ? ops::relu(tape, bn(tape, x, mode)) : x;
}

}  // namespace

Fpn::Fpn(ParamStore& store, const std::array<int, 4>& in_channels, int level_width,
         int fused_width, bool bias, bool norm, Rng& rng)
    : norm_(norm) {
  const InitGain gain = norm ? InitGain::kRelu : InitGain::kLinear;
  for (int i = 0; i < 4; ++i) {
    const std::string l = std::to_string(i + 1);
    lateral_[i] = Conv2d(store, "fpn.lateral" + l,
                         ConvSpec::square(in_channels[i], level_width, 1, 1, 1, 0, bias), rng);
    smooth_[i] = Conv2d(store, "fpn.smooth" + l,
                        ConvSpec::square(level_width, level_width, 3, 1, 1, 1, bias), rng, gain);
    if (norm) smooth_bn_[i] = BatchNorm2d(store, "fpn.smooth" + l + ".bn", level_width);
  }
  fuse_ = Conv2d(store, "fpn.fuse",
                 ConvSpec::square(4 * level_width, fused_width, 1, 1, 1, 0, bias), rng, gain);
  if (norm) fuse_bn_ = BatchNorm2d(store, "fpn.fuse.bn", fused_width);
}

Var Fpn::operator()(Tape& tape, const std::array<Var, 4>& scales, ops::Mode mode) const {
  Tape::Scope scope(tape, "fpn");
  const Shape base = scales[0].shape();
  for (int i = 1; i < 4; ++i) {
    const Shape s = scales[i].shape();
    if (s.n != base.n || s.h * (1 << i) != base.h || s.w * (1 << i) != base.w) {
      throw ShapeError("FPN scale " + std::to_string(i + 1) + " has shape " + s.str() +
                       ", inconsistent with " + base.str());
    }
  }
  std::array<Var, 4> top;
  top[3] = lateral_[3](tape, scales[3]);
  for (int i = 2; i >= 0; --i) {
    top[i] = ops::add(tape, lateral_[i](tape, scales[i]),
                      ops::upsample_nearest(tape, top[i + 1], 2));
  }
  std::array<Var, 4> levels;
  for (int i = 0; i < 4; ++i) {
    Var s = maybe_norm(tape, norm_, smooth_bn_[i], smooth_[i](tape, top[i]), mode);
    levels[i] = i == 0 ? s : ops::upsample_nearest(tape, s, 1 << i);
  }
  return maybe_norm(tape, norm_, fuse_bn_, fuse_(tape, ops::concat_channels(tape, levels)), mode);
}

// ------------------------------------------------------------------- heads

CoarseHead::CoarseHead(ParamStore& store, int in_channels, int hidden, bool norm, Rng& rng)
    : norm_(norm) {
  conv1_ = Conv2d(store, "coarse_head.conv1", ConvSpec::square(in_channels, hidden, 3, 1, 1, 1),
                  rng, norm ? InitGain::kRelu : InitGain::kLinear);
  if (norm) bn_ = BatchNorm2d(store, "coarse_head.conv1.bn", hidden);
  conv2_ = Conv2d(store, "coarse_head.conv2", ConvSpec::square(hidden, 1, 3, 1, 1, 1), rng);
}

Var CoarseHead::operator()(Tape& tape, const Var& f_fuse, ops::Mode mode) const {
  Tape::Scope scope(tape, "coarse_head");
  const Var w1 = maybe_norm(tape, norm_, bn_, conv1_(tape, f_fuse), mode);
  return ops::sigmoid(tape, conv2_(tape, w1));
}

RefinedHead::RefinedHead(ParamStore& store, int in_channels, int hidden, bool norm, Rng& rng)
    : norm_(norm) {
  const InitGain gain = norm ? InitGain::kRelu : InitGain::kLinear;
  conv_ = Conv2d(store, "refined_head.conv", ConvSpec::square(in_channels, hidden, 3, 1, 1, 1),
                 rng, gain);
  if (norm) conv_bn_ = BatchNorm2d(store, "refined_head.conv.bn", hidden);
  up1_ = ConvTranspose2d(store, "refined_head.up1", ConvSpec::square(hidden, hidden, 2, 2), rng,
                         gain);
  if (norm) up1_bn_ = BatchNorm2d(store, "refined_head.up1.bn", hidden);
  up2_ = ConvTranspose2d(store, "refined_head.up2", ConvSpec::square(hidden, 1, 2, 2), rng);
}

Var RefinedHead::operator()(Tape& tape, const Var& f_c, ops::Mode mode) const {
  Tape::Scope scope(tape, "refined_head");
  const Var h = maybe_norm(tape, norm_, conv_bn_, conv_(tape, f_c), mode);
  const Var u = maybe_norm(tape, norm_, up1_bn_, up1_(tape, h), mode);
  return ops::sigmoid(tape, up2_(tape, u));
}

// ------------------------------------------------------------------- CPFSM

Cpfsm::Cpfsm(ParamStore& store, int channels, int width, Rng& rng) : channels_(channels) {
  if (channels < 4 || channels % 4 != 0) {
    throw ShapeError("CPFSM width must be a positive multiple of 4, got " +
                     std::to_string(channels));
  }
  for (int i = 0; i < 4; ++i) {
    const std::string g = std::to_string(i + 1);
    entry_[i] = Conv2d(store, "cpfsm.entry" + g, ConvSpec::square(channels / 4, width, 1), rng);
    dilated_[i] = Conv2d(store, "cpfsm.dilated" + g,
                         ConvSpec::square(width, width, 3, 1, i + 1, i + 1), rng);
  }
  merge_ = Conv2d(store, "cpfsm.merge", ConvSpec::square(4 * width, channels, 1), rng);
}

Var Cpfsm::operator()(Tape& tape, const Var& x, Trace* trace, int cut_after) const {
  if (x.shape().c != channels_) {
    throw ShapeError("CPFSM expects " + std::to_string(channels_) + " channels, got " +
                     x.shape().str());
  }
  Tape::Scope scope(tape, "cpfsm");
  const int q = channels_ / 4;
  std::array<Var, 4> h1, h2;
  for (int i = 0; i < 4; ++i) {
    h1[i] = entry_[i](tape, ops::slice_channels(tape, x, i * q, q));
    if (i > 0) {
      const Var prev = (i - 1 == cut_after) ? Var(Tensor(h2[i - 1].shape())) : h2[i - 1];
      h1[i] = ops::add(tape, h1[i], prev);
    }
    h2[i] = dilated_[i](tape, h1[i]);
  }
  if (trace) {
    trace->h1 = h1;
    trace->h2 = h2;
  }
  return merge_(tape, ops::concat_channels(tape, h2));
}

Var mapping_filter(Tape& tape, const Var& f_fuse, const Var& m_cs) {
  return ops::mul_channel_broadcast(tape, f_fuse, m_cs);
}

Var scm_calibrate(Tape& tape, const Var& f_fuse, const Var& f_fp, const Var& alpha) {
  if (!(f_fuse.shape() == f_fp.shape())) {
    throw ShapeError("calibration shapes differ: " + f_fuse.shape().str() + " vs " +
                     f_fp.shape().str());
  }
  return ops::add(tape, f_fuse, ops::mul_scalar_param(tape, f_fp, alpha));
}

// ------------------------------------------------------------------- model

StdModel::StdModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  const int c = cfg.base_channels;
  backbone_ = Backbone(store_, c, rng);
  for (int i = 0; i < 4; ++i) {
    miem_[i] = Miem(store_, "miem" + std::to_string(i + 1), c << i, rng);
  }
  fpn_ = Fpn(store_, {c, 2 * c, 4 * c, 8 * c}, cfg.fpn_width, cfg.fused_width, cfg.fpn_bias,
             cfg.norm_layers, rng);
  coarse_ = CoarseHead(store_, cfg.fused_width, cfg.head_width, cfg.norm_layers, rng);
  cpfsm_ = Cpfsm(store_, cfg.fused_width, cfg.cpfsm_width, rng);
  refined_ = RefinedHead(store_, cfg.fused_width, cfg.head_width, cfg.norm_layers, rng);
  alpha_ = store_.add("alpha", Tensor::scalar(-1.0), true, false);
}

ForwardResult StdModel::forward(Tape& tape, const Var& image, ops::Mode mode) const {
  ForwardResult r;
  r.scales = backbone_(tape, image, mode);
  for (int i = 0; i < 4; ++i) {
    Tape::Scope scope(tape, "miem" + std::to_string(i + 1));
    r.enhanced[i] = miem_[i](tape, r.scales[i], mode);
  }
  r.f_fuse = fpn_(tape, r.enhanced, mode);
  r.m_cs = coarse_(tape, r.f_fuse, mode);
  r.f_mf = mapping_filter(tape, r.f_fuse, r.m_cs);
  r.f_fp = cpfsm_(tape, r.f_mf);
  r.f_c = scm_calibrate(tape, r.f_fuse, r.f_fp, alpha_);
  r.m_rs = refined_(tape, r.f_c, mode);
  return r;
}

std::int64_t expected_param_count(const ModelConfig& cfg) {
  const auto conv = [](std::int64_t in, std::int64_t out, std::int64_t kh, std::int64_t kw,
                       bool bias) { return in * out * kh * kw + (bias ? out : 0); };
  const auto bn = [](std::int64_t ch) { return 4 * ch; };
  const std::int64_t c = cfg.base_channels;
  std::int64_t n = conv(3, c, 3, 3, false) + bn(c);
  std::int64_t in = c;
  for (int i = 0; i < 4; ++i) {
    const std::int64_t out = c << i;
    n += conv(in, out, 3, 3, false) + bn(out) + conv(out, out, 3, 3, false) + bn(out);
    in = out;
  }
  for (int i = 0; i < 4; ++i) {
    const std::int64_t w = c << i, q = w / 4;
    n += 2 * conv(w, w, 1, 1, true);
    n += 4 * (conv(w, q, 1, 1, false) + bn(q));
    n += conv(q, q, 1, 9, true) + conv(q, q, 9, 1, true) + 2 * conv(q, q, 3, 3, true);
  }
  const std::int64_t p = cfg.fpn_width, f = cfg.fused_width, h = cfg.head_width,
                     k = cfg.cpfsm_width;
  for (int i = 0; i < 4; ++i) {
    n += conv(c << i, p, 1, 1, cfg.fpn_bias) + conv(p, p, 3, 3, cfg.fpn_bias);
  }
  n += conv(4 * p, f, 1, 1, cfg.fpn_bias);
  if (cfg.norm_layers) n += 4 * bn(p) + bn(f) + bn(h) + 2 * bn(h);
  n += conv(f, h, 3, 3, true) + conv(h, 1, 3, 3, true);
  n += 4 * (conv(f / 4, k, 1, 1, true) + conv(k, k, 3, 3, true)) + conv(4 * k, f, 1, 1, true);
  n += conv(f, h, 3, 3, true) + conv(h, h, 2, 2, true) + conv(h, 1, 2, 2, true);
  return n + 1;
}

// ----------------------------------------------------------------- weights

namespace {

constexpr char kMagic[4] = {'S', 'P', 'T', 'W'};
constexpr std::uint8_t kDtypeF32 = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
    }
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  const std::uint8_t* take(std::size_t n) {
    if (n > buf.size() - pos) throw ValidationError("weights file truncated");
    const std::uint8_t* p = buf.data() + pos;
    pos += n;
    return p;
  }
  template <typename T>
  T le() {
    const std::uint8_t* p = take(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return static_cast<T>(v);
  }
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

Metadata parse_metadata(std::string_view text) {
  Metadata meta;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    const std::size_t eq = line.find('=');
    if (eq != std::string_view::npos) {
      meta.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    }
    start = end + 1;
  }
  return meta;
}

Metadata read_header(Reader& r) {
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw ValidationError("not a weights file");
  const auto version = r.le<std::uint32_t>();
  if (version != kWeightsVersion) {
    throw ValidationError("unsupported weights version " + std::to_string(version));
  }
  const auto len = r.le<std::uint32_t>();
  const std::uint8_t* p = r.take(len);
  return parse_metadata(std::string_view(reinterpret_cast<const char*>(p), len));
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ParamStore& store, const Metadata& meta) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kWeightsVersion);
  std::string text;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ValidationError("metadata entries may not contain '=' in keys or newlines");
    }
    text += k + "=" + v + "\n";
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& e : store.entries()) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le<std::uint8_t>(kDtypeF32);
    w.le<std::uint8_t>(4);
    const Shape s = e.var.shape();
    for (int d : {s.n, s.c, s.h, s.w}) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  }
  for (const auto& e : store.entries()) {
    for (double v : e.var.value().data()) {
      w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return std::move(w.out);
}

Metadata read_weights_metadata(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  return read_header(r);
}

Metadata deserialize_weights(const std::vector<std::uint8_t>& bytes, ParamStore& store) {
  Reader r(bytes);
  Metadata meta = read_header(r);
  const auto count = r.le<std::uint32_t>();
  auto& entries = store.entries();
  if (count != entries.size()) {
    throw ValidationError("weights file holds " + std::to_string(count) +
                          " tensors, model expects " + std::to_string(entries.size()));
  }
  for (const auto& e : entries) {
    const auto name_len = r.le<std::uint16_t>();
    const std::string name(reinterpret_cast<const char*>(r.take(name_len)), name_len);
    const auto dtype = r.le<std::uint8_t>();
    const auto rank = r.le<std::uint8_t>();
    if (dtype != kDtypeF32 || rank != 4) {
      throw ValidationError("tensor " + name + ": unsupported dtype or rank");
    }
    Shape s{};
    s.n = static_cast<int>(r.le<std::uint32_t>());
    s.c = static_cast<int>(r.le<std::uint32_t>());
    s.h = static_cast<int>(r.le<std::uint32_t>());
    s.w = static_cast<int>(r.le<std::uint32_t>());
    if (name != e.name || !(s == e.var.shape())) {
      throw ValidationError("weights mismatch: file has " + name + " " + s.str() +
                            ", model expects " + e.name + " " + e.var.shape().str());
    }
  }
  for (auto& e : entries) {
    for (double& v : e.var.mutable_value().data()) {
      v = static_cast<double>(std::bit_cast<float>(r.le<std::uint32_t>()));
    }
  }
  if (r.pos != bytes.size()) throw ValidationError("trailing bytes in weights file");
  return meta;
}

Metadata model_metadata(const ModelConfig& cfg) {
  return {{"model.base_channels", std::to_string(cfg.base_channels)},
          {"model.fpn_width", std::to_string(cfg.fpn_width)},
          {"model.fused_width", std::to_string(cfg.fused_width)},
          {"model.cpfsm_width", std::to_string(cfg.cpfsm_width)},
          {"model.head_width", std::to_string(cfg.head_width)},
          {"model.fpn_bias", cfg.fpn_bias ? "1" : "0"},
          {"model.norm_layers", cfg.norm_layers ? "1" : "0"},
          {"model.init_seed", std::to_string(cfg.init_seed)}};
}

ModelConfig model_config_from_metadata(const Metadata& meta) {
  const auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw ValidationError("weights metadata lacks " + key);
    return it->second;
  };
  const auto num = [&](const std::string& key) {
    const std::string& v = get(key);
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ValidationError("bad metadata value for " + key + ": " + v);
    }
    return out;
  };
  ModelConfig cfg;
  cfg.base_channels = static_cast<int>(num("model.base_channels"));
  cfg.fpn_width = static_cast<int>(num("model.fpn_width"));
  cfg.fused_width = static_cast<int>(num("model.fused_width"));
  cfg.cpfsm_width = static_cast<int>(num("model.cpfsm_width"));
  cfg.head_width = static_cast<int>(num("model.head_width"));
  cfg.fpn_bias = num("model.fpn_bias") != 0;
  cfg.norm_layers = num("model.norm_layers") != 0;
  cfg.init_seed = num("model.init_seed");
  return cfg;
}

void save_weights(const std::filesystem::path& path, const StdModel& model, Metadata extra) {
  Metadata meta = model_metadata(model.config());
  meta.merge(extra);  // model keys win on collision
  write_file_atomic(path, serialize_weights(model.params(), meta));
}

std::unique_ptr<StdModel> load_model(const std::filesystem::path& path, Metadata* meta_out) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  auto model = std::make_unique<StdModel>(model_config_from_metadata(read_weights_metadata(bytes)));
  Metadata meta = deserialize_weights(bytes, model->params());
  if (meta_out) *meta_out = std::move(meta);
  return model;
}

}  // namespace spotlight
