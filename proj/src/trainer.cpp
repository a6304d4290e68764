#include "spotlight/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "spotlight/fileio.hpp"

namespace spotlight {

double poly_lr(int step, int total, const TrainConfig& cfg) {
  if (total <= 0) throw ValidationError("poly schedule needs a positive step total");
  if (step < 0 || step > total) throw ValidationError("poly schedule step out of range");
  return cfg.base_lr * std::pow(1.0 - static_cast<double>(step) / total, cfg.poly_power);
}

void sgd_step(ParamStore& store, SgdState& state, double lr, const TrainConfig& cfg) {
  auto& entries = store.entries();
  for (const auto& e : entries) {
    if (!e.trainable || !e.var.has_grad()) continue;
    if (!e.var.grad().all_finite()) {
      throw NonFiniteGradientError("non-finite gradient in " + e.name);
    }
  }
  state.velocity.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (!e.trainable) continue;
    Tensor& p = e.var.mutable_value();
    Tensor& v = state.velocity[i];
    if (v.size() != p.size()) v = Tensor(p.shape());
    const double decay = e.weight_decay ? cfg.weight_decay : 0.0;
    const bool has_grad = e.var.has_grad();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = has_grad ? e.var.grad()[k] : 0.0;
      v[k] = cfg.momentum * v[k] + g + decay * p[k];
      p[k] -= lr * v[k];
    }
  }
}

// ---------------------------------------------------------------- dataset

namespace {

struct Rgb {
  double r, g, b;
};

Polygon rounded_rectangle(double x0, double y0, double x1, double y1, double radius) {
  Polygon p;
  constexpr int kArcSegments = 5;
  const std::array<Point, 4> centres{Point{x1 - radius, y0 + radius}, Point{x1 - radius, y1 - radius},
                                     Point{x0 + radius, y1 - radius}, Point{x0 + radius, y0 + radius}};
  // Corners visited clockwise in image coordinates starting at top-right.
  for (int corner = 0; corner < 4; ++corner) {
    const double start = -std::numbers::pi / 2 + corner * std::numbers::pi / 2;
    for (int s = 0; s <= kArcSegments; ++s) {
      const double a = start + (std::numbers::pi / 2) * s / kArcSegments;
      p.vertices.push_back({centres[corner].x + radius * std::cos(a),
                            centres[corner].y + radius * std::sin(a)});
    }
  }
  return p;
}

bool separated(const std::array<double, 4>& a, const std::array<double, 4>& b, double gap) {
  return a[2] + gap <= b[0] || b[2] + gap <= a[0] || a[3] + gap <= b[1] || b[3] + gap <= a[1];
}

}  // namespace

std::vector<Sample> synth_dataset(std::uint64_t seed, int count, int size,
                                  int instances_per_image) {
  if (size < 64 || size % 32 != 0) {
    throw ValidationError("synthetic image size must be a multiple of 32, at least 64");
  }
  if (count < 0 || instances_per_image < 0) throw ValidationError("negative dataset size");
  std::mt19937_64 rng(seed);
  const auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  constexpr double kBorder = 8.0, kGap = 12.0;
  std::vector<Sample> out;
  for (int n = 0; n < count; ++n) {
    Sample s;
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", n);
    s.name = name;

    std::vector<std::array<double, 4>> boxes;
    int attempts = 0;
    while (static_cast<int>(boxes.size()) < instances_per_image) {
      if (++attempts > 20000) {
        throw ValidationError("cannot place " + std::to_string(instances_per_image) +
                              " instances in a " + std::to_string(size) + " px image");
      }
      // Early boxes can leave no room for the rest; start the layout over.
      if (attempts % 500 == 0) boxes.clear();
      const double h = std::round(uni(24.0, std::min(48.0, size / 3.0)));
      const double w = std::round(std::min(h * uni(1.0, 3.0), size - 2 * kBorder));
      const double x0 = std::round(uni(kBorder, size - kBorder - w));
      const double y0 = std::round(uni(kBorder, size - kBorder - h));
      const std::array<double, 4> box{x0, y0, x0 + w, y0 + h};
      if (std::all_of(boxes.begin(), boxes.end(),
                      [&](const auto& b) { return separated(box, b, kGap); })) {
        boxes.push_back(box);
      }
    }

    const Rgb base{uni(40, 215), uni(40, 215), uni(40, 215)};
    const double lum = (base.r + base.g + base.b) / 3;
    const double shift = lum < 128 ? uni(80, 110) : -uni(80, 110);
    const Rgb fg{base.r + shift, base.g + shift, base.b + shift};
    const double fx = uni(0.02, 0.15), fy = uni(0.02, 0.15);
    const double px = uni(0, 6.3), py = uni(0, 6.3);

    std::vector<Polygon> shapes;
    for (const auto& b : boxes) {
      Polygon poly = rng() % 2 == 0
                         ? Polygon::rectangle(b[0], b[1], b[2], b[3])
                         : rounded_rectangle(b[0], b[1], b[2], b[3],
                                             uni(0.25, 0.5) * (b[3] - b[1]));
      s.annotations.push_back({poly, false});
      shapes.push_back(std::move(poly));
    }
    const BinaryMask fill = rasterize(shapes, size, size);

    s.image = Image(size, size, 3);
    const auto clamp8 = [](double v) {
      return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    };
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const bool text = fill.at(y, x) != 0;
        const Rgb& c = text ? fg : base;
        const double texture = text ? 0.0 : 14.0 * std::sin(fx * x + px) * std::cos(fy * y + py);
        const double noise = uni(-8.0, 8.0);
        s.image.at(x, y, 0) = clamp8(c.r + texture + noise);
        s.image.at(x, y, 1) = clamp8(c.g + texture + noise);
        s.image.at(x, y, 2) = clamp8(c.b + texture + noise);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) images.push_back(entry.path());
  }
  std::sort(images.begin(), images.end());
  std::vector<Sample> out;
  for (const auto& p : images) {
    Sample s;
    s.name = p.stem().string();
    s.image = read_image(p);
    fs::path ann = p;
    ann.replace_extension(".txt");
    s.annotations = read_annotation_file(ann);
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(std::span<const Sample> samples, const std::filesystem::path& dir) {
  for (const Sample& s : samples) {
    write_image(s.image, dir / (s.name + (s.image.channels == 1 ? ".pgm" : ".ppm")));
    std::string text;
    for (const Annotation& a : s.annotations) text += format_annotation(a) + "\n";
    write_file_atomic(dir / (s.name + ".txt"), text);
  }
}

TrainingItem prepare_item(const Sample& sample, const TrainConfig& cfg,
                          const Normalization& norm) {
  const ResizeSpec spec = cfg.input_size > 0 ? ResizeSpec::exact(cfg.input_size, cfg.input_size)
                                             : ResizeSpec::native();
  PreparedImage prepared = to_tensor(sample.image, spec, norm);
  std::vector<Annotation> mapped;
  for (const Annotation& a : sample.annotations) {
    mapped.push_back({prepared.map.to_network(a.polygon), a.dont_care});
  }
  const int h = prepared.map.net_height, w = prepared.map.net_width;
  const KernelLabel label = make_kernel_label(mapped, cfg.gamma, h, w);
  TrainingItem item;
  item.image = std::move(prepared.tensor);
  item.target = Tensor({1, 1, h, w});
  item.ignore = Tensor({1, 1, h, w});
  for (std::size_t i = 0; i < label.kernel.pixels.size(); ++i) {
    item.target[i] = label.kernel.pixels[i] ? 1.0 : 0.0;
    item.ignore[i] = label.ignore.pixels[i] ? 1.0 : 0.0;
  }
  return item;
}

// ------------------------------------------------------------------ loop

namespace {

Tensor flip_horizontal(const Tensor& t) {
  const Shape s = t.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, y, s.w - 1 - x);
      }
    }
  }
  return out;
}

Tensor stack(const std::vector<const Tensor*>& parts) {
  const Shape one = parts.front()->shape();
  for (const Tensor* p : parts) {
    if (!(p->shape() == one)) {
      throw ValidationError("batch members differ in size: " + one.str() + " vs " +
                            p->shape().str());
    }
  }
  Tensor out({static_cast<int>(parts.size()) * one.n, one.c, one.h, one.w});
  std::size_t offset = 0;
  for (const Tensor* p : parts) {
    std::copy(p->data().begin(), p->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p->size();
  }
  return out;
}

std::vector<Tensor> snapshot(const ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto& e : store.entries()) out.push_back(e.var.value());
  return out;
}

void restore(ParamStore& store, const std::vector<Tensor>& saved) {
  auto& es = store.entries();
  for (std::size_t i = 0; i < es.size(); ++i) es[i].var.mutable_value() = saved[i];
}

}  // namespace

int steps_per_epoch(std::size_t samples, const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw ValidationError("train.batch_size must be positive");
  return static_cast<int>((samples + cfg.batch_size - 1) / cfg.batch_size);
}

TrainResult train(StdModel& model, std::span<const Sample> data, const TrainConfig& cfg,
                  const LossConfig& loss_cfg, const std::filesystem::path& checkpoint,
                  const StepCallback& on_step) {
  if (cfg.epochs < 0) throw ValidationError("train.epochs must be non-negative");
  const int per_epoch = steps_per_epoch(data.size(), cfg);
  if (data.empty() && cfg.epochs > 0) throw ValidationError("training set is empty");
  const int total = cfg.epochs * per_epoch;

  std::vector<TrainingItem> items;
  items.reserve(data.size());
  for (const Sample& s : data) items.push_back(prepare_item(s, cfg));

  TrainResult result;
  std::mt19937_64 rng(cfg.seed);
  SgdState sgd;
  ParamStore& store = model.params();
  const auto save = [&] {
    if (!checkpoint.empty()) save_weights(checkpoint, model, train_metadata(cfg, loss_cfg, result));
  };

  std::vector<std::size_t> order(items.size());
  for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int b = 0; b < per_epoch && !result.diverged; ++b) {
      std::vector<Tensor> images, targets, ignores;
      const std::size_t begin = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      for (std::size_t k = begin; k < end; ++k) {
        const TrainingItem& it = items[order[k]];
        const bool flip = cfg.flip && (rng() & 1u);
        images.push_back(flip ? flip_horizontal(it.image) : it.image);
        targets.push_back(flip ? flip_horizontal(it.target) : it.target);
        ignores.push_back(flip ? flip_horizontal(it.ignore) : it.ignore);
      }
      const auto ptrs = [](const std::vector<Tensor>& v) {
        std::vector<const Tensor*> out;
        for (const Tensor& t : v) out.push_back(&t);
        return out;
      };
      const Tensor image = stack(ptrs(images));
      const Tensor target = stack(ptrs(targets));
      const Tensor ignore = stack(ptrs(ignores));

      const int step = result.steps;
      const double lr = poly_lr(step, total, cfg);
      const std::vector<Tensor> last_good = snapshot(store);
      store.zero_grad();
      Tape tape(true);
      const ForwardResult fr = model.forward(tape, Var(image), ops::Mode::kTrain);
      const LossBreakdown loss = total_loss(tape, fr.m_cs, fr.m_rs, target, ignore, loss_cfg);
      const double value = loss.total.value()[0];
      try {
        if (!std::isfinite(value)) throw NonFiniteGradientError("non-finite loss");
        tape.backward(loss.total);
        sgd_step(store, sgd, lr, cfg);
      } catch (const NonFiniteGradientError& err) {
        restore(store, last_good);
        result.diverged = true;
        result.message = "diverged at step " + std::to_string(step) + ": " + err.what();
        break;
      }
      StepRecord rec{step, lr, value, loss.coarse, loss.refined, model.alpha().value()[0]};
      result.history.push_back(rec);
      result.steps = step + 1;
      if (on_step) on_step(rec);
      if (cfg.checkpoint_every > 0 && result.steps % cfg.checkpoint_every == 0 &&
          result.steps < total) {
        save();
      }
    }
  }
  save();
  return result;
}

Metadata train_metadata(const TrainConfig& cfg, const LossConfig& loss_cfg,
                        const TrainResult& result) {
  const auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  Metadata m{
      {"train.base_lr", num(cfg.base_lr)},
      {"train.momentum", num(cfg.momentum)},
      {"train.weight_decay", num(cfg.weight_decay)},
      {"train.poly_power", num(cfg.poly_power)},
      {"train.epochs", std::to_string(cfg.epochs)},
      {"train.batch_size", std::to_string(cfg.batch_size)},
      {"train.seed", std::to_string(cfg.seed)},
      {"train.flip", cfg.flip ? "1" : "0"},
      {"train.gamma", num(cfg.gamma)},
      {"train.input_size", std::to_string(cfg.input_size)},
      {"train.step", std::to_string(result.steps)},
      {"train.diverged", result.diverged ? "1" : "0"},
      {"loss.lambda1", num(loss_cfg.lambda1)},
      {"loss.lambda2", num(loss_cfg.lambda2)},
      {"loss.coarse", loss_kind_name(loss_cfg.coarse)},
      {"loss.refined", loss_kind_name(loss_cfg.refined)},
      {"loss.ohem_ratio", num(loss_cfg.ohem_ratio)},
  };
  std::string history;
  for (const StepRecord& r : result.history) {
    if (!history.empty()) history += ' ';
    history += num(r.total);
  }
  m["train.loss_history"] = history;
  return m;
}

std::string format_loss_curve(std::span<const StepRecord> history) {
  std::string out = "step,lr,total,coarse,refined,alpha\n";
  char buf[256];
  for (const StepRecord& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.step, r.lr, r.total,
                  r.coarse, r.refined, r.alpha);
    out += buf;
  }
  return out;
}

}  // namespace spotlight
