#include "spotlight/cli.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "spotlight/errors.hpp"
#include "spotlight/fileio.hpp"
#include "spotlight/labels.hpp"
#include "spotlight/oracles.hpp"

namespace spotlight::cli {
namespace fs = std::filesystem;

// ------------------------------------------------------------------ config

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on") return true;
  if (value == "0" || value == "false" || value == "off") return false;
  throw ValidationError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

std::array<double, 3> parse_triple(const std::string& key, const std::string& value) {
  std::array<double, 3> out{};
  std::stringstream ss(value);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3) break;
    out[static_cast<std::size_t>(i++)] = parse_number<double>(key, trim(part));
  }
  if (i != 3 || ss.rdbuf()->in_avail() > 0) {
    throw ValidationError("config key '" + key + "': expected three comma-separated numbers");
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& v)>;

template <typename T, typename Field>
Setter number(Field field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    field(c) = parse_number<T>(k, v);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.base_channels", number<int>([](RunConfig& c) -> int& { return c.model.base_channels; })},
      {"model.fpn_width", number<int>([](RunConfig& c) -> int& { return c.model.fpn_width; })},
      {"model.fused_width", number<int>([](RunConfig& c) -> int& { return c.model.fused_width; })},
      {"model.cpfsm_width", number<int>([](RunConfig& c) -> int& { return c.model.cpfsm_width; })},
      {"model.head_width", number<int>([](RunConfig& c) -> int& { return c.model.head_width; })},
      {"model.init_seed",
       number<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.model.init_seed; })},
      {"model.fpn_bias", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.fpn_bias = parse_bool(k, v);
       }},
      {"model.norm_layers", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.norm_layers = parse_bool(k, v);
       }},
      {"model.gamma", number<double>([](RunConfig& c) -> double& { return c.gamma; })},
      {"model.beta", number<double>([](RunConfig& c) -> double& { return c.detect.beta; })},
      {"model.threshold", number<double>([](RunConfig& c) -> double& { return c.detect.threshold; })},
      {"model.min_area", number<int>([](RunConfig& c) -> int& { return c.detect.min_area; })},
      {"model.simplify_epsilon",
       number<double>([](RunConfig& c) -> double& { return c.detect.simplify_epsilon; })},
      {"loss.lambda1", number<double>([](RunConfig& c) -> double& { return c.loss.lambda1; })},
      {"loss.lambda2", number<double>([](RunConfig& c) -> double& { return c.loss.lambda2; })},
      {"loss.ohem_ratio", number<double>([](RunConfig& c) -> double& { return c.loss.ohem_ratio; })},
      {"loss.coarse", [](RunConfig& c, const std::string&, const std::string& v) {
         c.loss.coarse = parse_loss_kind(v);
       }},
      {"loss.refined", [](RunConfig& c, const std::string&, const std::string& v) {
         c.loss.refined = parse_loss_kind(v);
       }},
      {"train.base_lr", number<double>([](RunConfig& c) -> double& { return c.train.base_lr; })},
      {"train.momentum", number<double>([](RunConfig& c) -> double& { return c.train.momentum; })},
      {"train.weight_decay",
       number<double>([](RunConfig& c) -> double& { return c.train.weight_decay; })},
      {"train.poly_power", number<double>([](RunConfig& c) -> double& { return c.train.poly_power; })},
      {"train.epochs", number<int>([](RunConfig& c) -> int& { return c.train.epochs; })},
      {"train.batch_size", number<int>([](RunConfig& c) -> int& { return c.train.batch_size; })},
      {"train.seed", number<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.train.seed; })},
      {"train.input_size", number<int>([](RunConfig& c) -> int& { return c.train.input_size; })},
      {"train.checkpoint_every",
       number<int>([](RunConfig& c) -> int& { return c.train.checkpoint_every; })},
      {"train.flip", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.flip = parse_bool(k, v);
       }},
      {"io.short_side", number<int>([](RunConfig& c) -> int& { return c.short_side; })},
      {"io.mean", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.norm.mean = parse_triple(k, v);
       }},
      {"io.std", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.norm.std = parse_triple(k, v);
       }},
      {"io.synthetic_seed",
       number<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.synthetic_seed; })},
      {"io.synthetic_count", number<int>([](RunConfig& c) -> int& { return c.synthetic_count; })},
      {"io.synthetic_size", number<int>([](RunConfig& c) -> int& { return c.synthetic_size; })},
      {"io.synthetic_instances",
       number<int>([](RunConfig& c) -> int& { return c.synthetic_instances; })},
  };
  return table;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ValidationError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
  cfg.train.gamma = cfg.gamma;
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    apply_setting(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

RunConfig load_config(const fs::path& path) {
  RunConfig cfg;
  apply_config_text(cfg, read_file_text(path));
  return cfg;
}

std::string format_config(const RunConfig& c) {
  const auto triple = [](const std::array<double, 3>& a) {
    return num(a[0]) + "," + num(a[1]) + "," + num(a[2]);
  };
  std::string out;
  const auto put = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  for (const auto& [k, v] : model_metadata(c.model)) put(k, v);
  put("model.gamma", num(c.gamma));
  put("model.beta", num(c.detect.beta));
  put("model.threshold", num(c.detect.threshold));
  put("model.min_area", std::to_string(c.detect.min_area));
  put("model.simplify_epsilon", num(c.detect.simplify_epsilon));
  put("loss.lambda1", num(c.loss.lambda1));
  put("loss.lambda2", num(c.loss.lambda2));
  put("loss.coarse", loss_kind_name(c.loss.coarse));
  put("loss.refined", loss_kind_name(c.loss.refined));
  put("loss.ohem_ratio", num(c.loss.ohem_ratio));
  put("train.base_lr", num(c.train.base_lr));
  put("train.momentum", num(c.train.momentum));
  put("train.weight_decay", num(c.train.weight_decay));
  put("train.poly_power", num(c.train.poly_power));
  put("train.epochs", std::to_string(c.train.epochs));
  put("train.batch_size", std::to_string(c.train.batch_size));
  put("train.seed", std::to_string(c.train.seed));
  put("train.input_size", std::to_string(c.train.input_size));
  put("train.checkpoint_every", std::to_string(c.train.checkpoint_every));
  put("train.flip", c.train.flip ? "1" : "0");
  put("io.short_side", std::to_string(c.short_side));
  put("io.mean", triple(c.norm.mean));
  put("io.std", triple(c.norm.std));
  put("io.synthetic_seed", std::to_string(c.synthetic_seed));
  put("io.synthetic_count", std::to_string(c.synthetic_count));
  put("io.synthetic_size", std::to_string(c.synthetic_size));
  put("io.synthetic_instances", std::to_string(c.synthetic_instances));
  return out;
}

// ---------------------------------------------------------------- commands

namespace {

bool is_image(const fs::path& p) { return p.extension() == ".ppm" || p.extension() == ".pgm"; }

std::vector<fs::path> list_files(const fs::path& dir, const std::function<bool(const fs::path&)>& keep) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && keep(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

int cmd_labelgen(const RunConfig& cfg, const LabelgenOptions& opts, std::ostream& log) {
  const auto images = list_files(opts.images, is_image);
  ensure_dir(opts.out);
  int failures = 0, worst = kExitOk;
  int instances = 0, ignored = 0, collapsed = 0, written = 0;
  std::string summary = "image,instances,ignored,collapsed\n";
  for (const fs::path& img_path : images) {
    const std::string stem = img_path.stem().string();
    try {
      const Image img = read_image(img_path);
      const auto anns = read_annotation_file(opts.annotations / (stem + ".txt"));
      const KernelLabel label = make_kernel_label(anns, cfg.gamma, img.height, img.width);
      write_image(mask_to_image(label.kernel), opts.out / (stem + ".pgm"));
      const int care = static_cast<int>(anns.size()) - label.ignored;
      instances += care;
      ignored += label.ignored;
      collapsed += label.collapsed_count();
      ++written;
      summary += stem + "," + std::to_string(care) + "," + std::to_string(label.ignored) + "," +
                 std::to_string(label.collapsed_count()) + "\n";
    } catch (const IoError& e) {
      ++failures;
      worst = kExitIo;
      log << "error: " << stem << ": " << e.what() << "\n";
    } catch (const std::exception& e) {
      ++failures;
      if (worst == kExitOk) worst = kExitValidation;
      log << "error: " << stem << ": " << e.what() << "\n";
    }
  }
  summary += "total," + std::to_string(instances) + "," + std::to_string(ignored) + "," +
             std::to_string(collapsed) + "\n";
  write_file_atomic(opts.out / "summary.csv", summary);
  log << "masks: " << written << "\ninstances: " << instances << "\nignored: " << ignored
      << "\ncollapsed: " << collapsed << "\nfailed: " << failures << "\n";
  return worst;
}

int cmd_train(const RunConfig& cfg, const TrainOptions& opts, std::ostream& log) {
  if (opts.out.empty()) throw ValidationError("train needs an output checkpoint path");
  std::vector<Sample> data;
  if (opts.synthetic) {
    data = synth_dataset(cfg.synthetic_seed, cfg.synthetic_count, cfg.synthetic_size,
                         cfg.synthetic_instances);
  } else {
    if (opts.data.empty()) throw ValidationError("train needs --data DIR or --synthetic");
    data = load_dataset(opts.data);
  }
  if (!opts.dump_data.empty()) {
    ensure_dir(opts.dump_data);
    write_dataset(data, opts.dump_data);
  }
  StdModel model(cfg.model);
  TrainConfig tc = cfg.train;
  tc.gamma = cfg.gamma;
  log << "training on " << data.size() << " images, "
      << tc.epochs * steps_per_epoch(data.size(), tc) << " steps\n";
  const int every = opts.log_every;
  const TrainResult result = train(model, data, tc, cfg.loss, opts.out, [&](const StepRecord& r) {
    if (every > 0 && (r.step % every == 0)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "step %d lr %.6f loss %.6f (coarse %.6f refined %.6f) alpha %.6f\n",
                    r.step, r.lr, r.total, r.coarse, r.refined, r.alpha);
      log << buf << std::flush;
    }
  });
  const fs::path curve = opts.loss_curve.empty() ? fs::path(opts.out.string() + ".loss.csv")
                                                 : opts.loss_curve;
  write_file_atomic(curve, format_loss_curve(result.history));
  if (result.diverged) {
    log << "error: " << result.message << "; last good parameters saved to " << opts.out.string()
        << "\n";
    return kExitValidation;
  }
  log << "steps: " << result.steps << "\nalpha: " << num(model.alpha().value()[0])
      << "\ncheckpoint: " << opts.out.string() << "\n";
  return kExitOk;
}

int cmd_infer(const RunConfig& cfg, const InferOptions& opts, std::ostream& log) {
  const auto model = load_model(opts.checkpoint);
  std::vector<fs::path> images;
  if (fs::is_directory(opts.images)) {
    images = list_files(opts.images, is_image);
  } else {
    images.push_back(opts.images);
  }
  ensure_dir(opts.out);
  const ResizeSpec spec =
      cfg.short_side > 0 ? ResizeSpec::shorter_side(cfg.short_side) : ResizeSpec::native();
  for (const fs::path& path : images) {
    const Image img = read_image(path);
    const PreparedImage prep = to_tensor(img, spec, cfg.norm);
    Tape tape(false);
    const ForwardResult fr = model->forward(tape, Var(prep.tensor), ops::Mode::kEval);
    std::vector<Detection> dets = detect(fr.m_rs.value(), cfg.detect);
    for (Detection& d : dets) d.polygon = prep.map.to_original(d.polygon);
    const std::string stem = path.stem().string();
    write_file_atomic(opts.out / (stem + ".txt"), format_detections(dets));
    if (opts.overlay) {
      std::vector<Polygon> polys;
      for (const Detection& d : dets) polys.push_back(d.polygon);
      Image canvas = img;
      if (canvas.channels == 1) {
        Image rgb(img.width, img.height, 3);
        for (std::size_t i = 0; i < img.data.size(); ++i) {
          for (int c = 0; c < 3; ++c) rgb.data[i * 3 + c] = img.data[i];
        }
        canvas = std::move(rgb);
      }
      write_image(draw_overlay(canvas, polys), opts.out / (stem + "_overlay.ppm"));
    }
    log << stem << ": " << dets.size() << " detections, network input " << prep.map.net_width
        << "x" << prep.map.net_height << "\n";
  }
  return kExitOk;
}

int cmd_eval(const EvalOptions& opts, std::ostream& log, EvalReport* report_out) {
  if (!(opts.iou > 0.0 && opts.iou < 1.0)) throw ValidationError("--iou must lie in (0, 1)");
  const auto is_txt = [](const fs::path& p) { return p.extension() == ".txt"; };
  std::map<std::string, fs::path> dets, gts;
  for (const auto& p : list_files(opts.det, is_txt)) dets[p.stem().string()] = p;
  for (const auto& p : list_files(opts.gt, is_txt)) gts[p.stem().string()] = p;
  std::vector<std::string> unmatched;
  for (const auto& [k, _] : dets) {
    if (!gts.contains(k)) unmatched.push_back("detections without ground truth: " + k);
  }
  for (const auto& [k, _] : gts) {
    if (!dets.contains(k)) unmatched.push_back("ground truth without detections: " + k);
  }
  if (!unmatched.empty()) {
    for (const auto& u : unmatched) log << "error: " << u << "\n";
    return kExitValidation;
  }
  EvalReport report;
  for (const auto& [name, gt_path] : gts) {
    std::vector<Polygon> care, dont_care;
    for (const Annotation& a : read_annotation_file(gt_path)) {
      (a.dont_care ? dont_care : care).push_back(a.polygon);
    }
    std::vector<Polygon> det_polys;
    for (const Detection& d : parse_detections(read_file_text(dets.at(name)))) {
      det_polys.push_back(d.polygon);
    }
    ImageEval e = match_detections(det_polys, care, dont_care, opts.iou);
    e.name = name;
    report.add(std::move(e));
  }
  const std::string text = format_report_text(report);
  if (!opts.out.empty()) {
    ensure_dir(opts.out);
    write_file_atomic(opts.out / "report.txt", text);
    write_file_atomic(opts.out / "report.json", format_report_json(report));
  }
  log << text;
  if (report_out) *report_out = std::move(report);
  return kExitOk;
}

int cmd_bench(const RunConfig& cfg, const BenchOptions& opts, std::ostream& log) {
  if (opts.height <= 0 || opts.width <= 0 || opts.height % 32 || opts.width % 32) {
    throw ValidationError("bench size must be positive multiples of 32");
  }
  std::unique_ptr<StdModel> model =
      opts.checkpoint.empty() ? std::make_unique<StdModel>(cfg.model) : load_model(opts.checkpoint);
  const auto costs = count_flops_params(*model, opts.height, opts.width);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-28s %16s %12s\n", "block", "MACs", "params");
  log << buf;
  for (const auto& [name, c] : costs) {
    std::snprintf(buf, sizeof(buf), "%-28s %16lld %12lld\n", name.c_str(),
                  static_cast<long long>(c.macs), static_cast<long long>(c.params));
    log << buf;
  }
  const std::vector<Tensor> inputs = {Tensor({1, 3, opts.height, opts.width}, 0.1)};
  const Timing t = timing_harness(*model, inputs, opts.warmup, opts.iters, cfg.detect);
  std::snprintf(buf, sizeof(buf), "input %dx%d: mean %.1f ms, %.3f fps over %d runs\n", opts.width,
                opts.height, t.mean_ms, t.fps, opts.iters);
  log << buf;
  return kExitOk;
}

int cmd_verify(std::ostream& log) {
  bool ok = true;
  char buf[256];
  for (const oracles::CheckResult& r : oracles::verify_suite()) {
    ok = ok && r.passed;
    std::snprintf(buf, sizeof(buf), "%-4s %-38s %6.1fs  %s\n", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.seconds, r.detail.c_str());
    log << buf << std::flush;
  }
  log << (ok ? "all checks passed\n" : "some checks FAILED\n");
  return ok ? kExitOk : kExitValidation;
}

int run_guarded(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    // ValidationError, ShapeError, GeometryError and friends.
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace spotlight::cli
