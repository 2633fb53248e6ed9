#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "plainusr/plainusr.hpp"
#include "png_io.hpp"

namespace plainusr::cli {
namespace {

using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when an input file is readable but unsuitable (wrong form etc.).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class M>
struct scalar_of;
template <class T>
struct scalar_of<PlainUSRModel<T>> {
  using type = T;
};
template <class M>
using scalar_t = typename scalar_of<std::remove_cvref_t<M>>::type;

struct ModelOptions {
  std::string variant = "U";
  std::vector<std::size_t> channels;
  std::size_t scale = 4;
  bool no_lia = false;
  bool conv_baseline = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--variant", variant, "Preset U, T, S, M, B or L")->capture_default_str();
    cmd->add_option("--channels", channels, "Explicit stage channels, e.g. 64,48,32 (overrides --variant)")
        ->delimiter(',');
    cmd->add_option("--scale", scale, "Upscaling factor (2, 3 or 4)")->capture_default_str();
    cmd->add_flag("--no-lia", no_lia, "Disable the attention module in every block");
    cmd->add_flag("--conv-baseline", conv_baseline, "Plain 3x3 convolutions instead of RepMBConv units");
  }

  ModelConfig config() const {
    ModelConfig cfg = ModelConfig::preset(channels.empty() ? variant : std::string("U"), scale);
    if (!channels.empty()) cfg.stage_channels = channels;
    cfg.lia.enabled = !no_lia;
    if (conv_baseline) cfg.block = BlockKind::conv;
    cfg.validate();
    return cfg;
  }
};

InitMode parse_init(const std::string& s) {
  if (s == "training") return InitMode::training;
  if (s == "random") return InitMode::random;
  if (s == "zeros") return InitMode::zeros;
  throw UsageError("unknown --init '" + s + "'");
}

const char* form_name(Form f) { return f == Form::fused ? "fused" : "training"; }

template <class T>
const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

AnyModel build_any(const ModelConfig& cfg, std::uint64_t seed, InitMode init, const std::string& dtype, bool fused) {
  auto finish = [&](auto m) -> AnyModel {
    if (fused && m.form == Form::training) return fuse_model(m);
    return m;
  };
  if (dtype == "f32") return finish(build_model<float>(cfg, seed, init));
  if (dtype == "f64") return finish(build_model<double>(cfg, seed, init));
  throw UsageError("unknown --dtype '" + dtype + "' (expected f32 or f64)");
}

template <class T>
std::size_t min_extent(const PlainUSRModel<T>& m) {
  std::size_t e = 1;
  for (const auto& b : m.blocks)
    if (b.lia) e = std::max(e, b.lia->min_input_extent());
  return e;
}

std::size_t reflect(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  const std::size_t m = i % period;
  return m < n ? m : period - m;
}

template <class T>
Tensor4<T> reflect_pad(const Tensor4<T>& x, std::size_t h, std::size_t w) {
  const Shape4 s = x.shape();
  Tensor4<T> out(Shape4{s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) out(n, c, y, xx) = x(n, c, reflect(y, s.h), reflect(xx, s.w));
  return out;
}

template <class T>
Tensor4<T> crop(const Tensor4<T>& x, std::size_t h, std::size_t w) {
  const Shape4 s = x.shape();
  Tensor4<T> out(Shape4{s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) out(n, c, y, xx) = x(n, c, y, xx);
  return out;
}

template <class To, class From>
Tensor4<To> cast_tensor(const Tensor4<From>& x) {
  Tensor4<To> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<To>(x[i]);
  return out;
}

// Inference on an image of any size: inputs smaller than the attention
// chain's minimum are reflect-padded and the output cropped back.
template <class T>
Tensor4<float> upscale(const PlainUSRModel<T>& m, const Tensor4<float>& img) {
  const Shape4 s = img.shape();
  const std::size_t need = min_extent(m);
  const std::size_t h = std::max(s.h, need), w = std::max(s.w, need);
  auto x = cast_tensor<T>(img);
  if (h != s.h || w != s.w) x = reflect_pad(x, h, w);
  auto y = forward_fused(m, x);
  const std::size_t r = m.config.scale;
  if (h != s.h || w != s.w) y = crop(y, s.h * r, s.w * r);
  return cast_tensor<float>(y);
}

struct VerifyResult {
  double block_fusion = 0;
  double schedules = 0;
  double end_to_end = 0;
  std::size_t units = 0;
};

template <class T>
VerifyResult verify_model(const PlainUSRModel<T>& m, std::size_t size, std::size_t samples, std::uint64_t seed) {
  VerifyResult r;
  Rng rng(seed);
  for (const auto& b : m.blocks)
    for (const auto& u : b.units) {
      const auto* rep = std::get_if<RepMBConvParams<T>>(&u);
      if (!rep) continue;
      ++r.units;
      const auto fused = fuse(*rep);
      for (std::size_t t = 0; t < samples; ++t) {
        auto x = random_tensor<T>(Shape4{1, b.width, size, size}, rng);
        r.block_fusion = std::max(r.block_fusion, double(max_abs_diff(forward_train(x, *rep), conv2d(x, fused))));
      }
    }
  const auto fused_model = fuse_model(m);
  for (std::size_t t = 0; t < samples; ++t) {
    auto x = random_tensor<T>(Shape4{1, m.config.in_channels, size, size}, rng);
    const auto train = forward_train(m, x);
    r.schedules = std::max(r.schedules, double(max_abs_diff(train, forward_indexed(m, x))));
    r.end_to_end = std::max(r.end_to_end, double(max_abs_diff(train, forward_fused(fused_model, x))));
  }
  return r;
}

json with_normative_flag(json j, const ModelConfig& cfg) {
  // With attention enabled the counts rest on a declared LIA geometry.
  j["non_normative"] = cfg.lia.enabled;
  return j;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PlainUSR super-resolution engine: build, fuse, verify and run models", "plainusr"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "plainusr 1.0");

  // build
  ModelOptions build_model_opts;
  std::string build_out, build_dtype = "f32", build_init = "training";
  std::uint64_t build_seed = 0;
  bool build_fused = false;
  auto* build = app.add_subcommand("build", "Write a randomly initialized checkpoint");
  build_model_opts.add_to(build);
  build->add_option("-o,--output", build_out, "Checkpoint to write")->required();
  build->add_option("--seed", build_seed, "Initialization seed")->capture_default_str();
  build->add_option("--dtype", build_dtype, "f32 or f64")->capture_default_str();
  build->add_option("--init", build_init, "training, random or zeros")->capture_default_str();
  build->add_flag("--fused", build_fused, "Store the fused form");

  // fuse
  std::string fuse_in, fuse_out;
  auto* fuse_cmd = app.add_subcommand("fuse", "Collapse a training checkpoint into its deployed form");
  fuse_cmd->add_option("-i,--input", fuse_in, "Training-form checkpoint")->required();
  fuse_cmd->add_option("-o,--output", fuse_out, "Fused checkpoint to write")->required();

  // infer
  std::string infer_model, infer_in, infer_out;
  int infer_threads = 1;
  auto* infer = app.add_subcommand("infer", "Upscale a PNG with a fused checkpoint");
  infer->add_option("-m,--model", infer_model, "Fused checkpoint")->required();
  infer->add_option("-i,--input", infer_in, "Input PNG")->required();
  infer->add_option("-o,--output", infer_out, "Output PNG")->required();
  infer->add_option("--threads", infer_threads, "Operator threads")->capture_default_str();

  // verify
  std::string verify_model_path;
  std::optional<double> verify_tol;
  std::size_t verify_size = 32, verify_samples = 2;
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Check training vs fused equivalence of a training checkpoint");
  verify->add_option("-m,--model", verify_model_path, "Training-form checkpoint")->required();
  verify->add_option("--tolerance", verify_tol, "Max abs error allowed (default 1e-4 f32, 1e-9 f64)");
  verify->add_option("--size", verify_size, "Side of the random test inputs")->capture_default_str();
  verify->add_option("--samples", verify_samples, "Random inputs per check")->capture_default_str();
  verify->add_option("--seed", verify_seed, "Seed for the random inputs")->capture_default_str();

  // profile
  ModelOptions prof_opts;
  std::string prof_model, prof_form = "fused";
  std::size_t prof_size = 256, prof_h = 0, prof_w = 0;
  auto* prof = app.add_subcommand("profile", "Params, MACs, activations and peak feature memory as JSON");
  prof_opts.add_to(prof);
  prof->add_option("-m,--model", prof_model, "Profile a checkpoint instead of a preset");
  prof->add_option("--form", prof_form, "training or fused (preset models only)")->capture_default_str();
  prof->add_option("--size", prof_size, "Square input side")->capture_default_str();
  prof->add_option("--height", prof_h, "Input height (overrides --size)");
  prof->add_option("--width", prof_w, "Input width (overrides --size)");

  // metrics
  std::string met_ref, met_test, met_mode = "both";
  std::size_t met_shave = 0;
  auto* met = app.add_subcommand("metrics", "PSNR and SSIM between two PNGs as JSON");
  met->add_option("-r,--reference", met_ref, "Reference PNG")->required();
  met->add_option("-t,--test", met_test, "PNG to score")->required();
  met->add_option("--mode", met_mode, "rgb, y or both")->capture_default_str();
  met->add_option("--shave", met_shave, "Border pixels excluded on every side")->capture_default_str();

  // bench
  ModelOptions bench_opts;
  std::string bench_model, bench_form = "both";
  std::size_t bench_size = 64, bench_warmup = 2, bench_iters = 10;
  int bench_threads = 1;
  std::uint64_t bench_seed = 0;
  auto* bench_cmd = app.add_subcommand("bench", "Wall-clock latency of training and fused forms as JSON");
  bench_opts.add_to(bench_cmd);
  bench_cmd->add_option("-m,--model", bench_model, "Training-form checkpoint instead of a preset");
  bench_cmd->add_option("--form", bench_form, "training, fused or both")->capture_default_str();
  bench_cmd->add_option("--size", bench_size, "Square input side")->capture_default_str();
  bench_cmd->add_option("--warmup", bench_warmup, "Untimed runs")->capture_default_str();
  bench_cmd->add_option("--iters", bench_iters, "Timed runs")->capture_default_str();
  bench_cmd->add_option("--threads", bench_threads, "Operator threads")->capture_default_str();
  bench_cmd->add_option("--seed", bench_seed, "Initialization seed for preset models")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e, out, err);
      return kOk;
    }
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kUsage;
  }

  try {
    if (*build) {
      const auto cfg = build_model_opts.config();
      auto any = build_any(cfg, build_seed, parse_init(build_init), build_dtype, build_fused);
      std::visit(
          [&](const auto& m) {
            save(m, build_out);
            out << json{{"output", build_out},
                        {"form", form_name(m.form)},
                        {"dtype", dtype_name<scalar_t<decltype(m)>>()},
                        {"params", parameter_count(m)}}
                       .dump()
                << "\n";
          },
          any);
      return kOk;
    }

    if (*fuse_cmd) {
      auto any = load_any(fuse_in);
      std::visit(
          [&](const auto& m) {
            if (m.form != Form::training) throw FormatError("'" + fuse_in + "' is already fused");
            const auto f = fuse_model(m);
            save(f, fuse_out);
            out << json{{"output", fuse_out},
                        {"params_training", parameter_count(m)},
                        {"params_fused", parameter_count(f)}}
                       .dump()
                << "\n";
          },
          any);
      return kOk;
    }

    if (*infer) {
      if (infer_threads < 1) throw UsageError("--threads must be at least 1");
      set_num_threads(infer_threads);
      auto any = load_any(infer_model);
      const auto img = read_png(infer_in);
      std::visit(
          [&](const auto& m) {
            if (m.form != Form::fused)
              throw FormatError("'" + infer_model + "' holds a training-form model; run 'plainusr fuse' first");
            if (m.config.in_channels != 3) throw FormatError("model does not take RGB input");
            const auto y = upscale(m, img);
            write_png(infer_out, y);
            out << json{{"output", infer_out},
                        {"input", {{"height", img.shape().h}, {"width", img.shape().w}}},
                        {"output_size", {{"height", y.shape().h}, {"width", y.shape().w}}}}
                       .dump()
                << "\n";
          },
          any);
      return kOk;
    }

    if (*verify) {
      if (verify_size == 0 || verify_samples == 0) throw UsageError("--size and --samples must be positive");
      auto any = load_any(verify_model_path);
      return std::visit(
          [&](const auto& m) -> int {
            using T = scalar_t<decltype(m)>;
            if (m.form != Form::training)
              throw FormatError("'" + verify_model_path + "' is fused; verify needs the training form");
            const std::size_t side = std::max(verify_size, min_extent(m));
            const double tol = verify_tol.value_or(std::is_same_v<T, float> ? 1e-4 : 1e-9);
            const auto r = verify_model(m, side, verify_samples, verify_seed);
            const bool pass = r.block_fusion <= tol && r.end_to_end <= tol && r.schedules == 0.0;
            out << json{{"dtype", dtype_name<T>()},
                        {"tolerance", tol},
                        {"input_size", side},
                        {"units_checked", r.units},
                        {"block_fusion_max_error", r.block_fusion},
                        {"schedule_max_difference", r.schedules},
                        {"end_to_end_max_error", r.end_to_end},
                        {"pass", pass}}
                       .dump(2)
                << "\n";
            if (!pass) err << "verification failed\n";
            return pass ? kOk : kVerifyFailed;
          },
          any);
    }

    if (*prof) {
      const std::size_t h = prof_h ? prof_h : prof_size, w = prof_w ? prof_w : prof_size;
      if (h == 0 || w == 0) throw UsageError("input size must be positive");
      if (prof_form != "fused" && prof_form != "training") throw UsageError("--form must be training or fused");
      AnyModel any = prof_model.empty()
                         ? build_any(prof_opts.config(), 0, InitMode::zeros, "f32", prof_form == "fused")
                         : load_any(prof_model);
      std::visit(
          [&](const auto& m) { out << with_normative_flag(profile(m, h, w).to_json(), m.config).dump(2) << "\n"; },
          any);
      return kOk;
    }

    if (*met) {
      if (met_mode != "rgb" && met_mode != "y" && met_mode != "both")
        throw UsageError("--mode must be rgb, y or both");
      auto a = read_png(met_ref), b = read_png(met_test);
      if (!(a.shape() == b.shape()))
        throw UsageError("images differ in size: " + a.shape().str() + " vs " + b.shape().str());
      if (met_shave > 0) {
        const Shape4 s = a.shape();
        if (2 * met_shave >= s.h || 2 * met_shave >= s.w) throw UsageError("--shave removes the whole image");
        auto shave = [&](const Tensor4<float>& x) {
          Tensor4<float> o(Shape4{1, 3, s.h - 2 * met_shave, s.w - 2 * met_shave});
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < o.shape().h; ++y)
              for (std::size_t xx = 0; xx < o.shape().w; ++xx) o(0, c, y, xx) = x(0, c, y + met_shave, xx + met_shave);
          return o;
        };
        a = shave(a);
        b = shave(b);
      }
      json j{{"schema_version", 1}, {"height", a.shape().h}, {"width", a.shape().w}};
      const bool ssim_ok = a.shape().h >= 11 && a.shape().w >= 11;
      auto add = [&](const char* tag, ColorMode mode) {
        j[std::string("psnr_") + tag] = psnr(a, b, mode);
        j[std::string("ssim_") + tag] = ssim_ok ? json(ssim(a, b, mode)) : json(nullptr);
      };
      if (met_mode != "y") add("rgb", ColorMode::rgb);
      if (met_mode != "rgb") add("y", ColorMode::y);
      out << j.dump(2) << "\n";
      return kOk;
    }

    if (*bench_cmd) {
      if (bench_iters == 0 || bench_size == 0) throw UsageError("--iters and --size must be positive");
      if (bench_threads < 1) throw UsageError("--threads must be at least 1");
      if (bench_form != "training" && bench_form != "fused" && bench_form != "both")
        throw UsageError("--form must be training, fused or both");
      AnyModel any = bench_model.empty()
                         ? build_any(bench_opts.config(), bench_seed, InitMode::training, "f32", false)
                         : load_any(bench_model);
      std::visit(
          [&](const auto& m) {
            json runs = json::array();
            const bool want_training = bench_form != "fused", want_fused = bench_form != "training";
            if (m.form == Form::fused && want_training)
              throw FormatError("a fused checkpoint cannot be benchmarked in training form");
            if (want_training) runs.push_back(bench(m, bench_size, bench_size, bench_warmup, bench_iters, bench_threads).to_json());
            if (want_fused) {
              const auto f = m.form == Form::fused ? m : fuse_model(m);
              runs.push_back(bench(f, bench_size, bench_size, bench_warmup, bench_iters, bench_threads).to_json());
            }
            out << json{{"schema_version", 1}, {"runs", runs}}.dump(2) << "\n";
          },
          any);
      return kOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << " [" << to_string(e.kind()) << "]\n";
    return kFileFormat;
  } catch (const ImageError& e) {
    err << "error: " << e.what() << "\n";
    return kFileFormat;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kFileFormat;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kFileFormat;
  }
  err << "error: no subcommand given\n";
  return kUsage;
}

}  // namespace plainusr::cli
