#pragma once

// JSON run configuration shared by the command-line tool and the tests.
// Unknown keys and wrong types are ConfigError.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aode/architecture.hpp"
#include "aode/binary_io.hpp"
#include "aode/control.hpp"
#include "aode/data_io.hpp"
#include "aode/errors.hpp"
#include "aode/trainer.hpp"

namespace aode {

using Json = nlohmann::json;

struct ArchitectureConfig {
  ScheduleKind kind = ScheduleKind::autoencoder;
  std::vector<Phase> encoder;
  std::size_t bottleneck_layers = 0;
  std::vector<Phase> decoder;
  // plain
  std::size_t dim = 0;
  // unet
  std::vector<std::size_t> widths;
  std::vector<std::size_t> layers;
  std::string activation = "tanh";
  double alpha = 0.1;
  double sharpness = 10.0;
};

struct DataConfig {
  std::size_t n = 0;
  std::optional<std::uint64_t> seed;
  double x_lo = -1.0;
  double x_hi = 1.0;
  std::string images;
  std::string labels;
  std::optional<std::size_t> limit;
  // "raster" keeps the file's pixel order; "variance" sorts pixels by
  // decreasing variance so the slots that persist into the bottleneck carry
  // the most informative pixels.
  std::string pixel_order = "raster";
};

struct DiagnosticsConfig {
  // Negative: 5th-percentile pairwise distance at the input layer.
  double epsilon = -1.0;
  std::size_t centers = 10;
  std::uint64_t center_seed = 0;
  double zero_tol = 1e-6;
  double grad_h = 1e-3;
  double grad_tol = 1e-6;
  std::size_t grad_max_coords = 2000;
  std::size_t grad_particles = 64;
  std::string hessian_probe = "dense_fd";
  double hessian_tol = 1e-10;
  std::size_t hessian_every = 0;
  std::size_t w1_particles = 512;
};

struct RunConfig {
  std::string task = "classify2d";
  std::uint64_t seed = 0;
  DataConfig data;
  ArchitectureConfig arch;
  double T = 1.0;
  double dt = 0.1;
  TrainerConfig trainer;
  DiagnosticsConfig diagnostics;
  // Directory that relative data paths are resolved against.
  std::string base_dir = ".";

  bool classification() const { return task == "classify2d"; }
};

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }
  // Rejects keys that were never asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path_ + "." + it.key() + "'");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const Json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string where(const std::string& key) const { return path_ + "." + key; }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
    return v.get<double>();
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw ConfigError(where(key) + " must be a non-negative integer");
    return v.get<std::uint64_t>();
  }
  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
    return v.get<std::string>();
  }
  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + " must be true or false");
    return v.get<bool>();
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<Phase> parse_phases(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be a list of [width, layers] pairs");
  std::vector<Phase> out;
  for (const Json& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer() ||
        p[0].get<std::int64_t>() <= 0 || p[1].get<std::int64_t>() <= 0)
      throw ConfigError(where + " entries must be [width, layers] with positive integers");
    out.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
  }
  return out;
}

inline std::vector<std::size_t> parse_counts(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be a list of positive integers");
  std::vector<std::size_t> out;
  for (const Json& v : j) {
    if (!v.is_number_integer() || v.get<std::int64_t>() <= 0)
      throw ConfigError(where + " must be a list of positive integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& root, const std::string& base_dir = ".") {
  RunConfig c;
  c.base_dir = base_dir;
  detail::ObjectReader r(root, "config");
  c.task = r.text("task", "");
  if (c.task != "classify2d" && c.task != "parabola" && c.task != "mnist")
    throw ConfigError("config.task must be one of classify2d, parabola, mnist");
  c.seed = r.count("seed", 0);

  if (r.has("data")) {
    detail::ObjectReader d(r.at("data"), "config.data");
    c.data.n = d.count("n", 0);
    if (d.has("seed")) c.data.seed = d.count("seed", 0);
    if (d.has("x_range")) {
      const Json& xr = d.at("x_range");
      if (!xr.is_array() || xr.size() != 2 || !xr[0].is_number() || !xr[1].is_number())
        throw ConfigError("config.data.x_range must be [lo, hi]");
      c.data.x_lo = xr[0].get<double>();
      c.data.x_hi = xr[1].get<double>();
    }
    c.data.images = d.text("images", "");
    c.data.labels = d.text("labels", "");
    if (d.has("limit")) c.data.limit = d.count("limit", 0);
    c.data.pixel_order = d.text("pixel_order", "raster");
    if (c.data.pixel_order != "raster" && c.data.pixel_order != "variance")
      throw ConfigError("config.data.pixel_order must be raster or variance");
    d.finish();
  }

  {
    if (!r.has("architecture")) throw ConfigError("config.architecture is required");
    detail::ObjectReader a(r.at("architecture"), "config.architecture");
    c.arch.kind = schedule_kind_from_string(a.text("kind", "autoencoder"));
    if (a.has("encoder")) c.arch.encoder = detail::parse_phases(a.at("encoder"), a.where("encoder"));
    c.arch.bottleneck_layers = a.count("bottleneck_layers", 0);
    if (a.has("decoder")) c.arch.decoder = detail::parse_phases(a.at("decoder"), a.where("decoder"));
    c.arch.dim = a.count("dim", 0);
    if (a.has("widths")) c.arch.widths = detail::parse_counts(a.at("widths"), a.where("widths"));
    if (a.has("layers")) c.arch.layers = detail::parse_counts(a.at("layers"), a.where("layers"));
    c.arch.activation = a.text("activation", "tanh");
    c.arch.alpha = a.number("alpha", 0.1);
    c.arch.sharpness = a.number("sharpness", 10.0);
    make_activation(c.arch.activation, c.arch.alpha, c.arch.sharpness);
    a.finish();
  }

  {
    if (!r.has("grid")) throw ConfigError("config.grid is required");
    detail::ObjectReader g(r.at("grid"), "config.grid");
    c.T = g.number("T", std::numeric_limits<double>::quiet_NaN());
    c.dt = g.number("dt", std::numeric_limits<double>::quiet_NaN());
    if (!(c.dt > 0.0)) throw ConfigError("config.grid.dt must be positive");
    if (!(c.T > 0.0)) throw ConfigError("config.grid.T must be positive");
    g.finish();
  }

  if (r.has("trainer")) {
    detail::ObjectReader t(r.at("trainer"), "config.trainer");
    TrainerConfig& tc = c.trainer;
    tc.lambda = t.number("lambda", tc.lambda);
    tc.tau = t.number("tau", tc.tau);
    tc.n_outer = t.count("n_outer", tc.n_outer);
    tc.fp_tol = t.number("fp_tol", tc.fp_tol);
    tc.fp_max_iter = t.count("fp_max_iter", tc.fp_max_iter);
    tc.tau_backoff = t.number("tau_backoff", tc.tau_backoff);
    tc.max_retries = t.count("max_retries", tc.max_retries);
    tc.tau_growth = t.number("tau_growth", tc.tau_growth);
    tc.tau_max = t.number("tau_max", tc.tau_max);
    tc.deterministic_reduction = t.flag("deterministic_reduction", tc.deterministic_reduction);
    tc.blowup_bound = t.number("blowup_bound", tc.blowup_bound);
    tc.descent_slack = t.number("descent_slack", tc.descent_slack);
    tc.stop_on_stationary = t.flag("stop_on_stationary", tc.stop_on_stationary);
    if (t.has("init")) {
      detail::ObjectReader i(t.at("init"), "config.trainer.init");
      const std::string kind = i.text("kind", "zeros");
      if (kind == "zeros") tc.init = InitScheme::zeros();
      else if (kind == "gaussian") tc.init = InitScheme::gaussian(i.number("scale", 0.1), 0);
      else throw ConfigError("config.trainer.init.kind must be zeros or gaussian");
      i.finish();
    }
    t.finish();
    tc.validate();
  }

  if (r.has("diagnostics")) {
    detail::ObjectReader d(r.at("diagnostics"), "config.diagnostics");
    DiagnosticsConfig& dc = c.diagnostics;
    dc.epsilon = d.number("epsilon", dc.epsilon);
    dc.centers = d.count("centers", dc.centers);
    dc.center_seed = d.count("center_seed", dc.center_seed);
    dc.zero_tol = d.number("zero_tol", dc.zero_tol);
    dc.grad_h = d.number("grad_h", dc.grad_h);
    dc.grad_tol = d.number("grad_tol", dc.grad_tol);
    dc.grad_max_coords = d.count("grad_max_coords", dc.grad_max_coords);
    dc.grad_particles = d.count("grad_particles", dc.grad_particles);
    dc.hessian_probe = d.text("hessian_probe", dc.hessian_probe);
    if (dc.hessian_probe != "dense_fd" && dc.hessian_probe != "power_iteration")
      throw ConfigError("config.diagnostics.hessian_probe must be dense_fd or power_iteration");
    dc.hessian_tol = d.number("hessian_tol", dc.hessian_tol);
    dc.hessian_every = d.count("hessian_every", dc.hessian_every);
    dc.w1_particles = d.count("w1_particles", dc.w1_particles);
    if (!(dc.grad_h > 0.0)) throw ConfigError("config.diagnostics.grad_h must be positive");
    d.finish();
  }
  r.finish();
  return c;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  const std::filesystem::path p(path);
  return parse_run_config(read_json_file(path), p.has_parent_path() ? p.parent_path().string() : ".");
}

inline Network build_network(const RunConfig& c) {
  const TimeGrid grid = TimeGrid::from_horizon(c.T, c.dt);
  const ArchitectureConfig& a = c.arch;
  LayerSchedule s;
  switch (a.kind) {
    case ScheduleKind::plain:
      if (a.dim == 0) throw ConfigError("plain architecture needs architecture.dim");
      s = build_plain_schedule(a.dim, grid);
      break;
    case ScheduleKind::encoder:
      s = build_encoder_schedule(a.encoder, grid);
      break;
    case ScheduleKind::autoencoder:
      s = build_autoencoder_schedule(a.encoder, a.bottleneck_layers, a.decoder, grid);
      break;
    case ScheduleKind::unet:
      s = a.layers.empty() ? build_unet_schedule(a.widths, grid) : build_unet_schedule(a.widths, a.layers, grid);
      break;
  }
  return Network(grid, std::move(s), make_activation(a.activation, a.alpha, a.sharpness));
}

inline std::string resolve_path(const RunConfig& c, const std::string& p) {
  const std::filesystem::path path(p);
  if (path.is_absolute() || std::filesystem::exists(path)) return p;
  return (std::filesystem::path(c.base_dir) / path).string();
}

inline std::uint64_t data_seed(const RunConfig& c) { return c.data.seed.value_or(c.seed); }

inline Dataset make_dataset(const RunConfig& c) {
  if (c.task == "classify2d") return gen_gaussian_classification(c.data.n, data_seed(c));
  if (c.task == "parabola") return gen_parabola(c.data.n, data_seed(c), c.data.x_lo, c.data.x_hi);
  if (c.data.images.empty() || c.data.labels.empty())
    throw ConfigError("mnist task needs data.images and data.labels");
  Dataset d = load_mnist_idx(resolve_path(c, c.data.images), resolve_path(c, c.data.labels), c.data.limit);
  if (c.data.pixel_order == "variance") d = permute_features(d, variance_order(d.inputs));
  return d;
}

// The trainer configuration with the run seed applied to the initialisation.
inline TrainerConfig trainer_config(const RunConfig& c) {
  TrainerConfig t = c.trainer;
  t.init.seed = c.seed;
  return t;
}

inline std::string config_hash(const std::string& text) {
  const auto crc = io::crc32_of(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
  std::ostringstream os;
  os << std::hex;
  os.width(8);
  os.fill('0');
  os << crc;
  return os.str();
}

}  // namespace aode
