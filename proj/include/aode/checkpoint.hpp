#pragma once

// Checkpoint container "AODE": grid, schedule table, activation, λ,
// provenance and θ, framed by a trailing CRC32.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "aode/binary_io.hpp"
#include "aode/control.hpp"
#include "aode/errors.hpp"

namespace aode {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
  // Full configuration text as given to the trainer.
  std::string config_text;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Checkpoint {
  Network net;
  double lambda = 0.0;
  ControlParams theta;
  Provenance provenance;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.net.grid == b.net.grid && a.net.schedule == b.net.schedule &&
           a.net.activation.kind == b.net.activation.kind && a.net.activation.alpha == b.net.activation.alpha &&
           a.net.activation.sharpness == b.net.activation.sharpness && a.lambda == b.lambda && a.theta == b.theta &&
           a.provenance == b.provenance;
  }
};

namespace detail {

inline void put_set(io::ByteWriter& w, const IndexSet& s) {
  w.put<std::uint64_t>(s.size());
  for (int k : s) w.put<std::int32_t>(k);
}

inline IndexSet get_set(io::ByteReader& r) {
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining() / 4) throw TruncatedFile("index set longer than the file");
  IndexSet s(n);
  for (auto& k : s) k = r.get<std::int32_t>();
  return s;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  c.theta.check_shape(c.net);
  const LayerSchedule& s = c.net.schedule;
  io::ByteWriter w;
  w.put_bytes("AODE", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<double>(c.net.grid.horizon());
  w.put<double>(c.net.grid.dt());
  w.put<std::uint64_t>(c.net.grid.n_steps());
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.kind()));
  w.put<std::uint64_t>(s.dim());
  w.put<std::uint64_t>(s.input_dim());
  w.put<std::uint64_t>(s.intervals().size());
  for (const Interval& iv : s.intervals()) {
    w.put<std::uint64_t>(iv.start);
    w.put<std::uint64_t>(iv.end);
    detail::put_set(w, iv.active);
    detail::put_set(w, iv.reset);
    detail::put_set(w, iv.primal_active);
    detail::put_set(w, iv.shadow_active);
  }
  detail::put_set(w, s.output_set());
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.net.activation.kind));
  w.put<double>(c.net.activation.alpha);
  w.put<double>(c.net.activation.sharpness);
  w.put<double>(c.lambda);
  w.put<std::uint64_t>(c.provenance.seed);
  w.put_string(c.provenance.config_hash);
  w.put_string(c.provenance.config_text);
  const auto d = static_cast<Eigen::Index>(s.dim());
  for (std::size_t j = 0; j < c.theta.n_nodes(); ++j) {
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index k = 0; k < d; ++k) w.put<double>(c.theta.W[j](r, k));
    for (Eigen::Index r = 0; r < d; ++r) w.put<double>(c.theta.b[j](r));
  }
  w.put_crc();
  return w.bytes();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r = io::open_container(bytes, "AODE", kCheckpointVersion);
  const double horizon = r.get<double>();
  const double dt = r.get<double>();
  const auto n_steps = r.get<std::uint64_t>();
  TimeGrid grid;
  try {
    grid = TimeGrid::from_horizon(horizon, dt);
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint grid is invalid: ") + e.what());
  }
  if (grid.n_steps() != n_steps) throw FormatError("checkpoint step count disagrees with its grid");

  const auto kind = r.get<std::uint8_t>();
  if (kind > static_cast<std::uint8_t>(ScheduleKind::unet)) throw FormatError("unknown schedule kind");
  const auto dim = r.get<std::uint64_t>();
  const auto input_dim = r.get<std::uint64_t>();
  const auto n_intervals = r.get<std::uint64_t>();
  if (dim == 0 || dim > (1u << 20) || n_intervals > r.remaining()) throw FormatError("checkpoint header is corrupt");
  const IndexSet all = index_range(0, static_cast<int>(dim));
  std::vector<Interval> intervals(n_intervals);
  for (Interval& iv : intervals) {
    iv.start = r.get<std::uint64_t>();
    iv.end = r.get<std::uint64_t>();
    iv.active = detail::get_set(r);
    iv.reset = detail::get_set(r);
    iv.primal_active = detail::get_set(r);
    iv.shadow_active = detail::get_set(r);
    iv.inactive = set_difference(all, iv.active);
  }
  IndexSet output = detail::get_set(r);

  const auto act_kind = r.get<std::uint8_t>();
  if (act_kind > static_cast<std::uint8_t>(Activation::Kind::smooth_leaky_relu))
    throw FormatError("unknown activation kind");
  Activation act;
  act.kind = static_cast<Activation::Kind>(act_kind);
  act.alpha = r.get<double>();
  act.sharpness = r.get<double>();

  LayerSchedule schedule;
  try {
    schedule = LayerSchedule(static_cast<ScheduleKind>(kind), dim, std::move(intervals), std::move(output),
                             input_dim);
    if (schedule.n_steps() != n_steps) throw GridMismatch("schedule length disagrees with the grid");
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint schedule is invalid: ") + e.what());
  }
  Checkpoint c{Network(grid, std::move(schedule), act), 0.0, {}, {}};
  c.lambda = r.get<double>();
  c.provenance.seed = r.get<std::uint64_t>();
  c.provenance.config_hash = r.get_string();
  c.provenance.config_text = r.get_string();
  if (n_steps * (dim * dim + dim) * 8 != r.remaining()) throw FormatError("checkpoint control payload has the wrong size");
  c.theta = ControlParams::zeros(n_steps, dim);
  const auto d = static_cast<Eigen::Index>(dim);
  for (std::size_t j = 0; j < n_steps; ++j) {
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index k = 0; k < d; ++k) c.theta.W[j](i, k) = r.get<double>();
    for (Eigen::Index i = 0; i < d; ++i) c.theta.b[j](i) = r.get<double>();
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace aode
