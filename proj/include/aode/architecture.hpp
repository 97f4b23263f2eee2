#pragma once

// Time grids and active/inactive index filtrations describing plain,
// encoder, autoencoder and U-net style width-varying residual networks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "aode/errors.hpp"

namespace aode {

// Uniform explicit-Euler grid on [0, T]. Node j sits at t_j = j * dt.
class TimeGrid {
 public:
  TimeGrid() = default;

  // Builds a grid from horizon and step; T / dt must be an integer to 1e-12.
  static TimeGrid from_horizon(double horizon, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("time step dt must be positive");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon T must be positive");
    const double ratio = horizon / dt;
    const double steps = std::round(ratio);
    if (steps < 1.0 || std::abs(steps * dt - horizon) > 1e-12 * horizon)
      throw GridMismatch("horizon " + std::to_string(horizon) + " is not an integer multiple of dt " +
                         std::to_string(dt));
    return TimeGrid(horizon, dt, static_cast<std::size_t>(steps));
  }

  static TimeGrid from_steps(std::size_t n_steps, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("time step dt must be positive");
    if (n_steps == 0) throw ConfigError("grid needs at least one step");
    return TimeGrid(static_cast<double>(n_steps) * dt, dt, n_steps);
  }

  double horizon() const noexcept { return horizon_; }
  double dt() const noexcept { return dt_; }
  std::size_t n_steps() const noexcept { return n_steps_; }
  double node_time(std::size_t j) const noexcept { return static_cast<double>(j) * dt_; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  TimeGrid(double horizon, double dt, std::size_t n) : horizon_(horizon), dt_(dt), n_steps_(n) {}

  double horizon_ = 1.0;
  double dt_ = 1.0;
  std::size_t n_steps_ = 1;
};

// Sorted, duplicate-free component indices.
using IndexSet = std::vector<int>;

inline IndexSet index_range(int first, int last) {
  IndexSet out;
  for (int k = first; k < last; ++k) out.push_back(k);
  return out;
}

inline IndexSet set_union(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline IndexSet set_intersection(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline IndexSet set_difference(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline bool is_subset(const IndexSet& a, const IndexSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

enum class ScheduleKind { plain, encoder, autoencoder, unet };

inline std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::plain: return "plain";
    case ScheduleKind::encoder: return "encoder";
    case ScheduleKind::autoencoder: return "autoencoder";
    case ScheduleKind::unet: return "unet";
  }
  return "plain";
}

inline ScheduleKind schedule_kind_from_string(std::string_view s) {
  if (s == "plain") return ScheduleKind::plain;
  if (s == "encoder") return ScheduleKind::encoder;
  if (s == "autoencoder") return ScheduleKind::autoencoder;
  if (s == "unet") return ScheduleKind::unet;
  throw ConfigError("unknown schedule kind '" + std::string(s) + "'");
}

// One constant-pattern stretch of layers, nodes [start, end).
//
// `reset` lists slots that are overwritten with zero when the interval is
// entered. This is how the memory-saving autoencoder layout re-uses a slot
// frozen during encoding as a fresh shadow component during decoding.
// `primal_active` / `shadow_active` hold the doubled (z, z^H) view of an
// autoencoder interval and are empty for every other kind.
struct Interval {
  std::size_t start = 0;
  std::size_t end = 0;
  IndexSet active;
  IndexSet inactive;
  IndexSet reset;
  IndexSet primal_active;
  IndexSet shadow_active;

  std::size_t n_layers() const noexcept { return end - start; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

// Width of one phase of a network, in layers.
struct Phase {
  std::size_t width = 0;
  std::size_t n_layers = 0;
};

class LayerSchedule {
 public:
  LayerSchedule() = default;

  // Validates tiling, partition, and the invariants of `kind`.
  LayerSchedule(ScheduleKind kind, std::size_t dim, std::vector<Interval> intervals,
                IndexSet output_set, std::size_t input_dim)
      : kind_(kind), dim_(dim), input_dim_(input_dim), intervals_(std::move(intervals)),
        output_set_(std::move(output_set)) {
    validate();
    node_to_interval_.resize(n_steps());
    for (std::size_t i = 0; i < intervals_.size(); ++i)
      for (std::size_t j = intervals_[i].start; j < intervals_[i].end; ++j) node_to_interval_[j] = i;
  }

  ScheduleKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  // Number of leading slots carrying input data; the rest start at zero.
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t n_steps() const noexcept { return intervals_.empty() ? 0 : intervals_.back().end; }
  const std::vector<Interval>& intervals() const noexcept { return intervals_; }
  // Components on which the terminal loss acts.
  const IndexSet& output_set() const noexcept { return output_set_; }

  std::size_t interval_index_at(std::size_t node) const {
    if (node >= n_steps())
      throw IndexError("node " + std::to_string(node) + " outside [0, " + std::to_string(n_steps()) + ")");
    return node_to_interval_[node];
  }
  const Interval& interval_at(std::size_t node) const { return intervals_[interval_index_at(node)]; }
  const IndexSet& active_at(std::size_t node) const { return interval_at(node).active; }

  // Slots zeroed before the step that leaves `node`; empty except at the
  // first node of an interval with a non-empty reset set.
  const IndexSet& reset_at(std::size_t node) const {
    static const IndexSet kEmpty;
    const Interval& iv = interval_at(node);
    return node == iv.start ? iv.reset : kEmpty;
  }

  // Bottleneck: the interval with the fewest active components (first one on ties).
  std::size_t bottleneck_interval() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < intervals_.size(); ++i)
      if (intervals_[i].active.size() < intervals_[best].active.size()) best = i;
    return best;
  }

  friend bool operator==(const LayerSchedule& a, const LayerSchedule& b) {
    return a.kind_ == b.kind_ && a.dim_ == b.dim_ && a.input_dim_ == b.input_dim_ &&
           a.intervals_ == b.intervals_ && a.output_set_ == b.output_set_;
  }

 private:
  void validate() const;

  ScheduleKind kind_ = ScheduleKind::plain;
  std::size_t dim_ = 0;
  std::size_t input_dim_ = 0;
  std::vector<Interval> intervals_;
  IndexSet output_set_;
  std::vector<std::size_t> node_to_interval_;
};

namespace detail {

inline void require_sorted_unique(const IndexSet& s, std::size_t dim, const char* what) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0 || static_cast<std::size_t>(s[i]) >= dim)
      throw InvalidSchedule(std::string(what) + " index out of range");
    if (i > 0 && s[i] <= s[i - 1]) throw InvalidSchedule(std::string(what) + " must be sorted and unique");
  }
}

}  // namespace detail

// Checks the doubled-view identities of an autoencoder schedule:
// A_j ∩ A^H_j = ∅, A_last ∪ A^H_last = {0..d̃-1}, A_r ⊆ A_j, A^H_j ⊆ I_j,
// A^H_last = I_last, and the slot layout active_j = A_j ∪ A^H_j.
inline void check_autoencoder_identities(const LayerSchedule& s) {
  const auto& ivs = s.intervals();
  const std::size_t dt = s.dim();
  const IndexSet all = index_range(0, static_cast<int>(dt));
  std::size_t bott = 0;
  for (std::size_t i = 1; i < ivs.size(); ++i)
    if (ivs[i].primal_active.size() < ivs[bott].primal_active.size()) bott = i;
  const IndexSet& a_r = ivs[bott].primal_active;
  if (a_r.empty()) throw InvalidSchedule("autoencoder bottleneck must keep at least one component");
  IndexSet prev_shadow;
  IndexSet prev_primal = all;
  for (std::size_t i = 0; i < ivs.size(); ++i) {
    const Interval& iv = ivs[i];
    detail::require_sorted_unique(iv.primal_active, dt, "primal active set");
    detail::require_sorted_unique(iv.shadow_active, dt, "shadow active set");
    if (!set_intersection(iv.primal_active, iv.shadow_active).empty())
      throw InvalidSchedule("primal and shadow active sets overlap in interval " + std::to_string(i));
    const IndexSet primal_inactive = set_difference(all, iv.primal_active);
    if (!is_subset(iv.shadow_active, primal_inactive))
      throw InvalidSchedule("shadow component active while its primal slot is active");
    if (!is_subset(a_r, iv.primal_active)) throw InvalidSchedule("bottleneck set is not minimal");
    if (!is_subset(iv.primal_active, prev_primal))
      throw InvalidSchedule("primal active sets must form a decreasing filtration");
    if (!is_subset(prev_shadow, iv.shadow_active))
      throw InvalidSchedule("shadow active sets must form an increasing filtration");
    if (!iv.shadow_active.empty() && iv.primal_active != a_r)
      throw InvalidSchedule("decoder phase started before the bottleneck was reached");
    if (iv.active != set_union(iv.primal_active, iv.shadow_active))
      throw InvalidSchedule("slot layout does not match the doubled view");
    if (iv.reset != set_difference(iv.shadow_active, prev_shadow))
      throw InvalidSchedule("reset set must equal the newly activated shadow components");
    prev_shadow = iv.shadow_active;
    prev_primal = iv.primal_active;
  }
  const Interval& last = ivs.back();
  if (set_union(last.primal_active, last.shadow_active) != all)
    throw InvalidSchedule("final primal and shadow active sets must cover all components");
  if (last.shadow_active != set_difference(all, last.primal_active))
    throw InvalidSchedule("final shadow actives must equal final primal inactives");
}

inline void LayerSchedule::validate() const {
  if (dim_ == 0) throw InvalidSchedule("ambient dimension must be positive");
  if (intervals_.empty()) throw InvalidSchedule("schedule has no intervals");
  if (input_dim_ == 0 || input_dim_ > dim_) throw InvalidSchedule("input dimension out of range");
  const IndexSet all = index_range(0, static_cast<int>(dim_));
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < intervals_.size(); ++i) {
    const Interval& iv = intervals_[i];
    if (iv.start != cursor) throw InvalidSchedule("intervals must tile [0, n_steps) without gaps or overlaps");
    if (iv.end <= iv.start) throw InvalidSchedule("interval " + std::to_string(i) + " is empty");
    cursor = iv.end;
    detail::require_sorted_unique(iv.active, dim_, "active set");
    detail::require_sorted_unique(iv.inactive, dim_, "inactive set");
    detail::require_sorted_unique(iv.reset, dim_, "reset set");
    if (!set_intersection(iv.active, iv.inactive).empty() || set_union(iv.active, iv.inactive) != all)
      throw InvalidSchedule("active and inactive sets must partition the components in interval " +
                            std::to_string(i));
    if (!is_subset(iv.reset, iv.active)) throw InvalidSchedule("only active slots may be reset");
  }
  detail::require_sorted_unique(output_set_, dim_, "output set");
  if (output_set_.empty()) throw InvalidSchedule("output set is empty");
  if (!is_subset(output_set_, intervals_.back().active))
    throw InvalidSchedule("output set must be active in the final interval");

  switch (kind_) {
    case ScheduleKind::plain:
      break;
    case ScheduleKind::encoder:
      for (std::size_t i = 1; i < intervals_.size(); ++i)
        if (!is_subset(intervals_[i - 1].inactive, intervals_[i].inactive))
          throw InvalidSchedule("encoder inactive sets must form an increasing filtration");
      if (!intervals_.front().inactive.empty()) throw InvalidSchedule("encoder must start fully active");
      break;
    case ScheduleKind::autoencoder:
      if (dim_ != input_dim_) throw InvalidSchedule("memory-saving autoencoder layout keeps d equal to the input dimension");
      check_autoencoder_identities(*this);
      break;
    case ScheduleKind::unet:
      break;
  }
}

namespace detail {

inline Interval prefix_interval(std::size_t start, std::size_t n, std::size_t width, std::size_t dim) {
  Interval iv;
  iv.start = start;
  iv.end = start + n;
  iv.active = index_range(0, static_cast<int>(width));
  iv.inactive = index_range(static_cast<int>(width), static_cast<int>(dim));
  return iv;
}

inline std::size_t total_layers(const std::vector<Phase>& phases) {
  std::size_t n = 0;
  for (const Phase& p : phases) n += p.n_layers;
  return n;
}

}  // namespace detail

// Constant-width network: every component active on every node.
inline LayerSchedule build_plain_schedule(std::size_t dim, const TimeGrid& grid) {
  if (dim == 0) throw InvalidSchedule("dimension must be positive");
  std::vector<Interval> ivs{detail::prefix_interval(0, grid.n_steps(), dim, dim)};
  return LayerSchedule(ScheduleKind::plain, dim, std::move(ivs), index_range(0, static_cast<int>(dim)), dim);
}

// Encoder: widths strictly decrease across phases; phase k keeps the first
// `width` components active and freezes the rest.
inline LayerSchedule build_encoder_schedule(const std::vector<Phase>& phases, const TimeGrid& grid) {
  if (phases.empty()) throw InvalidSchedule("encoder needs at least one phase");
  const std::size_t dim = phases.front().width;
  if (dim == 0) throw InvalidSchedule("encoder width must be positive");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    if (phases[i].n_layers == 0) throw InvalidSchedule("encoder phase with zero layers");
    if (phases[i].width == 0) throw InvalidSchedule("encoder phase with zero width");
    if (i > 0 && phases[i].width >= phases[i - 1].width)
      throw InvalidSchedule("encoder widths must be strictly decreasing");
  }
  if (detail::total_layers(phases) != grid.n_steps())
    throw GridMismatch("encoder has " + std::to_string(detail::total_layers(phases)) + " layers, grid has " +
                       std::to_string(grid.n_steps()) + " steps");
  std::vector<Interval> ivs;
  std::size_t node = 0;
  for (const Phase& p : phases) {
    ivs.push_back(detail::prefix_interval(node, p.n_layers, p.width, dim));
    node += p.n_layers;
  }
  const ScheduleKind kind = phases.size() == 1 ? ScheduleKind::plain : ScheduleKind::encoder;
  IndexSet out = ivs.back().active;
  return LayerSchedule(kind, dim, std::move(ivs), std::move(out), dim);
}

// Autoencoder in the memory-saving layout: the state has d̃ slots; decoder
// phases re-activate slots frozen during encoding as zero-initialised shadow
// components. The bottleneck has the width of the last encoder phase and
// lasts that phase plus `bottleneck_layers` extra layers.
inline LayerSchedule build_autoencoder_schedule(const std::vector<Phase>& encoder, std::size_t bottleneck_layers,
                                                const std::vector<Phase>& decoder, const TimeGrid& grid) {
  if (encoder.empty()) throw InvalidSchedule("autoencoder needs at least one encoder phase");
  const std::size_t dim = encoder.front().width;
  if (dim == 0) throw InvalidSchedule("encoder width must be positive");
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    if (encoder[i].n_layers == 0 || encoder[i].width == 0) throw InvalidSchedule("empty encoder phase");
    if (i > 0 && encoder[i].width >= encoder[i - 1].width)
      throw InvalidSchedule("encoder widths must be strictly decreasing");
  }
  const std::size_t latent = encoder.back().width;
  std::size_t prev = latent;
  for (const Phase& p : decoder) {
    if (p.n_layers == 0) throw InvalidSchedule("empty decoder phase");
    if (p.width < prev) throw InvalidSchedule("decoder widths must be non-decreasing from the bottleneck width");
    if (p.width > dim) throw InvalidSchedule("decoder width exceeds the input dimension");
    prev = p.width;
  }
  if (!decoder.empty() && decoder.back().width != dim)
    throw InvalidSchedule("decoder must restore the input dimension (final cover identity)");
  if (decoder.empty() && latent != dim)
    throw InvalidSchedule("an autoencoder without decoder cannot restore the input dimension");
  const std::size_t layers = detail::total_layers(encoder) + bottleneck_layers + detail::total_layers(decoder);
  if (layers != grid.n_steps())
    throw GridMismatch("autoencoder has " + std::to_string(layers) + " layers, grid has " +
                       std::to_string(grid.n_steps()) + " steps");

  std::vector<Interval> ivs;
  std::size_t node = 0;
  const int ilat = static_cast<int>(latent);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    std::size_t n = encoder[i].n_layers + (i + 1 == encoder.size() ? bottleneck_layers : 0);
    Interval iv = detail::prefix_interval(node, n, encoder[i].width, dim);
    iv.primal_active = iv.active;
    ivs.push_back(std::move(iv));
    node += n;
  }
  IndexSet prev_shadow;
  for (const Phase& p : decoder) {
    Interval iv = detail::prefix_interval(node, p.n_layers, p.width, dim);
    iv.primal_active = index_range(0, ilat);
    iv.shadow_active = index_range(ilat, static_cast<int>(p.width));
    iv.reset = set_difference(iv.shadow_active, prev_shadow);
    prev_shadow = iv.shadow_active;
    if (!ivs.empty() && ivs.back().active == iv.active && iv.reset.empty()) {
      ivs.back().end += p.n_layers;  // merge equal-width neighbours
    } else {
      ivs.push_back(std::move(iv));
    }
    node += p.n_layers;
  }
  if (ivs.size() == 1) {
    IndexSet out = ivs.back().active;
    for (Interval& iv : ivs) iv.primal_active.clear();
    return LayerSchedule(ScheduleKind::plain, dim, std::move(ivs), std::move(out), dim);
  }
  IndexSet out = ivs.back().active;
  return LayerSchedule(ScheduleKind::autoencoder, dim, std::move(ivs), std::move(out), dim);
}

// U-net pattern over ambient dimension w_0 + ... + w_r, one block per level.
// Contracting phase i < r evolves blocks i and i+1 (block i+1 receives the
// downsampled features), the bottleneck evolves block r alone, and the
// expansive twin 2r-i re-activates block i, whose frozen contents act as the
// long skip connection, together with block i+1. The output is block 0.
inline LayerSchedule build_unet_schedule(const std::vector<std::size_t>& widths,
                                         const std::vector<std::size_t>& layers, const TimeGrid& grid) {
  if (widths.empty() || widths.size() % 2 == 0)
    throw InvalidSchedule("U-net width profile must have odd length 2r+1");
  if (layers.size() != widths.size()) throw InvalidSchedule("one layer count per phase required");
  const std::size_t r = widths.size() / 2;
  for (std::size_t i = 0; i <= r; ++i)
    if (widths[i] != widths[2 * r - i]) throw InvalidSchedule("U-net width profile must be symmetric");
  for (std::size_t i = 0; i <= r; ++i) {
    if (widths[i] == 0) throw InvalidSchedule("U-net width must be positive");
    if (i > 0 && widths[i] >= widths[i - 1]) throw InvalidSchedule("contracting widths must strictly decrease");
  }
  for (std::size_t n : layers)
    if (n == 0) throw InvalidSchedule("U-net phase with zero layers");
  if (std::accumulate(layers.begin(), layers.end(), std::size_t{0}) != grid.n_steps())
    throw GridMismatch("U-net layer counts do not match the grid");

  std::vector<int> offset(r + 2, 0);
  for (std::size_t i = 0; i <= r; ++i) offset[i + 1] = offset[i] + static_cast<int>(widths[i]);
  const std::size_t dim = static_cast<std::size_t>(offset[r + 1]);
  const IndexSet all = index_range(0, static_cast<int>(dim));
  auto block = [&](std::size_t i) { return index_range(offset[i], offset[i + 1]); };

  std::vector<Interval> ivs;
  std::size_t node = 0;
  for (std::size_t phase = 0; phase < widths.size(); ++phase) {
    const std::size_t level = phase <= r ? phase : 2 * r - phase;
    Interval iv;
    iv.start = node;
    iv.end = node + layers[phase];
    iv.active = level == r ? block(r) : set_union(block(level), block(level + 1));
    iv.inactive = set_difference(all, iv.active);
    ivs.push_back(std::move(iv));
    node += layers[phase];
  }
  const ScheduleKind kind = r == 0 ? ScheduleKind::plain : ScheduleKind::unet;
  return LayerSchedule(kind, dim, std::move(ivs), block(0), widths[0]);
}

// Even split of the grid across phases; the remainder goes to the earliest phases.
inline LayerSchedule build_unet_schedule(const std::vector<std::size_t>& widths, const TimeGrid& grid) {
  if (widths.empty()) throw InvalidSchedule("U-net width profile is empty");
  const std::size_t phases = widths.size();
  if (grid.n_steps() < phases) throw GridMismatch("grid has fewer steps than U-net phases");
  std::vector<std::size_t> layers(phases, grid.n_steps() / phases);
  for (std::size_t i = 0; i < grid.n_steps() % phases; ++i) ++layers[i];
  return build_unet_schedule(widths, layers, grid);
}

}  // namespace aode
