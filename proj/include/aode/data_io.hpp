#pragma once

// Datasets: seeded generators for the synthetic tasks, MNIST IDX ingestion,
// and a CRC-protected binary/CSV dataset file.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aode/adjoint.hpp"
#include "aode/architecture.hpp"
#include "aode/binary_io.hpp"
#include "aode/errors.hpp"
#include "aode/random.hpp"

namespace aode {

// Samples are stored as columns: inputs is d_in x N, targets d_target x N.
struct Dataset {
  enum class Kind : std::uint8_t { classification = 0, reconstruction = 1 };

  Kind kind = Kind::reconstruction;
  std::string name;
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  std::vector<int> labels;
  std::string normalization = "none";

  std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.cols()); }
  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t target_dim() const noexcept { return static_cast<std::size_t>(targets.rows()); }

  void validate() const {
    if (inputs.cols() == 0) throw ShapeError("dataset is empty");
    if (targets.cols() != inputs.cols()) throw ShapeError("inputs and targets differ in sample count");
    if (labels.size() != size()) throw ShapeError("one label per sample required");
    if (!inputs.allFinite() || !targets.allFinite()) throw ShapeError("dataset contains non-finite entries");
  }

  // Samples [first, first + count).
  Dataset slice(std::size_t first, std::size_t count) const {
    if (first + count > size()) throw IndexError("dataset slice out of range");
    Dataset out = *this;
    const auto f = static_cast<Eigen::Index>(first);
    const auto c = static_cast<Eigen::Index>(count);
    out.inputs = inputs.middleCols(f, c);
    out.targets = targets.middleCols(f, c);
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                      labels.begin() + static_cast<std::ptrdiff_t>(first + count));
    return out;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.kind == b.kind && a.name == b.name && a.inputs == b.inputs && a.targets == b.targets &&
           a.labels == b.labels && a.normalization == b.normalization;
  }
};

// Places inputs into the first input_dim slots and targets into the first
// target_dim slots of the state; remaining slots are zero.
inline ParticleBatch embed(const Dataset& data, const LayerSchedule& schedule) {
  data.validate();
  if (data.input_dim() != schedule.input_dim())
    throw ShapeError("dataset has " + std::to_string(data.input_dim()) + " input components, network expects " +
                     std::to_string(schedule.input_dim()));
  if (data.target_dim() > schedule.dim()) throw ShapeError("targets do not fit in the state dimension");
  const auto d = static_cast<Eigen::Index>(schedule.dim());
  ParticleBatch b;
  b.inputs = Eigen::MatrixXd::Zero(d, data.inputs.cols());
  b.targets = Eigen::MatrixXd::Zero(d, data.inputs.cols());
  b.inputs.topRows(data.inputs.rows()) = data.inputs;
  b.targets.topRows(data.targets.rows()) = data.targets;
  return b;
}

// Standard normal points in the plane, target (1, 0) if x_0 > 0 else (-1, 0).
inline Dataset gen_gaussian_classification(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("dataset size must be positive");
  Dataset d;
  d.kind = Dataset::Kind::classification;
  d.name = "classify2d";
  d.inputs.resize(2, static_cast<Eigen::Index>(n));
  d.targets = Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(n));
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    d.inputs(0, c) = rng::normal(seed, 1, 2 * i);
    d.inputs(1, c) = rng::normal(seed, 1, 2 * i + 1);
    const bool positive = d.inputs(0, c) > 0.0;
    d.targets(0, c) = positive ? 1.0 : -1.0;
    d.labels[i] = positive ? 1 : 0;
  }
  return d;
}

// Points (x, x²) with x uniform on [lo, hi]; targets equal inputs.
inline Dataset gen_parabola(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  if (n == 0) throw ConfigError("dataset size must be positive");
  if (!(hi > lo)) throw ConfigError("parabola range must have hi > lo");
  Dataset d;
  d.kind = Dataset::Kind::reconstruction;
  d.name = "parabola";
  d.inputs.resize(2, static_cast<Eigen::Index>(n));
  d.labels.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lo + (hi - lo) * rng::uniform(seed, 2, i);
    d.inputs(0, static_cast<Eigen::Index>(i)) = x;
    d.inputs(1, static_cast<Eigen::Index>(i)) = x * x;
  }
  d.targets = d.inputs;
  return d;
}

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Reads an IDX image/label pair (big-endian headers, unsigned byte payload).
// Pixels are divided by 255; targets duplicate the inputs.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              std::optional<std::size_t> limit = std::nullopt) {
  const auto img = io::read_file(images_path);
  const auto lab = io::read_file(labels_path);
  if (img.size() < 4 || detail::read_be32(img, 0) != kIdxImagesMagic) throw BadMagic("not an IDX image file");
  if (lab.size() < 4 || detail::read_be32(lab, 0) != kIdxLabelsMagic) throw BadMagic("not an IDX label file");
  if (img.size() < 16) throw TruncatedFile("IDX image header is truncated");
  if (lab.size() < 8) throw TruncatedFile("IDX label header is truncated");
  const std::uint32_t count = detail::read_be32(img, 4);
  const std::uint32_t rows = detail::read_be32(img, 8);
  const std::uint32_t cols = detail::read_be32(img, 12);
  const std::uint32_t label_count = detail::read_be32(lab, 4);
  const std::size_t pixels = std::size_t{rows} * cols;
  if (img.size() < 16 + std::size_t{count} * pixels) throw TruncatedFile("IDX image payload is truncated");
  if (lab.size() < 8 + std::size_t{label_count}) throw TruncatedFile("IDX label payload is truncated");
  if (count != label_count)
    throw CountMismatch("IDX files disagree: " + std::to_string(count) + " images, " + std::to_string(label_count) +
                        " labels");
  const std::size_t n = limit ? std::min<std::size_t>(*limit, count) : count;
  if (n == 0) throw ShapeError("no images selected");

  Dataset d;
  d.kind = Dataset::Kind::reconstruction;
  d.name = "mnist";
  d.normalization = "divide_by_255";
  d.inputs.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(n));
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* src = img.data() + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p)
      d.inputs(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = static_cast<double>(src[p]) / 255.0;
    d.labels[i] = lab[8 + i];
    if (d.labels[i] > 9) throw ShapeError("IDX label outside 0..9");
  }
  d.targets = d.inputs;
  return d;
}

// Row indices of x sorted by decreasing sample variance; ties keep index order.
inline std::vector<int> variance_order(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Eigen::VectorXd var = (x.colwise() - mean).rowwise().squaredNorm();
  std::vector<int> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return var(a) > var(b); });
  return order;
}

// Feature k of the result is feature order[k] of d, for inputs and targets
// alike (targets must share the input dimension).
inline Dataset permute_features(const Dataset& d, const std::vector<int>& order) {
  if (order.size() != d.input_dim() || d.target_dim() != d.input_dim())
    throw ShapeError("permutation does not match the feature dimension");
  std::vector<bool> seen(order.size(), false);
  for (int k : order) {
    if (k < 0 || static_cast<std::size_t>(k) >= order.size() || seen[static_cast<std::size_t>(k)])
      throw ShapeError("feature order is not a permutation");
    seen[static_cast<std::size_t>(k)] = true;
  }
  Dataset out = d;
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.inputs.row(static_cast<Eigen::Index>(k)) = d.inputs.row(order[k]);
    out.targets.row(static_cast<Eigen::Index>(k)) = d.targets.row(order[k]);
  }
  return out;
}

// Writes an IDX pair from raw bytes (row-major pixels per image).
inline void write_mnist_idx(const std::string& images_path, const std::string& labels_path,
                            const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& labels,
                            std::uint32_t rows = 28, std::uint32_t cols = 28) {
  const std::size_t per = std::size_t{rows} * cols;
  if (pixels.size() != labels.size() * per) throw ShapeError("pixel buffer does not match label count");
  std::vector<std::uint8_t> img;
  detail::put_be32(img, kIdxImagesMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(labels.size()));
  detail::put_be32(img, rows);
  detail::put_be32(img, cols);
  img.insert(img.end(), pixels.begin(), pixels.end());
  std::vector<std::uint8_t> lab;
  detail::put_be32(lab, kIdxLabelsMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.insert(lab.end(), labels.begin(), labels.end());
  std::ofstream(images_path, std::ios::binary).write(reinterpret_cast<const char*>(img.data()),
                                                     static_cast<std::streamsize>(img.size()));
  std::ofstream(labels_path, std::ios::binary).write(reinterpret_cast<const char*>(lab.data()),
                                                     static_cast<std::streamsize>(lab.size()));
}

// Dataset container: "AODD", u32 version, kind, name, N, d_in, d_target,
// labels (i32), inputs and targets sample-major as f64, normalization,
// trailing CRC32. All integers and floats little-endian.
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  d.validate();
  io::ByteWriter w;
  w.put_bytes("AODD", 4);
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(d.kind));
  w.put_string(d.name);
  w.put<std::uint64_t>(d.size());
  w.put<std::uint64_t>(d.input_dim());
  w.put<std::uint64_t>(d.target_dim());
  for (int l : d.labels) w.put<std::int32_t>(l);
  for (Eigen::Index i = 0; i < d.inputs.cols(); ++i)
    for (Eigen::Index k = 0; k < d.inputs.rows(); ++k) w.put<double>(d.inputs(k, i));
  for (Eigen::Index i = 0; i < d.targets.cols(); ++i)
    for (Eigen::Index k = 0; k < d.targets.rows(); ++k) w.put<double>(d.targets(k, i));
  w.put_string(d.normalization);
  w.put_crc();
  return w.bytes();
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r = io::open_container(bytes, "AODD", kDatasetVersion);
  Dataset d;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw FormatError("unknown dataset kind");
  d.kind = static_cast<Dataset::Kind>(kind);
  d.name = r.get_string();
  const auto n = r.get<std::uint64_t>();
  const auto din = r.get<std::uint64_t>();
  const auto dt = r.get<std::uint64_t>();
  if (n * (din + dt) * 8 > r.remaining()) throw TruncatedFile("dataset payload is truncated");
  d.labels.resize(n);
  for (auto& l : d.labels) l = r.get<std::int32_t>();
  d.inputs.resize(static_cast<Eigen::Index>(din), static_cast<Eigen::Index>(n));
  d.targets.resize(static_cast<Eigen::Index>(dt), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < d.inputs.cols(); ++i)
    for (Eigen::Index k = 0; k < d.inputs.rows(); ++k) d.inputs(k, i) = r.get<double>();
  for (Eigen::Index i = 0; i < d.targets.cols(); ++i)
    for (Eigen::Index k = 0; k < d.targets.rows(); ++k) d.targets(k, i) = r.get<double>();
  d.normalization = r.get_string();
  return d;
}

// CSV with header x0..x{d_in-1},y0..y{d_t-1},label and '.' decimals.
inline void write_dataset_csv(std::ostream& os, const Dataset& d) {
  for (std::size_t k = 0; k < d.input_dim(); ++k) os << 'x' << k << ',';
  for (std::size_t k = 0; k < d.target_dim(); ++k) os << 'y' << k << ',';
  os << "label\n";
  os.precision(17);
  for (Eigen::Index i = 0; i < d.inputs.cols(); ++i) {
    for (Eigen::Index k = 0; k < d.inputs.rows(); ++k) os << d.inputs(k, i) << ',';
    for (Eigen::Index k = 0; k < d.targets.rows(); ++k) os << d.targets(k, i) << ',';
    os << d.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& is, Dataset::Kind kind, const std::string& name) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty CSV");
  std::size_t din = 0, dt = 0;
  {
    std::stringstream hs(line);
    std::string col;
    bool has_label = false;
    while (std::getline(hs, col, ',')) {
      if (!col.empty() && col.back() == '\r') col.pop_back();
      if (col.size() > 1 && col[0] == 'x') ++din;
      else if (col.size() > 1 && col[0] == 'y') ++dt;
      else if (col == "label") has_label = true;
      else throw FormatError("unexpected CSV column '" + col + "'");
    }
    if (din == 0 || dt == 0 || !has_label) throw FormatError("CSV header needs x*, y* and label columns");
  }
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("malformed CSV cell '" + cell + "'");
      }
    }
    if (vals.size() != din + dt + 1) throw FormatError("CSV row has the wrong number of cells");
    labels.push_back(static_cast<int>(vals.back()));
    vals.pop_back();
    rows.push_back(std::move(vals));
  }
  Dataset d;
  d.kind = kind;
  d.name = name;
  d.labels = std::move(labels);
  d.inputs.resize(static_cast<Eigen::Index>(din), static_cast<Eigen::Index>(rows.size()));
  d.targets.resize(static_cast<Eigen::Index>(dt), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < din; ++k) d.inputs(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = rows[i][k];
    for (std::size_t k = 0; k < dt; ++k)
      d.targets(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = rows[i][din + k];
  }
  d.validate();
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d, bool csv) {
  if (csv) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    write_dataset_csv(os, d);
    return;
  }
  const auto bytes = encode_dataset(d);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Binary when the file starts with "AODD", otherwise CSV.
inline Dataset load_dataset(const std::string& path, Dataset::Kind csv_kind = Dataset::Kind::reconstruction) {
  const auto bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "AODD") return decode_dataset(bytes);
  std::istringstream is(std::string(bytes.begin(), bytes.end()));
  return read_dataset_csv(is, csv_kind, "csv");
}

}  // namespace aode
