#pragma once

// Dataset persistence: `data.csv` (header z_0..,x_0.., shortest round-trip
// decimal formatting, LF endings) and `manifest.json` sidecar.

#include "covae/scm.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace covae::io {

using nlohmann::json;
namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

struct Table {
  std::vector<std::string> header;
  diff::RowMatrix values;
};

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline Table read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  for (auto h : split_commas(line)) t.header.emplace_back(h);
  std::vector<double> flat;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_commas(line);
    if (cells.size() != t.header.size()) {
      throw IoError("'" + path.string() + "' row " + std::to_string(rows + 1) + " has " +
                    std::to_string(cells.size()) + " fields, expected " + std::to_string(t.header.size()));
    }
    for (auto c : cells) flat.push_back(parse_double(c));
    ++rows;
  }
  t.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.header.size()));
  std::copy(flat.begin(), flat.end(), t.values.data());
  return t;
}

inline void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string format_csv(const std::vector<std::string>& header, const diff::RowMatrix& values) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out += ',';
    out += header[i];
  }
  out += '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out += ',';
      append_double(out, values(r, c));
    }
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> dataset_header(std::size_t d, std::size_t o) {
  std::vector<std::string> h;
  for (std::size_t i = 0; i < d; ++i) h.push_back("z_" + std::to_string(i));
  for (std::size_t i = 0; i < o; ++i) h.push_back("x_" + std::to_string(i));
  return h;
}

inline json matrix_to_json(const diff::RowMatrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline diff::RowMatrix matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  diff::RowMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j.at(r).size()) != cols) throw IoError("ragged matrix in manifest");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

inline const char* noise_kind_name(scm::NoiseKind k) {
  switch (k) {
    case scm::NoiseKind::gaussian: return "gaussian";
    case scm::NoiseKind::gamma: return "gamma";
    case scm::NoiseKind::uniform: return "uniform";
  }
  return "?";
}

inline json manifest_json(const scm::Dataset& ds) {
  const auto& spec = ds.spec;
  json j;
  j["name"] = ds.name;
  j["seed"] = ds.seed;
  j["d"] = ds.d();
  j["o"] = ds.o();
  j["n"] = ds.n();
  j["adjacency"] = ds.stored_adjacency();
  j["adjacency_convention"] = "row-major over stored z columns; entry [i*d+j]=1 means z_i -> z_j";
  j["leaf_first_order"] = spec.dag.leaf_first_order;
  j["column_names"] = ds.stored_names();
  json noise = json::array();
  for (std::size_t c = 0; c < ds.d(); ++c) {
    const auto& nz = spec.noise[spec.dag.leaf_first_order[c]];
    json e{{"kind", noise_kind_name(nz.kind)}, {"a", nz.a}, {"b", nz.b}, {"description", nz.describe()}};
    if (nz.kind == scm::NoiseKind::gamma) {
      e["convention"] = nz.gamma_convention == scm::GammaConvention::shape_rate ? "shape_rate" : "shape_scale";
    }
    noise.push_back(std::move(e));
  }
  j["noise"] = std::move(noise);
  json conv = json::array();
  conv.push_back("gaussian noise parameter is the standard deviation");
  conv.push_back("observation noise std " + std::to_string(spec.mixing.noise_std));
  for (const auto& f : spec.flags) conv.push_back(f);
  j["noise_conventions"] = std::move(conv);
  json mech = json::array();
  for (std::size_t c = 0; c < ds.d(); ++c) {
    const auto& m = spec.mechanisms[spec.dag.leaf_first_order[c]];
    json terms = json::array();
    for (const auto& t : m.terms) {
      terms.push_back({{"parent_node", t.parent},
                       {"linear", t.linear},
                       {"tanh", t.tanh_coef},
                       {"sigmoid", t.sigmoid_coef},
                       {"sigmoid_slope", t.sigmoid_slope},
                       {"sigmoid_shift", t.sigmoid_shift}});
    }
    mech.push_back({{"kind", scm::to_string(m.kind)}, {"bias", m.bias}, {"terms", std::move(terms)}});
  }
  j["mechanisms"] = std::move(mech);
  json weights = json::array();
  for (const auto& w : spec.mixing.weights) weights.push_back(matrix_to_json(w));
  j["mixing"] = {{"dims", spec.mixing.dims},
                 {"leaky_relu_slope", spec.mixing.slope},
                 {"noise_std", spec.mixing.noise_std},
                 {"weights", std::move(weights)}};
  return j;
}

inline void save_dataset(const scm::Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  diff::RowMatrix both(ds.Z.rows(), ds.Z.cols() + ds.X.cols());
  both << ds.Z, ds.X;
  write_text_file(dir / "data.csv", format_csv(dataset_header(ds.d(), ds.o()), both));
  write_text_file(dir / "manifest.json", manifest_json(ds).dump(2) + "\n");
}

// A dataset read back from disk. Ground-truth structure comes from the
// manifest; mechanisms are not reconstructed.
struct LoadedDataset {
  std::string name;
  std::uint64_t seed = 0;
  diff::RowMatrix Z;
  diff::RowMatrix X;
  scm::Adjacency adjacency;  // stored indexing
  json manifest;

  std::size_t d() const { return static_cast<std::size_t>(Z.cols()); }
  std::size_t o() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t n() const { return static_cast<std::size_t>(X.rows()); }
};

inline LoadedDataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory '" + dir.string() + "' does not exist");
  LoadedDataset out;
  out.manifest = json::parse(read_text_file(dir / "manifest.json"));
  const auto d = out.manifest.at("d").get<std::size_t>();
  const auto o = out.manifest.at("o").get<std::size_t>();
  out.name = out.manifest.at("name").get<std::string>();
  out.seed = out.manifest.at("seed").get<std::uint64_t>();
  out.adjacency = out.manifest.at("adjacency").get<scm::Adjacency>();
  Table t = read_csv(dir / "data.csv");
  if (t.header != dataset_header(d, o)) throw IoError("data.csv header does not match manifest dims");
  out.Z = t.values.leftCols(static_cast<Eigen::Index>(d));
  out.X = t.values.rightCols(static_cast<Eigen::Index>(o));
  if (out.adjacency.size() != d * d) throw IoError("manifest adjacency has wrong size");
  return out;
}

inline LoadedDataset to_loaded(const scm::Dataset& ds) {
  LoadedDataset out;
  out.name = ds.name;
  out.seed = ds.seed;
  out.Z = ds.Z;
  out.X = ds.X;
  out.adjacency = ds.stored_adjacency();
  out.manifest = manifest_json(ds);
  return out;
}

}  // namespace covae::io
