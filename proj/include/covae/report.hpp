#pragma once

// Metrics reports: JSON documents, validation, aggregation across runs and the
// plain-text results table.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace covae::report {

using ojson = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metrics of one trained seed. Optional values are serialized as null.
struct SeedMetrics {
  std::uint64_t seed = 0;
  double cod = 0.0;
  std::optional<double> mcc_g;
  std::optional<double> mcc_sg;
  std::optional<double> mcc_r_pairwise;  // against the anchor run; null for the anchor
  double mic = 1.0;
  double rro = 1.0;
  std::optional<double> block_score;
  std::vector<std::size_t> discovered_order;
  ojson losses = ojson::object();
  ojson extra = ojson::object();
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

// Population standard deviation; a single value has std 0.
inline Stat summarize(const std::vector<double>& v) {
  Stat s;
  s.count = v.size();
  if (v.empty()) return s;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  s.mean = m;
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

inline ojson opt(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

inline ojson seed_json(const SeedMetrics& m) {
  ojson j;
  j["seed"] = m.seed;
  j["cod"] = m.cod;
  j["mcc_g"] = opt(m.mcc_g);
  j["mcc_sg"] = opt(m.mcc_sg);
  j["mcc_r_pairwise"] = opt(m.mcc_r_pairwise);
  j["mic"] = m.mic;
  j["rro"] = m.rro;
  j["block_score"] = opt(m.block_score);
  j["discovered_order"] = m.discovered_order;
  j["losses"] = m.losses;
  if (!m.extra.empty()) j["extra"] = m.extra;
  return j;
}

inline const std::vector<std::string>& aggregate_metrics() {
  static const std::vector<std::string> names{"cod", "mcc_r", "mcc_g", "mcc_sg", "mic", "rro", "block_score"};
  return names;
}

// Aggregates a per_seed object. mcc_r is summarized over the pairwise values.
inline ojson aggregate_json(const ojson& per_seed) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& [key, s] : per_seed.items()) {
    (void)key;
    for (const auto& name : aggregate_metrics()) {
      const std::string field = name == "mcc_r" ? "mcc_r_pairwise" : name;
      if (s.contains(field) && s.at(field).is_number()) values[name].push_back(s.at(field).get<double>());
    }
  }
  ojson agg = ojson::object();
  for (const auto& name : aggregate_metrics()) {
    auto it = values.find(name);
    if (it == values.end() || it->second.empty()) {
      agg[name] = nullptr;
      continue;
    }
    const Stat st = summarize(it->second);
    agg[name] = {{"mean", st.mean}, {"std", st.std}, {"count", st.count}};
  }
  return agg;
}

inline ojson build_report(const std::string& dataset, const std::string& method, const std::vector<SeedMetrics>& seeds,
                          std::optional<double> mcc_r, const ojson& config, const ojson& conventions) {
  ojson j;
  j["schema_version"] = kSchemaVersion;
  j["dataset"] = dataset;
  j["method"] = method;
  ojson seed_list = ojson::array();
  for (const auto& s : seeds) seed_list.push_back(s.seed);
  j["seeds"] = seed_list;
  ojson per = ojson::object();
  for (const auto& s : seeds) per[std::to_string(s.seed)] = seed_json(s);
  j["per_seed"] = per;
  j["aggregate"] = aggregate_json(per);
  j["mcc_r"] = opt(mcc_r);
  j["config"] = config;
  j["conventions"] = conventions;
  return j;
}

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw SchemaError("report schema: " + what);
}

inline void check_unit(const ojson& v, const std::string& what) {
  if (v.is_null()) return;
  require(v.is_number(), what + " must be a number or null");
  const double x = v.get<double>();
  require(x >= 0.0 && x <= 1.0 + 1e-12, what + " must lie in [0, 1]");
}

}  // namespace detail

// Structural check mirroring docs/report.schema.json.
inline void validate_report(const ojson& j) {
  using detail::require;
  require(j.is_object(), "document must be an object");
  for (const char* k : {"schema_version", "dataset", "method", "seeds", "per_seed", "aggregate", "conventions"})
    require(j.contains(k), std::string("missing field '") + k + "'");
  require(j.at("schema_version") == kSchemaVersion, "unsupported schema_version");
  require(j.at("dataset").is_string(), "dataset must be a string");
  require(j.at("method").is_string(), "method must be a string");
  require(j.at("seeds").is_array(), "seeds must be an array");
  require(j.at("per_seed").is_object(), "per_seed must be an object");
  require(j.at("aggregate").is_object(), "aggregate must be an object");
  require(j.at("conventions").is_object(), "conventions must be an object");
  require(j.at("per_seed").size() == j.at("seeds").size(), "per_seed and seeds disagree");
  for (const auto& s : j.at("seeds")) {
    require(s.is_number_unsigned(), "seeds must be non-negative integers");
    const std::string key = std::to_string(s.get<std::uint64_t>());
    require(j.at("per_seed").contains(key), "per_seed lacks seed " + key);
    const auto& m = j.at("per_seed").at(key);
    for (const char* k : {"seed", "cod", "mcc_g", "mcc_sg", "mcc_r_pairwise", "mic", "rro", "losses"})
      require(m.contains(k), "per_seed[" + key + "] missing '" + k + "'");
    require(m.at("cod").is_number() && m.at("cod").get<double>() >= 0.0, "cod must be a non-negative number");
    for (const char* k : {"mcc_g", "mcc_sg", "mcc_r_pairwise", "mic", "rro"}) detail::check_unit(m.at(k), std::string(k));
    require(m.at("losses").is_object(), "losses must be an object");
  }
  for (const auto& [name, v] : j.at("aggregate").items()) {
    if (v.is_null()) continue;
    require(v.is_object() && v.contains("mean") && v.contains("std"), "aggregate." + name + " needs mean and std");
    require(v.at("std").get<double>() >= 0.0, "aggregate." + name + ".std must be non-negative");
  }
}

// Merges reports sharing (dataset, method): per-seed entries are united and
// aggregates recomputed. Groups keep first-seen order.
inline std::vector<ojson> merge_reports(const std::vector<ojson>& reports) {
  std::vector<ojson> out;
  for (const auto& r : reports) {
    validate_report(r);
    auto it = std::find_if(out.begin(), out.end(), [&](const ojson& g) {
      return g.at("dataset") == r.at("dataset") && g.at("method") == r.at("method");
    });
    if (it == out.end()) {
      out.push_back(r);
      continue;
    }
    for (const auto& s : r.at("seeds")) {
      const std::string key = std::to_string(s.get<std::uint64_t>());
      if (it->at("per_seed").contains(key)) {
        throw SchemaError("report merge: seed " + key + " appears twice for " + r.at("dataset").get<std::string>() +
                          "/" + r.at("method").get<std::string>());
      }
      (*it)["seeds"].push_back(s);
      (*it)["per_seed"][key] = r.at("per_seed").at(key);
    }
    (*it)["aggregate"] = aggregate_json(it->at("per_seed"));
    (*it)["mcc_r"] = nullptr;
  }
  return out;
}

inline std::string fmt_stat(const ojson& agg, const std::string& name) {
  if (!agg.contains(name) || agg.at(name).is_null()) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f \xC2\xB1 %.2f", agg.at(name).at("mean").get<double>(),
                agg.at(name).at("std").get<double>());
  return buf;
}

inline std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80 ? 1 : 0;
  return w;
}

inline std::string pad(const std::string& s, std::size_t w) { return s + std::string(w - std::min(w, display_width(s)), ' '); }

// Results table: one section per dataset, one row per method, columns
// COD / MCC-R / MCC-G or MCC-SG / MIC / RRO as mean ± std.
inline std::string render_table(const std::vector<ojson>& reports) {
  std::vector<std::string> datasets;
  for (const auto& r : reports) {
    const auto ds = r.at("dataset").get<std::string>();
    if (std::find(datasets.begin(), datasets.end(), ds) == datasets.end()) datasets.push_back(ds);
  }
  std::string out;
  for (const auto& ds : datasets) {
    bool subset = false;
    for (const auto& r : reports)
      if (r.at("dataset") == ds && !r.at("aggregate").at("mcc_sg").is_null()) subset = true;
    const std::vector<std::string> header{"Method", "COD (↓)", "MCC-R (↑)", subset ? "MCC-SG (↑)" : "MCC-G (↑)",
                                          "MIC", "RRO", "seeds"};
    std::vector<std::vector<std::string>> rows{header};
    for (const auto& r : reports) {
      if (r.at("dataset") != ds) continue;
      const auto& a = r.at("aggregate");
      rows.push_back({r.at("method").get<std::string>(), fmt_stat(a, "cod"), fmt_stat(a, "mcc_r"),
                      fmt_stat(a, subset ? "mcc_sg" : "mcc_g"), fmt_stat(a, "mic"), fmt_stat(a, "rro"),
                      std::to_string(r.at("seeds").size())});
    }
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& row : rows)
      for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], display_width(row[c]));
    out += "== " + ds + " ==\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::string line;
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        if (c) line += "  ";
        line += pad(rows[r][c], widths[c]);
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out += line + "\n";
      if (r == 0) {
        std::size_t total = 0;
        for (auto w : widths) total += w;
        out += std::string(total + 2 * (widths.size() - 1), '-') + "\n";
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace covae::report
