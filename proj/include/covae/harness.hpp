#pragma once

// Experiment configuration, multi-seed training runner and evaluation
// pipeline shared by the CLI, the demo and the acceptance suite.

#include "covae/checkpoint.hpp"
#include "covae/dataset_io.hpp"
#include "covae/metrics.hpp"
#include "covae/model.hpp"
#include "covae/ordering.hpp"
#include "covae/report.hpp"
#include "covae/scm.hpp"
#include "covae/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace covae::harness {

using nlohmann::json;
using report::ojson;
namespace fs = std::filesystem;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Method { vae, mfcvae, covae };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::vae: return "vae";
    case Method::mfcvae: return "mfcvae";
    case Method::covae: return "covae";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "vae") return Method::vae;
  if (s == "mfcvae") return Method::mfcvae;
  if (s == "covae") return Method::covae;
  throw ConfigError("unknown method '" + s + "' (expected vae, mfcvae or covae)");
}

// `a..b` (half-open), `a,b,c`, or a single integer.
inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  auto parse_int = [&](const std::string& t) {
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("invalid seed '" + t + "' in '" + text + "'");
    }
    return std::stoull(t);
  };
  std::vector<std::uint64_t> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const auto a = parse_int(text.substr(0, dots));
    const auto b = parse_int(text.substr(dots + 2));
    if (b <= a) throw ConfigError("empty seed range '" + text + "'");
    for (auto s = a; s < b; ++s) out.push_back(s);
    return out;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    out.push_back(parse_int(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  std::set<std::uint64_t> uniq(out.begin(), out.end());
  if (uniq.size() != out.size()) throw ConfigError("duplicate seeds in '" + text + "'");
  return out;
}

struct SteinOptions {
  double eta = 0.01;
  ordering::LossForm loss_form = ordering::LossForm::bce;
  stein::ScoreSquareForm square_form = stein::ScoreSquareForm::elementwise;
};

struct ExperimentConfig {
  std::string dataset = "syn-2";  // directory path or generator name syn-<k> / morpho-<V>
  Method method = Method::covae;
  std::size_t J = 10;
  double alpha = 1.0;
  double beta = 1.0;
  std::size_t layers = 0;  // 0 selects 3 if k < 3 else 6
  std::size_t steps = 15600;
  std::size_t batch = 256;
  double lr = 5e-4;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  SteinOptions stein;
  std::string output = "runs";
  std::size_t n = scm::kDefaultSamples;  // rows generated for named datasets
  std::uint64_t data_seed = 0;
  train::OrderInput order_on = train::OrderInput::samples;
  std::size_t trace_every = 100;
};

inline std::size_t default_layers(std::size_t k) { return k < 3 ? 3 : 6; }

// Enforces the alpha / J consistency of each method. vae and mfcvae force
// alpha = 0 (and J = 1 for vae); covae requires alpha > 0 and J > 1.
inline void apply_method_preset(ExperimentConfig& c) {
  switch (c.method) {
    case Method::vae:
      c.alpha = 0.0;
      c.J = 1;
      break;
    case Method::mfcvae:
      c.alpha = 0.0;
      if (c.J <= 1) throw ConfigError("method mfcvae requires J > 1");
      break;
    case Method::covae:
      if (!(c.alpha > 0.0)) throw ConfigError("method covae requires alpha > 0");
      if (c.J <= 1) throw ConfigError("method covae requires J > 1");
      break;
  }
}

inline void validate(const ExperimentConfig& c) {
  if (c.dataset.empty()) throw ConfigError("dataset must be set");
  if (c.steps == 0) throw ConfigError("steps must be positive");
  if (c.batch < 2) throw ConfigError("batch must be at least 2");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (c.beta < 0.0 || c.alpha < 0.0) throw ConfigError("alpha and beta must be non-negative");
  if (c.J == 0) throw ConfigError("J must be positive");
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (!(c.stein.eta > 0.0)) throw ConfigError("stein.eta must be positive");
  switch (c.method) {
    case Method::vae:
      if (c.alpha != 0.0 || c.J != 1) throw ConfigError("method vae requires alpha = 0 and J = 1");
      break;
    case Method::mfcvae:
      if (c.alpha != 0.0 || c.J <= 1) throw ConfigError("method mfcvae requires alpha = 0 and J > 1");
      break;
    case Method::covae:
      if (!(c.alpha > 0.0) || c.J <= 1) throw ConfigError("method covae requires alpha > 0 and J > 1");
      break;
  }
}

inline const char* to_string(ordering::LossForm f) { return f == ordering::LossForm::bce ? "bce" : "ce"; }
inline const char* to_string(stein::ScoreSquareForm f) {
  return f == stein::ScoreSquareForm::elementwise ? "elementwise" : "row_norm";
}
inline const char* to_string(train::OrderInput o) { return o == train::OrderInput::samples ? "samples" : "means"; }

inline ojson config_json(const ExperimentConfig& c) {
  ojson j;
  j["dataset"] = c.dataset;
  j["method"] = to_string(c.method);
  j["J"] = c.J;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["layers"] = c.layers;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["seeds"] = c.seeds;
  j["stein"] = {{"eta", c.stein.eta}, {"loss_form", to_string(c.stein.loss_form)},
                {"square_form", to_string(c.stein.square_form)}};
  j["output"] = c.output;
  j["n"] = c.n;
  j["data_seed"] = c.data_seed;
  j["order_on"] = to_string(c.order_on);
  j["trace_every"] = c.trace_every;
  return j;
}

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <class T>
T get_as(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

// Strict JSON -> config: unknown keys are an error; missing keys keep
// defaults. The method preset is validated, not silently applied.
inline ExperimentConfig config_from_json(const json& j, ExperimentConfig c = {}) {
  detail::check_keys(j,
                     {"dataset", "method", "J", "alpha", "beta", "layers", "steps", "batch", "lr", "seeds", "stein",
                      "output", "n", "data_seed", "order_on", "trace_every"},
                     "config");
  using detail::get_as;
  if (j.contains("dataset")) c.dataset = get_as<std::string>(j, "dataset");
  if (j.contains("method")) c.method = parse_method(get_as<std::string>(j, "method"));
  if (j.contains("J")) c.J = get_as<std::size_t>(j, "J");
  if (j.contains("alpha")) c.alpha = get_as<double>(j, "alpha");
  if (j.contains("beta")) c.beta = get_as<double>(j, "beta");
  if (j.contains("layers")) c.layers = get_as<std::size_t>(j, "layers");
  if (j.contains("steps")) c.steps = get_as<std::size_t>(j, "steps");
  if (j.contains("batch")) c.batch = get_as<std::size_t>(j, "batch");
  if (j.contains("lr")) c.lr = get_as<double>(j, "lr");
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    c.seeds = s.is_string() ? parse_seeds(s.get<std::string>()) : get_as<std::vector<std::uint64_t>>(j, "seeds");
  }
  if (j.contains("stein")) {
    const auto& s = j.at("stein");
    detail::check_keys(s, {"eta", "loss_form", "square_form"}, "config.stein");
    if (s.contains("eta")) c.stein.eta = get_as<double>(s, "eta");
    if (s.contains("loss_form")) {
      const auto f = get_as<std::string>(s, "loss_form");
      if (f != "bce" && f != "ce") throw ConfigError("stein.loss_form must be 'bce' or 'ce'");
      c.stein.loss_form = f == "bce" ? ordering::LossForm::bce : ordering::LossForm::ce;
    }
    if (s.contains("square_form")) {
      const auto f = get_as<std::string>(s, "square_form");
      if (f != "elementwise" && f != "row_norm") throw ConfigError("stein.square_form must be 'elementwise' or 'row_norm'");
      c.stein.square_form = f == "elementwise" ? stein::ScoreSquareForm::elementwise : stein::ScoreSquareForm::row_norm;
    }
  }
  if (j.contains("output")) c.output = get_as<std::string>(j, "output");
  if (j.contains("n")) c.n = get_as<std::size_t>(j, "n");
  if (j.contains("data_seed")) c.data_seed = get_as<std::uint64_t>(j, "data_seed");
  if (j.contains("order_on")) {
    const auto o = get_as<std::string>(j, "order_on");
    if (o != "samples" && o != "means") throw ConfigError("order_on must be 'samples' or 'means'");
    c.order_on = o == "samples" ? train::OrderInput::samples : train::OrderInput::means;
  }
  if (j.contains("trace_every")) c.trace_every = get_as<std::size_t>(j, "trace_every");
  return c;
}

inline std::vector<std::string> preset_names() { return {"syn2-paper", "syn2-quick", "syn15-quick"}; }

inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "syn2-paper") {
    c.dataset = "syn-2";
    c.steps = 15600;
  } else if (name == "syn2-quick") {
    c.dataset = "syn-2";
    c.steps = 2000;
  } else if (name == "syn15-quick") {
    c.dataset = "syn-15";
    c.steps = 4000;
    c.n = 2000;
    c.seeds = {0, 1, 2};
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

// Resolves a dataset reference: an existing directory is loaded, otherwise
// the name is generated in memory (syn-<k> or morpho-<variant>).
inline io::LoadedDataset resolve_dataset(const std::string& ref, std::size_t n, std::uint64_t data_seed) {
  if (fs::is_directory(ref)) return io::load_dataset(ref);
  if (ref.rfind("syn-", 0) == 0) {
    std::size_t k = 0;
    try {
      k = std::stoul(ref.substr(4));
    } catch (const std::exception&) {
      throw ConfigError("invalid dataset name '" + ref + "'");
    }
    if (k == 0) throw ConfigError("invalid dataset name '" + ref + "'");
    return io::to_loaded(scm::make_syn(k, n, data_seed));
  }
  if (ref.rfind("morpho-", 0) == 0) {
    return io::to_loaded(scm::make_morpho(scm::parse_morpho_variant(ref.substr(7)), n, data_seed));
  }
  throw io::IoError("dataset '" + ref + "' is neither a directory nor a known generator name");
}

inline model::ModelConfig model_config(const ExperimentConfig& c, std::size_t obs_dim, std::size_t latent_dim,
                                       std::uint64_t seed) {
  model::ModelConfig m;
  m.obs_dim = obs_dim;
  m.latent_dim = latent_dim;
  m.layers = c.layers ? c.layers : default_layers(latent_dim);
  m.components = c.J;
  m.alpha = c.alpha;
  m.beta = c.beta;
  m.learn_prior = c.J > 1;
  m.seed = seed;
  return m;
}

inline ordering::OrderLossConfig order_loss_config(const ExperimentConfig& c) {
  ordering::OrderLossConfig o;
  o.stein.ridge = c.stein.eta;
  o.stein.square_form = c.stein.square_form;
  o.form = c.stein.loss_form;
  o.alpha = c.alpha;
  return o;
}

inline train::TrainConfig train_config(const ExperimentConfig& c, std::uint64_t seed) {
  train::TrainConfig t;
  t.steps = c.steps;
  t.batch = c.batch;
  t.lr = c.lr;
  t.alpha = c.alpha;
  t.seed = seed;
  t.trace_every = c.trace_every;
  t.order_on = c.order_on;
  t.order = order_loss_config(c);
  return t;
}

inline ojson trace_row_json(const train::TraceRow& r) {
  auto num = [](double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); };
  return {{"step", r.step},           {"elbo", num(r.elbo)},
          {"reconstruction", num(r.reconstruction)}, {"kl_z", num(r.kl_z)},
          {"kl_u", num(r.kl_u)},      {"order_loss", num(r.order_loss)},
          {"total", num(r.total)}};
}

inline std::string trace_csv(const std::vector<train::TraceRow>& trace) {
  std::string out = "step,elbo,reconstruction,kl_z,kl_u,order_loss,total\n";
  for (const auto& r : trace) {
    out += std::to_string(r.step);
    for (double v : {r.elbo, r.reconstruction, r.kl_z, r.kl_u, r.order_loss, r.total}) {
      out += ',';
      if (std::isfinite(v)) io::append_double(out, v);
      else out += "nan";
    }
    out += '\n';
  }
  return out;
}

// Worker count: COVAE_THREADS if set, else hardware concurrency, capped by
// the number of tasks.
inline std::size_t worker_count(std::size_t tasks) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COVAE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) n = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max<std::size_t>(1, std::min(n, tasks));
}

// Runs f(i) for i in [0, count) on a small pool; the first exception (by
// task index) is rethrown after all workers finish.
template <class F>
void parallel_for(std::size_t count, F f) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = worker_count(count);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct SeedRun {
  std::uint64_t seed = 0;
  model::CovaeModel model;
  train::TrainResult result;
  std::optional<std::string> error;  // divergence message
};

inline fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed_" + std::to_string(seed)); }

// Trains every seed. Divergent seeds keep their partial trace and are
// reported through SeedRun::error instead of aborting the other seeds.
inline std::vector<SeedRun> run_training(const ExperimentConfig& cfg, const io::LoadedDataset& data) {
  validate(cfg);
  std::vector<SeedRun> runs(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), [&](std::size_t i) {
    SeedRun& r = runs[i];
    r.seed = cfg.seeds[i];
    r.model = model::CovaeModel(model_config(cfg, data.o(), data.d(), r.seed));
    try {
      r.result = train::train(r.model, data.X, train_config(cfg, r.seed));
    } catch (const train::TrainingDiverged& e) {
      r.error = e.what();
      r.result.trace = e.trace;
      r.result.steps_done = e.step > 0 ? e.step - 1 : 0;
      if (!e.trace.empty()) r.result.last = e.trace.back();
    }
  });
  return runs;
}

inline void save_runs(const ExperimentConfig& cfg, const io::LoadedDataset& data, const std::vector<SeedRun>& runs,
                      const fs::path& out) {
  fs::create_directories(out);
  io::write_text_file(out / "config.json", config_json(cfg).dump(2) + "\n");
  for (const auto& r : runs) {
    const fs::path dir = seed_dir(out, r.seed);
    io::write_text_file(dir / "trace.csv", trace_csv(r.result.trace));
    checkpoint::Metadata meta;
    meta.method = to_string(cfg.method);
    meta.dataset = data.name;
    meta.seed = r.seed;
    meta.step = r.result.steps_done;
    meta.extra = {{"final", json::parse(trace_row_json(r.result.last).dump())},
                  {"diverged", r.error.has_value()},
                  {"error", r.error ? json(*r.error) : json(nullptr)}};
    checkpoint::save(r.model, meta, dir / "checkpoint");
  }
}

struct EvalOptions {
  ordering::DiscoveryConfig discovery;
  ordering::AdjacencyConfig adjacency;
  std::size_t mcc_subset_cap = 2000;
  std::size_t mic_subset_cap = 200;
  std::uint64_t metric_seed = 0;
};

inline ojson conventions_json(const EvalOptions& o, const ExperimentConfig* cfg) {
  ojson c;
  c["correlation"] = "pearson (absolute value)";
  c["constant_column_correlation"] = 0.0;
  c["assignment"] = "exact maximum-weight matching (Hungarian)";
  c["mcc_sg_subsets"] = "exhaustive when C(d_hat, d) <= " + std::to_string(o.mcc_subset_cap) + ", else seeded sample";
  c["mcc_r"] = "mean MCC-G of runs 1..K-1 against the first listed seed";
  c["cod"] = "count of strict-upper-triangle edges of the adjacency discovered on the learned latents (A[i][j] = i -> j)";
  c["latents"] = "posterior means";
  c["discovery"] = {{"max_rows", o.discovery.max_rows},
                    {"standardize", o.discovery.standardize},
                    {"stein_ridge", o.discovery.stein.ridge}};
  c["adjacency"] = {{"method", "leave-one-parent-out kernel ridge regression"},
                    {"prune_threshold", o.adjacency.prune_threshold},
                    {"train_fraction", o.adjacency.train_fraction},
                    {"ridge_per_sample", o.adjacency.ridge},
                    {"max_rows", o.adjacency.max_rows}};
  c["mic"] = "mean rank ratio over square c_l x c_l row-subsets of each output x input decoder weight, minimum over "
             "layers; exhaustive when C(rows, cols) <= " + std::to_string(o.mic_subset_cap) + ", else seeded sample";
  c["rro"] = "mean over layers of rank / min(rows, cols)";
  c["rank_tolerance"] = metrics::kRankTolerance;
  c["std"] = "population standard deviation over seeds";
  c["random_streams"] = "per-seed master seed; named sub-streams init, batch, noise; dataset stream data";
  if (cfg) {
    c["order_loss_samples"] = to_string(cfg->order_on);
    c["beta_applies_to"] = "both KL terms";
  }
  return c;
}

struct Evaluated {
  report::SeedMetrics metrics;
  diff::RowMatrix latents;
};

// Metrics of one latent matrix against the dataset ground truth.
inline Evaluated evaluate_latents(const diff::RowMatrix& z_hat, const io::LoadedDataset& data,
                                  const std::vector<diff::RowMatrix>& decoder_weights, const EvalOptions& opt,
                                  std::uint64_t seed) {
  Evaluated e;
  e.latents = z_hat;
  auto& m = e.metrics;
  m.seed = seed;
  const auto d_hat = static_cast<std::size_t>(z_hat.cols());
  const auto order = ordering::discover_order(z_hat, opt.discovery);
  const auto graph = ordering::estimate_adjacency(z_hat, order, opt.adjacency);
  m.discovered_order = order;
  m.cod = static_cast<double>(metrics::cod(graph.adjacency, d_hat));
  if (d_hat == data.d()) {
    m.mcc_g = metrics::mcc_g(z_hat, data.Z);
    const auto blocks = metrics::level_blocks(data.adjacency, data.d());
    m.block_score = metrics::linear_map_fit(z_hat, data.Z, blocks).block_score;
  } else {
    m.mcc_sg = metrics::mcc_sg(z_hat, data.Z, opt.mcc_subset_cap, opt.metric_seed);
  }
  const auto mic = metrics::mic_detail(decoder_weights, opt.mic_subset_cap, opt.metric_seed);
  m.mic = mic.value;
  m.rro = metrics::rro(decoder_weights);
  ojson edges = ojson::array();
  for (std::size_t i = 0; i < d_hat; ++i)
    for (std::size_t j = 0; j < d_hat; ++j)
      if (graph.edge(i, j)) edges.push_back({i, j});
  m.extra["discovered_edges"] = edges;
  m.extra["mic_per_layer"] = mic.per_layer;
  return e;
}

struct CheckpointEntry {
  fs::path stem;
  checkpoint::Loaded loaded;
};

// Checkpoints under `dir` (seed_*/checkpoint.json or *.json), sorted by seed.
inline std::vector<CheckpointEntry> find_checkpoints(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw io::IoError("checkpoint directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> stems;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    fs::path bin = entry.path();
    bin.replace_extension(".bin");
    if (fs::exists(bin)) stems.push_back(fs::path(entry.path()).replace_extension());
  }
  std::vector<CheckpointEntry> out;
  for (const auto& s : stems) out.push_back({s, checkpoint::load(s)});
  std::sort(out.begin(), out.end(), [](const CheckpointEntry& a, const CheckpointEntry& b) {
    return a.loaded.meta.seed < b.loaded.meta.seed;
  });
  if (out.empty()) throw io::IoError("no checkpoints found under '" + dir.string() + "'");
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].loaded.meta.seed == out[i - 1].loaded.meta.seed)
      throw io::IoError("duplicate checkpoint for seed " + std::to_string(out[i].loaded.meta.seed));
  return out;
}

inline ojson losses_json(const json& extra) {
  if (!extra.contains("final")) return ojson::object();
  return ojson::parse(extra.at("final").dump());
}

// Evaluates trained models against a dataset and assembles the report.
inline ojson evaluate_models(const std::vector<const model::CovaeModel*>& models, const std::vector<std::uint64_t>& seeds,
                             const std::vector<ojson>& losses, const io::LoadedDataset& data, const std::string& method,
                             const ojson& config, const EvalOptions& opt, const ExperimentConfig* cfg = nullptr) {
  std::vector<Evaluated> evals(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& mc = models[i]->config();
    if (mc.obs_dim != data.o()) {
      throw ShapeError("checkpoint for seed " + std::to_string(seeds[i]) + " expects " + std::to_string(mc.obs_dim) +
                       " observed columns, dataset has " + std::to_string(data.o()));
    }
    if (mc.latent_dim < data.d()) {
      throw ShapeError("checkpoint for seed " + std::to_string(seeds[i]) + " has " + std::to_string(mc.latent_dim) +
                       " latents, fewer than the " + std::to_string(data.d()) + " ground-truth variables");
    }
  }
  parallel_for(models.size(), [&](std::size_t i) {
    evals[i] = evaluate_latents(models[i]->latents(data.X), data, models[i]->decoder().weight_matrices(), opt, seeds[i]);
    evals[i].metrics.losses = losses[i];
  });
  std::optional<double> mcc_r;
  if (evals.size() >= 2) {
    double s = 0.0;
    for (std::size_t k = 1; k < evals.size(); ++k) {
      const double v = metrics::mcc_g(evals[k].latents, evals[0].latents);
      evals[k].metrics.mcc_r_pairwise = v;
      s += v;
    }
    mcc_r = s / static_cast<double>(evals.size() - 1);
  }
  std::vector<report::SeedMetrics> per;
  for (const auto& e : evals) per.push_back(e.metrics);
  return report::build_report(data.name, method, per, mcc_r, config, conventions_json(opt, cfg));
}

inline ojson evaluate_runs(const ExperimentConfig& cfg, const io::LoadedDataset& data, const std::vector<SeedRun>& runs,
                           const EvalOptions& opt = {}) {
  std::vector<const model::CovaeModel*> models;
  std::vector<std::uint64_t> seeds;
  std::vector<ojson> losses;
  for (const auto& r : runs) {
    models.push_back(&r.model);
    seeds.push_back(r.seed);
    losses.push_back(trace_row_json(r.result.last));
  }
  return evaluate_models(models, seeds, losses, data, to_string(cfg.method), config_json(cfg), opt, &cfg);
}

// Debug mode: the ground-truth latents evaluated as if they were learned.
inline ojson evaluate_ground_truth(const io::LoadedDataset& data, const EvalOptions& opt = {}) {
  report::SeedMetrics m;
  m.mcc_g = metrics::mcc_g(data.Z, data.Z);
  m.cod = static_cast<double>(metrics::cod(data.adjacency, data.d()));
  m.block_score = 1.0;
  if (data.manifest.contains("mixing")) {
    std::vector<diff::RowMatrix> weights;
    for (const auto& w : data.manifest.at("mixing").at("weights")) weights.push_back(io::matrix_from_json(w));
    m.mic = metrics::mic(weights, opt.mic_subset_cap, opt.metric_seed);
    m.rro = metrics::rro(weights);
  }
  m.discovered_order = ordering::discover_order(data.Z, opt.discovery);
  const auto graph = ordering::estimate_adjacency(data.Z, m.discovered_order, opt.adjacency);
  m.extra["discovered_cod"] = metrics::cod(graph.adjacency, data.d());
  return report::build_report(data.name, "ground-truth", {m}, std::nullopt, ojson::object(), conventions_json(opt, nullptr));
}

}  // namespace covae::harness
