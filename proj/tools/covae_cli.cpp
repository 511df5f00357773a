// covae command-line front end: gen, train, eval, order, report.
//
// Failures print a single line `covae-error: <category>: <message>` on
// stderr. Exit codes: 0 success, 1 runtime failure, 2 usage or missing input,
// 3 numerical divergence.

#include "covae/covae.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace covae;
using nlohmann::json;
using report::ojson;

namespace {

struct CliFailure : std::runtime_error {
  CliFailure(int code, std::string category, const std::string& msg)
      : std::runtime_error(msg), code(code), category(std::move(category)) {}
  int code;
  std::string category;
};

[[noreturn]] void fail(int code, const std::string& category, const std::string& msg) {
  throw CliFailure(code, category, msg);
}

// Replaces newlines so every diagnostic stays on one line.
std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

io::LoadedDataset load_input_dataset(const std::string& ref, std::size_t n, std::uint64_t data_seed) {
  try {
    return harness::resolve_dataset(ref, n, data_seed);
  } catch (const io::IoError& e) {
    fail(2, "input", e.what());
  } catch (const harness::ConfigError& e) {
    fail(2, "input", e.what());
  }
}

// ---- gen -------------------------------------------------------------------

struct GenArgs {
  std::string family;
  std::size_t k = 2;
  std::string variant = "TSWI";
  std::size_t n = scm::kDefaultSamples;
  std::uint64_t seed = 0;
  std::string out;
  std::string gamma = "shape_rate";
};

int run_gen(const GenArgs& a) {
  scm::Dataset ds;
  if (a.family == "syn") {
    if (a.k == 0) fail(2, "usage", "--k must be at least 1");
    ds = scm::make_syn(a.k, a.n, a.seed);
  } else if (a.family == "morpho") {
    if (a.gamma != "shape_rate" && a.gamma != "shape_scale") fail(2, "usage", "--gamma must be shape_rate or shape_scale");
    const auto conv = a.gamma == "shape_rate" ? scm::GammaConvention::shape_rate : scm::GammaConvention::shape_scale;
    try {
      ds = scm::make_morpho(scm::parse_morpho_variant(a.variant), a.n, a.seed, conv);
    } catch (const std::invalid_argument& e) {
      fail(2, "usage", e.what());
    }
  } else {
    fail(2, "usage", "invalid family '" + a.family + "' (expected syn or morpho)");
  }
  try {
    io::save_dataset(ds, a.out);
  } catch (const io::IoError& e) {
    fail(1, "io", e.what());
  }
  const ojson summary{{"name", ds.name}, {"d", ds.d()}, {"o", ds.o()}, {"n", ds.n()}, {"edges", ds.spec.dag.edge_count()},
                      {"out", a.out}};
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string preset;
  std::optional<std::string> method, dataset, seeds, out, loss_form, order_on;
  std::optional<std::size_t> J, layers, steps, batch, n, trace_every;
  std::optional<double> alpha, beta, lr, eta;
  std::optional<std::uint64_t> data_seed;
};

harness::ExperimentConfig build_config(const TrainArgs& a) {
  harness::ExperimentConfig c;
  try {
    if (!a.preset.empty()) c = harness::preset(a.preset);
    if (!a.config_path.empty()) {
      if (!fs::exists(a.config_path)) fail(2, "input", "config file '" + a.config_path + "' does not exist");
      json j;
      try {
        j = json::parse(io::read_text_file(a.config_path));
      } catch (const json::parse_error& e) {
        fail(2, "config", std::string("cannot parse config: ") + e.what());
      }
      c = harness::config_from_json(j, c);
    }
    if (a.method) c.method = harness::parse_method(*a.method);
    const bool method_flag = a.method.has_value();
    if (a.dataset) c.dataset = *a.dataset;
    if (a.seeds) c.seeds = harness::parse_seeds(*a.seeds);
    if (a.out) c.output = *a.out;
    if (a.J) c.J = *a.J;
    if (a.layers) c.layers = *a.layers;
    if (a.steps) c.steps = *a.steps;
    if (a.batch) c.batch = *a.batch;
    if (a.n) c.n = *a.n;
    if (a.trace_every) c.trace_every = *a.trace_every;
    if (a.alpha) c.alpha = *a.alpha;
    if (a.beta) c.beta = *a.beta;
    if (a.lr) c.lr = *a.lr;
    if (a.eta) c.stein.eta = *a.eta;
    if (a.data_seed) c.data_seed = *a.data_seed;
    if (a.loss_form) c = harness::config_from_json(json{{"stein", {{"loss_form", *a.loss_form}}}}, c);
    if (a.order_on) c = harness::config_from_json(json{{"order_on", *a.order_on}}, c);
    if (method_flag || a.config_path.empty()) {
      const double alpha_before = c.alpha;
      const std::size_t j_before = c.J;
      harness::apply_method_preset(c);
      if ((a.alpha && alpha_before != c.alpha) || (a.J && j_before != c.J)) {
        std::cerr << "note: method " << harness::to_string(c.method) << " forces alpha=" << c.alpha << " J=" << c.J
                  << "\n";
      }
    }
    harness::validate(c);
  } catch (const harness::ConfigError& e) {
    fail(2, "config", e.what());
  }
  return c;
}

int run_train(const TrainArgs& a) {
  const auto cfg = build_config(a);
  const auto data = load_input_dataset(cfg.dataset, cfg.n, cfg.data_seed);
  const auto runs = harness::run_training(cfg, data);
  try {
    harness::save_runs(cfg, data, runs, cfg.output);
  } catch (const io::IoError& e) {
    fail(1, "io", e.what());
  }
  std::optional<std::string> first_error;
  for (const auto& r : runs) {
    ojson line{{"seed", r.seed},
               {"steps", r.result.steps_done},
               {"checkpoint", (harness::seed_dir(cfg.output, r.seed) / "checkpoint").string()},
               {"final", harness::trace_row_json(r.result.last)}};
    if (r.error) {
      line["error"] = *r.error;
      if (!first_error) first_error = "seed " + std::to_string(r.seed) + ": " + *r.error;
    }
    std::cout << line.dump() << "\n";
  }
  if (first_error) fail(3, "numerical", *first_error + " (partial trace retained)");
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoints;
  std::string dataset;
  std::string out = "report.json";
  bool ground_truth = false;
  bool standardize = false;
};

void write_report(const ojson& rep, const std::string& out) {
  report::validate_report(rep);
  try {
    io::write_text_file(out, rep.dump(2) + "\n");
    io::write_text_file(fs::path(out).replace_extension(".txt"), report::render_table({rep}));
  } catch (const io::IoError& e) {
    fail(1, "io", e.what());
  }
  std::cout << report::render_table({rep});
}

int run_eval(const EvalArgs& a) {
  harness::EvalOptions opt;
  opt.discovery.standardize = a.standardize;
  ojson config = ojson::object();
  std::size_t n = scm::kDefaultSamples;
  std::uint64_t data_seed = 0;
  if (!a.checkpoints.empty() && fs::exists(fs::path(a.checkpoints) / "config.json")) {
    config = ojson::parse(io::read_text_file(fs::path(a.checkpoints) / "config.json"));
    n = config.value("n", n);
    data_seed = config.value("data_seed", data_seed);
  }
  const auto data = load_input_dataset(a.dataset, n, data_seed);
  if (a.ground_truth) {
    write_report(harness::evaluate_ground_truth(data, opt), a.out);
    return 0;
  }
  if (a.checkpoints.empty()) fail(2, "usage", "--checkpoints is required unless --ground-truth is given");
  std::vector<harness::CheckpointEntry> entries;
  try {
    entries = harness::find_checkpoints(a.checkpoints);
  } catch (const io::IoError& e) {
    fail(2, "input", e.what());
  }
  std::vector<const model::CovaeModel*> models;
  std::vector<std::uint64_t> seeds;
  std::vector<ojson> losses;
  const std::string method = entries.front().loaded.meta.method;
  for (const auto& e : entries) {
    if (e.loaded.meta.method != method) fail(1, "input", "checkpoints mix methods '" + method + "' and '" + e.loaded.meta.method + "'");
    models.push_back(&e.loaded.model);
    seeds.push_back(e.loaded.meta.seed);
    losses.push_back(harness::losses_json(e.loaded.meta.extra));
  }
  ojson rep;
  try {
    rep = harness::evaluate_models(models, seeds, losses, data, method, config, opt);
  } catch (const ShapeError& e) {
    fail(1, "shape", e.what());
  }
  write_report(rep, a.out);
  return 0;
}

// ---- order -----------------------------------------------------------------

struct OrderArgs {
  std::string data;
  std::string out = "graph.json";
  std::string columns = "auto";
  double threshold = 0.05;
  bool standardize = false;
};

int run_order(const OrderArgs& a) {
  fs::path csv = a.data;
  if (fs::is_directory(csv)) csv /= "data.csv";
  if (!fs::exists(csv)) fail(2, "input", "data file '" + csv.string() + "' does not exist");
  io::Table t;
  try {
    t = io::read_csv(csv);
  } catch (const io::IoError& e) {
    fail(2, "input", e.what());
  }
  std::vector<Eigen::Index> cols;
  std::vector<std::string> names;
  const bool has_z = std::any_of(t.header.begin(), t.header.end(), [](const std::string& h) { return h.rfind("z_", 0) == 0; });
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    const std::string& h = t.header[c];
    bool take = a.columns == "all";
    if (a.columns == "auto") take = !has_z || h.rfind("z_", 0) == 0;
    if (a.columns == "z") take = h.rfind("z_", 0) == 0;
    if (a.columns == "x") take = h.rfind("x_", 0) == 0;
    if (take) {
      cols.push_back(static_cast<Eigen::Index>(c));
      names.push_back(h);
    }
  }
  if (a.columns != "auto" && a.columns != "all" && a.columns != "z" && a.columns != "x") {
    fail(2, "usage", "--columns must be auto, all, z or x");
  }
  if (cols.empty()) fail(2, "input", "no columns selected from '" + csv.string() + "'");
  diff::RowMatrix z(t.values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) z.col(static_cast<Eigen::Index>(k)) = t.values.col(cols[k]);
  ordering::DiscoveryConfig dc;
  dc.standardize = a.standardize;
  ordering::AdjacencyConfig ac;
  ac.prune_threshold = a.threshold;
  if (static_cast<std::size_t>(z.rows()) < dc.stein.min_batch) {
    fail(2, "input", "need at least " + std::to_string(dc.stein.min_batch) + " rows, got " + std::to_string(z.rows()));
  }
  std::vector<std::size_t> order{0};
  ordering::DiscoveredGraph g;
  try {
    order = ordering::discover_order(z, dc);
    g = ordering::estimate_adjacency(z, order, ac);
  } catch (const NumericalError& e) {
    fail(3, "numerical", e.what());
  }
  const std::size_t d = names.size();
  ojson adj = ojson::array();
  for (std::size_t i = 0; i < d; ++i) {
    ojson row = ojson::array();
    for (std::size_t j = 0; j < d; ++j) row.push_back(g.edge(i, j) ? 1 : 0);
    adj.push_back(row);
  }
  const ojson out{{"columns", names},
                  {"order", order},
                  {"order_names",
                   [&] {
                     ojson o = ojson::array();
                     for (auto i : order) o.push_back(names[i]);
                     return o;
                   }()},
                  {"adjacency", adj},
                  {"adjacency_convention", "adjacency[i][j] = 1 means column i -> column j"},
                  {"prune_threshold", g.prune_threshold},
                  {"cod_identity", metrics::cod(g.adjacency, d)}};
  try {
    io::write_text_file(a.out, out.dump(2) + "\n");
  } catch (const io::IoError& e) {
    fail(1, "io", e.what());
  }
  std::cout << ojson{{"order", order}, {"edges", std::count(g.adjacency.begin(), g.adjacency.end(), 1)},
                     {"cod_identity", metrics::cod(g.adjacency, d)}}
                   .dump()
            << "\n";
  return 0;
}

// ---- report ----------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

int run_report(const ReportArgs& a) {
  std::vector<ojson> reports;
  for (const auto& r : a.runs) {
    std::vector<fs::path> files;
    if (fs::is_directory(r)) {
      for (const auto& e : fs::recursive_directory_iterator(r))
        if (e.is_regular_file() && e.path().filename() == "report.json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      if (files.empty()) fail(2, "input", "no report.json under '" + r + "'");
    } else if (fs::exists(r)) {
      files.push_back(r);
    } else {
      fail(2, "input", "report '" + r + "' does not exist");
    }
    for (const auto& f : files) {
      try {
        reports.push_back(ojson::parse(io::read_text_file(f)));
      } catch (const ojson::parse_error& e) {
        fail(1, "schema", f.string() + ": " + e.what());
      }
    }
  }
  std::vector<ojson> merged;
  try {
    merged = report::merge_reports(reports);
  } catch (const report::SchemaError& e) {
    fail(1, "schema", e.what());
  }
  const std::string table = report::render_table(merged);
  if (!a.out.empty()) {
    ojson doc{{"reports", merged}};
    try {
      io::write_text_file(a.out, doc.dump(2) + "\n");
      io::write_text_file(fs::path(a.out).replace_extension(".txt"), table);
    } catch (const io::IoError& e) {
      fail(1, "io", e.what());
    }
  }
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coVAE: causally ordered variational autoencoder experiments"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset (data.csv + manifest.json)");
  g->add_option("--family", gen.family, "syn or morpho")->required();
  g->add_option("--k", gen.k, "Latent dimension for the syn family");
  g->add_option("--variant", gen.variant, "TI, IT, TS or TSWI for the morpho family");
  g->add_option("--n", gen.n, "Number of samples");
  g->add_option("--seed", gen.seed, "Dataset seed");
  g->add_option("--gamma", gen.gamma, "Gamma parameter convention: shape_rate or shape_scale");
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one model per seed");
  t->add_option("--config", tr.config_path, "JSON experiment config");
  t->add_option("--preset", tr.preset, "syn2-paper, syn2-quick or syn15-quick");
  t->add_option("--method", tr.method, "vae, mfcvae or covae");
  t->add_option("--dataset", tr.dataset, "Dataset directory or generator name (syn-<k>, morpho-<V>)");
  t->add_option("--seeds", tr.seeds, "Seeds: a..b (half-open), a,b,c or a single seed");
  t->add_option("--out", tr.out, "Output directory");
  t->add_option("--J", tr.J, "Mixture components");
  t->add_option("--alpha", tr.alpha, "Ordering-loss weight");
  t->add_option("--beta", tr.beta, "KL weight");
  t->add_option("--layers", tr.layers, "Encoder/decoder layer count (0 = 3 if k < 3 else 6)");
  t->add_option("--steps", tr.steps, "Training steps");
  t->add_option("--batch", tr.batch, "Batch size");
  t->add_option("--lr", tr.lr, "Adam learning rate");
  t->add_option("--eta", tr.eta, "Stein ridge");
  t->add_option("--loss-form", tr.loss_form, "bce or ce");
  t->add_option("--order-on", tr.order_on, "samples or means");
  t->add_option("--n", tr.n, "Rows generated for named datasets");
  t->add_option("--data-seed", tr.data_seed, "Seed for named datasets");
  t->add_option("--trace-every", tr.trace_every, "Trace interval in steps");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints and write a metrics report");
  e->add_option("--checkpoints", ev.checkpoints, "Directory of checkpoints (output of train)");
  e->add_option("--dataset", ev.dataset, "Dataset directory or generator name")->required();
  e->add_option("--out", ev.out, "Report JSON path (a .txt table is written alongside)");
  e->add_flag("--ground-truth", ev.ground_truth, "Evaluate the ground-truth latents against themselves");
  e->add_flag("--standardize", ev.standardize, "Z-score latents before order discovery");

  OrderArgs od;
  auto* o = app.add_subcommand("order", "Discover a leaf-first order and adjacency from CSV columns");
  o->add_option("--data", od.data, "CSV file or dataset directory")->required();
  o->add_option("--out", od.out, "Output graph JSON");
  o->add_option("--columns", od.columns, "auto, all, z or x");
  o->add_option("--threshold", od.threshold, "Relative MSE pruning threshold");
  o->add_flag("--standardize", od.standardize, "Z-score columns before order discovery");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Merge reports and print the results table");
  r->add_option("--runs", rp.runs, "Report files or directories containing report.json")->required();
  r->add_option("--out", rp.out, "Merged JSON output (optional)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "covae-error: usage: " << one_line(ex.what()) << "\n";
    return 2;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*o) return run_order(od);
    if (*r) return run_report(rp);
  } catch (const CliFailure& ex) {
    std::cerr << "covae-error: " << ex.category << ": " << one_line(ex.what()) << "\n";
    return ex.code;
  } catch (const report::SchemaError& ex) {
    std::cerr << "covae-error: schema: " << one_line(ex.what()) << "\n";
    return 1;
  } catch (const NumericalError& ex) {
    std::cerr << "covae-error: numerical: " << one_line(ex.what()) << "\n";
    return 3;
  } catch (const std::exception& ex) {
    std::cerr << "covae-error: internal: " << one_line(ex.what()) << "\n";
    return 1;
  }
  return 0;
}
