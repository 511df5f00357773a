// Trains coVAE and a plain VAE on a small Syn-2 dataset and prints the
// results table. Usage: covae_quickstart [steps]

#include "covae/covae.hpp"

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
  using namespace covae;
  const std::size_t steps = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 500;

  const auto data = io::to_loaded(scm::make_syn(2, 2000, /*seed=*/7));
  std::cout << "dataset " << data.name << ": n=" << data.n() << " d=" << data.d() << " o=" << data.o() << "\n";

  std::vector<report::ojson> reports;
  for (auto method : {harness::Method::vae, harness::Method::covae}) {
    harness::ExperimentConfig cfg;
    cfg.method = method;
    cfg.steps = steps;
    cfg.seeds = {0, 1};
    harness::apply_method_preset(cfg);
    const auto runs = harness::run_training(cfg, data);
    reports.push_back(harness::evaluate_runs(cfg, data, runs));
  }
  std::cout << report::render_table(reports);
}
