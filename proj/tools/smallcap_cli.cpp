// smallcap <subcommand> [--config PATH] [--out DIR] [--workers K] [--seed S]
// smallcap reproduce RESULTS.json [--seed S] [--workers K] [--out DIR]
//
// exit: 0 all thresholds pass, 1 a threshold failed, 2 usage or config error

#include <CLI11.hpp>
#include <smallcap/harness.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace smallcap;
namespace hs = smallcap::harness;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_experiment(hs::Subcommand sub, const std::string& config, const std::string& out, unsigned workers,
                   bool has_seed, std::uint64_t seed) {
  auto cfg = config.empty() ? hs::parse_config("{}", sub) : hs::parse_config(slurp(config), sub);
  if (has_seed) cfg.seed = seed;
  if (!out.empty()) cfg.out = out;
  cfg.workers = workers;
  auto t0 = std::chrono::steady_clock::now();
  auto o = hs::run(cfg);
  double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  hs::write_artifacts(cfg.out, cfg, o, dt);
  if (o.results.contains("fit")) std::cout << "slope " << o.results["fit"]["slope"].get<double>() << '\n';
  for (auto& c : o.checks) std::cout << hs::check_line(c) << '\n';
  std::cout << "wrote " << cfg.out << "/results.json\n";
  return o.all_pass() ? 0 : 1;
}

int run_reproduce(const std::string& path, const std::string& out, unsigned workers, bool has_seed, std::uint64_t seed) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(slurp(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw hs::ConfigError(std::string("results file is not JSON: ") + e.what(), 0);
  }
  hs::Outcome o;
  auto r = hs::reproduce(doc, has_seed ? std::optional<std::uint64_t>(seed) : std::nullopt, workers, &o);
  auto j = hs::to_json(r);
  std::cout << "max relative deviation " << r.max_relative_deviation << " over " << r.compared << " fields\n";
  if (!r.same_seed) std::cout << "max deviation in sigma " << r.max_sigma << '\n';
  if (!r.mismatch.empty()) std::cout << "structure: " << r.mismatch << '\n';
  std::cout << (r.pass ? "PASS" : "FAIL") << " reproduce\n";
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream(out + "/reproduce.json") << j.dump(2) << '\n';
  }
  return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"small cap decoupling experiments"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  std::string config, out;
  unsigned workers = 0;
  std::uint64_t seed = 0;
  std::string results_path;

  std::vector<std::pair<CLI::App*, hs::Subcommand>> subs;
  for (auto s : {hs::Subcommand::Moments, hs::Subcommand::Decouple, hs::Subcommand::Kakeya, hs::Subcommand::Energy,
                 hs::Subcommand::Vdc, hs::Subcommand::OracleCheck}) {
    auto* sc = app.add_subcommand(hs::to_string(s));
    sc->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    sc->add_option("--out", out, "output directory");
    sc->add_option("--workers", workers, "worker threads (results do not depend on it)")->check(CLI::Range(1u, 1024u));
    sc->add_option("--seed", seed, "base seed, overrides the config");
    subs.emplace_back(sc, s);
  }
  auto* rep = app.add_subcommand("reproduce", "rerun a results.json and report the deviation");
  rep->add_option("results", results_path, "results.json of a prior run")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", out, "directory for reproduce.json");
  rep->add_option("--workers", workers, "worker threads")->check(CLI::Range(1u, 1024u));
  rep->add_option("--seed", seed, "rerun under a different seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (auto& [sc, s] : subs)
      if (sc->parsed()) return run_experiment(s, config, out, workers, sc->count("--seed") > 0, seed);
    return run_reproduce(results_path, out, workers, rep->count("--seed") > 0, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
