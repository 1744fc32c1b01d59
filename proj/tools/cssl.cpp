// Command-line front end: dataset generation, training, bound evaluation,
// invariant verification, and the reproduction targets.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cssl/experiments.hpp"
#include "cssl/verify.hpp"

namespace {

std::uint64_t env_seed_fallback() {
  if (const char* env = std::getenv("CSSL_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw cssl::ConfigError("CSSL_SEED is not an integer");
    }
  }
  return 1;
}

void write_dataset_csv(const std::string& path, const cssl::Matrix& x,
                       const std::vector<int>* y) {
  std::ofstream out(path);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* row = x.row(i);
    for (std::size_t j = 0; j < x.cols; ++j) out << cssl::fmt_double(row[j]) << ",";
    if (y) out << (*y)[i];
    out << "\n";
  }
}

int cmd_gen_data(const cssl::RunConfig& cfg, std::size_t m, const std::string& prefix) {
  const cssl::SynthParams labeled{cfg.a1, cfg.s1, cfg.a2, cfg.s2};
  const cssl::SynthParams unlabeled{cfg.a1_unlabeled, cfg.s1, cfg.a2, cfg.s2};
  const cssl::Dataset ds = cssl::make_synth_dataset(labeled, unlabeled, cfg.n_labeled, m,
                                                    cfg.test_size, cfg.seed);
  write_dataset_csv(prefix + "_labeled.csv", ds.labeled.x, &ds.labeled.y);
  write_dataset_csv(prefix + "_unlabeled.csv", ds.unlabeled_x, nullptr);
  write_dataset_csv(prefix + "_test.csv", ds.test.x, &ds.test.y);
  std::ofstream meta(prefix + "_meta.txt");
  meta << "seed = " << cfg.seed << "\n";
  meta << "n_labeled = " << cfg.n_labeled << "\nm_unlabeled = " << m << "\n";
  meta << "test = " << cfg.test_size << "\n";
  meta << "labeled: a1 = " << cssl::fmt_double(labeled.a1)
       << ", s1 = " << cssl::fmt_double(labeled.s1)
       << ", a2 = " << cssl::fmt_double(labeled.a2)
       << ", s2 = " << cssl::fmt_double(labeled.s2) << "\n";
  meta << "unlabeled/test: a1 = " << cssl::fmt_double(unlabeled.a1)
       << ", s1 = " << cssl::fmt_double(unlabeled.s1)
       << ", a2 = " << cssl::fmt_double(unlabeled.a2)
       << ", s2 = " << cssl::fmt_double(unlabeled.s2) << "\n";
  std::cout << "wrote " << prefix << "_{labeled,unlabeled,test}.csv and meta\n";
  return 0;
}

cssl::ToyWorld parse_world_file(const std::string& path, std::string& algorithm) {
  std::ifstream in(path);
  if (!in) throw cssl::ConfigError("bounds: cannot open world file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw cssl::ConfigError("bounds: world file missing key '" + key + "'");
    return it->second;
  };
  auto numbers = [&](const std::string& key, std::size_t count) {
    std::vector<double> vals;
    std::stringstream ss(need(key));
    double v;
    while (ss >> v) vals.push_back(v);
    if (vals.size() != count)
      throw cssl::ConfigError("bounds: key '" + key + "' needs " + std::to_string(count) +
                              " numbers, got " + std::to_string(vals.size()));
    return vals;
  };

  cssl::ToyWorld world;
  world.x_size = static_cast<std::size_t>(cssl::parse_int(need("x_size"), "x_size"));
  world.w_size = static_cast<std::size_t>(cssl::parse_int(need("w_size"), "w_size"));
  world.loss_bound = cssl::parse_double(need("loss_bound"), "loss_bound");
  world.mu_l = cssl::DiscreteDist(numbers("mu_l", world.x_size));
  world.mu_u = cssl::DiscreteDist(numbers("mu_u", world.x_size));
  world.p_y1_given_x = numbers("p_y1_given_x", world.x_size);
  const std::size_t cells = world.w_size * world.x_size;
  auto table = [&](const std::string& key) {
    cssl::Matrix m(world.w_size, world.x_size);
    m.data = numbers(key, cells);
    return m;
  };
  world.loss_y0 = table("loss_y0");
  world.loss_y1 = table("loss_y1");
  world.p_hat1 = table("p_hat1");
  algorithm = kv.count("algorithm") ? kv["algorithm"] : "gibbs 0.5";
  world.validate();
  return world;
}

cssl::ToyAlgorithm make_algorithm(const std::string& desc, double beta,
                                  std::uint64_t seed) {
  std::stringstream ss(desc);
  std::string kind;
  ss >> kind;
  if (kind == "constant") return cssl::constant_algorithm();
  if (kind == "erm") return cssl::erm_algorithm(beta);
  if (kind == "gibbs") {
    double tau = 0.5;
    ss >> tau;
    return cssl::gibbs_algorithm(beta, tau);
  }
  if (kind == "random") {
    std::uint64_t salt = seed;
    ss >> salt;
    return cssl::random_algorithm(salt);
  }
  throw cssl::ConfigError("bounds: unknown algorithm '" + desc + "'");
}

void emit_bound_rows(std::ostream& out, const std::string& world_id,
                     const cssl::ToyEnumeration& e) {
  auto row = [&](const char* name, const cssl::BoundReport& r) {
    out << world_id << "," << name << "," << cssl::fmt_double(r.supervised_term) << ","
        << cssl::fmt_double(r.labeled_unsup_term) << ","
        << cssl::fmt_double(r.unlabeled_term) << "," << cssl::fmt_double(r.delta_term)
        << "," << cssl::fmt_double(r.total) << ","
        << cssl::fmt_double(r.exact_gen.value_or(0.0)) << "\n";
  };
  row("thm1", e.thm1);
  row("prop2", e.prop2);
  row("cor4", e.cor4);
}

constexpr const char* kBoundHeader =
    "world,bound,supervised_term,labeled_unsup_term,unlabeled_term,delta_term,total,"
    "exact_gen\n";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covariate-shift SSL lab"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;  // key=value, applied after the file

  // --- gen-data ---
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset as CSV");
  std::string gen_prefix = "dataset";
  std::size_t gen_m = 3000;
  gen->add_option("--config", config_path, "key=value config file");
  gen->add_option("--set", overrides, "override key=value")->take_all();
  gen->add_option("--out", gen_prefix, "output path prefix");
  gen->add_option("--m", gen_m, "unlabeled sample count");

  // --- train ---
  auto* tr = app.add_subcommand("train", "train one model on a synthetic dataset");
  std::string tr_mode = "cssl";
  std::size_t tr_m = 3000;
  std::string tr_checkpoint = "model.cssl";
  std::string tr_history = "history.csv";
  std::string tr_cv;
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--set", overrides, "override key=value")->take_all();
  tr->add_option("--mode", tr_mode, "lower|em|cssl|upper");
  tr->add_option("--m", tr_m, "unlabeled sample count");
  tr->add_option("--checkpoint", tr_checkpoint, "checkpoint output path");
  tr->add_option("--history", tr_history, "per-epoch stats CSV");
  tr->add_option("--cross-validate", tr_cv, "tune 'beta' or 'em_lambda' by 10-fold CV");

  // --- bounds ---
  auto* bd = app.add_subcommand("bounds", "evaluate bounds on finite worlds");
  std::string bd_world;
  bool bd_random = false;
  std::size_t bd_count = 1;
  std::uint64_t bd_seed = 0;
  bool bd_seed_set = false;
  std::size_t bd_n = 2, bd_m = 2;
  double bd_beta = 0.5;
  std::string bd_out;
  bd->add_option("--world", bd_world, "structured-text world description");
  bd->add_flag("--random", bd_random, "use random worlds instead of a file");
  bd->add_option("--count", bd_count, "number of random worlds");
  bd->add_option("--seed", bd_seed, "seed for random worlds")
      ->each([&](const std::string&) { bd_seed_set = true; });
  bd->add_option("--n", bd_n, "labeled sample count");
  bd->add_option("--m", bd_m, "unlabeled sample count");
  bd->add_option("--beta", bd_beta, "risk mix");
  bd->add_option("--out", bd_out, "CSV output path (default stdout)");

  // --- verify ---
  auto* vf = app.add_subcommand("verify", "run the invariant suites");
  std::uint64_t vf_seed = 0;
  bool vf_seed_set = false;
  vf->add_option("--seed", vf_seed, "suite seed")
      ->each([&](const std::string&) { vf_seed_set = true; });

  // --- reproduce ---
  auto* rp = app.add_subcommand("reproduce", "run a reproduction target");
  std::string rp_target;
  rp->add_option("target", rp_target, "fig2a|fig2b|table1|mnist")->required();
  rp->add_option("--config", config_path, "key=value config file");
  rp->add_option("--set", overrides, "override key=value")->take_all();
  std::optional<std::uint64_t> rp_seed;
  std::optional<std::size_t> rp_repeats, rp_epochs;
  std::optional<std::string> rp_out, rp_only_mode, rp_m_grid, rp_mnist_dir;
  rp->add_option("--seed", rp_seed, "base seed");
  rp->add_option("--repeats", rp_repeats, "repeat count");
  rp->add_option("--epochs", rp_epochs, "training epochs");
  rp->add_option("--out", rp_out, "output directory");
  rp->add_option("--only", rp_only_mode, "mode[,repeat] to regenerate in isolation");
  rp->add_option("--m-grid", rp_m_grid, "comma list of unlabeled sizes");
  rp->add_option("--mnist-dir", rp_mnist_dir, "directory with IDX files");

  CLI11_PARSE(app, argc, argv);

  try {
    auto load_config = [&](const std::string& experiment) {
      cssl::RunConfig cfg;
      if (!config_path.empty()) {
        cfg = cssl::parse_config(config_path);
        if (!experiment.empty() && cfg.experiment != experiment)
          cfg = cssl::defaults_for(experiment);
      } else {
        cfg = cssl::defaults_for(experiment.empty() ? "custom" : experiment);
        cfg.seed = env_seed_fallback();
      }
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw cssl::ConfigError("--set expects key=value, got '" + kv + "'");
        cssl::apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.validate();
      return cfg;
    };

    if (gen->parsed()) {
      return cmd_gen_data(load_config("custom"), gen_m, gen_prefix);
    }

    if (tr->parsed()) {
      cssl::RunConfig cfg = load_config("custom");
      const cssl::SynthParams labeled{cfg.a1, cfg.s1, cfg.a2, cfg.s2};
      const cssl::SynthParams unlabeled{cfg.a1_unlabeled, cfg.s1, cfg.a2, cfg.s2};
      const cssl::Dataset ds = cssl::make_synth_dataset(
          labeled, unlabeled, cfg.n_labeled, tr_m, cfg.test_size,
          cssl::derive_seed(cfg.seed, {0xDA7A}));
      cssl::TrainConfig tc = cssl::train_config_for(cfg, tr_mode, cfg.seed);

      if (!tr_cv.empty()) {
        double chosen = 0.0;
        if (tr_cv == "beta") {
          const std::vector<double> grid{0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
          chosen = cssl::cross_validate_beta(grid, 10, tc, ds);
        } else if (tr_cv == "em_lambda") {
          const std::vector<double> grid{0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0};
          chosen = cssl::cross_validate_em_lambda(grid, 10, tc, ds);
        } else {
          throw cssl::ConfigError("--cross-validate expects 'beta' or 'em_lambda'");
        }
        std::cout << tr_cv << " = " << cssl::fmt_double(chosen) << "\n";
        return 0;
      }

      tc.history_every = 10;
      const cssl::TrainResult result = cssl::train(tc, ds);
      cssl::save_checkpoint(result.model, tr_checkpoint);
      std::ofstream hist(tr_history);
      hist << "epoch,supervised,unsup_labeled,unsup_unlabeled,total,test_accuracy\n";
      for (const auto& st : result.history)
        hist << st.epoch << "," << cssl::fmt_double(st.risk.supervised) << ","
             << cssl::fmt_double(st.risk.unsupervised_labeled) << ","
             << cssl::fmt_double(st.risk.unsupervised_unlabeled) << ","
             << cssl::fmt_double(st.risk.total) << ","
             << cssl::fmt_double(st.test_accuracy) << "\n";
      std::cout << "final test accuracy: "
                << cssl::fmt_double(cssl::final_accuracy(result)) << "\n"
                << "checkpoint: " << tr_checkpoint << ", history: " << tr_history << "\n";
      return 0;
    }

    if (bd->parsed()) {
      if (!bd_seed_set) bd_seed = env_seed_fallback();
      std::ofstream file;
      std::ostream* out = &std::cout;
      if (!bd_out.empty()) {
        file.open(bd_out);
        out = &file;
      }
      *out << kBoundHeader;
      if (bd_random) {
        for (std::size_t i = 0; i < bd_count; ++i) {
          const cssl::ToyWorld world =
              cssl::random_toy_world(cssl::derive_seed(bd_seed, {i}), 4, 8);
          const auto alg =
              cssl::random_algorithm(cssl::derive_seed(bd_seed, {i, 0x5EED}));
          const auto e = cssl::toy_enumerate(world, bd_n, bd_m, bd_beta, alg);
          emit_bound_rows(*out, "random" + std::to_string(i), e);
        }
      } else {
        if (bd_world.empty())
          throw cssl::ConfigError("bounds: need --world FILE or --random");
        std::string alg_desc;
        const cssl::ToyWorld world = parse_world_file(bd_world, alg_desc);
        const auto alg = make_algorithm(alg_desc, bd_beta, bd_seed);
        const auto e = cssl::toy_enumerate(world, bd_n, bd_m, bd_beta, alg);
        emit_bound_rows(*out, std::filesystem::path(bd_world).stem().string(), e);
      }
      return 0;
    }

    if (vf->parsed()) {
      if (!vf_seed_set) vf_seed = env_seed_fallback();
      bool all_pass = true;
      for (const auto& r : cssl::run_verify_suite(vf_seed)) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail
                  << "\n";
        all_pass &= r.pass;
      }
      return all_pass ? 0 : 1;
    }

    if (rp->parsed()) {
      cssl::RunConfig cfg = load_config(rp_target);
      if (rp_seed) cfg.seed = *rp_seed;
      if (rp_repeats) cfg.repeats = *rp_repeats;
      if (rp_epochs) cfg.epochs = *rp_epochs;
      if (rp_out) cfg.output_dir = *rp_out;
      if (rp_mnist_dir) cfg.mnist_dir = *rp_mnist_dir;
      if (rp_m_grid) {
        cfg.m_grid.clear();
        std::stringstream ss(*rp_m_grid);
        std::string item;
        while (std::getline(ss, item, ','))
          cfg.m_grid.push_back(static_cast<std::size_t>(cssl::parse_int(item, "m-grid")));
      }
      if (rp_only_mode) {
        const auto comma = rp_only_mode->find(',');
        cfg.only_mode = rp_only_mode->substr(0, comma);
        if (comma != std::string::npos)
          cfg.only_repeat = cssl::parse_int(rp_only_mode->substr(comma + 1), "--only");
      }
      const auto rows = cssl::run(cfg);
      cssl::write_run_outputs(cfg, rows);
      std::cout << "wrote " << rows.size() << " rows to " << cfg.output_dir
                << "/results.csv\n";
      for (const auto& [mode, points] : cssl::summarize(rows))
        for (const auto& p : points)
          std::cout << mode << " @ x=" << cssl::fmt_double(p.x) << ": "
                    << cssl::fmt_double(p.mean) << " +- " << cssl::fmt_double(p.std)
                    << "\n";
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
