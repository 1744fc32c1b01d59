#pragma once

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cssl/mnist.hpp"
#include "cssl/model.hpp"

namespace cssl {

// Locale-free, shortest round-trip formatting; keeps CSV output byte-stable
// and config serialization lossless.
inline std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ConfigError("config: bad number '" + s + "' for key '" + key + "'");
  return v;
}

inline long long parse_int(const std::string& s, const std::string& key) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ConfigError("config: bad integer '" + s + "' for key '" + key + "'");
  return v;
}

// One experiment run: which reproduction target, how many repeats, and every
// knob the training/generation stack takes. Flat key=value on disk; CLI
// flags override file values, file values override experiment defaults.
struct RunConfig {
  std::string experiment = "custom";
  std::size_t repeats = 5;
  std::uint64_t seed = 1;
  std::size_t n_labeled = 300;
  std::vector<std::size_t> m_grid = {600, 1500, 3000, 6000};
  std::vector<double> test_a1_grid;  // when set, cells sweep the test-side a1
  std::vector<std::string> modes = {"lower", "em", "cssl", "upper"};
  double beta = 0.02;
  std::string loss = "logloss";
  double alpha = 2.0;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double weight_decay = 0.0;
  double em_lambda = 1.0;
  std::size_t mixed_epochs = 30;
  double holdout_frac = 0.0;
  std::size_t hidden = 10;
  std::size_t test_size = 2000;
  std::string eval_path = "unlabeled";
  std::string output_dir = "out";
  std::string mnist_dir = "data/mnist";
  double low_frac = 0.9;
  double a1 = 0.01;
  double s1 = 0.05;
  double a2 = 0.01;
  double s2 = 2.0;
  double a1_unlabeled = 0.8;
  std::string only_mode;  // restrict to one (mode, repeat) cell
  long long only_repeat = -1;

  bool sweeps_test_a1() const { return !test_a1_grid.empty(); }

  LossSpec loss_spec() const {
    if (loss == "logloss") return LossSpec::log_loss();
    if (loss == "squaredlogloss") return LossSpec::squared_log_loss();
    if (loss == "pseudolabel") return LossSpec::pseudo_label();
    if (loss == "alpha") return LossSpec::alpha_loss(alpha);
    throw ConfigError("config: unknown loss '" + loss + "'");
  }

  EvalPath eval_path_enum() const {
    if (eval_path == "labeled") return EvalPath::LabeledBranch;
    if (eval_path == "unlabeled") return EvalPath::UnlabeledBranch;
    throw ConfigError("config: eval_path must be 'labeled' or 'unlabeled'");
  }

  Optimizer optimizer_enum() const {
    if (optimizer == "adam") return Optimizer::Adam;
    if (optimizer == "sgd") return Optimizer::Sgd;
    throw ConfigError("config: optimizer must be 'adam' or 'sgd'");
  }

  void validate() const {
    if (repeats < 1) throw ConfigError("config: repeats must be >= 1");
    loss_spec();
    eval_path_enum();
    optimizer_enum();
  }
};

inline RunConfig defaults_for(const std::string& experiment) {
  RunConfig c;
  c.experiment = experiment;
  // synthetic runs train full-batch SGD; the small input scales make the
  // extraction dynamics scale-sensitive, which is what separates the methods
  c.optimizer = "sgd";
  c.lr = 0.05;
  c.batch_size = 8192;
  c.epochs = 200;
  c.mixed_epochs = 30;
  c.em_lambda = 0.2;
  if (experiment == "fig2a" || experiment == "custom") {
    // defaults above are the fig2a setting
  } else if (experiment == "fig2b") {
    c.a1 = 0.03;
    c.s2 = 0.2;
    c.a1_unlabeled = 0.3;
  } else if (experiment == "table1") {
    c.m_grid = {3000};
    c.test_a1_grid = {0.9, 0.6, 0.4};
  } else if (experiment == "mnist") {
    c.n_labeled = 1000;
    c.m_grid = {1000, 2000, 5000};
    c.repeats = 3;
    c.hidden = 64;
    c.epochs = 60;
    c.mixed_epochs = 20;
    c.optimizer = "adam";
    c.lr = 1e-3;
    c.batch_size = 32;
  } else {
    throw ConfigError("config: unknown experiment '" + experiment + "'");
  }
  return c;
}

namespace detail {

template <class T, class Parse>
std::vector<T> parse_list(const std::string& s, const std::string& key, Parse parse) {
  std::vector<T> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse(item, key));
  }
  if (out.empty()) throw ConfigError("config: empty list for key '" + key + "'");
  return out;
}

template <class T>
std::string join_list(const std::vector<T>& v, const std::function<std::string(T)>& f) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += f(v[i]);
  }
  return s;
}

}  // namespace detail

inline void apply_config_key(RunConfig& c, const std::string& key,
                             const std::string& value) {
  if (key == "experiment") c.experiment = value;
  else if (key == "repeats") c.repeats = static_cast<std::size_t>(parse_int(value, key));
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, key));
  else if (key == "n_labeled") c.n_labeled = static_cast<std::size_t>(parse_int(value, key));
  else if (key == "m_grid")
    c.m_grid = detail::parse_list<std::size_t>(value, key, [](const std::string& s, const std::string& k) {
      return static_cast<std::size_t>(parse_int(s, k));
    });
  else if (key == "test_a1_grid")
    c.test_a1_grid = detail::parse_list<double>(value, key, parse_double);
  else if (key == "modes")
    c.modes = detail::parse_list<std::string>(value, key, [](const std::string& s, const std::string&) {
      return s;
    });
  else if (key == "beta") c.beta = parse_double(value, key);
  else if (key == "loss") c.loss = value;
  else if (key == "alpha") c.alpha = parse_double(value, key);
  else if (key == "epochs") c.epochs = static_cast<std::size_t>(parse_int(value, key));
  else if (key == "batch_size") c.batch_size = static_cast<std::size_t>(parse_int(value, key));
  else if (key == "lr") c.lr = parse_double(value, key);
  else if (key == "optimizer") c.optimizer = value;
  else if (key == "weight_decay") c.weight_decay = parse_double(value, key);
  else if (key == "em_lambda") c.em_lambda = parse_double(value, key);
  else if (key == "mixed_epochs") c.mixed_epochs = static_cast<std::size_t>(parse_int(value, key));
  else if (key == "holdout_frac") c.holdout_frac = parse_double(value, key);
  else if (key == "hidden") c.hidden = static_cast<std::size_t>(parse_int(value, key));
  else if (key == "test_size") c.test_size = static_cast<std::size_t>(parse_int(value, key));
  else if (key == "eval_path") c.eval_path = value;
  else if (key == "output_dir") c.output_dir = value;
  else if (key == "mnist_dir") c.mnist_dir = value;
  else if (key == "low_frac") c.low_frac = parse_double(value, key);
  else if (key == "a1") c.a1 = parse_double(value, key);
  else if (key == "s1") c.s1 = parse_double(value, key);
  else if (key == "a2") c.a2 = parse_double(value, key);
  else if (key == "s2") c.s2 = parse_double(value, key);
  else if (key == "a1_unlabeled") c.a1_unlabeled = parse_double(value, key);
  else if (key == "only_mode") c.only_mode = value;
  else if (key == "only_repeat") c.only_repeat = parse_int(value, key);
  else throw ConfigError("config: unknown key '" + key + "'");
}

// key = value lines, '#' comments. The experiment tag (if present) is applied
// first so its defaults underlie the remaining keys.
inline RunConfig parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char ch : line)
        if (!isspace(static_cast<unsigned char>(ch))) blank = false;
      if (blank) continue;
      throw ConfigError("config: line without '=': '" + line + "'");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  std::string experiment = "custom";
  for (const auto& [k, v] : kv)
    if (k == "experiment") experiment = v;
  RunConfig c = defaults_for(experiment);
  for (const auto& [k, v] : kv) apply_config_key(c, k, v);
  c.validate();
  return c;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out << "experiment = " << c.experiment << "\n";
  out << "repeats = " << c.repeats << "\n";
  out << "seed = " << c.seed << "\n";
  out << "n_labeled = " << c.n_labeled << "\n";
  out << "m_grid = "
      << detail::join_list<std::size_t>(c.m_grid, [](std::size_t v) { return std::to_string(v); })
      << "\n";
  if (!c.test_a1_grid.empty())
    out << "test_a1_grid = "
        << detail::join_list<double>(c.test_a1_grid, [](double v) { return fmt_double(v); })
        << "\n";
  out << "modes = "
      << detail::join_list<std::string>(c.modes, [](std::string s) { return s; }) << "\n";
  out << "beta = " << fmt_double(c.beta) << "\n";
  out << "loss = " << c.loss << "\n";
  out << "alpha = " << fmt_double(c.alpha) << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "lr = " << fmt_double(c.lr) << "\n";
  out << "optimizer = " << c.optimizer << "\n";
  out << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
  out << "em_lambda = " << fmt_double(c.em_lambda) << "\n";
  out << "mixed_epochs = " << c.mixed_epochs << "\n";
  out << "holdout_frac = " << fmt_double(c.holdout_frac) << "\n";
  out << "hidden = " << c.hidden << "\n";
  out << "test_size = " << c.test_size << "\n";
  out << "eval_path = " << c.eval_path << "\n";
  out << "output_dir = " << c.output_dir << "\n";
  out << "mnist_dir = " << c.mnist_dir << "\n";
  out << "low_frac = " << fmt_double(c.low_frac) << "\n";
  out << "a1 = " << fmt_double(c.a1) << "\n";
  out << "s1 = " << fmt_double(c.s1) << "\n";
  out << "a2 = " << fmt_double(c.a2) << "\n";
  out << "s2 = " << fmt_double(c.s2) << "\n";
  out << "a1_unlabeled = " << fmt_double(c.a1_unlabeled) << "\n";
  if (!c.only_mode.empty()) out << "only_mode = " << c.only_mode << "\n";
  if (c.only_repeat >= 0) out << "only_repeat = " << c.only_repeat << "\n";
  return out.str();
}

struct ResultRow {
  std::string experiment;
  std::string mode;
  double x = 0.0;  // m for the unlabeled sweeps, test a1 for table1
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double wall_ms = 0.0;  // timing sidecar only; results.csv stays deterministic
};

inline TrainMode mode_from_string(const std::string& s) {
  if (s == "lower") return TrainMode::Lower;
  if (s == "em") return TrainMode::EM;
  if (s == "cssl") return TrainMode::CSSL;
  if (s == "upper") return TrainMode::Upper;
  throw ConfigError("config: unknown mode '" + s + "'");
}

struct SeriesPoint {
  double x = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

inline std::map<std::string, std::vector<SeriesPoint>> summarize(
    const std::vector<ResultRow>& rows) {
  std::map<std::string, std::map<double, std::vector<double>>> cells;
  for (const auto& r : rows) cells[r.mode][r.x].push_back(r.accuracy);
  std::map<std::string, std::vector<SeriesPoint>> out;
  for (const auto& [mode, by_x] : cells) {
    for (const auto& [x, accs] : by_x) {
      SeriesPoint p;
      p.x = x;
      p.count = accs.size();
      double s = 0.0, s2 = 0.0;
      for (double a : accs) {
        s += a;
        s2 += a * a;
      }
      p.mean = s / static_cast<double>(accs.size());
      const double var = s2 / static_cast<double>(accs.size()) - p.mean * p.mean;
      p.std = var > 0.0 ? std::sqrt(var) : 0.0;  // population std over repeats
      out[mode].push_back(p);
    }
  }
  return out;
}

// One series file per mode: x, mean accuracy, std over repeats, ascending x.
// Called with no rows it still writes headers for the requested modes.
inline void emit_plotdata(const std::vector<ResultRow>& rows,
                          const std::vector<std::string>& modes,
                          const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto summary = summarize(rows);
  for (const auto& mode : modes) {
    std::ofstream out(dir + "/series_" + mode + ".csv");
    out << "x,mean_accuracy,std_accuracy\n";
    const auto it = summary.find(mode);
    if (it == summary.end()) continue;
    for (const auto& p : it->second)
      out << fmt_double(p.x) << "," << fmt_double(p.mean) << "," << fmt_double(p.std)
          << "\n";
  }
}

inline void write_results_csv(const std::vector<ResultRow>& rows,
                              const std::string& path) {
  std::ofstream out(path);
  out << "experiment,mode,x,repeat,seed,accuracy\n";
  for (const auto& r : rows)
    out << r.experiment << "," << r.mode << "," << fmt_double(r.x) << "," << r.repeat
        << "," << r.seed << "," << fmt_double(r.accuracy) << "\n";
}

inline void write_timing_csv(const std::vector<ResultRow>& rows,
                             const std::string& path) {
  std::ofstream out(path);
  out << "experiment,mode,x,repeat,wall_ms\n";
  for (const auto& r : rows)
    out << r.experiment << "," << r.mode << "," << fmt_double(r.x) << "," << r.repeat
        << "," << fmt_double(r.wall_ms) << "\n";
}

inline void write_summary_csv(const std::vector<ResultRow>& rows,
                              const std::string& path) {
  std::ofstream out(path);
  out << "mode,x,mean_accuracy,std_accuracy,repeats\n";
  for (const auto& [mode, points] : summarize(rows))
    for (const auto& p : points)
      out << mode << "," << fmt_double(p.x) << "," << fmt_double(p.mean) << ","
          << fmt_double(p.std) << "," << p.count << "\n";
}

// Deterministic dataset/train seeds per cell, repeat, and mode; datasets are
// shared by all modes of a repeat so methods compare on identical data.
inline std::uint64_t dataset_seed(const RunConfig& c, std::size_t cell, std::size_t rep) {
  return derive_seed(c.seed, {0xDA7A, cell, rep});
}

// one train seed per (cell, repeat), shared by every mode: methods then
// start from identical initial weights and see identical batch orders, so
// per-repeat comparisons are paired
inline std::uint64_t train_seed(const RunConfig& c, std::size_t cell, std::size_t rep) {
  return derive_seed(c.seed, {0x7121, cell, rep});
}

inline Dataset build_cell_dataset(const RunConfig& c, std::size_t cell, std::size_t rep,
                                  const MnistData* mnist) {
  const std::uint64_t seed = dataset_seed(c, cell, rep);
  if (c.experiment == "mnist") {
    if (!mnist) throw ConfigError("mnist experiment needs loaded IDX data");
    return mnist_bias_sample(mnist->x, mnist->y, c.n_labeled, c.m_grid[cell],
                             c.test_size, c.low_frac, seed);
  }
  SynthParams labeled{c.a1, c.s1, c.a2, c.s2};
  SynthParams unlabeled{c.a1_unlabeled, c.s1, c.a2, c.s2};
  SynthParams test = unlabeled;
  std::size_t m = 0;
  if (c.sweeps_test_a1()) {
    test.a1 = c.test_a1_grid[cell];
    m = c.m_grid.front();
  } else {
    m = c.m_grid[cell];
  }
  Dataset ds;
  ds.params_labeled = labeled;
  ds.params_unlabeled = unlabeled;
  ds.seed = seed;
  ds.labeled = gen_synthetic(labeled, c.n_labeled, derive_seed(seed, {1}));
  LabeledSet u = gen_synthetic(unlabeled, m, derive_seed(seed, {2}));
  ds.unlabeled_x = std::move(u.x);
  ds.unlabeled_y_hidden = std::move(u.y);
  ds.test = gen_synthetic(test, c.test_size, derive_seed(seed, {3}));
  return ds;
}

inline TrainConfig train_config_for(const RunConfig& c, const std::string& mode,
                                    std::uint64_t seed) {
  TrainConfig t;
  t.mode = mode_from_string(mode);
  t.beta = c.beta;
  t.loss = c.loss_spec();
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.lr = c.lr;
  t.optimizer = c.optimizer_enum();
  t.weight_decay = c.weight_decay;
  t.mixed_epochs = c.mixed_epochs;
  t.holdout_frac = c.holdout_frac;
  t.seed = seed;
  t.em_lambda = c.em_lambda;
  t.hidden = c.hidden;
  t.eval_path = c.eval_path_enum();
  return t;
}

inline std::vector<ResultRow> run(const RunConfig& config) {
  config.validate();
  const std::size_t cells =
      config.sweeps_test_a1() ? config.test_a1_grid.size() : config.m_grid.size();

  MnistData mnist;
  const bool is_mnist = config.experiment == "mnist";
  if (is_mnist)
    mnist = mnist_load_idx(config.mnist_dir + "/train-images-idx3-ubyte",
                           config.mnist_dir + "/train-labels-idx1-ubyte");

  std::vector<ResultRow> rows;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t rep = 0; rep < config.repeats; ++rep) {
      if (config.only_repeat >= 0 &&
          rep != static_cast<std::size_t>(config.only_repeat))
        continue;
      const Dataset ds = build_cell_dataset(config, cell, rep, is_mnist ? &mnist : nullptr);
      for (std::size_t mi = 0; mi < config.modes.size(); ++mi) {
        const std::string& mode = config.modes[mi];
        if (!config.only_mode.empty() && mode != config.only_mode) continue;
        const std::uint64_t tseed = train_seed(config, cell, rep);
        const auto start = std::chrono::steady_clock::now();
        const TrainResult tr = train(train_config_for(config, mode, tseed), ds);
        const auto stop = std::chrono::steady_clock::now();
        ResultRow row;
        row.experiment = config.experiment;
        row.mode = mode;
        row.x = config.sweeps_test_a1() ? config.test_a1_grid[cell]
                                        : static_cast<double>(config.m_grid[cell]);
        row.repeat = rep;
        row.seed = tseed;
        row.accuracy = final_accuracy(tr);
        row.wall_ms =
            std::chrono::duration<double, std::milli>(stop - start).count();
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

inline void write_run_outputs(const RunConfig& config,
                              const std::vector<ResultRow>& rows) {
  std::filesystem::create_directories(config.output_dir);
  write_results_csv(rows, config.output_dir + "/results.csv");
  write_timing_csv(rows, config.output_dir + "/timing.csv");
  write_summary_csv(rows, config.output_dir + "/summary.csv");
  emit_plotdata(rows, config.modes, config.output_dir);
  std::ofstream meta(config.output_dir + "/run_metadata.txt");
  meta << serialize_config(config);
  meta << "init = uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias\n";
  if (config.optimizer == "adam")
    meta << "optimizer_detail = adam(lr=" << fmt_double(config.lr)
         << ", b1=0.9, b2=0.999, eps=1e-8)\n";
  else
    meta << "optimizer_detail = sgd(lr=" << fmt_double(config.lr) << ")\n";
}

}  // namespace cssl
