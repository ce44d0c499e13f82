#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gram/config.hpp"
#include "gram/evaluation.hpp"
#include "gram/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gram;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitCalibration = 3;

struct WriteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  f.close();
  if (!f) throw WriteError("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw WriteError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed: " + item);
    }
  }
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

std::vector<double> parse_reals(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad number: " + item);
    }
  }
  return out;
}

// Appends log rows; writes the header when the file is new.
class LogWriter {
 public:
  explicit LogWriter(const fs::path& path) {
    const bool fresh = !fs::exists(path);
    out_.open(path, std::ios::app);
    if (!out_) throw WriteError("cannot open " + path.string());
    if (fresh) out_ << LogRow::csv_header() << "\n";
  }
  void operator()(const LogRow& r) {
    out_ << r.csv() << "\n";
    if (!out_) throw WriteError("training log write failed");
  }

 private:
  std::ofstream out_;
};

void drive(Experiment& ex, const fs::path& out, int max_steps, int checkpoint_every) {
  LogWriter log(out / "train_log.csv");
  const int start = ex.steps_done();
  ex.run(
      [&](const LogRow& r) {
        log(r);
        if (checkpoint_every > 0 && ex.steps_done() % checkpoint_every == 0)
          ex.save((out / ("checkpoint_" + std::to_string(ex.steps_done()) + ".gram")).string());
        if (r.update % 100 == 0)
          std::fprintf(stderr, "[%s m%d] %s %d  reward id %.3f ood %.3f\n",
                       to_string(ex.config().algorithm).c_str(), r.member, r.phase.c_str(),
                       r.update, r.mean_reward_id, r.mean_reward_ood);
      },
      max_steps < 0 ? -1 : start + max_steps);
  ex.save((out / "checkpoint.gram").string());
  std::printf("%s after %d steps (%s)\n", ex.done() ? "finished" : "paused", ex.steps_done(),
              (out / "checkpoint.gram").string().c_str());
}

void print_summary(const std::vector<SummaryRow>& rows) {
  std::printf("%-22s %10s %10s\n", "algorithm", "ID avg", "OOD avg");
  for (const auto& r : rows)
    std::printf("%-22s %10.4f %10.4f\n", r.algorithm.c_str(), r.id_average, r.ood_average);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GRAM: train, calibrate and evaluate adaptive and robust policies"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, grid_spec, seeds_text = "0", rates_text;
  std::vector<std::string> overrides, inputs;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int max_steps = -1, checkpoint_every = 0, threads = 0, episodes = 200;

  auto* train = app.add_subcommand("train", "train a policy from a config file");
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--set", overrides, "override a config key, e.g. --set ppo.total_updates=10");
  train->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) {
    seed = s;
    seed_given = true;
  });
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--max-steps", max_steps, "stop after this many updates (resumable)");
  train->add_option("--checkpoint-every", checkpoint_every, "extra checkpoint every N updates");

  auto* resume = app.add_subcommand("resume", "continue a run from a checkpoint");
  resume->add_option("--checkpoint", checkpoint)->required();
  resume->add_option("--out", out_dir)->required();
  resume->add_option("--max-steps", max_steps);
  resume->add_option("--checkpoint-every", checkpoint_every);

  double q_min = -1.0, q_max = -1.0;
  auto* calibrate = app.add_subcommand("calibrate", "(re)fit the alpha parameters");
  calibrate->add_option("--checkpoint", checkpoint)->required();
  calibrate->add_option("--out", out_dir, "output checkpoint file (default: overwrite)");
  calibrate->add_option("--quantile-min", q_min);
  calibrate->add_option("--quantile-max", q_max);

  auto* eval = app.add_subcommand("eval", "evaluate on a deployment grid");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--grid", grid_spec, "grid spec or file, e.g. mass=0.5,1,2;frozen=none,0");
  eval->add_option("--seeds", seeds_text, "comma separated evaluation seeds");
  eval->add_option("--threads", threads);
  eval->add_option("--out", out_dir)->required();

  auto* sweep = app.add_subcommand("sweep", "random-impulse disturbance sweep");
  sweep->add_option("--checkpoint", checkpoint)->required();
  sweep->add_option("--rates", rates_text, "comma separated impulse magnitudes")->required();
  sweep->add_option("--episodes", episodes);
  sweep->add_option("--seeds", seeds_text);
  sweep->add_option("--threads", threads);
  sweep->add_option("--out", out_dir)->required();

  auto* report = app.add_subcommand("report", "merge result CSVs and write the summary");
  report->add_option("--in", inputs, "result CSV files")->required();
  report->add_option("--out", out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) {
      ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
      for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value: " + o);
        cfg.set(o.substr(0, eq), o.substr(eq + 1));
      }
      if (seed_given) cfg.seed = seed;
      cfg.validate();
      ensure_dir(out_dir);
      write_file(fs::path(out_dir) / "config.txt", cfg.to_text());
      Experiment ex(cfg);
      drive(ex, out_dir, max_steps, checkpoint_every);
    } else if (*resume) {
      Experiment ex = Experiment::load(checkpoint);
      ensure_dir(out_dir);
      drive(ex, out_dir, max_steps, checkpoint_every);
    } else if (*calibrate) {
      Experiment ex = Experiment::load(checkpoint);
      bool any = false;
      for (auto& t : ex.members()) {
        if (!t.config().trains_adapter()) continue;
        CalibrationConfig c = t.config().calibration;
        if (q_min > 0.0) c.quantile_min = q_min;
        if (q_max > 0.0) c.quantile_max = q_max;
        t.set_calibration(c);
        t.calibrate();
        const auto& p = t.alpha_params();
        std::printf("delta %.17g beta %.17g q_max %.17g (%zu validation histories)\n", p.delta,
                    p.beta, p.q_max, t.validation_u().size());
        any = true;
      }
      if (!any) throw ConfigError("this algorithm has no adaptation module to calibrate");
      ex.save(out_dir.empty() ? checkpoint : out_dir);
    } else if (*eval) {
      const Experiment ex = Experiment::load(checkpoint);
      const DeployedPolicy policy = DeployedPolicy::from_experiment(ex);
      DeploymentGrid grid;
      if (!grid_spec.empty())
        grid = DeploymentGrid::parse(fs::exists(grid_spec) ? read_file(grid_spec) : grid_spec);
      std::string contexts = contexts_csv_header() + "\n";
      const auto results = evaluate(policy, grid, parse_seeds(seeds_text), threads, &contexts);
      ensure_dir(out_dir);
      const fs::path out(out_dir);
      write_file(out / ("eval_" + grid.name + ".csv"), results_to_csv(results));
      write_file(out / ("contexts_" + grid.name + ".csv"), contexts);
      const auto summary = summarize(results);
      write_file(out / "summary.csv", summary_to_csv(summary));
      print_summary(summary);
    } else if (*sweep) {
      const Experiment ex = Experiment::load(checkpoint);
      const DeployedPolicy policy = DeployedPolicy::from_experiment(ex);
      const auto rates = parse_reals(rates_text);
      if (rates.empty()) throw ConfigError("no disturbance rates given");
      std::string contexts = contexts_csv_header() + "\n";
      const auto results =
          ood_sweep(policy, rates, episodes, parse_seeds(seeds_text), threads, &contexts);
      ensure_dir(out_dir);
      const fs::path out(out_dir);
      write_file(out / "sweep.csv", results_to_csv(results));
      write_file(out / "contexts_sweep.csv", contexts);
      std::vector<double> r, ret;
      for (const auto& row : results) {
        r.push_back(row.disturbance_rate);
        ret.push_back(row.mean_return);
        std::printf("rate %-8g seed %-4llu return %.4f\n", row.disturbance_rate,
                    static_cast<unsigned long long>(row.seed), row.mean_return);
      }
      if (rates.size() > 1) std::printf("spearman(rate, return) = %.4f\n", spearman(r, ret));
    } else if (*report) {
      std::vector<EvalResult> all;
      for (const auto& in : inputs) {
        const auto rows = results_from_csv(read_file(in));
        all.insert(all.end(), rows.begin(), rows.end());
      }
      if (all.empty()) throw ConfigError("no results to report");
      ensure_dir(out_dir);
      const fs::path out(out_dir);
      write_file(out / "results.csv", results_to_csv(all));
      const auto summary = summarize(all);
      write_file(out / "summary.csv", summary_to_csv(summary));
      print_summary(summary);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const MissingCalibrationError& e) {
    std::fprintf(stderr, "missing calibration: %s\n", e.what());
    return kExitCalibration;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "bad input: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
