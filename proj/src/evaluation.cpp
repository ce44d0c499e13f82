#include "gram/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

namespace gram {

namespace {

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_real(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number: " + s);
  return v;
}

std::string frozen_text(int f) { return f == kNoFrozenActuator ? "none" : std::to_string(f); }

int parse_frozen(const std::string& s) {
  if (s == "none") return kNoFrozenActuator;
  const int f = std::stoi(s);
  if (f < 0 || f >= kNumActuators) throw std::invalid_argument("bad frozen actuator: " + s);
  return f;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::string cell_key(const GridCell& c) {
  if (c.sample_full_context) return "sweep";
  return "m=" + real_text(c.mass_multiple) + "/f=" + frozen_text(c.frozen_actuator);
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / double(v.size() - 1))};
}

template <class Task>
void parallel_for(int count, int threads, const Task& task) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, std::max(count, 1));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::string context_line(const std::string& algorithm, std::uint64_t seed, const GridCell& cell,
                         int episode, const Context& c) {
  std::string s = algorithm + "," + std::to_string(seed) + "," + real_text(cell.disturbance_rate) +
                  "," + std::to_string(episode);
  s += "," + real_text(c.mass_multiple) + "," + real_text(c.damping_multiple);
  for (double v : c.strength) s += "," + real_text(v);
  for (double v : c.bias) s += "," + real_text(v);
  s += "," + frozen_text(c.frozen_actuator) + "\n";
  return s;
}

std::vector<EvalResult> run_cells(const DeployedPolicy& policy, const std::vector<GridCell>& cells,
                                  int episodes, const std::vector<std::uint64_t>& seeds,
                                  int threads, std::string* contexts) {
  const int n_cells = static_cast<int>(cells.size());
  const int tasks = n_cells * static_cast<int>(seeds.size());
  std::vector<EvalResult> results(static_cast<std::size_t>(tasks));
  std::vector<std::string> lines(static_cast<std::size_t>(tasks));
  const std::string name = to_string(policy.algorithm());
  parallel_for(tasks, threads, [&](int i) {
    const auto seed = seeds[std::size_t(i / std::max(n_cells, 1))];
    const GridCell& cell = cells[std::size_t(i % n_cells)];
    const auto outcomes = run_cell(policy, cell, episodes, seed);
    results[std::size_t(i)] = summarize_cell(policy, cell, outcomes, seed);
    if (contexts)
      for (std::size_t e = 0; e < outcomes.size(); ++e)
        lines[std::size_t(i)] += context_line(name, seed, cell, int(e), outcomes[e].context);
  });
  if (contexts)
    for (const auto& l : lines) *contexts += l;
  return results;
}

}  // namespace

DeployedPolicy DeployedPolicy::from_experiment(const Experiment& ex) {
  const auto& members = ex.members();
  if (members.empty()) throw StateError("experiment has no trained members");
  const Trainer& lead = members.front();
  DeployedPolicy p;
  p.algorithm_ = ex.config().algorithm;
  p.training_set_ = lead.config().training_set();
  p.env_ = lead.config().env;
  p.switch_threshold_ = ex.config().switch_threshold;
  p.primary_ = lead.actor_critic();
  switch (p.algorithm_) {
    case Algorithm::kGram:
    case Algorithm::kGramSeparate: p.mode_ = DeployLatent::kBlend; break;
    case Algorithm::kContextual:
    case Algorithm::kContextualNoise: p.mode_ = DeployLatent::kMean; break;
    case Algorithm::kModularSwitch: p.mode_ = DeployLatent::kSwitch; break;
    default: p.mode_ = DeployLatent::kRobust; break;
  }
  if (p.mode_ != DeployLatent::kRobust) {
    p.adapter_ = lead.adapter();
    p.alpha_ = lead.alpha_params();
  }
  if ((p.mode_ == DeployLatent::kBlend || p.mode_ == DeployLatent::kSwitch) && !p.alpha_.calibrated)
    throw MissingCalibrationError(to_string(p.algorithm_) +
                                  " checkpoint has no calibrated alpha parameters");
  if (p.mode_ == DeployLatent::kSwitch) {
    if (members.size() < 2) throw StateError("modular switch needs two members");
    p.fallback_ = members[1].actor_critic();
  }
  return p;
}

Mat DeployedPolicy::act(const Mat& raw_obs, const Mat& histories, Rng& xi_rng,
                        Vec* alpha_out) const {
  const Eigen::Index b = raw_obs.cols();
  const int d = primary_.latent_dim();
  const Mat obs = primary_.obs_normalizer.normalize(raw_obs);
  if (mode_ == DeployLatent::kRobust) return primary_.action_mean(obs, Mat::Zero(d, b));

  const Mat xi = adapter_->draw_indices(b, xi_rng);
  const auto [means, u] = adapter_->batch_stats(histories, xi);
  Vec a(b);
  for (Eigen::Index i = 0; i < b; ++i) a[i] = alpha_.calibrated ? alpha(u[i], alpha_) : 1.0;
  if (alpha_out) *alpha_out = a;

  switch (mode_) {
    case DeployLatent::kMean: return primary_.action_mean(obs, means);
    case DeployLatent::kBlend: {
      Mat z(d, b);
      for (Eigen::Index i = 0; i < b; ++i) z.col(i) = robust_blend(means.col(i), a[i]);
      return primary_.action_mean(obs, z);
    }
    case DeployLatent::kSwitch: {
      const Mat adaptive = primary_.action_mean(obs, means);
      const Mat robust =
          fallback_->action_mean(fallback_->obs_normalizer.normalize(raw_obs), Mat::Zero(d, b));
      Mat out(adaptive.rows(), b);
      for (Eigen::Index i = 0; i < b; ++i)
        out.col(i) = a[i] >= switch_threshold_ ? adaptive.col(i) : robust.col(i);
      return out;
    }
    case DeployLatent::kRobust: break;
  }
  return primary_.action_mean(obs, Mat::Zero(d, b));
}

bool cell_in_distribution(const ContextSet& training, double mass_multiple, int frozen_actuator) {
  return training.mass.contains(mass_multiple) &&
         (frozen_actuator == kNoFrozenActuator || training.frozen_actuator_allowed);
}

std::vector<GridCell> DeploymentGrid::cells(const ContextSet& training) const {
  std::vector<GridCell> out;
  for (double m : mass_multiples)
    for (int f : frozen_actuators) {
      GridCell c;
      c.mass_multiple = m;
      c.frozen_actuator = f;
      c.id = cell_in_distribution(training, m, f);
      out.push_back(c);
    }
  return out;
}

DeploymentGrid DeploymentGrid::parse(const std::string& spec) {
  DeploymentGrid g;
  std::string flat = spec;  // grid files put one key per line
  std::replace(flat.begin(), flat.end(), '\n', ';');
  for (const auto& part : split(flat, ';')) {
    const std::string item = trim(part);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("grid item without '=': " + item);
    const std::string key = trim(item.substr(0, eq));
    const std::string value = trim(item.substr(eq + 1));
    try {
      if (key == "mass") {
        g.mass_multiples.clear();
        for (const auto& v : split(value, ','))
          if (!trim(v).empty()) g.mass_multiples.push_back(parse_real(trim(v)));
      } else if (key == "frozen") {
        g.frozen_actuators.clear();
        for (const auto& v : split(value, ','))
          if (!trim(v).empty()) g.frozen_actuators.push_back(parse_frozen(trim(v)));
      } else if (key == "episodes") {
        g.episodes = std::stoi(value);
      } else if (key == "name") {
        g.name = value;
      } else {
        throw ConfigError("unknown grid key: " + key);
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError("bad grid value for " + key + ": " + e.what());
    } catch (const std::out_of_range&) {
      throw ConfigError("grid value out of range for " + key);
    }
  }
  if (g.episodes <= 0) throw ConfigError("grid episodes must be positive");
  for (double m : g.mass_multiples)
    if (!(m > 0.0)) throw ConfigError("grid mass multiples must be positive");
  return g;
}

double normalized_return(double episode_return, int horizon) {
  return std::clamp(episode_return / static_cast<double>(horizon), 0.0, 1.0);
}

std::vector<EpisodeOutcome> run_cell(const DeployedPolicy& policy, const GridCell& cell,
                                     int episodes, std::uint64_t seed) {
  const std::string key = cell_key(cell);
  const EnvConfig& cfg = policy.env_config();
  const ContextSet base = ContextSet::base_id();
  std::vector<PointMassEnv> envs;
  std::vector<Rng> impulse_rngs;
  std::vector<EpisodeOutcome> out(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    envs.emplace_back(cfg, policy.training_set(), Rng::derive(seed, "eval/" + key, std::uint64_t(e)));
    PointMassEnv& env = envs.back();
    Context c;
    if (cell.sample_full_context) {
      c = sample_context(policy.training_set(), env.rng());
    } else {
      c = sample_context(base, env.rng());
      c.mass_multiple = cell.mass_multiple;
      c.frozen_actuator = cell.frozen_actuator;
    }
    env.reset(c);
    out[std::size_t(e)].context = c;
    impulse_rngs.push_back(Rng::derive(seed, "eval-impulse/" + key, std::uint64_t(e)));
  }
  Rng xi_rng = Rng::derive(seed, "eval-xi/" + key);

  std::vector<double> returns(std::size_t(episodes), 0.0), alpha_sum(std::size_t(episodes), 0.0);
  std::vector<int> steps(std::size_t(episodes), 0);
  std::vector<int> live(static_cast<std::size_t>(episodes));
  std::iota(live.begin(), live.end(), 0);
  Vec alphas;
  while (!live.empty()) {
    const auto b = static_cast<Eigen::Index>(live.size());
    Mat obs(kObsDim, b), hist(envs.front().history().flat_dim(), b);
    for (Eigen::Index j = 0; j < b; ++j) {
      obs.col(j) = envs[std::size_t(live[std::size_t(j)])].observation().flat();
      hist.col(j) = envs[std::size_t(live[std::size_t(j)])].history().flat();
    }
    const Mat actions = policy.act(obs, hist, xi_rng, policy.reports_alpha() ? &alphas : nullptr);
    std::vector<int> still;
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto e = std::size_t(live[std::size_t(j)]);
      // Always consume the impulse draws so every rate sees the same stream.
      Rng& ir = impulse_rngs[e];
      const bool hit = ir.bernoulli(kSweepImpulseProb);
      const double angle = ir.uniform(0.0, 2.0 * std::numbers::pi);
      const double scale = ir.uniform(0.0, 1.0);
      std::optional<Eigen::Vector2d> impulse;
      if (hit && cell.disturbance_rate > 0.0)
        impulse = Eigen::Vector2d(std::cos(angle), std::sin(angle)) * (scale * cell.disturbance_rate);
      const StepResult r = envs[e].step(actions.col(j), impulse);
      returns[e] += r.reward;
      if (policy.reports_alpha()) alpha_sum[e] += alphas[j];
      ++steps[e];
      if (!r.done) still.push_back(int(e));
    }
    live = std::move(still);
  }
  for (std::size_t e = 0; e < out.size(); ++e) {
    out[e].normalized_return = normalized_return(returns[e], cfg.horizon);
    out[e].mean_alpha = steps[e] ? alpha_sum[e] / steps[e] : 0.0;
  }
  return out;
}

EvalResult summarize_cell(const DeployedPolicy& policy, const GridCell& cell,
                          const std::vector<EpisodeOutcome>& outcomes, std::uint64_t seed) {
  EvalResult r;
  r.algorithm = to_string(policy.algorithm());
  if (!cell.sample_full_context) r.mass_multiple = cell.mass_multiple;
  r.frozen_actuator = cell.frozen_actuator;
  r.disturbance_rate = cell.disturbance_rate;
  r.label = cell.id ? "ID" : "OOD";
  std::vector<double> ret, al;
  for (const auto& o : outcomes) {
    ret.push_back(o.normalized_return);
    al.push_back(o.mean_alpha);
  }
  std::tie(r.mean_return, r.std_return) = mean_std(ret);
  if (policy.reports_alpha()) {
    const auto [m, s] = mean_std(al);
    r.mean_alpha = m;
    r.std_alpha = s;
  }
  r.n = static_cast<int>(outcomes.size());
  r.seed = seed;
  return r;
}

std::vector<EvalResult> evaluate(const DeployedPolicy& policy, const DeploymentGrid& grid,
                                 const std::vector<std::uint64_t>& seeds, int threads,
                                 std::string* contexts) {
  return run_cells(policy, grid.cells(policy.training_set()), grid.episodes, seeds, threads,
                   contexts);
}

std::vector<EvalResult> ood_sweep(const DeployedPolicy& policy, const std::vector<double>& rates,
                                  int episodes, const std::vector<std::uint64_t>& seeds,
                                  int threads, std::string* contexts) {
  std::vector<GridCell> cells;
  for (double r : rates) {
    if (!(r >= 0.0)) throw ConfigError("disturbance rates must be non-negative");
    GridCell c;
    c.sample_full_context = true;
    c.disturbance_rate = r;
    c.id = r == 0.0;
    cells.push_back(c);
  }
  return run_cells(policy, cells, episodes, seeds, threads, contexts);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman needs paired data");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * double(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const auto [mx, sx] = mean_std(rx);
  const auto [my, sy] = mean_std(ry);
  if (sx == 0.0 || sy == 0.0) return 0.0;
  double cov = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) cov += (rx[i] - mx) * (ry[i] - my);
  return cov / double(rx.size() - 1) / (sx * sy);
}

std::vector<SummaryRow> summarize(const std::vector<EvalResult>& results) {
  std::vector<SummaryRow> rows;
  std::map<std::string, std::size_t> index;
  std::vector<double> id_sum, ood_sum;
  for (const auto& r : results) {
    auto [it, inserted] = index.emplace(r.algorithm, rows.size());
    if (inserted) {
      rows.push_back(SummaryRow{r.algorithm});
      id_sum.push_back(0.0);
      ood_sum.push_back(0.0);
    }
    const std::size_t k = it->second;
    if (r.label == "ID") {
      id_sum[k] += r.mean_return;
      ++rows[k].id_cells;
    } else {
      ood_sum[k] += r.mean_return;
      ++rows[k].ood_cells;
    }
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    rows[k].id_average = rows[k].id_cells ? id_sum[k] / rows[k].id_cells : std::nan("");
    rows[k].ood_average = rows[k].ood_cells ? ood_sum[k] / rows[k].ood_cells : std::nan("");
  }
  return rows;
}

std::string results_csv_header() {
  return "algorithm,mass_multiple,frozen_actuator,disturbance_rate,label,mean_return,std_return,"
         "mean_alpha,std_alpha,n,seed";
}

std::string results_to_csv(const std::vector<EvalResult>& results) {
  std::string s = results_csv_header() + "\n";
  auto opt = [](const std::optional<double>& v) { return v ? real_text(*v) : std::string("NA"); };
  for (const auto& r : results) {
    s += r.algorithm + "," + opt(r.mass_multiple) +
         "," + frozen_text(r.frozen_actuator) + "," + real_text(r.disturbance_rate) + "," +
         r.label + "," + real_text(r.mean_return) + "," + real_text(r.std_return) + "," +
         opt(r.mean_alpha) + "," + opt(r.std_alpha) + "," + std::to_string(r.n) + "," +
         std::to_string(r.seed) + "\n";
  }
  return s;
}

std::vector<EvalResult> results_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != results_csv_header())
    throw std::invalid_argument("results CSV: unexpected header");
  std::vector<EvalResult> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 11)
      throw std::invalid_argument("results CSV line " + std::to_string(line_no) +
                                  ": expected 11 fields");
    EvalResult r;
    r.algorithm = f[0];
    if (f[1] != "NA") r.mass_multiple = parse_real(f[1]);
    r.frozen_actuator = parse_frozen(f[2]);
    r.disturbance_rate = parse_real(f[3]);
    r.label = f[4];
    if (r.label != "ID" && r.label != "OOD")
      throw std::invalid_argument("results CSV line " + std::to_string(line_no) + ": bad label");
    r.mean_return = parse_real(f[5]);
    r.std_return = parse_real(f[6]);
    if (f[7] != "NA") r.mean_alpha = parse_real(f[7]);
    if (f[8] != "NA") r.std_alpha = parse_real(f[8]);
    r.n = std::stoi(f[9]);
    r.seed = std::stoull(f[10]);
    out.push_back(r);
  }
  return out;
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::string s = "algorithm,id_average,ood_average,id_cells,ood_cells\n";
  auto avg = [](double v) { return std::isnan(v) ? std::string("NA") : real_text(v); };
  for (const auto& r : rows)
    s += r.algorithm + "," + avg(r.id_average) + "," + avg(r.ood_average) + "," +
         std::to_string(r.id_cells) + "," + std::to_string(r.ood_cells) + "\n";
  return s;
}

std::string contexts_csv_header() {
  return "algorithm,seed,disturbance_rate,episode,mass_multiple,damping_multiple,strength_0,"
         "strength_1,strength_2,strength_3,bias_0,bias_1,bias_2,bias_3,frozen_actuator";
}

}  // namespace gram
