// Command-line front end: run, perturb, sweep, filter, train-csc, train-rv, label.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtc/csc.hpp"
#include "mtc/experiment.hpp"
#include "mtc/rl_env.hpp"
#include "mtc/trace_io.hpp"
#include "mtc/trajectory_filter.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace mtc;

namespace {

struct Common {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  int workers = 0;
};

ExperimentConfig load_with_overrides(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config.empty()) {
    std::ifstream f(c.config);
    if (!f) throw IoError("cannot open config '" + c.config + "'");
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("config '" + c.config + "': " + e.what());
    }
  }
  if (!c.seeds.empty()) j["seeds"] = c.seeds;
  if (!c.out_dir.empty()) j["out_dir"] = c.out_dir;
  if (c.workers > 0) j["workers"] = c.workers;
  return parse_experiment_config(j);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int fail(const std::string& type, const std::string& msg, int code) {
  ojson j;
  j["error"] = {{"type", type}, {"message", msg}};
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-traffic ring and bottleneck simulator"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sc) {
    sc->add_option("-c,--config", common.config, "experiment config (JSON)");
    sc->add_option("--seed", common.seeds, "seed(s), overriding the config");
    sc->add_option("--out-dir", common.out_dir, "output directory");
    sc->add_option("--workers", common.workers, "parallel workers");
  };

  auto* run = app.add_subcommand("run", "run an experiment over its seeds");
  add_common(run);

  auto* perturb = app.add_subcommand("perturb", "standard perturbation test with WAR");
  add_common(perturb);
  std::string perturb_controller;
  perturb->add_option("--controller", perturb_controller, "override the RV controller");

  auto* sw = app.add_subcommand("sweep", "sweep density, penetration or controller");
  add_common(sw);
  std::string axis, values;
  sw->add_option("--axis", axis, "density|penetration|controller")->required();
  sw->add_option("--values", values, "comma-separated values")->required();

  auto* filt = app.add_subcommand("filter", "extract car-following periods from trajectories");
  std::string f_input, f_out = "filter_out";
  double f_limit = 0.0, f_headway = 124.0, f_bin = 0.5;
  filt->add_option("--input", f_input, "trajectory CSV")->required();
  filt->add_option("--speed-limit", f_limit, "speed limit [m/s]")->required();
  filt->add_option("--out-dir", f_out, "output directory");
  filt->add_option("--max-headway", f_headway, "space headway bound [m]");
  filt->add_option("--bin-width", f_bin, "histogram bin width [m/s^2]");

  auto* tcsc = app.add_subcommand("train-csc", "train the congestion stage classifier");
  std::string c_traces, c_out = "csc_model.json", c_dataset;
  int c_epochs = 400, c_steps = 3000;
  std::uint64_t c_seed = 1;
  double c_test = 0.25;
  tcsc->add_option("--traces", c_traces, "directory of ring traces (generated when absent)");
  tcsc->add_option("--epochs", c_epochs, "training epochs");
  tcsc->add_option("--seed", c_seed, "seed");
  tcsc->add_option("--out", c_out, "model JSON");
  tcsc->add_option("--dataset-out", c_dataset, "also write the balanced dataset CSV");
  tcsc->add_option("--steps", c_steps, "steps per generated trace");
  tcsc->add_option("--test-fraction", c_test, "share of episodes held out");

  auto* trv = app.add_subcommand("train-rv", "desk-scale policy-gradient training of an RV");
  std::string r_variant = "safety", r_csc, r_out = "policy.json";
  std::uint64_t r_seed = 1;
  int r_episodes = 50, r_steps = 600, r_warmup = 2500;
  double r_density = 85.0, r_lr = 0.01;
  trv->add_option("--variant", r_variant, "safety|efficiency");
  trv->add_option("--seed", r_seed, "seed");
  trv->add_option("--episodes", r_episodes, "training episodes");
  trv->add_option("--episode-steps", r_steps, "RL steps per episode");
  trv->add_option("--warmup-steps", r_warmup, "IDM steps before the RV acts");
  trv->add_option("--density", r_density, "ring density [veh/km]");
  trv->add_option("--lr", r_lr, "learning rate");
  trv->add_option("--csc", r_csc, "stage forecaster model (rule labels when absent)");
  trv->add_option("--out", r_out, "policy JSON");

  auto* lab = app.add_subcommand("label", "rule-label congestion stages");
  std::string l_gaps, l_trace, l_out;
  int l_vehicle = -1;
  double l_threshold = 15.0, l_zone = 50.0;
  lab->add_option("--gaps", l_gaps, "comma-separated bumper gaps, nearest first");
  lab->add_option("--trace", l_trace, "trace CSV (with .meta.json)");
  lab->add_option("--vehicle", l_vehicle, "observer id for --trace");
  lab->add_option("--threshold", l_threshold, "gap threshold [m]");
  lab->add_option("--zone", l_zone, "sensing zone length [m]");
  lab->add_option("--out", l_out, "CSV output for --trace (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what(), 64);
  }

  try {
    if (*run) {
      const auto cfg = load_with_overrides(common);
      const auto res = run_experiment(cfg);
      std::cout << aggregate_to_json(res.aggregate) << std::endl;
    } else if (*perturb) {
      auto cfg = load_with_overrides(common);
      if (!perturb_controller.empty()) {
        cfg.controller = parse_controller_kind(perturb_controller);
        if (cfg.controller != ControllerKind::idm && cfg.resolved_rv_count() == 0) cfg.rv_count = 1;
      }
      const auto res = run_perturbation_test(cfg);
      ojson j = ojson::array();
      for (const auto& r : res) {
        j.push_back({{"seed", r.seed}, {"target_id", r.target_id}, {"follower_id", r.follower_id},
                     {"war", std::isfinite(r.report.war) ? ojson(r.report.war) : ojson(nullptr)},
                     {"warnings", r.warnings}});
      }
      std::cout << j.dump(2) << std::endl;
    } else if (*sw) {
      const auto cfg = load_with_overrides(common);
      const auto cells = sweep(cfg, parse_sweep_axis(axis), split_list(values),
                               common.workers > 0 ? common.workers : cfg.workers);
      int failed = 0;
      for (const auto& c : cells) failed += c.ok ? 0 : 1;
      ojson j{{"cells", cells.size()}, {"failed", failed},
              {"table", (fs::path(cfg.out_dir) / "sweep.csv").string()}};
      std::cout << j.dump(2) << std::endl;
    } else if (*filt) {
      FilterOptions opt;
      opt.speed_limit = f_limit;
      opt.max_headway = f_headway;
      const auto recs = read_trajectory_csv(f_input);
      const auto periods = detect_periods(recs, opt);
      if (periods.empty()) throw DomainError("filter: no car-following periods found");
      ExcursionStats st;
      std::vector<double> all;
      for (const auto& p : periods) {
        std::vector<double> a, t;
        for (const auto& s : p.samples) {
          a.push_back(s.accel);
          t.push_back(s.time);
        }
        st.append(excursion_stats(a, t));
        all.insert(all.end(), a.begin(), a.end());
      }
      const auto model = build_histogram(all, f_bin, &st);
      fs::create_directories(f_out);
      write_periods_csv(periods, (fs::path(f_out) / "periods.csv").string());
      save_accel_histogram(model, (fs::path(f_out) / "histogram.csv").string());
      const auto stats = filter_stats_json(periods, st, model);
      std::ofstream((fs::path(f_out) / "stats.json")) << stats << "\n";
      std::cout << stats << std::endl;
    } else if (*tcsc) {
      std::vector<Trace> traces;
      if (!c_traces.empty()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(c_traces)) {
          const auto name = e.path().filename().string();
          if (e.path().extension() == ".csv" && name.find(".meta") == std::string::npos) {
            files.push_back(e.path());
          }
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) traces.push_back(read_trace(f.string()));
        if (traces.empty()) throw IoError("train-csc: no traces in '" + c_traces + "'");
      } else {
        std::vector<double> dens;
        for (double k = 70; k <= 150; k += 10) dens.push_back(k);
        traces = generate_csc_traces(dens, {c_seed, c_seed + 1}, c_steps);
      }
      DatasetOptions dopt;
      dopt.t_begin = 30.0;
      dopt.seed = c_seed;
      const auto raw = make_dataset(traces, dopt);
      const auto bal = balance(raw, c_seed);
      if (!c_dataset.empty()) write_dataset_csv(bal, c_dataset);
      Dataset train, test;
      split_by_episode(bal, c_test, c_seed, train, test);
      Rng rng = make_rng(c_seed, stream::training);
      auto model = CscModel::create(dopt.features, {32, 32}, rng);
      model.labels = dopt.labels;
      TrainOptions topt;
      topt.epochs = c_epochs;
      topt.seed = c_seed;
      const auto res = train_classifier(model.net, train, test, topt);
      model.save(c_out);
      const auto cc = bal.class_counts();
      ojson j{{"model", c_out},
              {"samples_raw", raw.size()},
              {"samples_balanced", bal.size()},
              {"class_counts", std::vector<std::size_t>(cc.begin(), cc.end())},
              {"train", train.size()},
              {"test", test.size()},
              {"final_loss", res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back()},
              {"train_accuracy", res.train_accuracy},
              {"test_accuracy", res.test_accuracy}};
      std::cout << j.dump(2) << std::endl;
    } else if (*trv) {
      RingEnvConfig ec;
      ec.variant = parse_reward_variant(r_variant);
      ec.weights = ec.variant == RewardVariant::safety ? RewardWeights::safety()
                                                       : RewardWeights::efficiency();
      ec.density_veh_km = r_density;
      ec.episode_steps = r_steps;
      ec.warmup_steps = r_warmup;
      std::shared_ptr<const CscModel> csc;
      if (!r_csc.empty()) csc = std::make_shared<const CscModel>(CscModel::load(r_csc));
      RingEnv env(ec, csc);
      PolicyTrainOptions po;
      po.episodes = r_episodes;
      po.seed = r_seed;
      po.learning_rate = r_lr;
      po.initial_log_std = -1.0;
      po.input_scale = default_observation_scale(RingScenario{}.speed_limit, ec.zone_length);
      const auto res = train_policy(env, po);
      res.policy.save(r_out);
      // Baseline and final policy on the same held-out seed.
      const std::uint64_t eval_seed = mix64(r_seed) ^ 0xE7A1ULL;
      const double base = scripted_gap_return(ec, csc, eval_seed);
      auto obs = env.reset(eval_seed);
      double ret = 0.0;
      for (;;) {
        const auto st = env.step(res.policy.mean(obs));
        ret += st.reward;
        obs = st.observation;
        if (st.done) break;
      }
      ojson j{{"policy", r_out},
              {"variant", r_variant},
              {"episodes", r_episodes},
              {"first_return", res.episode_returns.empty() ? 0.0 : res.episode_returns.front()},
              {"last_return", res.episode_returns.empty() ? 0.0 : res.episode_returns.back()},
              {"eval_return", ret},
              {"scripted_gap_return", base},
              {"improves_on_scripted_gap", ret > base}};
      std::cout << j.dump(2) << std::endl;
    } else if (*lab) {
      LabelOptions lo;
      lo.gap_threshold = l_threshold;
      if (!l_gaps.empty()) {
        std::vector<double> g;
        for (const auto& s : split_list(l_gaps)) g.push_back(std::stod(s));
        std::cout << to_string(label_gaps(g, lo)) << std::endl;
      } else if (!l_trace.empty()) {
        if (l_vehicle < 0) throw ConfigError("label: --vehicle is required with --trace");
        const auto tr = read_trace(l_trace);
        std::ostringstream out;
        out << "time_s,stage,n_zone\n";
        char b[32];
        for (const auto& s : tr.snapshots) {
          const auto z = zone_from_snapshot(s, l_vehicle, l_zone);
          std::snprintf(b, sizeof b, "%.1f", s.time);
          out << b << "," << to_string(label_window(z, lo)) << "," << z.entries.size() << "\n";
        }
        if (l_out.empty()) {
          std::cout << out.str();
        } else {
          std::ofstream(l_out) << out.str();
        }
      } else {
        throw ConfigError("label: give --gaps or --trace");
      }
    }
  } catch (const ConfigError& e) {
    return fail("ConfigError", e.what(), 2);
  } catch (const IoError& e) {
    return fail("IoError", e.what(), 3);
  } catch (const SimulationError& e) {
    return fail("SimulationError", e.what(), 4);
  } catch (const DomainError& e) {
    return fail("DomainError", e.what(), 5);
  } catch (const std::exception& e) {
    return fail("Error", e.what(), 1);
  }
  return 0;
}
