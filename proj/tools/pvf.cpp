// pvf: command-line front end for the forecasting pipeline.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pvf/pipeline.hpp"
#include "pvf/synthetic.hpp"

namespace fs = std::filesystem;
using namespace pvf;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Options shared by every subcommand that builds an experiment.
struct CommonOptions {
  std::string config_path;
  std::string data;
  std::string dataset;
  double capacity = 0.0;
  std::string model;
  std::size_t layers = 0;
  std::size_t hidden = 0;
  std::size_t spatial = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::size_t patience = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::size_t window = 0;
  double train_fraction = 0.0;
  std::string daylight_start;
  std::string daylight_end;
  bool no_daylight = false;
  std::vector<std::size_t> horizons;
  std::size_t max_horizon = 0;
  std::string bandwidth;
  std::size_t grid_nodes = 0;
  double level = 0.0;
  bool quiet = false;

  std::vector<CLI::Option*> opts;
  bool given(const std::string& name) const {
    for (auto* o : opts) {
      if (o->get_name() == name) return o->count() > 0;
    }
    return false;
  }
};

void add_data_options(CLI::App* app, CommonOptions& o) {
  o.opts.push_back(app->add_option("--data", o.data, "Raw CSV with header timestamp,power_mw")
                       ->check(CLI::ExistingFile));
  o.opts.push_back(app->add_option("--dataset", o.dataset, "Dataset cache written by 'prepare'")
                       ->check(CLI::ExistingFile));
  o.opts.push_back(app->add_option("--capacity", o.capacity, "Installed capacity in MW")
                       ->check(CLI::PositiveNumber));
}

void add_experiment_options(CLI::App* app, CommonOptions& o, bool with_model) {
  o.opts.push_back(app->add_option("--config", o.config_path,
                                   "JSON config file (default: $PVF_CONFIG)")
                       ->check(CLI::ExistingFile));
  o.opts.push_back(app->add_option("--window", o.window, "Input window length in samples"));
  o.opts.push_back(app->add_option("--train-fraction", o.train_fraction, "Chronological train share"));
  o.opts.push_back(app->add_option("--daylight-start", o.daylight_start, "HH:MM, inclusive"));
  o.opts.push_back(app->add_option("--daylight-end", o.daylight_end, "HH:MM, exclusive"));
  o.opts.push_back(app->add_flag("--no-daylight-filter", o.no_daylight, "Keep night samples"));
  o.opts.push_back(app->add_option("--horizons", o.horizons, "Forecast horizons, e.g. 1,2,3,4")
                       ->delimiter(','));
  o.opts.push_back(app->add_option("--max-horizon", o.max_horizon, "Largest allowed horizon"));
  o.opts.push_back(app->add_option("--bandwidth", o.bandwidth, "silverman or lscv"));
  o.opts.push_back(app->add_option("--grid-nodes", o.grid_nodes, "Density grid nodes per axis"));
  o.opts.push_back(app->add_option("--level", o.level, "Nominal interval coverage"));
  o.opts.push_back(app->add_option("--seed", o.seed, "Experiment seed"));
  if (with_model) {
    o.opts.push_back(app->add_option("--model", o.model, "Model kind")
                         ->check(CLI::IsMember(model_kinds())));
    o.opts.push_back(app->add_option("--layers", o.layers, "Recurrent or conv layers"));
    o.opts.push_back(app->add_option("--hidden", o.hidden, "Units or channels per layer"));
    o.opts.push_back(app->add_option("--spatial", o.spatial, "Samples per ConvLSTM step"));
    o.opts.push_back(app->add_option("--epochs", o.epochs, "Training epochs"));
    o.opts.push_back(app->add_option("--batch-size", o.batch_size, "Mini-batch size"));
    o.opts.push_back(app->add_option("--patience", o.patience, "Early-stopping patience"));
    o.opts.push_back(app->add_option("--lr", o.lr, "Adam learning rate"));
  }
  o.opts.push_back(app->add_flag("--quiet", o.quiet, "Suppress progress on stderr"));
}

ExperimentConfig resolve_config(const CommonOptions& o) {
  ExperimentConfig c;
  std::string path = o.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("PVF_CONFIG"); env && *env) path = env;
  }
  try {
    if (!path.empty()) c = load_config(path);
    if (o.given("--model")) c.model.kind = o.model;
    if (o.given("--layers")) c.model.layers = o.layers;
    if (o.given("--hidden")) c.model.hidden = o.hidden;
    if (o.given("--spatial")) c.model.spatial = o.spatial;
    if (o.given("--epochs")) c.model.train.epochs = o.epochs;
    if (o.given("--batch-size")) c.model.train.batch_size = o.batch_size;
    if (o.given("--patience")) c.model.train.patience = o.patience;
    if (o.given("--lr")) c.model.train.adam.lr = o.lr;
    if (o.given("--seed")) c.seed = o.seed;
    if (o.given("--window")) c.window_length = o.window;
    if (o.given("--train-fraction")) c.train_fraction = o.train_fraction;
    if (o.given("--daylight-start")) c.daylight_start = TimeOfDay::parse(o.daylight_start);
    if (o.given("--daylight-end")) c.daylight_end = TimeOfDay::parse(o.daylight_end);
    if (o.no_daylight) c.daylight_filter = false;
    if (o.given("--horizons")) c.horizons = o.horizons;
    if (o.given("--max-horizon")) c.max_horizon = o.max_horizon;
    if (o.given("--bandwidth")) c.kde.bandwidth = parse_bandwidth_rule(o.bandwidth);
    if (o.given("--grid-nodes")) c.kde.grid.pred_nodes = c.kde.grid.actual_nodes = o.grid_nodes;
    if (o.given("--level")) c.kde.level = o.level;
    if (o.given("--horizons") && !o.given("--max-horizon") && !c.horizons.empty()) {
      c.max_horizon = std::max(c.max_horizon,
                               *std::max_element(c.horizons.begin(), c.horizons.end()));
    }
    c.validate();
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
  return c;
}

PreparedDataset load_data(const CommonOptions& o, const ExperimentConfig& c) {
  if (!o.dataset.empty()) {
    if (!o.data.empty()) throw UsageError("give either --data or --dataset, not both");
    return load_dataset(o.dataset);
  }
  if (o.data.empty()) throw UsageError("an input is required: --data <csv> or --dataset <cache>");
  if (!(o.capacity > 0.0)) throw UsageError("--capacity is required with --data");
  const auto raw = load_csv(o.data, o.capacity);
  return run_stage("prepare", [&] { return prepare_experiment(c, raw); });
}

EpochCallback progress(const CommonOptions& o, const ExperimentConfig& c) {
  if (o.quiet) return nullptr;
  const std::size_t total = c.model.train.epochs;
  return [total](std::size_t epoch, double train, double val) {
    std::fprintf(stderr, "epoch %zu/%zu  train %.6g  val %.6g\n", epoch, total, train, val);
  };
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::unique_ptr<Forecaster> load_model(const std::string& path) {
  return load_forecaster(load_checkpoint(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic PV power forecasting with deep ConvLSTM and KDE intervals"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", kVersion);

  // synth
  SyntheticConfig synth;
  std::string synth_out;
  auto* cmd_synth = app.add_subcommand("synth", "Write a synthetic PV power CSV");
  cmd_synth->add_option("--days", synth.days, "Number of days")->capture_default_str();
  cmd_synth->add_option("--noise", synth.noise_fraction, "Noise sigma as a fraction of peak")
      ->capture_default_str();
  cmd_synth->add_option("--capacity", synth.capacity_mw, "Capacity in MW")->capture_default_str();
  cmd_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  cmd_synth->add_option("-o,--output", synth_out, "Output CSV")->required();

  // prepare
  CommonOptions prep;
  std::string prep_out;
  auto* cmd_prepare = app.add_subcommand("prepare", "Filter, normalize and window a CSV");
  add_data_options(cmd_prepare, prep);
  add_experiment_options(cmd_prepare, prep, false);
  cmd_prepare->add_option("-o,--output", prep_out, "Dataset cache path")->required();

  // train
  CommonOptions tr;
  std::string train_out, train_history;
  auto* cmd_train = app.add_subcommand("train", "Train a forecaster and save its checkpoint");
  add_data_options(cmd_train, tr);
  add_experiment_options(cmd_train, tr, true);
  cmd_train->add_option("-o,--output", train_out, "Checkpoint path")->required();
  cmd_train->add_option("--history", train_history, "Loss history CSV");

  // forecast
  CommonOptions fc;
  std::string fc_ckpt, fc_out;
  auto* cmd_forecast =
      app.add_subcommand("forecast", "Rolling test forecasts with KDE intervals");
  add_data_options(cmd_forecast, fc);
  add_experiment_options(cmd_forecast, fc, false);
  cmd_forecast->add_option("--checkpoint", fc_ckpt, "Trained checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  cmd_forecast->add_option("--out", fc_out, "Output directory")->required();

  // evaluate
  std::string ev_dir, ev_out;
  double ev_capacity = 0.0;
  auto* cmd_evaluate = app.add_subcommand("evaluate", "Score forecast_h*.csv files");
  cmd_evaluate->add_option("--forecasts", ev_dir, "Directory holding forecast_h{k}.csv")
      ->required()
      ->check(CLI::ExistingDirectory);
  cmd_evaluate->add_option("--capacity", ev_capacity, "Installed capacity in MW")
      ->check(CLI::PositiveNumber);
  cmd_evaluate->add_option("-o,--output", ev_out, "Metrics CSV (default <forecasts>/metrics.csv)");

  // sweep
  CommonOptions sw;
  std::vector<std::size_t> sw_depths = {1, 2, 3, 4};
  std::string sw_out;
  auto* cmd_sweep = app.add_subcommand("sweep", "Layer-count sweep on one-step test error");
  add_data_options(cmd_sweep, sw);
  add_experiment_options(cmd_sweep, sw, true);
  cmd_sweep->add_option("--depths", sw_depths, "Layer counts")->delimiter(',')->capture_default_str();
  cmd_sweep->add_option("--out", sw_out, "Output directory")->required();

  // compare
  CommonOptions cp;
  std::vector<std::string> cp_models;
  std::string cp_out;
  auto* cmd_compare = app.add_subcommand("compare", "Train several models and compare them");
  add_data_options(cmd_compare, cp);
  add_experiment_options(cmd_compare, cp, true);
  cmd_compare->add_option("--models", cp_models, "Model kinds; the first is the reference")
      ->delimiter(',')
      ->required()
      ->check(CLI::IsMember(model_kinds()));
  cmd_compare->add_option("--out", cp_out, "Output directory")->required();

  // export-density
  CommonOptions ed;
  std::string ed_ckpt, ed_out;
  std::size_t ed_horizon = 1;
  auto* cmd_export =
      app.add_subcommand("export-density", "Write the joint (pred, actual) density grid");
  add_data_options(cmd_export, ed);
  add_experiment_options(cmd_export, ed, false);
  cmd_export->add_option("--checkpoint", ed_ckpt, "Trained checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  cmd_export->add_option("--horizon", ed_horizon, "Forecast horizon")->capture_default_str();
  cmd_export->add_option("-o,--output", ed_out, "Density CSV")->required();

  // run
  CommonOptions rn;
  std::string rn_root;
  auto* cmd_run = app.add_subcommand("run", "Full experiment into a new run directory");
  add_data_options(cmd_run, rn);
  add_experiment_options(cmd_run, rn, true);
  cmd_run->add_option("--out", rn_root, "Root for run-NNN directories (default: output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*cmd_synth) {
      write_series_csv(synthetic_series(synth), synth_out);
      std::printf("wrote %zu samples to %s\n", synth.days * (1440 / synth.step_minutes),
                  synth_out.c_str());
    } else if (*cmd_prepare) {
      const auto c = resolve_config(prep);
      const auto ds = load_data(prep, c);
      save_dataset(prep_out, ds);
      const auto [lo, hi] = std::minmax_element(ds.values_mw.begin(),
                                                ds.values_mw.begin() + static_cast<std::ptrdiff_t>(
                                                    ds.split_index + ds.window_length));
      std::printf("samples         %zu\n", ds.values.size());
      std::printf("window_length   %zu\n", ds.window_length);
      std::printf("windows         %zu\n", ds.window_count());
      std::printf("train_windows   %zu\n", ds.train_count());
      std::printf("test_windows    %zu\n", ds.test_count());
      std::printf("norm_min_mw     %.6f\n", *lo);
      std::printf("norm_max_mw     %.6f\n", *hi);
      std::printf("norm_scale      %.6f\n", ds.norm.scale);
      std::printf("norm_offset     %.6f\n", ds.norm.offset);
      std::printf("capacity_mw     %.6f\n", ds.capacity_mw);
    } else if (*cmd_train) {
      const auto c = resolve_config(tr);
      const auto ds = load_data(tr, c);
      auto trained = run_stage("train", [&] {
        return train_forecaster(c.resolved_model(), ds, progress(tr, c));
      });
      save_checkpoint(train_out, trained.model->to_checkpoint());
      if (!train_history.empty()) write_file(train_history, loss_history_csv(trained.history));
      std::printf("model %s  epochs %zu  best_epoch %zu\n", trained.model->kind().c_str(),
                  trained.history.train.size(), trained.history.best_epoch);
      std::printf("wrote %s\n", train_out.c_str());
    } else if (*cmd_forecast || *cmd_export) {
      CommonOptions& o = *cmd_forecast ? fc : ed;
      const std::string& ckpt = *cmd_forecast ? fc_ckpt : ed_ckpt;
      std::unique_ptr<Forecaster> model;
      try {
        model = load_model(ckpt);
      } catch (const Error& e) {
        throw UsageError("cannot load checkpoint '" + ckpt + "': " + e.what());
      }
      ExperimentConfig c = resolve_config(o);
      if (!o.given("--window")) c.window_length = model->window_length();
      if (*cmd_export) {
        c.horizons = {ed_horizon};
        c.max_horizon = std::max(c.max_horizon, ed_horizon);
        if (ed_horizon == 0) throw UsageError("--horizon must be >= 1");
      }
      const auto ds = load_data(o, c);
      if (*cmd_export) {
        const auto densities = run_stage("interval model", [&] {
          return fit_interval_model(*model, ds, c.horizons, c.max_horizon, c.kde.bandwidth);
        });
        export_density(estimate_joint(densities[0], c.kde.grid), ed_out);
        std::printf("wrote %s (h_pred %.6g MW, h_actual %.6g MW, %zu pairs)\n", ed_out.c_str(),
                    densities[0].h_pred, densities[0].h_actual, densities[0].size());
      } else {
        const auto run = forecast_with_model(c, ds, *model);
        ensure_directory(fc_out);
        for (std::size_t k = 0; k < run.horizons.size(); ++k) {
          const auto& h = run.horizons[k];
          write_forecast_csv(h.series, h.intervals, fs::path(fc_out) / forecast_filename(h.series.horizon));
          export_density(run.grids[k], (fs::path(fc_out) / density_filename(h.series.horizon)).string());
        }
        write_intervals_csv(run.horizons, fs::path(fc_out) / "intervals.csv");
        write_file(fs::path(fc_out) / "config.snapshot", config_snapshot(run).dump(2) + "\n");
        std::fputs(metrics_table(run.horizons).c_str(), stdout);
      }
    } else if (*cmd_evaluate) {
      double capacity = ev_capacity;
      const fs::path dir = ev_dir;
      if (!(capacity > 0.0) && fs::exists(dir / "config.snapshot")) {
        std::ifstream in(dir / "config.snapshot");
        const auto j = nlohmann::json::parse(in, nullptr, false);
        if (!j.is_discarded() && j.contains("capacity_mw")) capacity = j["capacity_mw"].get<double>();
      }
      if (!(capacity > 0.0)) {
        throw UsageError("--capacity is required when no config.snapshot records it");
      }
      const std::regex pattern(R"(forecast_h(\d+)\.csv)");
      std::vector<std::pair<std::size_t, fs::path>> files;
      for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) files.emplace_back(std::stoul(m[1]), entry.path());
      }
      if (files.empty()) throw UsageError("no forecast_h*.csv files in '" + ev_dir + "'");
      std::sort(files.begin(), files.end());
      std::vector<HorizonResult> results;
      for (const auto& [h, path] : files) {
        auto f = read_forecast_csv(path, h);
        HorizonResult r;
        r.point = point_metrics(f.series.actual_mw, f.series.pred_mw, capacity);
        r.interval = interval_metrics(f.series.actual_mw, f.intervals);
        r.series = std::move(f.series);
        r.intervals = std::move(f.intervals);
        results.push_back(std::move(r));
      }
      const fs::path out = ev_out.empty() ? dir / "metrics.csv" : fs::path(ev_out);
      write_file(out, metrics_csv(results));
      std::fputs(metrics_table(results).c_str(), stdout);
    } else if (*cmd_sweep) {
      const auto c = resolve_config(sw);
      const auto ds = load_data(sw, c);
      const auto result = depth_sweep(c, ds, sw_depths, progress(sw, c),
                                      [&](std::size_t depth, const SweepRow& row) {
                                        if (!sw.quiet) {
                                          std::fprintf(stderr, "depth %zu  mae %.6g  rmse %.6g\n",
                                                       depth, row.mae, row.rmse);
                                        }
                                      });
      ensure_directory(sw_out);
      write_file(fs::path(sw_out) / "sweep.csv", result.csv());
      std::printf("%-6s %12s %12s\n", "depth", "MAE(MW)", "RMSE(MW)");
      for (const auto& r : result.rows) std::printf("%-6zu %12.4f %12.4f\n", r.depth, r.mae, r.rmse);
      std::printf("best_depth %zu\n", result.best_depth);
    } else if (*cmd_compare) {
      if (cp_models.size() < 2) throw UsageError("compare: need >= 2 models");
      const auto c = resolve_config(cp);
      const auto ds = load_data(cp, c);
      // Recurrent and conv comparators share the reference's depth and width.
      std::vector<ModelConfig> models;
      for (const auto& kind : cp_models) {
        ModelConfig m = c.model;
        m.kind = kind;
        if (m.hidden == 0 && (kind == "lstm" || kind == "cnn" || kind == "convlstm")) {
          ModelConfig ref = c.model;
          ref.kind = cp_models.front();
          if (ref.kind == "lstm" || ref.kind == "cnn" || ref.kind == "convlstm") {
            m.hidden = ref.resolved_hidden();
          }
        }
        models.push_back(m);
      }
      const auto report = compare_models(c, ds, label_entries(models), progress(cp, c),
                                         [&](const std::string& label) {
                                           if (!cp.quiet) std::fprintf(stderr, "model %s\n", label.c_str());
                                         });
      ensure_directory(cp_out);
      write_file(fs::path(cp_out) / "comparison.csv", report.metrics_csv());
      write_file(fs::path(cp_out) / "improvement.csv", report.improvement_csv());
      write_file(fs::path(cp_out) / "comparison.txt", report.text());
      std::fputs(report.text().c_str(), stdout);
    } else if (*cmd_run) {
      const auto c = resolve_config(rn);
      const auto ds = load_data(rn, c);
      const auto run = run_experiment(c, ds, progress(rn, c));
      const auto dir = write_run(run, rn_root.empty() ? fs::path(c.output_dir) : fs::path(rn_root));
      std::fputs(metrics_table(run.horizons).c_str(), stdout);
      std::printf("run directory %s\n", dir.string().c_str());
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
