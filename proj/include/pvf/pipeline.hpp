#pragma once

// End-to-end forecasting procedure: prepare the data, train a point model,
// fit per-horizon joint densities of (predicted, actual) on rolled training
// forecasts, then roll the model over the test split and attach conditional
// intervals. Also hosts the depth sweep and the model comparison harness.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pvf/dataset.hpp"
#include "pvf/kde.hpp"
#include "pvf/metrics.hpp"
#include "pvf/models.hpp"

namespace pvf {

inline constexpr const char* kVersion = "pvf 0.1.0";

struct KdeSettings {
  BandwidthRule bandwidth = BandwidthRule::kSilverman;
  GridSpec grid;
  double level = 0.95;
};

struct ExperimentConfig {
  ModelConfig model;
  std::size_t window_length = 60;
  std::vector<std::size_t> horizons = {1, 2, 3, 4};
  std::size_t max_horizon = 4;
  std::uint64_t seed = 42;
  bool daylight_filter = true;
  TimeOfDay daylight_start{5 * 60};
  TimeOfDay daylight_end{20 * 60};
  double train_fraction = 0.8;
  KdeSettings kde;
  std::string output_dir = "runs";

  // The experiment seed is the one that reaches the model.
  ModelConfig resolved_model() const {
    ModelConfig m = model;
    m.train.seed = seed;
    return m;
  }

  void validate() const {
    model.validate();
    if (window_length == 0) throw ValidationError("config: window_length must be >= 1");
    if (horizons.empty()) throw ValidationError("config: horizons must be nonempty");
    for (std::size_t h : horizons) {
      if (h == 0) throw ValidationError("config: horizons must be >= 1");
      if (h > max_horizon) {
        throw ValidationError("config: horizon " + std::to_string(h) +
                              " exceeds max_horizon " + std::to_string(max_horizon));
      }
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ValidationError("config: train_fraction must be in (0, 1)");
    }
    if (!(kde.level > 0.0 && kde.level <= 1.0)) {
      throw ValidationError("config: interval level must be in (0, 1]");
    }
    if (kde.grid.pred_nodes < 2 || kde.grid.actual_nodes < 2) {
      throw ValidationError("config: density grid needs >= 2 nodes per axis");
    }
  }
};

inline std::string to_string(BandwidthRule rule) {
  return rule == BandwidthRule::kLscv ? "lscv" : "silverman";
}

inline BandwidthRule parse_bandwidth_rule(const std::string& s) {
  if (s == "silverman") return BandwidthRule::kSilverman;
  if (s == "lscv") return BandwidthRule::kLscv;
  throw ValidationError("unknown bandwidth rule '" + s + "' (silverman|lscv)");
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"model", to_json(c.model)},
          {"window_length", c.window_length},
          {"horizons", c.horizons},
          {"max_horizon", c.max_horizon},
          {"seed", c.seed},
          {"daylight_filter", c.daylight_filter},
          {"daylight_start", c.daylight_start.str()},
          {"daylight_end", c.daylight_end.str()},
          {"train_fraction", c.train_fraction},
          {"kde",
           {{"bandwidth", to_string(c.kde.bandwidth)},
            {"pred_nodes", c.kde.grid.pred_nodes},
            {"actual_nodes", c.kde.grid.actual_nodes},
            {"margin_bandwidths", c.kde.grid.margin_bandwidths},
            {"level", c.kde.level}}},
          {"output_dir", c.output_dir}};
}

// Overrides only the keys present in `j`.
inline void merge_json(ExperimentConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config: top level must be a JSON object");
  try {
    if (j.contains("model")) merge_json(c.model, j.at("model"));
    if (j.contains("window_length")) c.window_length = j.at("window_length").get<std::size_t>();
    if (j.contains("horizons")) c.horizons = j.at("horizons").get<std::vector<std::size_t>>();
    if (j.contains("max_horizon")) c.max_horizon = j.at("max_horizon").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("daylight_filter")) c.daylight_filter = j.at("daylight_filter").get<bool>();
    if (j.contains("daylight_start")) {
      c.daylight_start = TimeOfDay::parse(j.at("daylight_start").get<std::string>());
    }
    if (j.contains("daylight_end")) {
      c.daylight_end = TimeOfDay::parse(j.at("daylight_end").get<std::string>());
    }
    if (j.contains("train_fraction")) c.train_fraction = j.at("train_fraction").get<double>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("kde")) {
      const auto& k = j.at("kde");
      if (k.contains("bandwidth")) {
        c.kde.bandwidth = parse_bandwidth_rule(k.at("bandwidth").get<std::string>());
      }
      if (k.contains("pred_nodes")) c.kde.grid.pred_nodes = k.at("pred_nodes").get<std::size_t>();
      if (k.contains("actual_nodes")) {
        c.kde.grid.actual_nodes = k.at("actual_nodes").get<std::size_t>();
      }
      if (k.contains("margin_bandwidths")) {
        c.kde.grid.margin_bandwidths = k.at("margin_bandwidths").get<double>();
      }
      if (k.contains("level")) c.kde.level = k.at("level").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  ExperimentConfig c;
  merge_json(c, j);
  return c;
}

// Runs `fn`, prefixing any library error with the stage name while
// keeping its type.
template <class Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  auto tag = [&](const Error& e) { return std::string(stage) + ": " + e.what(); };
  try {
    return fn();
  } catch (const ParseError& e) {
    throw ParseError(tag(e));
  } catch (const StructuralError& e) {
    throw StructuralError(tag(e));
  } catch (const ValidationError& e) {
    throw ValidationError(tag(e));
  } catch (const ShapeError& e) {
    throw ShapeError(tag(e));
  } catch (const StateError& e) {
    throw StateError(tag(e));
  } catch (const NumericError& e) {
    throw NumericError(tag(e));
  } catch (const IoError& e) {
    throw IoError(tag(e));
  } catch (const Error& e) {
    throw Error(tag(e));
  }
}

inline PreparedDataset prepare_experiment(const ExperimentConfig& c, const RawSeries& series) {
  const RawSeries filtered =
      c.daylight_filter ? filter_daylight(series, c.daylight_start, c.daylight_end) : series;
  return prepare(filtered, c.window_length, c.train_fraction);
}

// ---------------------------------------------------------------------------
// Rolling forecasts

// Half-open range of window indices used as forecast origins.
struct OriginRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end > begin ? end - begin : 0; }
};

// Origins whose every horizon up to `max_horizon` targets a test sample.
inline OriginRange test_origins(const PreparedDataset& ds, std::size_t max_horizon) {
  const std::size_t w = ds.window_count();
  return {ds.split_index, w + 1 >= max_horizon ? w + 1 - max_horizon : 0};
}

// Origins whose every horizon up to `max_horizon` targets a training sample.
inline OriginRange train_origins(const PreparedDataset& ds, std::size_t max_horizon) {
  const std::size_t s = ds.split_index;
  return {0, s + 1 >= max_horizon ? s + 1 - max_horizon : 0};
}

struct HorizonSeries {
  std::size_t horizon = 1;
  std::vector<Timestamp> times;
  std::vector<double> actual_mw;
  std::vector<double> pred_mw;
};

// For each origin the first step sees the true window; step k > 1 slides
// the window forward over the model's own earlier outputs.
inline std::vector<HorizonSeries> rolling_forecast(const Forecaster& model,
                                                   const PreparedDataset& ds,
                                                   const std::vector<std::size_t>& horizons,
                                                   std::size_t max_horizon,
                                                   OriginRange origins) {
  if (horizons.empty()) throw ValidationError("rolling forecast: no horizons requested");
  for (std::size_t h : horizons) {
    if (h == 0 || h > max_horizon) {
      throw ValidationError("rolling forecast: horizon " + std::to_string(h) +
                            " outside 1.." + std::to_string(max_horizon));
    }
  }
  if (model.window_length() != ds.window_length) {
    throw ShapeError("rolling forecast: model window " + std::to_string(model.window_length()) +
                     " != dataset window " + std::to_string(ds.window_length));
  }
  if (origins.end + max_horizon > ds.window_count() + 1) {
    throw ValidationError("rolling forecast: origins run past the end of the data");
  }
  if (origins.size() == 0) throw ValidationError("rolling forecast: no forecast origins");

  const std::size_t steps = *std::max_element(horizons.begin(), horizons.end());
  const std::size_t L = ds.window_length;
  std::vector<HorizonSeries> out(horizons.size());
  for (std::size_t k = 0; k < horizons.size(); ++k) {
    out[k].horizon = horizons[k];
    out[k].times.reserve(origins.size());
    out[k].actual_mw.reserve(origins.size());
    out[k].pred_mw.reserve(origins.size());
  }
  std::vector<double> buf(L + steps);
  std::vector<double> preds(steps);
  for (std::size_t o = origins.begin; o < origins.end; ++o) {
    const auto w = ds.window(o);
    std::copy(w.begin(), w.end(), buf.begin());
    for (std::size_t s = 0; s < steps; ++s) {
      preds[s] = model.predict(std::span<const double>(buf).subspan(s, L));
      buf[L + s] = preds[s];
    }
    for (std::size_t k = 0; k < horizons.size(); ++k) {
      const std::size_t target = o + horizons[k] - 1;
      out[k].times.push_back(ds.target_time(target));
      out[k].actual_mw.push_back(ds.target_mw(target));
      out[k].pred_mw.push_back(ds.norm.denormalize(preds[horizons[k] - 1]));
    }
  }
  return out;
}

inline std::vector<HorizonSeries> rolling_forecast(const Forecaster& model,
                                                   const PreparedDataset& ds,
                                                   const std::vector<std::size_t>& horizons,
                                                   std::size_t max_horizon) {
  return rolling_forecast(model, ds, horizons, max_horizon, test_origins(ds, max_horizon));
}

// One joint density per horizon, fitted on rolled forecasts whose targets
// all lie inside the training split.
inline std::vector<DensityModel> fit_interval_model(const Forecaster& model,
                                                    const PreparedDataset& ds,
                                                    const std::vector<std::size_t>& horizons,
                                                    std::size_t max_horizon,
                                                    BandwidthRule rule = BandwidthRule::kSilverman) {
  const auto series =
      rolling_forecast(model, ds, horizons, max_horizon, train_origins(ds, max_horizon));
  std::vector<DensityModel> out;
  out.reserve(series.size());
  for (const auto& s : series) out.push_back(fit_density(s.pred_mw, s.actual_mw, rule));
  return out;
}

// ---------------------------------------------------------------------------
// Experiment

struct HorizonResult {
  HorizonSeries series;
  std::vector<Interval> intervals;
  PointMetrics point;
  IntervalMetrics interval;
};

struct ForecastRun {
  ExperimentConfig config;
  double capacity_mw = 0.0;
  LossHistory history;
  Checkpoint checkpoint;
  std::vector<DensityModel> densities;
  std::vector<DensityGrid> grids;
  std::vector<HorizonResult> horizons;
};

inline HorizonResult evaluate_horizon(HorizonSeries series, const DensityGrid& grid,
                                      double level, double capacity_mw) {
  HorizonResult r;
  r.intervals.reserve(series.pred_mw.size());
  for (double p : series.pred_mw) r.intervals.push_back(conditional_interval(grid, p, level));
  r.point = point_metrics(series.actual_mw, series.pred_mw, capacity_mw);
  r.interval = interval_metrics(series.actual_mw, r.intervals);
  r.series = std::move(series);
  return r;
}

// Interval fitting, test forecasting and scoring for an already trained model.
inline ForecastRun forecast_with_model(const ExperimentConfig& c, const PreparedDataset& ds,
                                       const Forecaster& model) {
  ForecastRun run;
  run.config = c;
  run.capacity_mw = ds.capacity_mw;
  run.checkpoint = model.to_checkpoint();
  run.densities = run_stage("interval model", [&] {
    return fit_interval_model(model, ds, c.horizons, c.max_horizon, c.kde.bandwidth);
  });
  for (const auto& d : run.densities) {
    run.grids.push_back(run_stage("density grid", [&] { return estimate_joint(d, c.kde.grid); }));
  }
  auto series =
      run_stage("forecast", [&] { return rolling_forecast(model, ds, c.horizons, c.max_horizon); });
  run_stage("evaluate", [&] {
    for (std::size_t k = 0; k < series.size(); ++k) {
      run.horizons.push_back(
          evaluate_horizon(std::move(series[k]), run.grids[k], c.kde.level, ds.capacity_mw));
    }
  });
  return run;
}

inline ForecastRun run_experiment(const ExperimentConfig& c, const PreparedDataset& ds,
                                  const EpochCallback& on_epoch = nullptr) {
  run_stage("config", [&] { c.validate(); });
  auto trained = run_stage("train", [&] { return train_forecaster(c.resolved_model(), ds, on_epoch); });
  ForecastRun run = forecast_with_model(c, ds, *trained.model);
  run.history = std::move(trained.history);
  return run;
}

inline ForecastRun run_experiment(const ExperimentConfig& c, const RawSeries& series,
                                  const EpochCallback& on_epoch = nullptr) {
  run_stage("config", [&] { c.validate(); });
  const auto ds = run_stage("prepare", [&] { return prepare_experiment(c, series); });
  return run_experiment(c, ds, on_epoch);
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

inline std::string forecast_filename(std::size_t h) { return "forecast_h" + std::to_string(h) + ".csv"; }
inline std::string density_filename(std::size_t h) { return "density_h" + std::to_string(h) + ".csv"; }

inline void write_forecast_csv(const HorizonSeries& s, const std::vector<Interval>& intervals,
                               const std::filesystem::path& path) {
  std::ostringstream os;
  os << "timestamp,actual_mw,pred_mw,lower_mw,upper_mw\n";
  for (std::size_t t = 0; t < s.pred_mw.size(); ++t) {
    os << format_timestamp(s.times[t]) << ',' << detail::fmt(s.actual_mw[t]) << ','
       << detail::fmt(s.pred_mw[t]) << ',' << detail::fmt(intervals[t].lower) << ','
       << detail::fmt(intervals[t].upper) << '\n';
  }
  detail::write_text(path, os.str());
}

struct ForecastFile {
  HorizonSeries series;
  std::vector<Interval> intervals;
};

inline ForecastFile read_forecast_csv(const std::filesystem::path& path, std::size_t horizon,
                                      double level = 0.95) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) ||
      detail::trim(line) != "timestamp,actual_mw,pred_mw,lower_mw,upper_mw") {
    throw ParseError(path.string() + ": expected header 'timestamp,actual_mw,pred_mw,lower_mw,upper_mw'");
  }
  ForecastFile f;
  f.series.horizon = horizon;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view s = line;
    for (std::size_t pos; (pos = s.find(',')) != std::string_view::npos; s.remove_prefix(pos + 1)) {
      fields.push_back(s.substr(0, pos));
    }
    fields.push_back(s);
    double v[4];
    bool ok = fields.size() == 5;
    for (int k = 0; ok && k < 4; ++k) ok = detail::parse_number(fields[k + 1], v[k]);
    if (!ok) throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": bad row");
    f.series.times.push_back(parse_timestamp(fields[0]));
    f.series.actual_mw.push_back(v[0]);
    f.series.pred_mw.push_back(v[1]);
    f.intervals.push_back({v[2], v[3], level});
  }
  return f;
}

inline void write_intervals_csv(const std::vector<HorizonResult>& horizons,
                                const std::filesystem::path& path) {
  std::ostringstream os;
  os << "timestamp,horizon,pred_mw,lower_mw,upper_mw\n";
  for (const auto& h : horizons) {
    for (std::size_t t = 0; t < h.series.pred_mw.size(); ++t) {
      os << format_timestamp(h.series.times[t]) << ',' << h.series.horizon << ','
         << detail::fmt(h.series.pred_mw[t]) << ',' << detail::fmt(h.intervals[t].lower) << ','
         << detail::fmt(h.intervals[t].upper) << '\n';
    }
  }
  detail::write_text(path, os.str());
}

inline constexpr const char* kMetricsHeader =
    "horizon,n,mae_mw,rmse_mw,mare_pct,pearson,r2,picp,piaw_mw";

inline std::string metrics_csv(const std::vector<HorizonResult>& horizons) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& h : horizons) {
    os << h.series.horizon << ',' << h.point.n << ',' << detail::fmt(h.point.mae) << ','
       << detail::fmt(h.point.rmse) << ',' << detail::fmt(h.point.mare) << ','
       << detail::fmt(h.point.pearson) << ',' << detail::fmt(h.point.r2) << ','
       << detail::fmt(h.interval.picp) << ',' << detail::fmt(h.interval.piaw) << '\n';
  }
  return os.str();
}

inline std::string loss_history_csv(const LossHistory& h) {
  std::ostringstream os;
  os << "epoch,train_loss,validation_loss\n";
  for (std::size_t e = 0; e < h.train.size(); ++e) {
    os << e + 1 << ',' << detail::fmt(h.train[e]) << ','
       << (e < h.validation.size() ? detail::fmt(h.validation[e]) : "NA") << '\n';
  }
  return os.str();
}

// Aligned plain-text table, one row per horizon.
inline std::string metrics_table(const std::vector<HorizonResult>& horizons) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %10s %10s %9s %9s %9s %7s %10s\n", "horizon", "MAE(MW)",
                "RMSE(MW)", "MARE(%)", "rho", "R2", "PICP", "PIAW(MW)");
  os << buf;
  for (const auto& h : horizons) {
    std::snprintf(buf, sizeof buf, "%-8zu %10.4f %10.4f %9.4f %9.4f %9.4f %7.4f %10.4f\n",
                  h.series.horizon, h.point.mae, h.point.rmse, h.point.mare, h.point.pearson,
                  h.point.r2, h.interval.picp, h.interval.piaw);
    os << buf;
  }
  return os.str();
}

// Creates `<root>/run-NNN` with the lowest unused number.
inline std::filesystem::path create_run_directory(const std::filesystem::path& root) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + root.string() + "': " + ec.message());
  for (int n = 1; n < 100000; ++n) {
    char name[16];
    std::snprintf(name, sizeof name, "run-%03d", n);
    const auto dir = root / name;
    if (std::filesystem::create_directory(dir, ec)) return dir;
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  }
  throw IoError("no free run directory under '" + root.string() + "'");
}

inline nlohmann::json config_snapshot(const ForecastRun& run) {
  auto j = to_json(run.config);
  j["version"] = kVersion;
  j["capacity_mw"] = run.capacity_mw;
  return j;
}

// Writes every artifact of `run` into `dir`, which must already exist.
inline void write_run_files(const ForecastRun& run, const std::filesystem::path& dir) {
  detail::write_text(dir / "config.snapshot", config_snapshot(run).dump(2) + "\n");
  save_checkpoint((dir / "model.ckpt").string(), run.checkpoint);
  detail::write_text(dir / "loss_history.csv", loss_history_csv(run.history));
  for (std::size_t k = 0; k < run.horizons.size(); ++k) {
    const auto& h = run.horizons[k];
    write_forecast_csv(h.series, h.intervals, dir / forecast_filename(h.series.horizon));
    export_density(run.grids[k], (dir / density_filename(h.series.horizon)).string());
  }
  write_intervals_csv(run.horizons, dir / "intervals.csv");
  detail::write_text(dir / "metrics.csv", metrics_csv(run.horizons));
}

inline std::filesystem::path write_run(const ForecastRun& run, const std::filesystem::path& root) {
  const auto dir = create_run_directory(root);
  write_run_files(run, dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Depth sweep

struct SweepRow {
  std::size_t depth = 0;
  double mae = 0.0;
  double rmse = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::size_t best_depth = 0;  // argmin of MAE, first on ties

  std::string csv() const {
    std::ostringstream os;
    os << "depth,mae_mw,rmse_mw\n";
    for (const auto& r : rows) {
      os << r.depth << ',' << detail::fmt(r.mae) << ',' << detail::fmt(r.rmse) << '\n';
    }
    return os.str();
  }
};

using SweepCallback = std::function<void(std::size_t depth, const SweepRow&)>;

// One model per layer count, seeded with seed + depth, scored on the
// one-step test forecasts.
inline SweepResult depth_sweep(const ExperimentConfig& c, const PreparedDataset& ds,
                               const std::vector<std::size_t>& depths,
                               const EpochCallback& on_epoch = nullptr,
                               const SweepCallback& on_depth = nullptr) {
  if (depths.empty()) throw ValidationError("sweep: depths must be nonempty");
  SweepResult out;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t depth : depths) {
    if (depth == 0) throw ValidationError("sweep: depth must be >= 1");
    ExperimentConfig cd = c;
    cd.model.layers = depth;
    cd.seed = c.seed + depth;
    run_stage("config", [&] { cd.validate(); });
    auto trained =
        run_stage("train", [&] { return train_forecaster(cd.resolved_model(), ds, on_epoch); });
    const auto series = run_stage(
        "forecast", [&] { return rolling_forecast(*trained.model, ds, {1}, cd.max_horizon); });
    SweepRow row{depth, mae(series[0].actual_mw, series[0].pred_mw),
                 rmse(series[0].actual_mw, series[0].pred_mw)};
    if (row.mae < best) {
      best = row.mae;
      out.best_depth = depth;
    }
    out.rows.push_back(row);
    if (on_depth) on_depth(depth, row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model comparison

struct CompareEntry {
  std::string label;
  ModelConfig model;
};

// Point metrics per model and horizon; entry 0 is the reference.
struct ComparisonReport {
  std::vector<std::string> labels;
  std::vector<std::size_t> horizons;
  std::vector<std::vector<PointMetrics>> metrics;  // [model][horizon]

  static constexpr std::array<const char*, 5> kMetricNames = {"mae_mw", "rmse_mw", "mare_pct",
                                                              "pearson", "r2"};

  static double metric(const PointMetrics& m, std::size_t k) {
    switch (k) {
      case 0: return m.mae;
      case 1: return m.rmse;
      case 2: return m.mare;
      case 3: return m.pearson;
      default: return m.r2;
    }
  }

  // Long format: one row per model, horizon and metric.
  std::string metrics_csv() const {
    std::ostringstream os;
    os << "model,horizon,metric,value\n";
    for (std::size_t m = 0; m < labels.size(); ++m) {
      for (std::size_t h = 0; h < horizons.size(); ++h) {
        for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
          os << labels[m] << ',' << horizons[h] << ',' << kMetricNames[k] << ','
             << detail::fmt(metric(metrics[m][h], k)) << '\n';
        }
      }
    }
    return os.str();
  }

  // Improvement of the reference over every other model, plus the
  // excluded SVR column.
  std::string improvement_csv() const {
    std::ostringstream os;
    os << "reference,baseline,horizon,delta_mae_pct,delta_rmse_pct\n";
    for (std::size_t m = 1; m < labels.size(); ++m) {
      for (std::size_t h = 0; h < horizons.size(); ++h) {
        os << labels[0] << ',' << labels[m] << ',' << horizons[h] << ','
           << detail::fmt(safe_improvement(metrics[m][h].mae, metrics[0][h].mae)) << ','
           << detail::fmt(safe_improvement(metrics[m][h].rmse, metrics[0][h].rmse)) << '\n';
      }
    }
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      os << labels[0] << ",svr," << horizons[h] << ",not implemented,not implemented\n";
    }
    return os.str();
  }

  std::string text() const {
    std::ostringstream os;
    char buf[200];
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
      os << kMetricNames[k] << '\n';
      std::snprintf(buf, sizeof buf, "  %-14s", "model");
      os << buf;
      for (std::size_t h : horizons) {
        std::snprintf(buf, sizeof buf, " %12s", ("h" + std::to_string(h)).c_str());
        os << buf;
      }
      os << '\n';
      for (std::size_t m = 0; m < labels.size(); ++m) {
        std::snprintf(buf, sizeof buf, "  %-14s", labels[m].c_str());
        os << buf;
        for (std::size_t h = 0; h < horizons.size(); ++h) {
          std::snprintf(buf, sizeof buf, " %12.4f", metric(metrics[m][h], k));
          os << buf;
        }
        os << '\n';
      }
    }
    os << "improvement of " << labels[0] << " (MAE% / RMSE%)\n";
    for (std::size_t m = 1; m < labels.size(); ++m) {
      std::snprintf(buf, sizeof buf, "  %-14s", labels[m].c_str());
      os << buf;
      for (std::size_t h = 0; h < horizons.size(); ++h) {
        std::snprintf(buf, sizeof buf, " %8.2f/%-8.2f",
                      safe_improvement(metrics[m][h].mae, metrics[0][h].mae),
                      safe_improvement(metrics[m][h].rmse, metrics[0][h].rmse));
        os << buf;
      }
      os << '\n';
    }
    std::snprintf(buf, sizeof buf, "  %-14s not implemented\n", "svr");
    os << buf;
    return os.str();
  }

 private:
  static double safe_improvement(double base, double ours) {
    return base > 0.0 ? improvement(base, ours) : std::nan("");
  }
};

// Labels default to the kind; repeats get a numeric suffix.
inline std::vector<CompareEntry> label_entries(const std::vector<ModelConfig>& models) {
  std::vector<CompareEntry> out;
  std::map<std::string, int> seen;
  for (const auto& m : models) {
    const int n = ++seen[m.kind];
    out.push_back({n == 1 ? m.kind : m.kind + "-" + std::to_string(n), m});
  }
  return out;
}

using CompareCallback = std::function<void(const std::string& label)>;

inline ComparisonReport compare_models(const ExperimentConfig& c, const PreparedDataset& ds,
                                       const std::vector<CompareEntry>& entries,
                                       const EpochCallback& on_epoch = nullptr,
                                       const CompareCallback& on_model = nullptr) {
  if (entries.size() < 2) throw ValidationError("compare: need >= 2 models");
  ComparisonReport report;
  report.horizons = c.horizons;
  for (const auto& e : entries) {
    if (on_model) on_model(e.label);
    ExperimentConfig ce = c;
    ce.model = e.model;
    run_stage("config", [&] { ce.validate(); });
    auto trained =
        run_stage("train", [&] { return train_forecaster(ce.resolved_model(), ds, on_epoch); });
    const auto series = run_stage("forecast", [&] {
      return rolling_forecast(*trained.model, ds, ce.horizons, ce.max_horizon);
    });
    std::vector<PointMetrics> row;
    for (const auto& s : series) row.push_back(point_metrics(s.actual_mw, s.pred_mw, ds.capacity_mw));
    report.labels.push_back(e.label);
    report.metrics.push_back(std::move(row));
  }
  return report;
}

}  // namespace pvf
