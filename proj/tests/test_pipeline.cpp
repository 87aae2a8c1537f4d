#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "pvf/pipeline.hpp"
#include "pvf/synthetic.hpp"
#include "support.hpp"

namespace pvf {
namespace {

namespace fs = std::filesystem;

// Looks up the true next value of any window seen in the dataset.
class OracleModel final : public Forecaster {
 public:
  explicit OracleModel(const PreparedDataset& ds, double noise_sd = 0.0, std::uint64_t seed = 1)
      : window_(ds.window_length) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sd > 0.0 ? noise_sd : 1.0);
    for (std::size_t i = 0; i < ds.window_count(); ++i) {
      const auto w = ds.window(i);
      const double e = noise_sd > 0.0 ? noise(rng) : 0.0;
      next_.emplace(std::vector<double>(w.begin(), w.end()), ds.target(i) + e);
    }
  }
  std::string kind() const override { return "oracle"; }
  std::size_t window_length() const override { return window_; }
  double predict(std::span<const double> window) const override {
    const auto it = next_.find(std::vector<double>(window.begin(), window.end()));
    if (it == next_.end()) throw StateError("oracle: unknown window");
    return it->second;
  }
  Checkpoint to_checkpoint() const override { return {R"({"kind":"oracle"})", {}}; }

 private:
  std::size_t window_;
  std::map<std::vector<double>, double> next_;
};

// pred = 0.5 * last + 0.25 * first + 0.1
class LinearModel final : public Forecaster {
 public:
  explicit LinearModel(std::size_t window) : window_(window) {}
  std::string kind() const override { return "linear"; }
  std::size_t window_length() const override { return window_; }
  double predict(std::span<const double> w) const override {
    return 0.5 * w.back() + 0.25 * w.front() + 0.1;
  }
  Checkpoint to_checkpoint() const override { return {R"({"kind":"linear"})", {}}; }

 private:
  std::size_t window_;
};

RawSeries random_series(std::size_t n, std::uint64_t seed, double mean = 500.0,
                        double sd = 100.0) {
  Rng rng(seed);
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> v(n);
  for (double& x : v) x = std::max(0.0, d(rng));
  return testing::series_from(v, 900, 1000.0);
}

ExperimentConfig small_config(const std::string& kind = "convlstm") {
  ExperimentConfig c;
  c.model.kind = kind;
  c.model.layers = 1;
  c.model.hidden = kind == "elm" ? 40 : 3;
  c.model.train.epochs = 2;
  c.model.train.batch_size = 16;
  c.model.n_trees = 10;
  c.window_length = 8;
  c.daylight_filter = false;
  c.kde.grid = {48, 48, 5.0};
  c.seed = 5;
  return c;
}

RawSeries synthetic_days(std::size_t days, std::uint64_t seed = 3) {
  SyntheticConfig s;
  s.days = days;
  s.seed = seed;
  return synthetic_series(s);
}

TEST(Origins, RespectTheSplit) {
  const auto ds = prepare(random_series(100, 1), 6, 0.8);
  for (std::size_t h : {1u, 2u, 4u}) {
    const auto tr = train_origins(ds, h), te = test_origins(ds, h);
    EXPECT_EQ(tr.begin, 0u);
    EXPECT_EQ(tr.end + h - 1, ds.split_index);
    EXPECT_EQ(te.begin, ds.split_index);
    EXPECT_EQ(te.end + h - 1, ds.window_count());
  }
}

TEST(Rolling, OracleHasZeroErrorAtEveryHorizon) {
  const auto ds = prepare(random_series(200, 2), 6, 0.8);
  const OracleModel oracle(ds);
  const auto out = rolling_forecast(oracle, ds, {1, 2, 3, 4}, 4);
  ASSERT_EQ(out.size(), 4u);
  for (const auto& s : out) {
    EXPECT_EQ(s.pred_mw.size(), test_origins(ds, 4).size());
    for (std::size_t t = 0; t < s.pred_mw.size(); ++t) {
      EXPECT_NEAR(s.pred_mw[t], s.actual_mw[t], 1e-9);
    }
  }
}

TEST(Rolling, PersistenceRepeatsLastTrueValue) {
  const auto ds = prepare(random_series(120, 3), 5, 0.8);
  const PersistenceModel p(5);
  const auto out = rolling_forecast(p, ds, {1, 2, 3, 4}, 4);
  const auto origins = test_origins(ds, 4);
  for (const auto& s : out) {
    for (std::size_t t = 0; t < s.pred_mw.size(); ++t) {
      const std::size_t o = origins.begin + t;
      EXPECT_NEAR(s.pred_mw[t], ds.values_mw[o + ds.window_length - 1], 1e-9);
    }
  }
}

TEST(Rolling, TwoStepTraceMatchesHandUnrolling) {
  // Samples 0..5, L = 2, fraction 0.5: 4 windows, split 2, 3 test origins at max horizon 1.
  const auto ds = prepare(testing::series_from({0, 2, 4, 1, 3, 5}), 2, 0.5);
  ASSERT_EQ(ds.window_count(), 4u);
  ASSERT_EQ(ds.split_index, 2u);
  // Training bounds from samples 0..3: offset 0, scale 4.
  const LinearModel m(2);
  const auto out = rolling_forecast(m, ds, {1, 2}, 2, {2, 3});
  const double z[6] = {0.0, 0.5, 1.0, 0.25, 0.75, 1.25};
  for (std::size_t o = 2; o < 3; ++o) {
    const double step1 = 0.5 * z[o + 1] + 0.25 * z[o] + 0.1;
    const double step2 = 0.5 * step1 + 0.25 * z[o + 1] + 0.1;
    EXPECT_NEAR(out[0].pred_mw[o - 2], 4.0 * step1, 1e-12);
    EXPECT_NEAR(out[1].pred_mw[o - 2], 4.0 * step2, 1e-12);
    EXPECT_EQ(out[0].actual_mw[o - 2], ds.values_mw[o + 2]);
    EXPECT_EQ(out[1].actual_mw[o - 2], ds.values_mw[o + 3]);
  }
  // All three origins at horizon 1.
  const auto one = rolling_forecast(m, ds, {1}, 1);
  ASSERT_EQ(one[0].pred_mw.size(), 2u);
  EXPECT_NEAR(one[0].pred_mw[1], 4.0 * (0.5 * z[4] + 0.25 * z[3] + 0.1), 1e-12);
}

TEST(Rolling, HorizonLimitsAndOriginChecks) {
  const auto ds = prepare(random_series(60, 4), 5, 0.8);
  const PersistenceModel p(5);
  EXPECT_THROW(rolling_forecast(p, ds, {5}, 4), ValidationError);
  EXPECT_THROW(rolling_forecast(p, ds, {0}, 4), ValidationError);
  EXPECT_THROW(rolling_forecast(p, ds, {}, 4), ValidationError);
  EXPECT_THROW(rolling_forecast(p, ds, {1}, 4, {0, ds.window_count()}), ValidationError);
  EXPECT_THROW(rolling_forecast(PersistenceModel(6), ds, {1}, 4), ShapeError);
}

TEST(Rolling, HorizonOneEqualsDirectPrediction) {
  const auto ds = prepare(random_series(150, 5), 8, 0.8);
  const auto trained = train_forecaster(small_config().resolved_model(), ds);
  const auto out = rolling_forecast(*trained.model, ds, {1, 3}, 3);
  const auto origins = test_origins(ds, 3);
  for (std::size_t t = 0; t < origins.size(); ++t) {
    const double direct = ds.norm.denormalize(trained.model->predict(ds.window(origins.begin + t)));
    EXPECT_EQ(out[0].pred_mw[t], direct);
  }
}

TEST(IntervalModel, CountPreservationAndOracleDiagonal) {
  const auto ds = prepare(random_series(300, 6), 6, 0.8);
  const OracleModel oracle(ds);
  const auto dens = fit_interval_model(oracle, ds, {1, 2, 3, 4}, 4);
  ASSERT_EQ(dens.size(), 4u);
  for (const auto& d : dens) {
    EXPECT_EQ(d.size(), train_origins(ds, 4).size());
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d.predicted[i], d.actual[i], 1e-9);
  }
  const auto grid = estimate_joint(dens[0], {128, 256, 5.0});
  for (double q : {400.0, 500.0, 600.0}) {
    const auto iv = conditional_interval(grid, q);
    EXPECT_LT(iv.width(), 8.0 * dens[0].h_actual + 2.0 * grid.actual_step());
  }
}

TEST(IntervalModel, NoisyOracleCalibratesOnHeldOutPairs) {
  const auto ds = prepare(random_series(3000, 7, 500.0, 25.0), 4, 0.5);
  const double sd = 50.0 / ds.norm.scale;  // 50 MW of forecast noise
  const OracleModel noisy(ds, sd, 11);
  const auto dens = fit_interval_model(noisy, ds, {1}, 1);
  const auto grid = estimate_joint(dens[0]);
  const auto test = rolling_forecast(noisy, ds, {1}, 1);
  std::vector<Interval> ivs;
  for (double p : test[0].pred_mw) ivs.push_back(conditional_interval(grid, p));
  const double coverage = picp(test[0].actual_mw, ivs);
  EXPECT_GE(coverage, 0.92);
  EXPECT_LE(coverage, 0.975);
}

TEST(Experiment, NoLeakageFromTestValues) {
  auto c = small_config();
  const auto series = synthetic_days(6);
  auto tampered = series;
  const auto ds = prepare_experiment(c, series);
  for (std::size_t i = ds.split_index + ds.window_length; i < tampered.size(); ++i) {
    tampered.values[i] = 0.0;
  }
  const auto a = run_experiment(c, series);
  const auto b = run_experiment(c, tampered);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  ASSERT_EQ(a.densities.size(), b.densities.size());
  for (std::size_t k = 0; k < a.densities.size(); ++k) {
    EXPECT_EQ(a.densities[k].predicted, b.densities[k].predicted);
    EXPECT_EQ(a.densities[k].actual, b.densities[k].actual);
    EXPECT_EQ(a.densities[k].h_pred, b.densities[k].h_pred);
    EXPECT_EQ(a.densities[k].h_actual, b.densities[k].h_actual);
  }
  EXPECT_EQ(a.history.train, b.history.train);
}

TEST(Experiment, RepeatedRunsWriteIdenticalFiles) {
  const auto c = small_config();
  const auto series = synthetic_days(5);
  const auto root = testing::temp_dir("determinism");
  const auto d1 = write_run(run_experiment(c, series), root);
  const auto d2 = write_run(run_experiment(c, series), root);
  EXPECT_EQ(d1.filename(), "run-001");
  EXPECT_EQ(d2.filename(), "run-002");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(d1)) {
    ++files;
    const auto name = entry.path().filename();
    EXPECT_EQ(testing::read_file(entry.path()), testing::read_file(d2 / name)) << name;
  }
  EXPECT_EQ(files, 3u + 2u * 4u + 2u);
  fs::remove_all(root);
}

TEST(Experiment, StoredMetricsAreRecomputableFromStoredSeries) {
  const auto c = small_config("elm");
  const auto run = run_experiment(c, synthetic_days(6));
  const auto root = testing::temp_dir("selfcheck");
  const auto dir = write_run(run, root);
  std::vector<HorizonResult> recomputed;
  for (std::size_t h : c.horizons) {
    auto f = read_forecast_csv(dir / forecast_filename(h), h, c.kde.level);
    HorizonResult r;
    r.point = point_metrics(f.series.actual_mw, f.series.pred_mw, run.capacity_mw);
    r.interval = interval_metrics(f.series.actual_mw, f.intervals);
    r.series = std::move(f.series);
    r.intervals = std::move(f.intervals);
    recomputed.push_back(std::move(r));
  }
  for (std::size_t k = 0; k < recomputed.size(); ++k) {
    const auto& a = recomputed[k].point;
    const auto& b = run.horizons[k].point;
    EXPECT_NEAR(a.mae, b.mae, 1e-12);
    EXPECT_NEAR(a.rmse, b.rmse, 1e-12);
    EXPECT_NEAR(a.mare, b.mare, 1e-12);
    EXPECT_NEAR(a.pearson, b.pearson, 1e-12);
    EXPECT_NEAR(a.r2, b.r2, 1e-12);
    EXPECT_EQ(recomputed[k].interval.picp, run.horizons[k].interval.picp);
    EXPECT_NEAR(recomputed[k].interval.piaw, run.horizons[k].interval.piaw, 1e-12);
  }
  EXPECT_EQ(metrics_csv(recomputed), testing::read_file(dir / "metrics.csv"));
  fs::remove_all(root);
}

TEST(Experiment, SeriesShareLengthAndFilesHaveExactHeaders) {
  auto c = small_config("gbdt");
  c.horizons = {1, 3};
  c.max_horizon = 3;
  const auto run = run_experiment(c, synthetic_days(5));
  ASSERT_EQ(run.horizons.size(), 2u);
  const std::size_t n = run.horizons[0].series.pred_mw.size();
  for (const auto& h : run.horizons) {
    EXPECT_EQ(h.series.pred_mw.size(), n);
    EXPECT_EQ(h.series.actual_mw.size(), n);
    EXPECT_EQ(h.intervals.size(), n);
    for (const auto& iv : h.intervals) EXPECT_LE(iv.lower, iv.upper);
  }
  const auto root = testing::temp_dir("headers");
  const auto dir = write_run(run, root);
  auto first_line = [](const fs::path& p) {
    const auto t = testing::read_file(p);
    return t.substr(0, t.find('\n'));
  };
  EXPECT_EQ(first_line(dir / "forecast_h3.csv"), "timestamp,actual_mw,pred_mw,lower_mw,upper_mw");
  EXPECT_EQ(first_line(dir / "density_h1.csv"), "pred_mw,actual_mw,density");
  EXPECT_EQ(first_line(dir / "intervals.csv"), "timestamp,horizon,pred_mw,lower_mw,upper_mw");
  EXPECT_EQ(first_line(dir / "metrics.csv"), kMetricsHeader);
  EXPECT_EQ(first_line(dir / "loss_history.csv"), "epoch,train_loss,validation_loss");
  EXPECT_FALSE(fs::exists(dir / "forecast_h2.csv"));
  const auto snap = nlohmann::json::parse(testing::read_file(dir / "config.snapshot"));
  EXPECT_EQ(snap.at("version"), kVersion);
  EXPECT_EQ(snap.at("model").at("kind"), "gbdt");
  const auto ckpt = load_checkpoint((dir / "model.ckpt").string());
  EXPECT_EQ(load_forecaster(ckpt)->kind(), "gbdt");
  fs::remove_all(root);
}

TEST(Experiment, StageTaggedErrors) {
  auto c = small_config();
  c.horizons = {};
  try {
    run_experiment(c, synthetic_days(3));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("config: ", 0), 0u) << e.what();
  }
  c = small_config();
  c.window_length = 5000;
  try {
    run_experiment(c, synthetic_days(3));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("prepare: ", 0), 0u) << e.what();
  }
  c = small_config();
  c.daylight_filter = true;
  c.daylight_start = TimeOfDay::parse("00:00");
  c.daylight_end = TimeOfDay::parse("01:00");
  EXPECT_THROW(run_experiment(c, testing::series_from(std::vector<double>(40, 1.0))),
               ValidationError);
  // A flat series leaves the interval model without spread.
  c = small_config("persistence");
  try {
    run_experiment(c, testing::series_from(std::vector<double>(80, 5.0)));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("interval model: ", 0), 0u) << e.what();
  }
}

TEST(Sweep, RowsAndArgmin) {
  auto c = small_config();
  c.model.hidden = 2;
  c.model.train.epochs = 1;
  const auto ds = prepare_experiment(c, synthetic_days(4));
  const auto one = depth_sweep(c, ds, {2});
  ASSERT_EQ(one.rows.size(), 1u);
  EXPECT_EQ(one.best_depth, 2u);
  EXPECT_EQ(one.csv(), "depth,mae_mw,rmse_mw\n2," + detail::fmt(one.rows[0].mae) + "," +
                           detail::fmt(one.rows[0].rmse) + "\n");

  std::vector<std::size_t> seen;
  const auto many = depth_sweep(c, ds, {1, 2, 3}, nullptr,
                                [&](std::size_t d, const SweepRow&) { seen.push_back(d); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
  const auto best = std::min_element(many.rows.begin(), many.rows.end(),
                                     [](const auto& a, const auto& b) { return a.mae < b.mae; });
  EXPECT_EQ(many.best_depth, best->depth);
  // Depth 2 uses the same derived seed in both sweeps.
  EXPECT_EQ(many.rows[1].mae, one.rows[0].mae);
  EXPECT_THROW(depth_sweep(c, ds, {}), ValidationError);
}

TEST(Compare, IdenticalConfigsGiveZeroImprovement) {
  const auto c = small_config("mlp");
  const auto ds = prepare_experiment(c, synthetic_days(4));
  const auto entries = label_entries({c.model, c.model});
  EXPECT_EQ(entries[0].label, "mlp");
  EXPECT_EQ(entries[1].label, "mlp-2");
  const auto report = compare_models(c, ds, entries);
  const auto csv = report.improvement_csv();
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "reference,baseline,horizon,delta_mae_pct,delta_rmse_pct");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.find(",svr,") != std::string::npos) {
      EXPECT_NE(line.find("not implemented"), std::string::npos);
      continue;
    }
    ++rows;
    EXPECT_EQ(line.substr(line.size() - 4), ",0,0") << line;
  }
  EXPECT_EQ(rows, c.horizons.size());
  EXPECT_THROW(compare_models(c, ds, label_entries({c.model})), ValidationError);
}

TEST(Compare, ReportShapeAndTrainedModelsBeatPersistenceOnSine) {
  auto c = small_config();
  const auto ds = prepare(testing::series_from(testing::sine_values(400, 30.0), 900, 100.0), 8, 0.8);
  ModelConfig elm = c.model, cart = c.model, persistence = c.model;
  elm.kind = "elm";
  elm.hidden = 60;
  cart.kind = "gbdt";
  cart.n_trees = 200;
  persistence.kind = "persistence";
  const auto report = compare_models(c, ds, label_entries({elm, cart, persistence}));
  std::istringstream in(report.metrics_csv());
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line, "model,horizon,metric,value");
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3u * c.horizons.size() * ComparisonReport::kMetricNames.size());
  for (std::size_t h = 0; h < c.horizons.size(); ++h) {
    EXPECT_LT(report.metrics[0][h].mae, report.metrics[2][h].mae);
    EXPECT_LT(report.metrics[1][h].mae, report.metrics[2][h].mae);
  }
  const auto text = report.text();
  EXPECT_NE(text.find("improvement of elm"), std::string::npos);
  EXPECT_NE(text.find("svr"), std::string::npos);
}

TEST(Config, JsonRoundTripAndPartialOverride) {
  ExperimentConfig c;
  c.model.kind = "gbdt";
  c.model.n_trees = 7;
  c.horizons = {1, 2};
  c.seed = 99;
  c.daylight_start = TimeOfDay::parse("06:30");
  c.kde.bandwidth = BandwidthRule::kLscv;
  c.kde.level = 0.9;
  ExperimentConfig back;
  merge_json(back, to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));

  ExperimentConfig partial;
  merge_json(partial, nlohmann::json::parse(R"({"model": {"epochs": 3}, "kde": {"level": 0.8}})"));
  EXPECT_EQ(partial.model.train.epochs, 3u);
  EXPECT_EQ(partial.model.kind, "convlstm");
  EXPECT_EQ(partial.kde.level, 0.8);
  EXPECT_EQ(partial.window_length, 60u);
  EXPECT_EQ(partial.horizons, (std::vector<std::size_t>{1, 2, 3, 4}));

  EXPECT_THROW(merge_json(partial, nlohmann::json::parse("[1]")), ParseError);
  EXPECT_THROW(merge_json(partial, nlohmann::json::parse(R"({"seed": "x"})")), ParseError);
  EXPECT_THROW(merge_json(partial, nlohmann::json::parse(R"({"kde": {"bandwidth": "x"}})")),
               ValidationError);

  const auto dir = testing::temp_dir("config");
  testing::write_file(dir / "c.json", R"({"window_length": 12, "seed": 3})");
  const auto loaded = load_config((dir / "c.json").string());
  EXPECT_EQ(loaded.window_length, 12u);
  EXPECT_EQ(loaded.resolved_model().train.seed, 3u);
  testing::write_file(dir / "bad.json", "{");
  EXPECT_THROW(load_config((dir / "bad.json").string()), ParseError);
  EXPECT_THROW(load_config((dir / "none.json").string()), IoError);
  fs::remove_all(dir);
}

TEST(Config, ValidationRules) {
  ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  c.horizons = {5};
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.train_fraction = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.kde.level = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.model.kind = "svr";
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(RunDirectory, NeverOverwrites) {
  const auto root = testing::temp_dir("rundir");
  fs::create_directories(root / "run-001");
  testing::write_file(root / "run-001" / "keep.txt", "x");
  const auto d = create_run_directory(root);
  EXPECT_EQ(d.filename(), "run-002");
  EXPECT_EQ(testing::read_file(root / "run-001" / "keep.txt"), "x");
  fs::remove_all(root);
}

}  // namespace
}  // namespace pvf
