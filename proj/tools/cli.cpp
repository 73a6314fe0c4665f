#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#ifdef __linux__
#include <sched.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "gtep/errors.hpp"
#include "gtep/evaluation.hpp"
#include "gtep/features.hpp"
#include "gtep/model_io.hpp"
#include "gtep/predictor.hpp"
#include "gtep/telemetry.hpp"
#include "gtep/training.hpp"

namespace gtep::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kOracleFile = "oracle_params.json";
constexpr int kSchema = 1;

// --- option plumbing ------------------------------------------------------

std::string env_name(const std::string& flag) {
  std::string out = "GTEP_";
  for (char c : flag) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

template <class T>
CLI::Option* opt(CLI::App* app, const std::string& flag, T& value, const std::string& help) {
  return app->add_option("--" + flag, value, help)->envname(env_name(flag));
}

std::string shell_quote(const std::string& s) {
  if (!s.empty() && s.find_first_of(" \t'\"\\$`") == std::string::npos) return s;
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

// "gtep <sub> --flag value ..." with every option resolved, so the run can be repeated.
std::string effective_config(const CLI::App& sub) {
  std::string line = "effective config: gtep " + sub.get_name();
  for (const CLI::Option* o : sub.get_options()) {
    if (o->get_lnames().empty()) continue;
    const std::string& name = o->get_lnames().front();
    if (name == "help" || name == "config") continue;
    std::string value;
    if (o->count() > 0) {
      const auto results = o->reduced_results();
      for (std::size_t k = 0; k < results.size(); ++k) value += (k ? "," : "") + results[k];
    } else {
      value = o->get_default_str();
    }
    if (value.empty()) continue;
    line += " --" + name + " " + shell_quote(value);
  }
  return line;
}

std::string fmt(double x, int precision = 4) {
  if (std::isnan(x)) return "nan";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << x;
  return s.str();
}

// JSON has no NaN; emit null.
json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

// Constant data has no ceiling; report it as missing instead of failing.
double ceiling_or_nan(std::span<const Trial> trials, const OracleParams& oracle) {
  try {
    return oracle_ceiling(trials, oracle);
  } catch (const UndefinedMetric&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  void print(std::ostream& out) const {
    std::vector<std::size_t> width(rows_.front().size(), 0);
    for (const auto& r : rows_)
      for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    // Text columns align left, numeric ones right; the first data row decides.
    std::vector<bool> left(width.size(), true);
    if (rows_.size() > 1) {
      for (std::size_t c = 0; c < left.size(); ++c) {
        const std::string& cell = rows_[1][c];
        left[c] = c == 0 || cell.empty() || !(std::isdigit(static_cast<unsigned char>(cell[0])) ||
                                              cell[0] == '-' || cell[0] == '+' || cell == "nan");
      }
    }
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      for (std::size_t c = 0; c < rows_[i].size(); ++c) {
        if (c) out << "  ";
        out << (left[c] ? std::left : std::right) << std::setw(static_cast<int>(width[c])) << rows_[i][c];
      }
      out << '\n';
      if (i == 0) {
        std::size_t total = 0;
        for (auto w : width) total += w;
        out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
      }
    }
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// --- oracle params file -------------------------------------------------

json oracle_json(const OracleParams& p) {
  return {{"rho", p.rho},         {"base_power", p.base_power}, {"k_v", p.k_v}, {"k_w", p.k_w},
          {"k_a", p.k_a},         {"noise_std", p.noise_std},   {"seed", p.seed}};
}

OracleParams oracle_from_json(const json& j) {
  OracleParams p;
  const json& o = j.contains("oracle") ? j.at("oracle") : j;
  p.rho = o.at("rho").get<double>();
  p.base_power = o.at("base_power").get<double>();
  p.k_v = o.at("k_v").get<double>();
  p.k_w = o.at("k_w").get<double>();
  p.k_a = o.at("k_a").get<double>();
  p.noise_std = o.at("noise_std").get<double>();
  p.seed = o.value("seed", std::uint64_t{0});
  p.validate();
  return p;
}

OracleParams read_oracle(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open oracle params " + path.string());
  try {
    return oracle_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

// Explicit --oracle path, else <data>/oracle_params.json when present.
std::optional<OracleParams> find_oracle(const std::string& explicit_path, const std::string& data_dir) {
  if (!explicit_path.empty()) return read_oracle(explicit_path);
  if (!data_dir.empty() && fs::exists(fs::path(data_dir) / kOracleFile)) {
    return read_oracle(fs::path(data_dir) / kOracleFile);
  }
  return std::nullopt;
}

std::vector<int> parse_ids(const std::string& text) {
  std::vector<int> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    int id = 0;
    try {
      id = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw std::invalid_argument("invalid trial id '" + item + "'");
    ids.push_back(id);
  }
  if (ids.empty()) throw std::invalid_argument("empty trial list '" + text + "'");
  return ids;
}

// --- shared option groups -----------------------------------------------

struct ColumnOpts {
  CsvColumns columns;
  void add(CLI::App* app) {
    opt(app, "col-t", columns.t, "CSV column holding time (s)");
    opt(app, "col-v", columns.v, "CSV column holding linear velocity (m/s)");
    opt(app, "col-w", columns.w, "CSV column holding angular velocity (rad/s)");
    opt(app, "col-power", columns.power, "CSV column holding power (mW)");
  }
};

struct TrainOpts {
  TrainConfig config;
  std::string feature_mode = "full";
  std::string lag_norm = "column";
  std::string train_ids = "1,2,3,4";
  std::string val_ids = "5";
  std::string test_ids = "6";

  void add(CLI::App* app, bool with_mode) {
    opt(app, "seed", config.seed, "Training seed");
    if (with_mode) {
      opt(app, "feature-mode", feature_mode, "Input features: full, vel or vel1lag")
          ->check(CLI::IsMember({"full", "vel", "vel1lag"}));
    }
    opt(app, "lag-norm", lag_norm, "Power lag normalization: column or target")
        ->check(CLI::IsMember({"column", "target"}));
    opt(app, "lr", config.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    opt(app, "batch-size", config.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    opt(app, "max-epochs", config.max_epochs, "Epoch limit")->check(CLI::PositiveNumber);
    opt(app, "patience", config.patience, "Early stopping patience (epochs)")->check(CLI::PositiveNumber);
    opt(app, "dropout", config.dropout_p, "Dropout probability")->check(CLI::Range(0.0, 0.99));
    opt(app, "train-trials", train_ids, "Comma-separated training trial ids");
    opt(app, "val-trials", val_ids, "Comma-separated validation trial ids");
    opt(app, "test-trials", test_ids, "Comma-separated test trial ids");
  }

  SplitSpec split() const { return {parse_ids(train_ids), parse_ids(val_ids), parse_ids(test_ids)}; }

  TrainConfig resolved() const {
    TrainConfig c = config;
    c.feature_mode = *parse_feature_mode(feature_mode);
    c.lag_norm = lag_norm == "target" ? LagNorm::Target : LagNorm::PerColumn;
    c.validate();
    return c;
  }
};

std::vector<int> all_ids(const SplitSpec& s) {
  std::vector<int> ids = s.train;
  ids.insert(ids.end(), s.val.begin(), s.val.end());
  ids.insert(ids.end(), s.test.begin(), s.test.end());
  return ids;
}

json report_json(const EvalReport& r) {
  return {{"r2", num(r.r2)},
          {"mae_mw", num(r.mae)},
          {"mape_pct", num(r.mape)},
          {"residual_mean_mw", num(r.residual_mean)},
          {"residual_p5_mw", num(r.residual_p5)},
          {"residual_p95_mw", num(r.residual_p95)},
          {"energy_error_pct", num(r.cumulative_energy_error)},
          {"n", r.n}};
}

double test_r2(const PowerModel& model, const Dataset& data, const std::vector<int>& ids) {
  std::vector<double> pred, actual;
  for (int id : ids) {
    const auto p = predict_trial(model, data.trial(id), EvalMode::TeacherForced);
    pred.insert(pred.end(), p.predicted.begin(), p.predicted.end());
    actual.insert(actual.end(), p.actual.begin(), p.actual.end());
  }
  return r_squared(pred, actual);
}

// --- subcommands ----------------------------------------------------------

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string format = "text";
};

void add_format(CLI::App* app, Context& ctx) {
  opt(app, "format", ctx.format, "Report format: text or json")->check(CLI::IsMember({"text", "json"}));
}

struct GenCmd {
  std::string out_dir;
  DatasetConfig config;
  std::optional<double> noise_std;

  void add(CLI::App* app) {
    opt(app, "out", out_dir, "Output directory")->required();
    opt(app, "seed", config.seed, "Dataset seed");
    opt(app, "samples-per-trial", config.samples_per_trial, "Samples per trial")->check(CLI::Range(6, 100000000));
    opt(app, "rho", config.oracle.rho, "Residual AR(1) coefficient")->check(CLI::Range(0.0, 0.999999));
    opt(app, "noise-std", noise_std, "Innovation std (mW); calibrated to --target-ceiling when omitted");
    opt(app, "base-power", config.oracle.base_power, "Idle power (mW)");
    opt(app, "k-v", config.oracle.k_v, "Power per |v| (mW per m/s)");
    opt(app, "k-w", config.oracle.k_w, "Power per |w| (mW per rad/s)");
    opt(app, "k-a", config.oracle.k_a, "Power per |dv/dt| (mW per m/s^2)");
    opt(app, "target-ceiling", config.target_ceiling, "Oracle ceiling used for noise calibration");
    opt(app, "hold-power", config.hold_power, "Repeat each power reading this many ticks")->check(CLI::PositiveNumber);
  }

  int run(Context& ctx) {
    config.noise_std = noise_std;
    const auto generated = generate_dataset(config);
    fs::create_directories(out_dir);
    write_dataset(generated.dataset, out_dir);

    json trials = json::array();
    for (const auto& t : generated.dataset.trials) {
      trials.push_back({{"id", t.id},
                        {"protocol", std::string(protocol_name(t.protocol))},
                        {"file", trial_filename(t.id, t.protocol)},
                        {"samples", t.size()}});
    }
    const auto& st = generated.dataset.stats;
    const double ceiling = ceiling_or_nan(generated.dataset.trials, generated.oracle);
    const double test_ceiling =
        ceiling_or_nan(std::span<const Trial>(&generated.dataset.trial(6), 1), generated.oracle);
    json meta = {{"schema", kSchema},
                 {"oracle", oracle_json(generated.oracle)},
                 {"target_ceiling", config.target_ceiling},
                 {"noise_calibrated", !noise_std.has_value()},
                 {"samples_per_trial", config.samples_per_trial},
                 {"hold_power", config.hold_power},
                 {"sample_rate_hz", kSampleRateHz},
                 {"oracle_ceiling", num(ceiling)},
                 {"test_trial_ceiling", num(test_ceiling)},
                 {"power_stats",
                  {{"min", st.power.min}, {"max", st.power.max}, {"mean", st.power.mean}, {"std", st.power.std}}},
                 {"total_samples", st.samples},
                 {"trials", trials}};
    write_text(fs::path(out_dir) / kOracleFile, meta.dump(2) + "\n");

    if (ctx.format == "json") {
      ctx.out << meta.dump(2) << '\n';
    } else {
      Table table({"trial", "protocol", "samples", "file"});
      for (const auto& t : generated.dataset.trials) {
        table.add({std::to_string(t.id), std::string(protocol_name(t.protocol)),
                   std::to_string(t.size()), trial_filename(t.id, t.protocol)});
      }
      table.print(ctx.out);
      ctx.out << "total samples " << st.samples << ", power " << fmt(st.power.mean, 1) << " +- "
              << fmt(st.power.std, 1) << " mW, noise_std " << fmt(generated.oracle.noise_std, 3)
              << " mW, oracle ceiling " << fmt(ceiling) << '\n';
    }
    return kExitOk;
  }
};

struct TrainCmd {
  std::string data_dir;
  std::string out_path;
  std::string history_path;
  std::string meta_path;
  TrainOpts train;
  ColumnOpts cols;

  void add(CLI::App* app) {
    opt(app, "data", data_dir, "Directory of trial CSVs")->required();
    opt(app, "out", out_path, "Model file to write (.gtep)")->required();
    opt(app, "history", history_path, "History CSV path (default <out stem>.history.csv)");
    opt(app, "meta", meta_path, "Metadata JSON path (default <out stem>.json)");
    train.add(app, true);
    cols.add(app);
  }

  int run(Context& ctx) {
    const auto spec = train.split();
    const auto config = train.resolved();
    const auto ids = all_ids(spec);
    const Dataset data = load_dataset(data_dir, ids, cols.columns);
    const TrainedModel result = gtep::train(data, config, spec);

    const fs::path out(out_path);
    const fs::path history = history_path.empty() ? fs::path(out).replace_extension(".history.csv") : fs::path(history_path);
    const fs::path meta = meta_path.empty() ? fs::path(out).replace_extension(".json") : fs::path(meta_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());

    const double r2 = test_r2(result.model, data, spec.test);
    const json metrics = {{"test_trials", spec.test}, {"test_r2_teacher", num(r2)}};
    save_model(result.model, out);
    write_text(history, history_csv(result));
    export_json_meta(result, meta, metrics);

    const double best_val = result.history[result.best_epoch].val_loss;
    if (ctx.format == "json") {
      json j = model_metadata(result, metrics);
      j["command"] = "train";
      j["model_file"] = out.string();
      ctx.out << j.dump(2) << '\n';
    } else {
      ctx.out << "model " << out.string() << " (" << result.model.mlp.param_count() << " params, "
              << feature_mode_name(result.model.mode) << ")\n"
              << "epochs " << result.stop_epoch << ", best " << result.best_epoch << ", val loss "
              << fmt(best_val, 5) << (result.stopped_early ? ", stopped early" : "") << '\n'
              << "test R2 (teacher-forced) " << fmt(r2) << '\n';
    }
    return kExitOk;
  }
};

struct EvalCmd {
  std::string model_path;
  std::string data_dir;
  std::string mode = "teacher";
  std::string trials = "6";
  std::string oracle_path;
  std::string pairs_csv;
  std::string hist_csv;
  std::size_t bins = 50;
  ColumnOpts cols;

  void add(CLI::App* app) {
    opt(app, "model", model_path, "Model file")->required();
    opt(app, "data", data_dir, "Directory of trial CSVs")->required();
    opt(app, "mode", mode, "teacher, rollout or corrected")->check(CLI::IsMember({"teacher", "rollout", "corrected"}));
    opt(app, "trials", trials, "Comma-separated trial ids to evaluate");
    opt(app, "oracle", oracle_path, "Oracle params JSON (default <data>/oracle_params.json if present)");
    opt(app, "pairs-csv", pairs_csv, "Write predicted-vs-actual pairs");
    opt(app, "hist-csv", hist_csv, "Write a residual histogram");
    opt(app, "bins", bins, "Histogram bins")->check(CLI::PositiveNumber);
    cols.add(app);
  }

  int run(Context& ctx) {
    const auto ids = parse_ids(trials);
    const auto eval_mode = *parse_eval_mode(mode);
    const PowerModel model = load_model(model_path);
    const Dataset data = load_dataset(data_dir, ids, cols.columns);
    const auto oracle = find_oracle(oracle_path, data_dir);

    json rows = json::array();
    std::vector<double> all_pred, all_actual;
    std::string pairs = "trial,index,t,actual_mw,predicted_mw\n";
    Table table({"trial", "R2", "MAE mW", "MAPE %", "res p5", "res p95", "energy %", "ceiling"});
    for (int id : ids) {
      const Trial& trial = data.trial(id);
      const auto p = predict_trial(model, trial, eval_mode);
      const auto report = make_report(p.predicted, p.actual);
      json row = report_json(report);
      row["trial"] = id;
      std::string ceiling = "-";
      if (oracle) {
        const double c = ceiling_or_nan(std::span<const Trial>(&trial, 1), *oracle);
        row["oracle_ceiling"] = num(c);
        ceiling = fmt(c);
      }
      rows.push_back(row);
      table.add({std::to_string(id), fmt(report.r2), fmt(report.mae, 2), fmt(report.mape, 3),
                 fmt(report.residual_p5, 1), fmt(report.residual_p95, 1),
                 fmt(report.cumulative_energy_error, 3), ceiling});
      for (std::size_t k = 0; k < p.index.size(); ++k) {
        pairs += std::to_string(id) + ',' + std::to_string(p.index[k]) + ',' +
                 format_double(trial.samples[p.index[k]].t) + ',' + format_double(p.actual[k]) + ',' +
                 format_double(p.predicted[k]) + '\n';
      }
      all_pred.insert(all_pred.end(), p.predicted.begin(), p.predicted.end());
      all_actual.insert(all_actual.end(), p.actual.begin(), p.actual.end());
    }
    const auto pooled = make_report(all_pred, all_actual);
    if (!pairs_csv.empty()) write_text(pairs_csv, pairs);
    if (!hist_csv.empty()) {
      std::vector<double> residuals(all_pred.size());
      for (std::size_t k = 0; k < residuals.size(); ++k) residuals[k] = all_actual[k] - all_pred[k];
      const auto [lo_it, hi_it] = std::minmax_element(residuals.begin(), residuals.end());
      const double lo = *lo_it, hi = *hi_it > *lo_it ? *hi_it : *lo_it + 1.0;
      const auto counts = histogram(residuals, lo, hi, bins);
      std::string text = "bin_lo_mw,bin_hi_mw,count\n";
      const double width = (hi - lo) / static_cast<double>(bins);
      for (std::size_t b = 0; b < bins; ++b) {
        text += format_double(lo + width * static_cast<double>(b)) + ',' +
                format_double(lo + width * static_cast<double>(b + 1)) + ',' + std::to_string(counts[b]) + '\n';
      }
      write_text(hist_csv, text);
    }

    if (ctx.format == "json") {
      json j = {{"schema", kSchema}, {"command", "eval"}, {"mode", mode},
                {"model", model_path}, {"trials", rows}, {"pooled", report_json(pooled)}};
      ctx.out << j.dump(2) << '\n';
    } else {
      ctx.out << "mode " << mode << ", model " << model_path << '\n';
      table.print(ctx.out);
      if (ids.size() > 1) ctx.out << "pooled R2 " << fmt(pooled.r2) << ", MAE " << fmt(pooled.mae, 2) << " mW\n";
    }
    return kExitOk;
  }
};

struct AnalyzeCmd {
  std::string data_dir;
  std::size_t max_lag = 50;
  std::string acf_csv;
  std::string oracle_path;
  ColumnOpts cols;

  void add(CLI::App* app) {
    opt(app, "data", data_dir, "Directory of trial CSVs")->required();
    opt(app, "max-lag", max_lag, "Largest autocorrelation lag")->check(CLI::PositiveNumber);
    opt(app, "acf-csv", acf_csv, "Write ACF curves (lag x trial)");
    opt(app, "oracle", oracle_path, "Oracle params JSON (default <data>/oracle_params.json if present)");
    cols.add(app);
  }

  int run(Context& ctx) {
    const Dataset data = load_dataset(data_dir, {}, cols.columns);
    if (data.trials.empty()) throw std::invalid_argument("no trial_<id>_<protocol>.csv files in " + data_dir);
    const auto oracle = find_oracle(oracle_path, data_dir);
    const auto acf = acf_report(data, max_lag);
    std::optional<AcfReport> residual;
    if (oracle) residual = residual_acf_report(data, *oracle, max_lag);

    if (!acf_csv.empty()) {
      std::string text = "lag";
      for (int id : acf.trial_ids) text += ",trial_" + std::to_string(id);
      text += '\n';
      for (std::size_t k = 0; k <= max_lag; ++k) {
        text += std::to_string(k);
        for (const auto& series : acf.acf) text += ',' + format_double(series[k]);
        text += '\n';
      }
      write_text(acf_csv, text);
    }

    const double ar1 = ar1_ceiling(acf.mean_lag1);
    json trials = json::array();
    Table table({"trial", "protocol", "samples", "rho1", "rho5", "resid rho1"});
    for (std::size_t i = 0; i < acf.trial_ids.size(); ++i) {
      const Trial& t = data.trial(acf.trial_ids[i]);
      const auto& a = acf.acf[i];
      json row = {{"trial", t.id}, {"protocol", std::string(protocol_name(t.protocol))},
                  {"samples", t.size()}, {"rho1", num(a[1])}, {"rho5", num(a[std::min<std::size_t>(5, max_lag)])}};
      std::string rr = "-";
      if (residual) {
        row["residual_rho1"] = num(residual->acf[i][1]);
        rr = fmt(residual->acf[i][1]);
      }
      trials.push_back(row);
      table.add({std::to_string(t.id), std::string(protocol_name(t.protocol)), std::to_string(t.size()),
                 fmt(a[1]), fmt(a[std::min<std::size_t>(5, max_lag)]), rr});
    }
    json j = {{"schema", kSchema}, {"command", "analyze"}, {"max_lag", max_lag},
              {"mean_rho1", num(acf.mean_lag1)}, {"ar1_ceiling", num(ar1)}, {"trials", trials}};
    const double ceiling = oracle ? ceiling_or_nan(data.trials, *oracle) : 0.0;
    if (oracle) {
      j["mean_residual_rho1"] = num(residual->mean_lag1);
      j["oracle_ceiling"] = num(ceiling);
      j["configured_rho"] = oracle->rho;
    }
    if (ctx.format == "json") {
      ctx.out << j.dump(2) << '\n';
    } else {
      table.print(ctx.out);
      ctx.out << "mean rho1 " << fmt(acf.mean_lag1) << ", AR(1) ceiling " << fmt(ar1);
      if (oracle) {
        ctx.out << ", residual rho1 " << fmt(residual->mean_lag1) << " (configured " << fmt(oracle->rho, 3)
                << "), oracle ceiling " << fmt(ceiling);
      }
      ctx.out << '\n';
    }
    return kExitOk;
  }
};

struct AblateCmd {
  std::string data_dir;
  TrainOpts train;
  ColumnOpts cols;

  void add(CLI::App* app) {
    opt(app, "data", data_dir, "Directory of trial CSVs")->required();
    train.add(app, false);
    cols.add(app);
  }

  int run(Context& ctx) {
    const auto spec = train.split();
    const auto config = train.resolved();
    const Dataset data = load_dataset(data_dir, all_ids(spec), cols.columns);
    const auto entries = ablate(data, config.seed, spec, config);

    json rows = json::array();
    Table table({"features", "inputs", "test R2", "best epoch"});
    for (const auto& e : entries) {
      rows.push_back({{"feature_mode", std::string(feature_mode_name(e.mode))},
                      {"input_dim", feature_dim(e.mode)},
                      {"test_r2", num(e.test_r2)},
                      {"best_epoch", e.model.best_epoch}});
      table.add({std::string(feature_mode_name(e.mode)), std::to_string(feature_dim(e.mode)), fmt(e.test_r2),
                 std::to_string(e.model.best_epoch)});
    }
    if (ctx.format == "json") {
      ctx.out << json({{"schema", kSchema}, {"command", "ablate"}, {"seed", config.seed}, {"results", rows}}).dump(2)
              << '\n';
    } else {
      table.print(ctx.out);
    }
    return kExitOk;
  }
};

struct TransferCmd {
  std::string model_path;
  std::string oracle_path;
  std::string data_dir;
  std::size_t robots = 7;
  std::uint64_t seed = 0;
  std::string protocol = "randomwalk";
  std::size_t samples = kDefaultTrialLength;
  double base_scale = 0.15;
  double noise_scale = 1.2;

  void add(CLI::App* app) {
    opt(app, "model", model_path, "Model file")->required();
    opt(app, "oracle", oracle_path, "Base oracle params JSON");
    opt(app, "data", data_dir, "Dataset directory whose oracle_params.json is the base");
    opt(app, "robots", robots, "Number of simulated robots")->check(CLI::PositiveNumber);
    opt(app, "seed", seed, "Seed for robot noise and commands");
    opt(app, "protocol", protocol, "Command protocol for the fresh telemetry")
        ->check(CLI::IsMember({"structured", "goalnav", "accelvar", "extremes", "randomwalk", "steadystate"}));
    opt(app, "samples", samples, "Samples per robot")->check(CLI::Range(6, 100000000));
    opt(app, "base-scale", base_scale, "Largest relative base-power increase")->check(CLI::Range(0.0, 10.0));
    opt(app, "noise-scale", noise_scale, "Noise multiplier")->check(CLI::Range(0.0, 100.0));
  }

  int run(Context& ctx) {
    OracleParams base;
    if (auto found = find_oracle(oracle_path, data_dir)) {
      base = *found;
    } else {
      // Default oracle calibrated on the default dataset commands.
      DatasetConfig config;
      config.seed = seed;
      base = generate_dataset(config).oracle;
    }
    const auto variants = make_robot_variants(base, robots, seed, base_scale, noise_scale);
    const PowerModel model = load_model(model_path);
    const auto report = transfer_study(model, variants, *parse_protocol(protocol), seed, samples);

    json rows = json::array();
    Table table({"robot", "base mW", "noise mW", "R2", "ceiling", "MAE mW", "energy %"});
    for (std::size_t i = 0; i < report.robots.size(); ++i) {
      const auto& r = report.robots[i];
      rows.push_back({{"robot", i + 1}, {"oracle", oracle_json(r.params)}, {"report", report_json(r.report)},
                      {"oracle_ceiling", num(r.ceiling)}});
      table.add({std::to_string(i + 1), fmt(r.params.base_power, 1), fmt(r.params.noise_std, 2), fmt(r.report.r2),
                 fmt(r.ceiling), fmt(r.report.mae, 2), fmt(r.report.cumulative_energy_error, 3)});
    }
    if (ctx.format == "json") {
      ctx.out << json({{"schema", kSchema}, {"command", "transfer"}, {"mode", "corrected"}, {"protocol", protocol},
                       {"robots", rows}, {"mean_r2", num(report.mean_r2)}, {"std_r2", num(report.std_r2)},
                       {"mean_mae_mw", num(report.mean_mae)}, {"std_mae_mw", num(report.std_mae)}})
                     .dump(2)
              << '\n';
    } else {
      table.print(ctx.out);
      ctx.out << "R2 " << fmt(report.mean_r2) << " +- " << fmt(report.std_r2) << ", MAE " << fmt(report.mean_mae, 2)
              << " +- " << fmt(report.std_mae, 2) << " mW\n";
    }
    return kExitOk;
  }
};

struct BenchCmd {
  std::string model_path;
  std::size_t steps = 10000;
  std::size_t warmup = 1000;

  void add(CLI::App* app) {
    opt(app, "model", model_path, "Model file")->required();
    opt(app, "steps", steps, "Timed steps")->check(CLI::Range(std::size_t{1000}, std::size_t{100000000}));
    opt(app, "warmup", warmup, "Untimed warm-up steps");
  }

  int run(Context& ctx) {
#ifdef __linux__
    // Keep the measurement on one core.
    cpu_set_t set;
    CPU_ZERO(&set);
    const int cpu = sched_getcpu();
    CPU_SET(cpu < 0 ? 0 : cpu, &set);
    sched_setaffinity(0, sizeof(set), &set);
#endif
    const PowerModel model = load_model(model_path);
    const auto r = latency_bench(model, steps, warmup);
    if (ctx.format == "json") {
      ctx.out << json({{"schema", kSchema}, {"command", "bench"}, {"steps", r.n}, {"mean_us", r.mean_us},
                       {"p99_us", r.p99_us}, {"steps_per_second", r.steps_per_second}, {"threads", 1}})
                     .dump(2)
              << '\n';
    } else {
      ctx.out << "steps " << r.n << ", mean " << fmt(r.mean_us, 3) << " us, p99 " << fmt(r.p99_us, 3) << " us, "
              << fmt(r.steps_per_second, 0) << " steps/s\n";
    }
    return kExitOk;
  }
};

struct PredictCmd {
  std::string model_path;
  std::string commands_path;
  std::string out_path = "-";
  std::string mode = "rollout";
  double initial_power = 3500.0;
  ColumnOpts cols;

  void add(CLI::App* app) {
    opt(app, "model", model_path, "Model file")->required();
    opt(app, "commands", commands_path, "Commands CSV (t, v, w; power needed for corrected mode)")->required();
    opt(app, "out", out_path, "Output CSV, '-' for stdout");
    opt(app, "mode", mode, "rollout or corrected")->check(CLI::IsMember({"rollout", "corrected"}));
    opt(app, "initial-power", initial_power, "Lag buffer fill value (mW)")->check(CLI::PositiveNumber);
    cols.add(app);
  }

  int run(Context& ctx) {
    const auto model = std::make_shared<const PowerModel>(load_model(model_path));
    const CommandLog log = load_command_csv(commands_path, cols.columns);
    if (mode == "corrected" && !log.power) {
      throw std::invalid_argument("corrected mode needs a '" + cols.columns.power + "' column in " + commands_path);
    }
    Predictor predictor(model);
    predictor.reset(initial_power);
    std::string text = "t,power_mw,energy_mwh\n";
    double energy = 0.0;
    for (std::size_t k = 0; k < log.t.size(); ++k) {
      const auto& c = log.commands[k];
      const double p = mode == "corrected" ? predictor.step_corrected(c.v, c.w, (*log.power)[k])
                                           : predictor.step(c.v, c.w);
      energy += p * kSampleDt / 3600.0;
      text += format_double(log.t[k]) + ',' + format_double(p) + ',' + format_double(energy) + '\n';
    }
    if (out_path == "-") {
      ctx.out << text;
    } else {
      write_text(out_path, text);
      if (ctx.format == "json") {
        ctx.out << json({{"schema", kSchema}, {"command", "predict"}, {"rows", log.t.size()},
                         {"energy_mwh", energy}, {"out", out_path}})
                       .dump(2)
                << '\n';
      } else {
        ctx.out << "wrote " << log.t.size() << " rows to " << out_path << ", energy " << fmt(energy, 3) << " mWh\n";
      }
    }
    return kExitOk;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gtep: robot power telemetry, training and prediction", "gtep"};
  app.require_subcommand(1, 1);
  app.set_config("--config", "", "INI/TOML file of option values ([subcommand] sections)");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();  // lets --config follow the subcommand name
  app.option_defaults()->always_capture_default();

  Context ctx{out, err};
  GenCmd gen;
  TrainCmd train;
  EvalCmd eval;
  AnalyzeCmd analyze;
  AblateCmd ablate_cmd;
  TransferCmd transfer;
  BenchCmd bench;
  PredictCmd predict;

  struct Entry {
    CLI::App* app;
    std::function<int(Context&)> run;
  };
  std::vector<Entry> entries;
  auto add = [&](auto& cmd, const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    cmd.add(sub);
    add_format(sub, ctx);
    entries.push_back({sub, [&cmd](Context& c) { return cmd.run(c); }});
  };
  add(gen, "gen", "Generate synthetic oracle telemetry");
  add(train, "train", "Train a power model");
  add(eval, "eval", "Evaluate a model on trials");
  add(analyze, "analyze", "Autocorrelation analysis and ceilings");
  add(ablate_cmd, "ablate", "Train one model per feature subset");
  add(transfer, "transfer", "Evaluate a model on perturbed robots");
  add(bench, "bench", "Time single-step inference");
  add(predict, "predict", "Predict power for a commands CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  for (auto& entry : entries) {
    if (!entry.app->parsed()) continue;
    err << effective_config(*entry.app) << '\n';
    try {
      return entry.run(ctx);
    } catch (const std::invalid_argument& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }
  return kExitUsage;
}

}  // namespace gtep::cli
