#include "gtep/telemetry.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include "gtep/errors.hpp"
#include "gtep/rng.hpp"

namespace gtep {

namespace {

constexpr std::array<std::string_view, 6> kProtocolNames = {
    "structured", "goalnav", "accelvar", "extremes", "randomwalk", "steadystate"};

// Commanded acceleration limits, m/s^2.
constexpr double kDefaultAccelLimit = 0.4;
constexpr double kExtremesAccelLimit = 1.5;

double clamp_v(double v) { return std::clamp(v, kMinLinearVelocity, kMaxLinearVelocity); }
double clamp_w(double w) { return std::clamp(w, -kMaxAngularVelocity, kMaxAngularVelocity); }

double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

// Moves each v toward its target by at most max_step, starting from rest.
void slew_limit(std::vector<Command>& commands, double max_step) {
  double prev = 0.0;
  for (auto& c : commands) {
    const double target = clamp_v(c.v);
    const double delta = target - prev;
    c.v = std::abs(delta) <= max_step ? target : prev + std::copysign(max_step, delta);
    c.w = clamp_w(c.w);
    prev = c.v;
  }
}

// Eight equal phases: idle, forward-backward, lateral, arcs, sinusoid, ramps,
// steps, figure-eight.
std::vector<Command> structured(std::size_t n, Rng& rng) {
  std::vector<Command> out(n);
  const double loop_w = 1.2;
  const double loop_period = 2.0 * std::numbers::pi / loop_w;
  Command step_level{};
  for (std::size_t phase = 0; phase < 8; ++phase) {
    const std::size_t begin = phase * n / 8;
    const std::size_t end = (phase + 1) * n / 8;
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t k = i - begin;
      const double tau = static_cast<double>(k) * kSampleDt;
      Command c{};
      switch (phase) {
        case 0:
          break;
        case 1:
          c.v = std::fmod(tau, 6.0) < 3.0 ? 0.12 : -0.12;
          break;
        case 2: {
          // Turn, drive, turn back; alternate side each cycle.
          const double u = std::fmod(tau, 8.0);
          if (u < 1.0) c.w = std::numbers::pi / 2;
          else if (u < 3.0) c.v = 0.1;
          else if (u < 4.0) c.w = -std::numbers::pi / 2;
          else if (u < 5.0) c.w = -std::numbers::pi / 2;
          else if (u < 7.0) c.v = 0.1;
          else c.w = std::numbers::pi / 2;
          break;
        }
        case 3:
          c.v = 0.1;
          c.w = std::fmod(tau, 10.0) < 5.0 ? 1.0 : -1.0;
          break;
        case 4:
          c.v = 0.1;
          c.w = 1.5 * std::sin(2.0 * std::numbers::pi * tau / 4.0);
          break;
        case 5: {
          const double u = std::fmod(tau, 8.0) / 8.0;
          c.v = 0.15 * (u < 0.5 ? 4.0 * u - 1.0 : 3.0 - 4.0 * u);
          break;
        }
        case 6:
          if (k % 60 == 0) {
            constexpr std::array<double, 6> kV = {-0.12, -0.06, 0.0, 0.06, 0.12, 0.16};
            constexpr std::array<double, 3> kW = {-1.0, 0.0, 1.0};
            step_level = {kV[rng.index(kV.size())], kW[rng.index(kW.size())]};
          }
          c = step_level;
          break;
        default:
          c.v = 0.12;
          c.w = std::fmod(tau, 2.0 * loop_period) < loop_period ? loop_w : -loop_w;
          break;
      }
      out[i] = c;
    }
  }
  return out;
}

// Unicycle in a 3.2 m x 2.0 m arena centred on the origin, proportional
// heading and distance control toward uniformly drawn goals.
std::vector<Command> goal_nav(std::size_t n, Rng& rng) {
  constexpr double kHalfX = 1.6, kHalfY = 1.0, kMargin = 0.1;
  constexpr double kDistanceGain = 0.8, kHeadingGain = 2.0;
  constexpr double kGoalTolerance = 0.05;
  constexpr std::size_t kGoalTimeout = 600;
  const double max_step = kDefaultAccelLimit * kSampleDt;

  std::vector<Command> out(n);
  double x = 0.0, y = 0.0, theta = 0.0, v_prev = 0.0;
  auto draw_goal = [&] {
    return std::array<double, 2>{rng.uniform(-kHalfX + kMargin, kHalfX - kMargin),
                                 rng.uniform(-kHalfY + kMargin, kHalfY - kMargin)};
  };
  auto goal = draw_goal();
  std::size_t since_goal = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = goal[0] - x, dy = goal[1] - y;
    const double dist = std::hypot(dx, dy);
    if (dist < kGoalTolerance || since_goal >= kGoalTimeout) {
      goal = draw_goal();
      since_goal = 0;
    }
    const double heading_error = wrap_angle(std::atan2(goal[1] - y, goal[0] - x) - theta);
    const double v_target = clamp_v(kDistanceGain * std::hypot(goal[0] - x, goal[1] - y) *
                                    std::cos(heading_error));
    const double dv = std::clamp(v_target - v_prev, -max_step, max_step);
    const double v = std::abs(v_target - v_prev) <= max_step ? v_target : v_prev + dv;
    const double w = clamp_w(kHeadingGain * heading_error);
    out[i] = {v, w};
    x = std::clamp(x + v * std::cos(theta) * kSampleDt, -kHalfX, kHalfX);
    y = std::clamp(y + v * std::sin(theta) * kSampleDt, -kHalfY, kHalfY);
    theta = wrap_angle(theta + w * kSampleDt);
    v_prev = v;
    ++since_goal;
  }
  return out;
}

// Accelerate to a cruise speed at one of several rates, hold, decelerate, rest.
std::vector<Command> accel_var(std::size_t n, Rng& rng) {
  constexpr std::array<double, 4> kRates = {0.05, 0.1, 0.2, 0.4};
  constexpr std::array<double, 3> kTurn = {0.0, 0.5, -0.5};
  std::vector<Command> out;
  out.reserve(n);
  double sign = 1.0;
  double v = 0.0;
  while (out.size() < n) {
    const double rate = kRates[rng.index(kRates.size())];
    const double cruise = sign * rng.uniform(0.08, 0.15);
    const double w = kTurn[rng.index(kTurn.size())];
    const double step = rate * kSampleDt;
    auto ramp_to = [&](double target, double turn) {
      while (out.size() < n && v != target) {
        v = std::abs(target - v) <= step ? target : v + std::copysign(step, target - v);
        out.push_back({v, turn});
      }
    };
    auto hold = [&](std::size_t ticks, double turn) {
      for (std::size_t k = 0; k < ticks && out.size() < n; ++k) out.push_back({v, turn});
    };
    ramp_to(cruise, w);
    hold(60, w);
    ramp_to(0.0, w);
    hold(30, 0.0);
    sign = -sign;
  }
  return out;
}

// Alternating maximum-speed segments with rapid reversals and full-rate turns.
std::vector<Command> extremes(std::size_t n, Rng& rng) {
  constexpr std::array<double, 3> kW = {-kMaxAngularVelocity, 0.0, kMaxAngularVelocity};
  std::vector<Command> out;
  out.reserve(n);
  double sign = 1.0;
  while (out.size() < n) {
    const std::size_t ticks = 30 + rng.index(61);  // 1-3 s
    Command c{};
    if (rng.uniform() < 0.85) c.v = sign > 0.0 ? kMaxLinearVelocity : kMinLinearVelocity;
    c.w = kW[rng.index(kW.size())];
    sign = -sign;
    for (std::size_t k = 0; k < ticks && out.size() < n; ++k) out.push_back(c);
  }
  return out;
}

// Uniform targets every 30 ticks, linearly interpolated, starting from rest.
std::vector<Command> random_walk(std::size_t n, Rng& rng) {
  constexpr std::size_t kSegment = 30;
  std::vector<Command> out(n);
  Command from{};
  Command to{rng.uniform(kMinLinearVelocity, kMaxLinearVelocity),
             rng.uniform(-kMaxAngularVelocity, kMaxAngularVelocity)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % kSegment;
    if (i > 0 && k == 0) {
      from = to;
      to = {rng.uniform(kMinLinearVelocity, kMaxLinearVelocity),
            rng.uniform(-kMaxAngularVelocity, kMaxAngularVelocity)};
    }
    const double a = static_cast<double>(k) / kSegment;
    out[i] = {from.v + (to.v - from.v) * a, from.w + (to.w - from.w) * a};
  }
  return out;
}

// Long constant segments (10-20 s), occasionally idle.
std::vector<Command> steady_state(std::size_t n, Rng& rng) {
  std::vector<Command> out;
  out.reserve(n);
  while (out.size() < n) {
    const std::size_t ticks = 300 + rng.index(301);
    Command c{};
    if (rng.uniform() >= 0.15) {
      c.v = rng.uniform(kMinLinearVelocity, kMaxLinearVelocity);
      c.w = rng.uniform(-1.5, 1.5);
    }
    for (std::size_t k = 0; k < ticks && out.size() < n; ++k) out.push_back(c);
  }
  return out;
}

double population_variance(std::span<const double> x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size());
}

std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
    while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
  }
  return fields;
}

// Accepts "trial_<id>_<protocol>.csv".
std::optional<std::pair<int, std::optional<Protocol>>> parse_trial_filename(std::string_view name) {
  constexpr std::string_view kPrefix = "trial_", kSuffix = ".csv";
  if (!name.starts_with(kPrefix) || !name.ends_with(kSuffix)) return std::nullopt;
  name.remove_prefix(kPrefix.size());
  name.remove_suffix(kSuffix.size());
  const auto underscore = name.find('_');
  const auto id_text = name.substr(0, underscore);
  int id = 0;
  const auto [ptr, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
  if (ec != std::errc{} || ptr != id_text.data() + id_text.size() || id_text.empty()) {
    return std::nullopt;
  }
  std::optional<Protocol> protocol;
  if (underscore != std::string_view::npos) protocol = parse_protocol(name.substr(underscore + 1));
  return std::pair{id, protocol};
}

}  // namespace

std::string_view protocol_name(Protocol p) {
  return kProtocolNames.at(static_cast<std::size_t>(p) - 1);
}

std::optional<Protocol> parse_protocol(std::string_view name) {
  for (std::size_t i = 0; i < kProtocolNames.size(); ++i) {
    if (kProtocolNames[i] == name) return static_cast<Protocol>(i + 1);
  }
  return std::nullopt;
}

Protocol default_protocol_for_trial(int trial_id) {
  if (trial_id < 1 || trial_id > 6) {
    throw std::invalid_argument("default protocol defined for trials 1..6, got " +
                                std::to_string(trial_id));
  }
  return static_cast<Protocol>(trial_id);
}

std::vector<double> Trial::power() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.power);
  return out;
}

std::vector<Command> Trial::commands() const {
  std::vector<Command> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.v, s.w});
  return out;
}

void OracleParams::validate() const {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("oracle rho must be in [0, 1)");
  if (!(base_power > 0.0)) throw std::invalid_argument("oracle base_power must be > 0");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("oracle noise_std must be >= 0");
  if (!std::isfinite(k_v) || !std::isfinite(k_w) || !std::isfinite(k_a)) {
    throw std::invalid_argument("oracle gains must be finite");
  }
}

const Trial& Dataset::trial(int id) const {
  for (const auto& t : trials) {
    if (t.id == id) return t;
  }
  throw std::invalid_argument("dataset has no trial " + std::to_string(id));
}

bool Dataset::has_trial(int id) const noexcept {
  return std::any_of(trials.begin(), trials.end(), [id](const Trial& t) { return t.id == id; });
}

std::size_t Dataset::total_samples() const noexcept {
  std::size_t n = 0;
  for (const auto& t : trials) n += t.size();
  return n;
}

double max_linear_step(Protocol protocol) {
  return (protocol == Protocol::Extremes ? kExtremesAccelLimit : kDefaultAccelLimit) * kSampleDt;
}

std::vector<Command> generate_protocol(Protocol protocol, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate_protocol: n must be >= 1");
  Rng rng(seed, static_cast<std::uint64_t>(protocol));
  std::vector<Command> out;
  switch (protocol) {
    case Protocol::Structured: out = structured(n, rng); break;
    case Protocol::GoalNav: out = goal_nav(n, rng); break;
    case Protocol::AccelVar: out = accel_var(n, rng); break;
    case Protocol::Extremes: out = extremes(n, rng); break;
    case Protocol::RandomWalk: out = random_walk(n, rng); break;
    case Protocol::SteadyState: out = steady_state(n, rng); break;
    default: throw std::invalid_argument("generate_protocol: unknown protocol");
  }
  slew_limit(out, max_linear_step(protocol));
  return out;
}

std::vector<double> steady_state_power(std::span<const Command> commands, const OracleParams& params) {
  std::vector<double> s(commands.size());
  for (std::size_t t = 0; t < commands.size(); ++t) {
    const double accel = t == 0 ? 0.0 : (commands[t].v - commands[t - 1].v) / kSampleDt;
    s[t] = params.base_power + params.k_v * std::abs(commands[t].v) +
           params.k_w * std::abs(commands[t].w) + params.k_a * std::abs(accel);
  }
  return s;
}

std::vector<double> simulate_power(std::span<const Command> commands, const OracleParams& params,
                                   std::optional<double> initial_power) {
  if (commands.empty()) throw std::invalid_argument("simulate_power: empty command list");
  params.validate();
  const auto s = steady_state_power(commands, params);
  Rng rng(params.seed);
  std::vector<double> p(commands.size());
  p[0] = std::max(initial_power.value_or(s[0]), kPowerFloor);
  for (std::size_t t = 1; t < p.size(); ++t) {
    const double eps = params.noise_std > 0.0 ? params.noise_std * rng.normal() : 0.0;
    p[t] = std::max(s[t] + params.rho * (p[t - 1] - s[t - 1]) + eps, kPowerFloor);
  }
  return p;
}

std::vector<double> hold_power(std::span<const double> power, std::size_t hold) {
  if (hold == 0) throw std::invalid_argument("hold_power: hold must be >= 1");
  std::vector<double> out(power.begin(), power.end());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = power[t - t % hold];
  return out;
}

double calibrate_noise_std(std::span<const std::vector<Command>> command_sets,
                           const OracleParams& params, double target_ceiling) {
  const double one_minus_rho2 = 1.0 - params.rho * params.rho;
  const double c = 1.0 - target_ceiling;
  if (!(target_ceiling < 1.0) || !(c < one_minus_rho2)) {
    throw std::invalid_argument("calibrate_noise_std: target ceiling must lie in (rho^2, 1)");
  }
  std::vector<double> all;
  for (const auto& commands : command_sets) {
    const auto s = steady_state_power(commands, params);
    all.insert(all.end(), s.begin(), s.end());
  }
  if (all.empty()) throw std::invalid_argument("calibrate_noise_std: no commands");
  const double var_s = population_variance(all);
  return std::sqrt(c * var_s / (1.0 - c / one_minus_rho2));
}

Trial make_trial(int id, Protocol protocol, std::span<const Command> commands,
                 std::span<const double> power) {
  if (commands.size() != power.size()) {
    throw std::invalid_argument("make_trial: commands and power differ in length");
  }
  Trial trial{id, protocol, {}};
  trial.samples.reserve(commands.size());
  for (std::size_t i = 0; i < commands.size(); ++i) {
    trial.samples.push_back(
        {static_cast<double>(i) * kSampleDt, commands[i].v, commands[i].w, power[i]});
  }
  return trial;
}

std::uint64_t trial_command_seed(std::uint64_t dataset_seed, int id) {
  return derive_seed(dataset_seed, static_cast<std::uint64_t>(id));
}

std::uint64_t trial_noise_seed(std::uint64_t dataset_seed, int id) {
  return derive_seed(dataset_seed, 100 + static_cast<std::uint64_t>(id));
}

GeneratedDataset generate_dataset(const DatasetConfig& config) {
  if (config.samples_per_trial == 0) {
    throw std::invalid_argument("generate_dataset: samples_per_trial must be >= 1");
  }
  std::vector<std::vector<Command>> commands;
  for (int id = 1; id <= 6; ++id) {
    commands.push_back(generate_protocol(default_protocol_for_trial(id), config.samples_per_trial,
                                         trial_command_seed(config.seed, id)));
  }
  OracleParams oracle = config.oracle;
  oracle.seed = config.seed;
  oracle.noise_std = config.noise_std ? *config.noise_std
                                      : calibrate_noise_std(commands, oracle, config.target_ceiling);
  oracle.validate();

  GeneratedDataset out{{}, oracle};
  for (int id = 1; id <= 6; ++id) {
    OracleParams trial_params = oracle;
    trial_params.seed = trial_noise_seed(config.seed, id);
    auto power = simulate_power(commands[id - 1], trial_params);
    if (config.hold_power > 1) power = hold_power(power, config.hold_power);
    out.dataset.trials.push_back(make_trial(id, default_protocol_for_trial(id), commands[id - 1], power));
  }
  out.dataset.stats = dataset_stats(out.dataset);
  return out;
}

SeriesStats series_stats(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("series_stats: empty series");
  SeriesStats s{values[0], values[0], 0.0, 0.0};
  double sum = 0.0;
  for (double x : values) {
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
    sum += x;
  }
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double x : values) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

DatasetStats dataset_stats(const Dataset& dataset) {
  std::vector<double> p, v, w;
  for (const auto& trial : dataset.trials) {
    for (const auto& s : trial.samples) {
      p.push_back(s.power);
      v.push_back(s.v);
      w.push_back(s.w);
    }
  }
  if (p.empty()) throw std::invalid_argument("dataset_stats: empty dataset");
  return {series_stats(p), series_stats(v), series_stats(w), p.size()};
}

// --- CSV ----------------------------------------------------------------

std::string format_double(double value) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf.data(), ptr);
}

std::string trial_filename(int id, Protocol protocol) {
  return "trial_" + std::to_string(id) + "_" + std::string(protocol_name(protocol)) + ".csv";
}

namespace {

struct ParsedTable {
  std::vector<std::array<double, 4>> rows;  // t, v, w, power (power NaN when absent)
  bool has_power = false;
};

ParsedTable parse_table(std::string_view text, const CsvColumns& columns, std::string_view source,
                        bool require_power) {
  const std::string where(source);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    const auto nl = text.find('\n', pos);
    line = trim_cr(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw SchemaError(where + ": missing header");
  const auto header = split_fields(line);
  auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  auto column_index = [&](const std::string& name) {
    const auto idx = find_column(name);
    if (!idx) throw SchemaError(where + ": missing column '" + name + "'");
    return *idx;
  };

  ParsedTable table;
  std::vector<std::size_t> idx = {column_index(columns.t), column_index(columns.v),
                                  column_index(columns.w)};
  std::vector<const std::string*> names = {&columns.t, &columns.v, &columns.w};
  if (require_power) {
    idx.push_back(column_index(columns.power));
  } else if (const auto p = find_column(columns.power)) {
    idx.push_back(*p);
  }
  table.has_power = idx.size() == 4;
  names.push_back(&columns.power);

  while (next_line(line)) {
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    std::array<double, 4> values{0.0, 0.0, 0.0, std::nan("")};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto field = fields[idx[k]];
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), values[k]);
      if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty() ||
          !std::isfinite(values[k])) {
        throw ParseError(where + ": invalid number '" + std::string(field) + "' in column " + *names[k],
                         line_no);
      }
    }
    if (!table.rows.empty() && !(values[0] > table.rows.back()[0])) {
      throw SchemaError(where + ": time not strictly increasing at line " + std::to_string(line_no));
    }
    table.rows.push_back(values);
  }
  if (table.rows.empty()) throw SchemaError(where + ": trial has no samples");
  return table;
}

}  // namespace

Trial parse_csv(std::string_view text, const CsvColumns& columns, std::string_view source) {
  const auto table = parse_table(text, columns, source, true);
  Trial trial;
  trial.samples.reserve(table.rows.size());
  for (const auto& r : table.rows) trial.samples.push_back({r[0], r[1], r[2], r[3]});
  return trial;
}

CommandLog parse_command_csv(std::string_view text, const CsvColumns& columns, std::string_view source) {
  const auto table = parse_table(text, columns, source, false);
  CommandLog log;
  if (table.has_power) log.power.emplace();
  for (const auto& r : table.rows) {
    log.t.push_back(r[0]);
    log.commands.push_back({r[1], r[2]});
    if (log.power) log.power->push_back(r[3]);
  }
  return log;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

CommandLog load_command_csv(const std::filesystem::path& path, const CsvColumns& columns) {
  return parse_command_csv(read_file(path), columns, path.string());
}

Trial load_csv(const std::filesystem::path& path, const CsvColumns& columns) {
  Trial trial = parse_csv(read_file(path), columns, path.string());
  if (const auto parsed = parse_trial_filename(path.filename().string())) {
    trial.id = parsed->first;
    trial.protocol = parsed->second.value_or(
        parsed->first >= 1 && parsed->first <= 6 ? default_protocol_for_trial(parsed->first)
                                                 : Protocol::Structured);
  }
  return trial;
}

std::string format_csv(const Trial& trial) {
  std::string out = "t,v,w,power_mw\n";
  for (const auto& s : trial.samples) {
    out += format_double(s.t);
    out += ',';
    out += format_double(s.v);
    out += ',';
    out += format_double(s.w);
    out += ',';
    out += format_double(s.power);
    out += '\n';
  }
  return out;
}

void write_csv(const Trial& trial, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_csv(trial);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& dir, std::span<const int> required_ids,
                     const CsvColumns& columns) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::invalid_argument("data directory not found: " + dir.string());
  }
  std::map<int, std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto parsed = parse_trial_filename(entry.path().filename().string());
    if (!parsed) continue;
    if (!files.emplace(parsed->first, entry.path()).second) {
      throw SchemaError("duplicate files for trial " + std::to_string(parsed->first) + " in " +
                        dir.string());
    }
  }
  for (int id : required_ids) {
    if (!files.contains(id)) {
      const std::string expected = id >= 1 && id <= 6
                                       ? trial_filename(id, default_protocol_for_trial(id))
                                       : "trial_" + std::to_string(id) + "_<protocol>.csv";
      throw std::invalid_argument("missing trial file " + (dir / expected).string());
    }
  }
  Dataset dataset;
  for (const auto& [id, path] : files) dataset.trials.push_back(load_csv(path, columns));
  if (dataset.trials.empty()) throw std::invalid_argument("no trial files in " + dir.string());
  dataset.stats = dataset_stats(dataset);
  return dataset;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& trial : dataset.trials) write_csv(trial, dir / trial_filename(trial.id, trial.protocol));
}

}  // namespace gtep
