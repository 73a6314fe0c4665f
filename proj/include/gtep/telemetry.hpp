#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gtep {

inline constexpr double kSampleRateHz = 30.0;
inline constexpr double kSampleDt = 1.0 / kSampleRateHz;

inline constexpr double kMinLinearVelocity = -0.15;  // m/s
inline constexpr double kMaxLinearVelocity = 0.16;   // m/s
inline constexpr double kMaxAngularVelocity = 3.1416;  // rad/s, symmetric

inline constexpr std::size_t kDefaultTrialLength = 8000;
inline constexpr double kPowerFloor = 1.0;  // mW

struct Command {
  double v = 0.0;  // m/s
  double w = 0.0;  // rad/s
  friend bool operator==(const Command&, const Command&) = default;
};

struct Sample {
  double t = 0.0;      // s
  double v = 0.0;      // m/s
  double w = 0.0;      // rad/s
  double power = 0.0;  // mW
  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Protocol { Structured = 1, GoalNav, AccelVar, Extremes, RandomWalk, SteadyState };

inline constexpr Protocol kAllProtocols[] = {Protocol::Structured, Protocol::GoalNav,
                                             Protocol::AccelVar,   Protocol::Extremes,
                                             Protocol::RandomWalk, Protocol::SteadyState};

/// Lower-case token used in file names and on the command line ("steadystate").
std::string_view protocol_name(Protocol p);
std::optional<Protocol> parse_protocol(std::string_view name);
/// Trials 1..6 run the protocols in declaration order.
Protocol default_protocol_for_trial(int trial_id);

struct Trial {
  int id = 0;
  Protocol protocol = Protocol::Structured;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  std::vector<double> power() const;
  std::vector<Command> commands() const;
};

/// Parameters of the synthetic power oracle:
///   S_t = base_power + k_v|v_t| + k_w|w_t| + k_a|dv_t/dt|
///   P_t = S_t + rho (P_{t-1} - S_{t-1}) + eps_t,  eps_t ~ N(0, noise_std^2),  P_0 = S_0
struct OracleParams {
  double rho = 0.95;
  double base_power = 3652.0;  // mW
  double k_v = 2000.0;         // mW per m/s
  double k_w = 150.0;          // mW per rad/s
  double k_a = 500.0;          // mW per m/s^2
  double noise_std = 0.0;      // mW; normally set by calibrate_noise_std
  std::uint64_t seed = 0;

  void validate() const;
};

struct SeriesStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population
  friend bool operator==(const SeriesStats&, const SeriesStats&) = default;
};

struct DatasetStats {
  SeriesStats power;
  SeriesStats v;
  SeriesStats w;
  std::size_t samples = 0;
  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

struct Dataset {
  std::vector<Trial> trials;
  DatasetStats stats;

  /// Throws std::invalid_argument if no trial carries `id`.
  const Trial& trial(int id) const;
  bool has_trial(int id) const noexcept;
  std::size_t total_samples() const noexcept;
};

// --- command generation -------------------------------------------------

/// Deterministic (v, w) command sequence for a motion protocol. Every command is
/// inside the velocity bounds; linear-velocity changes are slew limited so the
/// commanded acceleration stays physical.
std::vector<Command> generate_protocol(Protocol protocol, std::size_t n, std::uint64_t seed);

/// Largest |dv| per tick the generator emits for a protocol.
double max_linear_step(Protocol protocol);

// --- power oracle -------------------------------------------------------

/// Latent steady-state power S_t for each command.
std::vector<double> steady_state_power(std::span<const Command> commands, const OracleParams& params);

/// P_0 = S_0 unless `initial_power` is given (e.g. base_power for a robot
/// that was idle before the first command).
std::vector<double> simulate_power(std::span<const Command> commands, const OracleParams& params,
                                   std::optional<double> initial_power = std::nullopt);

/// Repeats every `hold`-th reading, emulating a sensor polled slower than the
/// command loop (hold = 3 gives 10 Hz readings at 30 Hz).
std::vector<double> hold_power(std::span<const double> power, std::size_t hold);

/// Noise level at which 1 - noise_std^2 / var(P) equals `target_ceiling` for the
/// given command sequences, using var(P) = var(S) + noise_std^2 / (1 - rho^2).
/// Requires rho^2 < target_ceiling < 1.
double calibrate_noise_std(std::span<const std::vector<Command>> command_sets,
                           const OracleParams& params, double target_ceiling);

inline constexpr double kDefaultTargetCeiling = 0.91;

Trial make_trial(int id, Protocol protocol, std::span<const Command> commands,
                 std::span<const double> power);

struct DatasetConfig {
  std::uint64_t seed = 0;
  std::size_t samples_per_trial = kDefaultTrialLength;
  OracleParams oracle{};
  /// When empty, noise_std is calibrated to target_ceiling on the generated commands.
  std::optional<double> noise_std;
  double target_ceiling = kDefaultTargetCeiling;
  std::size_t hold_power = 1;
};

struct GeneratedDataset {
  Dataset dataset;
  OracleParams oracle;  // resolved params (calibrated noise_std)
};

/// Six trials, ids 1..6, one per protocol. Trial i uses command seed
/// trial_command_seed(seed, i) and noise seed trial_noise_seed(seed, i); the
/// resolved oracle carries seed = config.seed (config.oracle.seed is ignored).
GeneratedDataset generate_dataset(const DatasetConfig& config);

std::uint64_t trial_command_seed(std::uint64_t dataset_seed, int id);
std::uint64_t trial_noise_seed(std::uint64_t dataset_seed, int id);

DatasetStats dataset_stats(const Dataset& dataset);
SeriesStats series_stats(std::span<const double> values);

// --- CSV ----------------------------------------------------------------

struct CsvColumns {
  std::string t = "t";
  std::string v = "v";
  std::string w = "w";
  std::string power = "power_mw";
};

/// "trial_<id>_<protocol>.csv"
std::string trial_filename(int id, Protocol protocol);

/// Parses a telemetry CSV. Columns are located by header name, so extra
/// columns are ignored. Trial id and protocol come from the file name when it
/// follows trial_filename(), otherwise they default to 0 / Structured.
Trial load_csv(const std::filesystem::path& path, const CsvColumns& columns = {});
/// Same as load_csv for in-memory text; `source` labels error messages.
Trial parse_csv(std::string_view text, const CsvColumns& columns = {},
                std::string_view source = "<memory>");

/// Command stream for offline prediction; the power column is optional.
struct CommandLog {
  std::vector<double> t;
  std::vector<Command> commands;
  std::optional<std::vector<double>> power;
};

CommandLog parse_command_csv(std::string_view text, const CsvColumns& columns = {},
                             std::string_view source = "<memory>");
CommandLog load_command_csv(const std::filesystem::path& path, const CsvColumns& columns = {});

void write_csv(const Trial& trial, const std::filesystem::path& path);
std::string format_csv(const Trial& trial);

/// Loads every trial_<id>_*.csv in `dir`. When `required_ids` is non-empty, a
/// missing id raises std::invalid_argument naming the expected file.
Dataset load_dataset(const std::filesystem::path& dir, std::span<const int> required_ids = {},
                     const CsvColumns& columns = {});
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace gtep
