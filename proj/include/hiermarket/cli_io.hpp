#pragma once

// Persistence and configuration: YAML scenario documents, full-precision
// CSV panels with a role-prefixed header, and a flat text format for
// factor model specs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hiermarket/factor_pricing.hpp"
#include "hiermarket/hierarchy_engine.hpp"

namespace hiermarket {

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Numbers: shortest representation that parses back to the same double.

std::string format_double(double v);
/// Throws ParseError(row, column) on anything but a complete number.
double parse_double(std::string_view text, std::size_t row = 0, std::size_t column = 0);

// ---------------------------------------------------------------------------
// CSV. Quoted fields may contain commas, newlines and doubled quotes.

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Rows must all have as many fields as the header. Row numbers in errors
/// count the header as row 1.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);
std::string csv_escape(std::string_view field);
void write_text_file(const std::filesystem::path& path, std::string_view content);

// ---------------------------------------------------------------------------
// Scenario documents.

/// Parses a YAML scenario. Unknown keys, type errors and invalid values
/// throw ConfigError carrying the 1-based source line.
ScenarioConfig parse_scenario(const std::string& yaml_text);
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Fully explicit YAML that parses back to an identical config.
std::string emit_scenario(const ScenarioConfig& cfg);

/// HIERMARKET_SEED and HIERMARKET_OUT, when set. The seed must be a decimal u64.
struct EnvironmentOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};
EnvironmentOverrides read_environment();

// ---------------------------------------------------------------------------
// Simulation output directory.

/// returns.csv, prices.csv, factors.csv, info_z.csv, info_theta.csv,
/// partition.csv, events.csv, config.resolved.yaml, and magnetization.csv
/// for spin noise. Creates the directory if needed.
void write_simulation(const std::filesystem::path& dir, const ScenarioConfig& cfg, const SimulationOutput& out);

struct LoadedPanel {
  ReturnPanel panel;
  std::vector<std::string> asset_ids;
  std::vector<std::string> dates;
};

/// Reads a panel from a simulation directory or from one CSV whose columns
/// are tagged ret:<id>, fac:<name>, z:<name>, theta:<id>:<m>. A CSV with no
/// tagged columns is read as returns only. A column named t, date or time
/// holds row dates.
LoadedPanel load_panel(const std::filesystem::path& path);

/// Per-asset labels from a partition CSV: either asset_id,cluster_label[,g]
/// or t,asset_id,cluster_label,g (the last date is used). Labels are
/// returned 0-based in the order of `asset_ids`.
std::vector<int> load_partition_labels(const std::filesystem::path& path, const std::vector<std::string>& asset_ids);

// ---------------------------------------------------------------------------
// Factor spec text: "name [shape] = values" lines, row-major.

std::string format_spec(const FactorModelSpec& spec);
FactorModelSpec parse_spec(std::string_view text);

}  // namespace hiermarket
