#pragma once

// On-disk formats: run JSONL records, run summaries, CSV reports and the
// binary policy file.
//
// Policy file layout (all integers and floats little-endian):
//   8 bytes  magic "VARLABPL"
//   u32      format version (kPolicyVersion)
//   u32      network count (2: trunk, head)
//   per network:
//     u8 hidden_activation, u8 penult_mode, u8 output_mode, u8 reserved
//     u32 layer count
//     per layer: u32 rows, u32 cols, rows*cols f64 weights (row-major), rows f64 bias
//     u32 power vector length, then that many f64

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "varlab/agent.hpp"
#include "varlab/bench.hpp"

namespace varlab {

inline constexpr const char* kRunSchema = "varlab.run/1";
inline constexpr const char* kSummarySchema = "varlab.summary/1";
inline constexpr const char* kCsvSchemaPrefix = "#schema=";
inline constexpr std::uint32_t kPolicyVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "%.17g"; non-finite values are written as null in JSON contexts by callers.
std::string format_double(double x);

// Writes to a sibling temp file and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

std::string run_jsonl(const RunRecord& record);
std::string run_summary_json(const RunRecord& record, double stuck_floor);
RunRecord parse_run(const std::string& jsonl, const std::string& summary_json);

void write_run(const std::filesystem::path& dir, const RunRecord& record, double stuck_floor);
// Reads run_<seed>.jsonl and its summary.
RunRecord read_run(const std::filesystem::path& jsonl_path);
std::vector<RunRecord> read_runs(const std::filesystem::path& dir);

std::filesystem::path run_jsonl_path(const std::filesystem::path& dir, std::uint64_t seed);
std::filesystem::path run_summary_path(const std::filesystem::path& dir, std::uint64_t seed);
std::filesystem::path policy_path(const std::filesystem::path& dir, std::uint64_t seed);

// CSV with a leading "#schema=<name>" line and a header row.
struct CsvTable {
  std::string schema;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_string() const;
  static CsvTable parse(const std::string& text, const std::string& expected_schema);
};

std::string serialize_policy(const ActorNet& actor);
ActorNet parse_policy(const std::string& bytes);
void write_policy(const std::filesystem::path& path, const ActorNet& actor);
ActorNet read_policy(const std::filesystem::path& path);

}  // namespace varlab
