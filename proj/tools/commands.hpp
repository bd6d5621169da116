#pragma once

// Command implementations behind the varlab executable. Each returns the
// process exit code: 0 success, 1 bad input, 2 aborted run.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace varlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitBadInput = 1;
inline constexpr int kExitAborted = 2;

inline constexpr const char* kBenchCsvSchema = "varlab.bench/1";
inline constexpr const char* kDecompCsvSchema = "varlab.decomp/1";
inline constexpr const char* kCorrCsvSchema = "varlab.corr/1";
inline constexpr const char* kProfileCsvSchema = "varlab.profile/1";
inline constexpr const char* kSaturationCsvSchema = "varlab.saturation/1";
inline constexpr const char* kSparseQCsvSchema = "varlab.sparse_q/1";
inline constexpr const char* kGainCsvSchema = "varlab.gain_ratio/1";
inline constexpr const char* kProbeCsvSchema = "varlab.probe/1";

struct TrainOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  std::optional<std::string> preset;
  std::optional<std::string> out_dir;
  // Paired-seed mode: `seed` is the master seed and files are keyed by
  // 2 * pair + (side == "B").
  std::optional<int> pair;
  std::string side = "A";
};

struct BenchOptions {
  std::string config_path;
  std::vector<std::string> presets;
  std::vector<std::string> envs;  // defaults to the config's env
  std::optional<int> seeds;       // count; overrides the config's seed list
  int parallel = 1;
  std::optional<std::string> out_dir;
};

struct AnalyzeOptions {
  std::string run_dir;
  std::string what;
  std::optional<std::string> out_dir;
  std::vector<double> taus;
  double stuck_floor = 20.0;
  std::optional<double> alg_var;
  std::optional<double> sample_var;
  int s_from = 10;
  int s_to = 100;
};

struct ProbeOptions {
  std::string policy_path;
  std::string env;
  std::vector<double> p_grid{0.0, 0.25, 0.5, 0.75, 1.0};
  int episodes = 10;
  std::uint64_t seed = 0;
  std::string out_path = "probe.csv";
};

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err);
int cmd_bench(const BenchOptions& opts, std::ostream& out, std::ostream& err);
int cmd_analyze(const AnalyzeOptions& opts, std::ostream& out, std::ostream& err);
int cmd_probe(const ProbeOptions& opts, std::ostream& out, std::ostream& err);

// Worker count after the VARLAB_THREADS override.
int effective_workers(int requested);

}  // namespace varlab::cli
