#include "varlab/records_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include "json_emit.hpp"

namespace varlab {

namespace fs = std::filesystem;
using detail::OrderedJson;
using Json = nlohmann::json;

namespace {

OrderedJson metrics_json(const UpdateMetrics& m) {
  OrderedJson j;
  j["actor_grad_norm"] = m.actor_grad_norm;
  j["critic_loss"] = m.critic_loss;
  j["actor_loss"] = m.actor_loss;
  j["avg_abs_action"] = m.avg_abs_action;
  j["avg_q"] = m.avg_q;
  j["delta_q"] = m.delta_q;
  j["fnz_qtarget"] = m.fnz_qtarget;
  j["fnz_reward"] = m.fnz_reward;
  j["ssl_loss"] = m.ssl_loss;
  j["pnorm_clamped"] = m.pnorm_clamped;
  return j;
}

double num(const Json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
  const Json& v = j.at(key);
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!v.is_number()) throw FormatError(std::string("field '") + key + "' is not a number");
  return v.get<double>();
}

UpdateMetrics metrics_from(const Json& j) {
  UpdateMetrics m;
  m.actor_grad_norm = num(j, "actor_grad_norm");
  m.critic_loss = num(j, "critic_loss");
  m.actor_loss = num(j, "actor_loss");
  m.avg_abs_action = num(j, "avg_abs_action");
  m.avg_q = num(j, "avg_q");
  m.delta_q = num(j, "delta_q");
  m.fnz_qtarget = num(j, "fnz_qtarget");
  m.fnz_reward = num(j, "fnz_reward");
  m.ssl_loss = num(j, "ssl_loss");
  m.pnorm_clamped = j.at("pnorm_clamped").get<int>();
  return m;
}

void check_schema(const Json& j, const char* expected) {
  if (!j.contains("schema") || !j.at("schema").is_string()) throw FormatError("record has no schema tag");
  const auto schema = j.at("schema").get<std::string>();
  if (schema != expected) throw FormatError("unsupported schema '" + schema + "' (expected '" + expected + "')");
}

// Little-endian primitive codec for the policy file.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double x) {
    const auto v = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(next(1)[0]); }
  std::uint32_t u32() {
    const char* p = next(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() {
    const char* p = next(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return std::bit_cast<double>(v);
  }
  const char* next(std::size_t n) {
    if (pos_ + n > in_.size()) throw FormatError("policy file is truncated");
    const char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

constexpr std::array<char, 8> kPolicyMagic{'V', 'A', 'R', 'L', 'A', 'B', 'P', 'L'};

void write_mlp(ByteWriter& w, const MlpParams& p) {
  w.u8(static_cast<std::uint8_t>(p.hidden_activation));
  w.u8(static_cast<std::uint8_t>(p.penult_mode));
  w.u8(static_cast<std::uint8_t>(p.output_mode));
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(p.layers.size()));
  for (const Layer& layer : p.layers) {
    w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
    w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) w.f64(layer.weight(i, j));
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) w.f64(layer.bias(i));
  }
  w.u32(static_cast<std::uint32_t>(p.power_vec.size()));
  for (Eigen::Index i = 0; i < p.power_vec.size(); ++i) w.f64(p.power_vec(i));
}

MlpParams read_mlp(ByteReader& r) {
  MlpParams p;
  const auto act = r.u8();
  const auto penult = r.u8();
  const auto output = r.u8();
  (void)r.u8();
  if (act > 1 || penult > 3 || output > 1) throw FormatError("policy file has an unknown network mode");
  p.hidden_activation = static_cast<Activation>(act);
  p.penult_mode = static_cast<PenultMode>(penult);
  p.output_mode = static_cast<OutputMode>(output);
  const std::uint32_t n_layers = r.u32();
  if (n_layers == 0 || n_layers > 64) throw FormatError("policy file has an implausible layer count");
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16)) throw FormatError("policy file has bad layer dims");
    Layer layer{RealMat(rows, cols), RealVec(rows)};
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = r.f64();
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = r.f64();
    p.layers.push_back(std::move(layer));
  }
  const std::uint32_t power = r.u32();
  if (power > (1u << 16)) throw FormatError("policy file has a bad power vector");
  p.power_vec.resize(power);
  for (std::uint32_t i = 0; i < power; ++i) p.power_vec(i) = r.f64();
  try {
    p.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("policy file describes an invalid network: ") + e.what());
  }
  return p;
}

}  // namespace

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  // JSON readers take "-0" as the integer zero.
  if (x == 0.0 && std::signbit(x)) return "-0.0";
  return buf;
}

void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string run_jsonl(const RunRecord& rec) {
  std::string out;
  std::size_t d = 0;
  auto emit_diag = [&](const DiagWindow& w) {
    OrderedJson j;
    j["schema"] = kRunSchema;
    j["kind"] = "diag";
    j["seed"] = rec.seed;
    j["step"] = w.step;
    j["updates"] = w.updates;
    j["metrics"] = metrics_json(w.mean);
    out += detail::dump_json(j) + "\n";
  };
  for (std::size_t k = 0; k < rec.curve.size(); ++k) {
    while (d < rec.diag.size() && rec.diag[d].step <= rec.curve[k].step) emit_diag(rec.diag[d++]);
    OrderedJson j;
    j["schema"] = kRunSchema;
    j["kind"] = "eval";
    j["seed"] = rec.seed;
    j["step"] = rec.curve[k].step;
    j["eval_mean"] = rec.curve[k].eval_mean;
    j["scores"] = rec.eval_scores[k];
    out += detail::dump_json(j) + "\n";
  }
  while (d < rec.diag.size()) emit_diag(rec.diag[d++]);
  return out;
}

std::string run_summary_json(const RunRecord& rec, double stuck_floor) {
  const SaturationReport sat = saturation_report(rec, stuck_floor);
  OrderedJson j;
  j["schema"] = kSummarySchema;
  j["seed"] = rec.seed;
  j["env"] = rec.env;
  j["config_hash"] = rec.config_hash;
  j["failed"] = rec.failed;
  j["failure"] = rec.failure;
  j["final_score"] = rec.final_score();
  j["curve_length"] = rec.curve.size();
  j["diag_windows"] = rec.diag.size();
  j["pair_id"] = rec.pair_id ? OrderedJson(*rec.pair_id) : OrderedJson(nullptr);
  j["pair_side"] = rec.pair_side;
  j["saturation"] = {{"stuck_floor", stuck_floor},
                     {"saturated_fraction", sat.saturated_fraction},
                     {"first_learning_step", sat.first_learning_step ? OrderedJson(*sat.first_learning_step)
                                                                     : OrderedJson(nullptr)},
                     {"stuck", sat.stuck}};
  return detail::dump_json(j, 2) + "\n";
}

RunRecord parse_run(const std::string& jsonl, const std::string& summary_json) {
  RunRecord rec;
  try {
    const Json summary = Json::parse(summary_json);
    check_schema(summary, kSummarySchema);
    rec.seed = summary.at("seed").get<std::uint64_t>();
    rec.env = summary.at("env").get<std::string>();
    rec.config_hash = summary.at("config_hash").get<std::string>();
    rec.failed = summary.at("failed").get<bool>();
    rec.failure = summary.at("failure").get<std::string>();
    if (!summary.at("pair_id").is_null()) rec.pair_id = summary.at("pair_id").get<std::uint64_t>();
    rec.pair_side = summary.at("pair_side").get<std::string>();

    std::istringstream lines(jsonl);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const Json j = Json::parse(line);
      check_schema(j, kRunSchema);
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "eval") {
        rec.curve.push_back({j.at("step").get<std::int64_t>(), num(j, "eval_mean")});
        rec.eval_scores.push_back(j.at("scores").get<std::vector<double>>());
      } else if (kind == "diag") {
        rec.diag.push_back({j.at("step").get<std::int64_t>(), j.at("updates").get<int>(), metrics_from(j.at("metrics"))});
      } else {
        throw FormatError("unknown record kind '" + kind + "'");
      }
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed run record: ") + e.what());
  }
  return rec;
}

fs::path run_jsonl_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("run_" + std::to_string(seed) + ".jsonl");
}
fs::path run_summary_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("run_" + std::to_string(seed) + ".summary.json");
}
fs::path policy_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("policy_" + std::to_string(seed) + ".bin");
}

void write_run(const fs::path& dir, const RunRecord& rec, double stuck_floor) {
  atomic_write(run_jsonl_path(dir, rec.seed), run_jsonl(rec));
  atomic_write(run_summary_path(dir, rec.seed), run_summary_json(rec, stuck_floor));
}

RunRecord read_run(const fs::path& jsonl_path) {
  std::string stem = jsonl_path.filename().string();
  stem = stem.substr(0, stem.size() - std::string(".jsonl").size());
  const fs::path summary = jsonl_path.parent_path() / (stem + ".summary.json");
  return parse_run(read_file(jsonl_path), read_file(summary));
}

std::vector<RunRecord> read_runs(const fs::path& dir) {
  std::vector<RunRecord> out;
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.rfind("run_", 0) == 0 && entry.path().extension() == ".jsonl") {
      files.push_back(entry.path());
    }
  }
  for (const auto& f : files) out.push_back(read_run(f));
  std::sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) { return a.seed < b.seed; });
  return out;
}

std::string CsvTable::to_string() const {
  std::string out = std::string(kCsvSchemaPrefix) + schema + "\n";
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& row : rows) line(row);
  return out;
}

CsvTable CsvTable::parse(const std::string& text, const std::string& expected_schema) {
  std::istringstream in(text);
  std::string line;
  CsvTable t;
  if (!std::getline(in, line) || line.rfind(kCsvSchemaPrefix, 0) != 0) throw FormatError("CSV has no schema line");
  t.schema = line.substr(std::strlen(kCsvSchemaPrefix));
  if (t.schema != expected_schema) {
    throw FormatError("unsupported CSV schema '" + t.schema + "' (expected '" + expected_schema + "')");
  }
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line)) throw FormatError("CSV has no header");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split(line));
  }
  return t;
}

std::string serialize_policy(const ActorNet& actor) {
  ByteWriter w;
  w.raw(kPolicyMagic.data(), kPolicyMagic.size());
  w.u32(kPolicyVersion);
  w.u32(2);
  write_mlp(w, actor.trunk);
  write_mlp(w, actor.head);
  return w.take();
}

ActorNet parse_policy(const std::string& bytes) {
  ByteReader r(bytes);
  const char* magic = r.next(kPolicyMagic.size());
  if (std::memcmp(magic, kPolicyMagic.data(), kPolicyMagic.size()) != 0) throw FormatError("not a varlab policy file");
  const std::uint32_t version = r.u32();
  if (version != kPolicyVersion) {
    throw FormatError("policy file version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kPolicyVersion) + ")");
  }
  if (r.u32() != 2) throw FormatError("policy file must hold a trunk and a head");
  ActorNet actor;
  actor.trunk = read_mlp(r);
  actor.head = read_mlp(r);
  if (!r.at_end()) throw FormatError("policy file has trailing bytes");
  if (actor.trunk.output_dim() != actor.head.input_dim()) throw FormatError("policy trunk and head do not chain");
  return actor;
}

void write_policy(const fs::path& path, const ActorNet& actor) { atomic_write(path, serialize_policy(actor)); }

ActorNet read_policy(const fs::path& path) { return parse_policy(read_file(path)); }

}  // namespace varlab
