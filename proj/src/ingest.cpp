#include "manismooth/ingest.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "manismooth/error.hpp"
#include "json.hpp"

namespace manismooth {

using json = nlohmann::json;

namespace {

constexpr double kScoreSlack = 1e-9;
constexpr char kWeightMagic[8] = {'M', 'S', 'W', 'D', 'U', 'M', 'P', '1'};

struct Line {
  std::size_t number;
  std::string text;
};

std::vector<Line> split_lines(const std::string& text) {
  std::vector<Line> lines;
  std::size_t start = 0;
  std::size_t number = 1;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) lines.push_back({number, std::move(line)});
    if (end == text.size()) break;
    start = end + 1;
    ++number;
  }
  return lines;
}

json parse_object(const Line& line) {
  json j;
  try {
    j = json::parse(line.text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line.number);
  }
  if (!j.is_object()) throw ParseError("expected a JSON object", line.number);
  return j;
}

template <typename T>
T required(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) throw ParseError(std::string("missing field '") + key + "'", line);
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string("field '") + key + "' has the wrong type", line);
  }
}

ClassIndex class_index(const json& v, const char* key, std::size_t line) {
  if (!v.is_number_integer()) throw ParseError(std::string("field '") + key + "' must be an integer", line);
  return v.get<ClassIndex>();
}

std::optional<ClassIndex> optional_class(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return class_index(*it, key, line);
}

double real(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) throw ParseError(std::string("field '") + key + "' must be a number", line);
  return it->get<double>();
}

std::optional<Provenance> read_provenance(const json& header, std::size_t line) {
  auto it = header.find("provenance");
  if (it == header.end() || it->is_null()) return std::nullopt;
  if (!it->is_object()) throw ParseError("'provenance' must be an object", line);
  Provenance p;
  p.tool_version = required<std::string>(*it, "tool_version", line);
  p.config_hash = required<std::string>(*it, "config_hash", line);
  p.seed = required<std::uint64_t>(*it, "seed", line);
  return p;
}

void write_provenance(json& header, const std::optional<Provenance>& p) {
  if (!p) return;
  header["provenance"] = {{"config_hash", p->config_hash}, {"seed", p->seed}, {"tool_version", p->tool_version}};
}

void expect_type(const json& header, const char* type, std::size_t line) {
  const auto t = required<std::string>(header, "type", line);
  if (t != type) throw ParseError("expected header type '" + std::string(type) + "', got '" + t + "'", line);
}

std::string join_lines(const std::vector<json>& objects) {
  std::string out;
  for (const auto& o : objects) {
    out += o.dump();
    out += '\n';
  }
  return out;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw ParseError("weight dump truncated at byte " + std::to_string(pos_), 0);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string to_string(Split split) { return split == Split::validation ? "validation" : "test"; }

Split split_from_string(const std::string& text) {
  if (text == "validation") return Split::validation;
  if (text == "test") return Split::test;
  throw ValidationError("unknown split '" + text + "'");
}

void validate(const NeighborhoodPredictionLog& log) {
  if (log.num_classes < 2) throw ValidationError("num_classes must be >= 2, got " + std::to_string(log.num_classes));
  std::set<std::string> ids;
  auto check = [&](ClassIndex c, const std::string& id, const char* what) {
    if (c < 0 || c >= log.num_classes) {
      throw ValidationError("example '" + id + "': " + what + " " + std::to_string(c) + " outside [0, " +
                            std::to_string(log.num_classes) + ")");
    }
  };
  for (const auto& e : log.examples) {
    if (!ids.insert(e.example_id).second) throw ValidationError("duplicate example_id '" + e.example_id + "'");
    if (e.neighborhood_predictions.empty()) {
      throw ValidationError("example '" + e.example_id + "': empty neighborhood_predictions");
    }
    for (ClassIndex c : e.neighborhood_predictions) check(c, e.example_id, "prediction");
    if (e.true_label) check(*e.true_label, e.example_id, "true_label");
    if (e.base_prediction) check(*e.base_prediction, e.example_id, "base_prediction");
  }
}

void validate(const ScoreLog& log) {
  if (log.num_classes < 2) throw ValidationError("num_classes must be >= 2, got " + std::to_string(log.num_classes));
  const double k = log.num_classes;
  for (const auto& e : log.entries) {
    auto bad = [&](const std::string& what) { throw ValidationError("entry '" + e.example_id + "': " + what); };
    if (e.predicted_label < 0 || e.predicted_label >= log.num_classes) bad("predicted_label out of range");
    if (e.true_label && (*e.true_label < 0 || *e.true_label >= log.num_classes)) bad("true_label out of range");
    if (!std::isfinite(e.max_confidence) || e.max_confidence < 1.0 / k - kScoreSlack ||
        e.max_confidence > 1.0 + kScoreSlack) {
      bad("max_confidence outside [1/k, 1]");
    }
    if (!std::isfinite(e.neg_entropy) || e.neg_entropy < -std::log(k) - kScoreSlack || e.neg_entropy > kScoreSlack) {
      bad("neg_entropy outside [-log k, 0]");
    }
  }
}

void validate(const DenseMatrix& m) {
  if (m.rows == 0 || m.cols == 0) throw ValidationError("empty matrix");
  if (m.values.size() != m.rows * m.cols) throw ValidationError("matrix value count does not match dimensions");
  for (double v : m.values) {
    if (!std::isfinite(v)) throw ValidationError("non-finite matrix entry");
  }
}

void validate(const WeightDump& dump) {
  for (std::size_t i = 0; i < dump.layers.size(); ++i) {
    try {
      validate(dump.layers[i]);
    } catch (const ValidationError& e) {
      throw ValidationError("model '" + dump.model_id + "' layer " + std::to_string(i) + ": " + e.what());
    }
  }
}

Manifest parse_manifest_text(const std::string& text) {
  Manifest manifest;
  std::set<std::string> ids;
  bool first = true;
  for (const auto& line : split_lines(text)) {
    json j = parse_object(line);
    if (first && j.contains("type")) {
      expect_type(j, "manifest", line.number);
      manifest.provenance = read_provenance(j, line.number);
      first = false;
      continue;
    }
    first = false;
    ModelRecord r;
    r.model_id = required<std::string>(j, "model_id", line.number);
    r.arch = required<std::string>(j, "arch", line.number);
    r.train_domain = required<std::string>(j, "train_domain", line.number);
    r.converged = required<bool>(j, "converged", line.number);
    if (auto it = j.find("hyperparams"); it != j.end() && !it->is_null()) {
      if (!it->is_object()) throw ParseError("'hyperparams' must be an object", line.number);
      for (const auto& [key, value] : it->items()) {
        if (value.is_number()) {
          r.hyperparams[key] = value.get<double>();
        } else if (value.is_string()) {
          r.hyperparams[key] = value.get<std::string>();
        } else {
          throw ParseError("hyperparameter '" + key + "' must be a number or string", line.number);
        }
      }
    }
    if (!ids.insert(r.model_id).second) {
      throw ValidationError("duplicate model_id '" + r.model_id + "' on line " + std::to_string(line.number));
    }
    manifest.models.push_back(std::move(r));
  }
  return manifest;
}

NeighborhoodPredictionLog parse_prediction_log_text(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("missing header line", 1);
  NeighborhoodPredictionLog log;
  {
    const auto& line = lines.front();
    json h = parse_object(line);
    expect_type(h, "prediction_log", line.number);
    log.model_id = required<std::string>(h, "model_id", line.number);
    log.test_domain = required<std::string>(h, "test_domain", line.number);
    log.num_classes = required<int>(h, "num_classes", line.number);
    if (h.contains("neighborhood")) log.neighborhood = required<std::string>(h, "neighborhood", line.number);
    log.provenance = read_provenance(h, line.number);
  }
  log.examples.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& line = lines[i];
    json j = parse_object(line);
    ExampleEntry e;
    e.example_id = required<std::string>(j, "example_id", line.number);
    e.true_label = optional_class(j, "true_label", line.number);
    e.base_prediction = optional_class(j, "base_prediction", line.number);
    auto it = j.find("neighborhood_predictions");
    if (it == j.end() || !it->is_array()) {
      throw ParseError("field 'neighborhood_predictions' must be an array", line.number);
    }
    e.neighborhood_predictions.reserve(it->size());
    for (const auto& v : *it) e.neighborhood_predictions.push_back(class_index(v, "neighborhood_predictions", line.number));
    log.examples.push_back(std::move(e));
  }
  validate(log);
  return log;
}

ScoreLog parse_score_log_text(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("missing header line", 1);
  ScoreLog log;
  {
    const auto& line = lines.front();
    json h = parse_object(line);
    expect_type(h, "score_log", line.number);
    log.model_id = required<std::string>(h, "model_id", line.number);
    log.domain = required<std::string>(h, "domain", line.number);
    log.num_classes = required<int>(h, "num_classes", line.number);
    try {
      log.split = split_from_string(required<std::string>(h, "split", line.number));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line.number);
    }
    log.provenance = read_provenance(h, line.number);
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& line = lines[i];
    json j = parse_object(line);
    ScoreEntry e;
    e.example_id = required<std::string>(j, "example_id", line.number);
    e.true_label = optional_class(j, "true_label", line.number);
    auto it = j.find("predicted_label");
    if (it == j.end()) throw ParseError("missing field 'predicted_label'", line.number);
    e.predicted_label = class_index(*it, "predicted_label", line.number);
    e.max_confidence = real(j, "max_confidence", line.number);
    e.neg_entropy = real(j, "neg_entropy", line.number);
    log.entries.push_back(std::move(e));
  }
  validate(log);
  return log;
}

std::string serialize(const Manifest& manifest) {
  std::vector<json> out;
  if (manifest.provenance) {
    json h = {{"type", "manifest"}};
    write_provenance(h, manifest.provenance);
    out.push_back(std::move(h));
  }
  for (const auto& r : manifest.models) {
    json hp = json::object();
    for (const auto& [k, v] : r.hyperparams) {
      std::visit([&](const auto& x) { hp[k] = x; }, v);
    }
    out.push_back({{"model_id", r.model_id},
                   {"arch", r.arch},
                   {"train_domain", r.train_domain},
                   {"hyperparams", std::move(hp)},
                   {"converged", r.converged}});
  }
  return join_lines(out);
}

std::string serialize(const NeighborhoodPredictionLog& log) {
  std::vector<json> out;
  json h = {{"type", "prediction_log"},
            {"model_id", log.model_id},
            {"test_domain", log.test_domain},
            {"neighborhood", log.neighborhood},
            {"num_classes", log.num_classes}};
  write_provenance(h, log.provenance);
  out.push_back(std::move(h));
  for (const auto& e : log.examples) {
    json j = {{"example_id", e.example_id}, {"neighborhood_predictions", e.neighborhood_predictions}};
    if (e.true_label) j["true_label"] = *e.true_label;
    if (e.base_prediction) j["base_prediction"] = *e.base_prediction;
    out.push_back(std::move(j));
  }
  return join_lines(out);
}

std::string serialize(const ScoreLog& log) {
  std::vector<json> out;
  json h = {{"type", "score_log"},
            {"model_id", log.model_id},
            {"domain", log.domain},
            {"split", to_string(log.split)},
            {"num_classes", log.num_classes}};
  write_provenance(h, log.provenance);
  out.push_back(std::move(h));
  for (const auto& e : log.entries) {
    json j = {{"example_id", e.example_id},
              {"predicted_label", e.predicted_label},
              {"max_confidence", e.max_confidence},
              {"neg_entropy", e.neg_entropy}};
    if (e.true_label) j["true_label"] = *e.true_label;
    out.push_back(std::move(j));
  }
  return join_lines(out);
}

std::string serialize(const WeightDump& dump) {
  validate(dump);
  std::string out(kWeightMagic, sizeof kWeightMagic);
  put_u64(out, dump.model_id.size());
  out += dump.model_id;
  put_u64(out, dump.layers.size());
  for (const auto& layer : dump.layers) {
    put_u64(out, layer.rows);
    put_u64(out, layer.cols);
    for (double v : layer.values) put_f64(out, v);
  }
  return out;
}

WeightDump parse_weight_dump_bytes(const std::string& bytes) {
  ByteReader in(bytes);
  if (in.take(sizeof kWeightMagic) != std::string(kWeightMagic, sizeof kWeightMagic)) {
    throw ParseError("bad weight dump magic", 0);
  }
  WeightDump dump;
  const auto id_len = in.u64();
  if (id_len > in.remaining()) throw ParseError("weight dump model id length exceeds file size", 0);
  dump.model_id = in.take(id_len);
  const auto layer_count = in.u64();
  for (std::uint64_t i = 0; i < layer_count; ++i) {
    DenseMatrix m;
    m.rows = in.u64();
    m.cols = in.u64();
    if (m.rows == 0 || m.cols == 0 || m.rows > in.remaining() / 8 / m.cols) {
      throw ParseError("layer " + std::to_string(i) + " has invalid dimensions", 0);
    }
    m.values.resize(m.rows * m.cols);
    for (auto& v : m.values) v = in.f64();
    dump.layers.push_back(std::move(m));
  }
  if (in.remaining() != 0) throw ParseError("trailing bytes after weight dump", 0);
  validate(dump);
  return dump;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

namespace {
template <typename F>
auto with_path(const std::filesystem::path& path, F&& parse) {
  const std::string text = read_file(path);
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}
}  // namespace

Manifest parse_manifest(const std::filesystem::path& path) { return with_path(path, parse_manifest_text); }
NeighborhoodPredictionLog parse_prediction_log(const std::filesystem::path& path) {
  return with_path(path, parse_prediction_log_text);
}
ScoreLog parse_score_log(const std::filesystem::path& path) { return with_path(path, parse_score_log_text); }
WeightDump parse_weight_dump(const std::filesystem::path& path) {
  return with_path(path, parse_weight_dump_bytes);
}

std::vector<ModelRecord> converged_models(const Manifest& manifest) {
  std::vector<ModelRecord> out;
  for (const auto& r : manifest.models) {
    if (r.converged) out.push_back(r);
  }
  return out;
}

double compute_accuracy(const NeighborhoodPredictionLog& log) {
  if (log.examples.empty()) throw ValidationError("accuracy of an empty log is undefined");
  std::size_t correct = 0;
  for (const auto& e : log.examples) {
    if (!e.true_label || !e.base_prediction) {
      throw ValidationError("example '" + e.example_id + "' lacks true_label or base_prediction; accuracy unavailable");
    }
    correct += (*e.true_label == *e.base_prediction);
  }
  return static_cast<double>(correct) / static_cast<double>(log.examples.size());
}

double compute_accuracy(const ScoreLog& log) {
  if (log.entries.empty()) throw ValidationError("accuracy of an empty log is undefined");
  std::size_t correct = 0;
  for (const auto& e : log.entries) {
    if (!e.true_label) throw ValidationError("entry '" + e.example_id + "' lacks true_label; accuracy unavailable");
    correct += (*e.true_label == e.predicted_label);
  }
  return static_cast<double>(correct) / static_cast<double>(log.entries.size());
}

}  // namespace manismooth
