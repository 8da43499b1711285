#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace manismooth {

using ClassIndex = std::int32_t;

// Provenance line written at the top of every file the toolkit emits.
struct Provenance {
  std::string tool_version;
  std::string config_hash;
  std::uint64_t seed = 0;

  bool operator==(const Provenance&) const = default;
};

using HyperValue = std::variant<double, std::string>;

struct ModelRecord {
  std::string model_id;
  std::string arch;
  std::string train_domain;
  std::map<std::string, HyperValue> hyperparams;
  bool converged = false;

  bool operator==(const ModelRecord&) const = default;
};

struct Manifest {
  std::optional<Provenance> provenance;
  std::vector<ModelRecord> models;
};

struct ExampleEntry {
  std::string example_id;
  std::optional<ClassIndex> true_label;
  std::optional<ClassIndex> base_prediction;
  std::vector<ClassIndex> neighborhood_predictions;

  bool operator==(const ExampleEntry&) const = default;
};

struct NeighborhoodPredictionLog {
  std::optional<Provenance> provenance;
  std::string model_id;
  std::string test_domain;
  // Tag naming the neighborhood distribution the predictions were sampled
  // from; becomes the suffix of the emitted measure names.
  std::string neighborhood = "default";
  int num_classes = 0;
  std::vector<ExampleEntry> examples;
};

enum class Split { validation, test };

struct ScoreEntry {
  std::string example_id;
  std::optional<ClassIndex> true_label;
  ClassIndex predicted_label = 0;
  double max_confidence = 0.0;
  double neg_entropy = 0.0;

  bool operator==(const ScoreEntry&) const = default;
};

struct ScoreLog {
  std::optional<Provenance> provenance;
  std::string model_id;
  std::string domain;
  Split split = Split::test;
  int num_classes = 0;
  std::vector<ScoreEntry> entries;
};

struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, rows * cols

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool operator==(const DenseMatrix&) const = default;
};

struct WeightDump {
  std::string model_id;
  std::vector<DenseMatrix> layers;

  bool operator==(const WeightDump&) const = default;
};

std::string to_string(Split split);
Split split_from_string(const std::string& text);

// Field-level checks shared by the parsers and the writers. Throw ValidationError.
void validate(const NeighborhoodPredictionLog& log);
void validate(const ScoreLog& log);
void validate(const WeightDump& dump);
void validate(const DenseMatrix& matrix);

// JSON Lines readers. A header line carrying the file-level fields comes first
// (optional for manifests); every following non-empty line is one entry.
Manifest parse_manifest(const std::filesystem::path& path);
Manifest parse_manifest_text(const std::string& text);
NeighborhoodPredictionLog parse_prediction_log(const std::filesystem::path& path);
NeighborhoodPredictionLog parse_prediction_log_text(const std::string& text);
ScoreLog parse_score_log(const std::filesystem::path& path);
ScoreLog parse_score_log_text(const std::string& text);

// Canonical writers: sorted keys, compact separators, '\n' line endings.
std::string serialize(const Manifest& manifest);
std::string serialize(const NeighborhoodPredictionLog& log);
std::string serialize(const ScoreLog& log);

// Binary weight dump, all integers u64 little-endian, all reals f64 little-endian:
//   "MSWDUMP1" | id_len | id bytes | layer_count | { rows | cols | rows*cols values } ...
std::string serialize(const WeightDump& dump);
WeightDump parse_weight_dump_bytes(const std::string& bytes);
WeightDump parse_weight_dump(const std::filesystem::path& path);

// Only records with converged == true.
std::vector<ModelRecord> converged_models(const Manifest& manifest);

// Fraction of examples whose base prediction equals the true label.
// Throws ValidationError when any entry lacks a label or a base prediction.
double compute_accuracy(const NeighborhoodPredictionLog& log);
double compute_accuracy(const ScoreLog& log);

// Writes `contents` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace manismooth
