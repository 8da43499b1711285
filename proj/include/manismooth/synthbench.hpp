#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "manismooth/ingest.hpp"
#include "manismooth/random.hpp"

namespace manismooth {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  bool operator==(const Vec2&) const = default;
};

double norm(Vec2 v);

// Circular arc from start_angle to start_angle + extent (radians, extent > 0).
struct Arc {
  Vec2 center;
  double radius = 1.0;
  double start_angle = 0.0;
  double extent = M_PI;
};

// A domain is one class arc per label, rigidly rotated (about the origin) and
// then translated. far_shift marks test-only domains.
struct DomainSpec {
  std::string domain_id;
  double rotation = 0.0;
  Vec2 translation;
  double noise_std = 0.0;
  std::vector<Arc> class_arcs;
  bool far_shift = false;

  int num_classes() const { return static_cast<int>(class_arcs.size()); }
};

// Two interleaved half circles centred on the origin ("two moons").
std::vector<Arc> two_arcs();
DomainSpec make_domain(std::string id, double rotation_deg, double noise_std, bool far_shift = false);

// Throws ValidationError for < 2 arcs, a non-positive radius or extent, or
// arcs of different classes closer than 2 * noise_std.
void validate(const DomainSpec& spec);

Vec2 to_domain(const DomainSpec& spec, Vec2 canonical);
Vec2 to_canonical(const DomainSpec& spec, Vec2 point);

struct Dataset {
  std::vector<Vec2> points;
  std::vector<ClassIndex> labels;
  int num_classes = 0;

  std::size_t size() const { return points.size(); }
};

// Labels cycle through the classes; positions are uniform along each arc plus
// isotropic Gaussian noise, then mapped into the domain frame.
Dataset generate_domain(const DomainSpec& spec, std::size_t m, std::uint64_t seed);

// Resamples exactly round(fraction * m) labels uniformly over all classes.
Dataset apply_label_noise(const Dataset& data, double fraction, std::uint64_t seed);

struct TrainConfig {
  int depth = 1;
  int width = 8;
  double weight_decay = 0.0;
  double label_noise = 0.0;
  int batch_size = 32;
  double learning_rate = 0.1;
  double ce_stop = 0.05;
  int max_epochs = 500;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out
};

// 2 -> [width, tanh] x depth -> num_classes logits.
struct MlpModel {
  std::vector<DenseLayer> layers;
  int num_classes = 0;
  double final_ce = 0.0;
  int epochs = 0;
  bool converged = false;

  std::size_t parameter_count() const;
};

MlpModel init_model(const TrainConfig& config, int num_classes, std::uint64_t seed);

std::vector<double> flatten_parameters(const MlpModel& model);
void set_parameters(MlpModel& model, std::span<const double> flat);

// Mean cross-entropy over the batch; `gradient` receives d(loss)/d(params) in
// flatten_parameters order. Weight decay is not part of the loss.
double loss_and_gradient(const MlpModel& model, std::span<const Vec2> points, std::span<const ClassIndex> labels,
                         std::vector<double>& gradient);

double mean_cross_entropy(const MlpModel& model, std::span<const Vec2> points, std::span<const ClassIndex> labels);

// p <- p - lr * (grad + weight_decay * p), for every parameter.
void sgd_step(MlpModel& model, std::span<const double> gradient, double learning_rate, double weight_decay);

// Mini-batch SGD until the epoch-mean training cross-entropy drops to
// ce_stop (converged) or max_epochs is reached. Throws DivergenceError on a
// non-finite loss.
MlpModel train_model(const Dataset& data, const TrainConfig& config);

struct Predictions {
  std::vector<ClassIndex> classes;
  std::vector<double> max_confidence;
  std::vector<double> neg_entropy;
};

Predictions model_predict(const MlpModel& model, std::span<const Vec2> points);
std::vector<ClassIndex> model_classes(const MlpModel& model, std::span<const Vec2> points);

WeightDump weight_dump(const MlpModel& model, const std::string& model_id);

enum class NeighborhoodKind { manifold, isotropic };

std::string to_string(NeighborhoodKind kind);
NeighborhoodKind neighborhood_kind_from_string(const std::string& text);

struct NeighborhoodSpec {
  NeighborhoodKind kind = NeighborhoodKind::manifold;
  double size_r = 0.3;  // angular half-width (manifold) or stddev (isotropic)
  int n_samples = 10;
  std::uint64_t seed = 0;
  std::string tag;      // measure-name suffix; defaults to the kind name

  std::string effective_tag() const { return tag.empty() ? to_string(kind) : tag; }
};

void validate(const NeighborhoodSpec& spec);

struct ArcProjection {
  std::size_t arc = 0;   // class index of the nearest arc
  double angle = 0.0;    // projected angle, clamped to the arc's range
  double offset = 0.0;   // signed radial offset |q - center| - radius
  double distance = 0.0; // distance from the point to the arc
};

// Nearest class arc in the canonical frame; ties go to the lower class index.
ArcProjection project_to_arcs(const DomainSpec& domain, Vec2 point);

// Manifold kind: the projected angle is jittered by Uniform(-size_r, size_r),
// reflected at the arc's endpoints, and the radial offset is re-applied. Isotropic kind:
// Gaussian(0, size_r^2 I) displacement.
std::vector<Vec2> sample_neighborhood(Vec2 point, const DomainSpec& domain, const NeighborhoodSpec& spec, Rng& rng);
std::vector<Vec2> sample_neighborhood(Vec2 point, const DomainSpec& domain, const NeighborhoodSpec& spec);

// Extra neighborhood logs emitted for a single test domain to drive the
// test-set-size, sample-count and neighborhood-size sweeps.
struct AblationSetup {
  std::string test_domain;  // empty: disabled
  std::size_t m_test = 2000;
  std::vector<NeighborhoodSpec> neighborhoods;
};

struct ExperimentConfig {
  std::vector<DomainSpec> domains;
  std::vector<TrainConfig> grid;
  std::vector<NeighborhoodSpec> neighborhoods;
  AblationSetup ablation;
  std::size_t m_train = 500;
  std::size_t m_test = 500;
  std::size_t m_validation = 500;
  std::uint64_t seed = 0;
  std::string arch = "mlp";
  unsigned threads = 1;
};

void validate(const ExperimentConfig& config);

// Receives the pool's outputs as they are produced. Calls may come from
// several worker threads.
class PoolSink {
 public:
  virtual ~PoolSink() = default;
  virtual void prediction_log(NeighborhoodPredictionLog log) = 0;
  virtual void score_log(ScoreLog log) = 0;
  virtual void weights(WeightDump dump) = 0;
  virtual void manifest(Manifest manifest) = 0;
};

class MemorySink : public PoolSink {
 public:
  void prediction_log(NeighborhoodPredictionLog log) override;
  void score_log(ScoreLog log) override;
  void weights(WeightDump dump) override;
  void manifest(Manifest manifest) override;

  // Outputs sorted by file name so contents do not depend on scheduling.
  Manifest manifest_out;
  std::vector<NeighborhoodPredictionLog> prediction_logs;
  std::vector<ScoreLog> score_logs;
  std::vector<WeightDump> weight_dumps;
  void sort();

 private:
  std::mutex mutex_;
};

// Writes the standard layout under a directory:
//   manifest.jsonl
//   predictions/<model>__<domain>__<tag>.jsonl
//   scores/<model>__<domain>__<split>.jsonl
//   weights/<model>.bin
class DirectorySink : public PoolSink {
 public:
  explicit DirectorySink(std::filesystem::path root) : root_(std::move(root)) {}
  void prediction_log(NeighborhoodPredictionLog log) override;
  void score_log(ScoreLog log) override;
  void weights(WeightDump dump) override;
  void manifest(Manifest manifest) override;

 private:
  std::filesystem::path root_;
};

struct PoolStats {
  std::size_t trained = 0;
  std::size_t converged = 0;
  std::size_t diverged = 0;
};

std::string model_id_for(const DomainSpec& domain, std::size_t config_index);

// Trains |grid| models per non-far-shift domain, drops unconverged ones, and
// evaluates the rest on every domain's test set and neighborhoods.
PoolStats run_pool(const ExperimentConfig& config, PoolSink& sink, const Provenance& provenance);

// run_pool into `out_dir` through a staging directory that is renamed into
// place only after every file was written.
PoolStats run_pool_to_directory(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                const Provenance& provenance);

}  // namespace manismooth
