#include "manismooth/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "manismooth/error.hpp"
#include "manismooth/parallel.hpp"

namespace manismooth {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

Vec2 on_circle(const Arc& a, double angle, double radius) {
  return {a.center.x + radius * std::cos(angle), a.center.y + radius * std::sin(angle)};
}

// Nearest point of one arc to q (canonical frame).
ArcProjection project_to_arc(const Arc& a, std::size_t index, Vec2 q) {
  const Vec2 d = q - a.center;
  const double rho = norm(d);
  const double phi = std::atan2(d.y, d.x);
  double rel = std::fmod(phi - a.start_angle, kTwoPi);
  if (rel < 0.0) rel += kTwoPi;

  ArcProjection p;
  p.arc = index;
  p.offset = rho - a.radius;
  if (rel <= a.extent) {
    p.angle = a.start_angle + rel;
    p.distance = std::abs(p.offset);
    return p;
  }
  const double d_start = norm(q - on_circle(a, a.start_angle, a.radius));
  const double d_end = norm(q - on_circle(a, a.start_angle + a.extent, a.radius));
  p.angle = d_start <= d_end ? a.start_angle : a.start_angle + a.extent;
  p.distance = std::min(d_start, d_end);
  return p;
}

// Reflects an angle back into [start, start + extent] at the arc's endpoints.
double fold_into_arc(const Arc& a, double angle) {
  const double period = 2.0 * a.extent;
  double rel = std::fmod(angle - a.start_angle, period);
  if (rel < 0.0) rel += period;
  if (rel > a.extent) rel = period - rel;
  return a.start_angle + rel;
}

double tanh_fast(double x) { return std::tanh(x); }

// Forward pass keeping every layer's activations; acts[0] is the input.
struct Workspace {
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> deltas;

  explicit Workspace(const MlpModel& m) {
    acts.resize(m.layers.size() + 1);
    deltas.resize(m.layers.size());
    acts[0].resize(2);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      acts[l + 1].resize(m.layers[l].out);
      deltas[l].resize(m.layers[l].out);
    }
  }
};

void forward(const MlpModel& m, Vec2 x, Workspace& ws) {
  ws.acts[0][0] = x.x;
  ws.acts[0][1] = x.y;
  const std::size_t last = m.layers.size() - 1;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    const auto& in = ws.acts[l];
    auto& out = ws.acts[l + 1];
    for (std::size_t r = 0; r < layer.out; ++r) {
      const double* w = &layer.weights[r * layer.in];
      double s = layer.bias[r];
      for (std::size_t c = 0; c < layer.in; ++c) s += w[c] * in[c];
      out[r] = l == last ? s : tanh_fast(s);
    }
  }
}

// Softmax of the logits in place; returns log-sum-exp.
double softmax(std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : logits) v /= sum;
  return mx + std::log(sum);
}

std::string file_stem(const std::string& s) {
  std::string out = s;
  for (auto& c : out) {
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  }
  return out;
}

}  // namespace

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

std::vector<Arc> two_arcs() {
  // Upper half circle and an offset lower half circle, centred so the
  // configuration's centroid is at the origin.
  return {Arc{{-0.5, -0.25}, 1.0, 0.0, M_PI}, Arc{{0.5, 0.25}, 1.0, M_PI, M_PI}};
}

DomainSpec make_domain(std::string id, double rotation_deg, double noise_std, bool far_shift) {
  DomainSpec d;
  d.domain_id = std::move(id);
  d.rotation = rotation_deg * M_PI / 180.0;
  d.noise_std = noise_std;
  d.class_arcs = two_arcs();
  d.far_shift = far_shift;
  return d;
}

Vec2 to_domain(const DomainSpec& spec, Vec2 canonical) { return rotate(canonical, spec.rotation) + spec.translation; }

Vec2 to_canonical(const DomainSpec& spec, Vec2 point) { return rotate(point - spec.translation, -spec.rotation); }

void validate(const DomainSpec& spec) {
  if (spec.class_arcs.size() < 2) throw ValidationError("domain '" + spec.domain_id + "' needs at least two class arcs");
  if (!(spec.noise_std >= 0.0)) throw ValidationError("noise_std must be >= 0");
  for (const auto& a : spec.class_arcs) {
    if (!(a.radius > 0.0) || !(a.extent > 0.0) || a.extent > kTwoPi) {
      throw ValidationError("domain '" + spec.domain_id + "' has an arc with zero extent or radius");
    }
  }
  // Dense sampling of each arc against the exact projection onto the others.
  constexpr int kSamples = 512;
  for (std::size_t i = 0; i < spec.class_arcs.size(); ++i) {
    const auto& a = spec.class_arcs[i];
    for (int s = 0; s <= kSamples; ++s) {
      const Vec2 p = on_circle(a, a.start_angle + a.extent * s / kSamples, a.radius);
      for (std::size_t j = 0; j < spec.class_arcs.size(); ++j) {
        if (j == i) continue;
        if (project_to_arc(spec.class_arcs[j], j, p).distance < 2.0 * spec.noise_std) {
          throw ValidationError("domain '" + spec.domain_id + "': arcs " + std::to_string(i) + " and " +
                                std::to_string(j) + " are closer than 2 * noise_std");
        }
      }
    }
  }
}

Dataset generate_domain(const DomainSpec& spec, std::size_t m, std::uint64_t seed) {
  validate(spec);
  if (m < 1) throw ValidationError("generate_domain needs m >= 1");
  Rng rng(seed);
  Dataset data;
  data.num_classes = spec.num_classes();
  data.points.reserve(m);
  data.labels.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto label = static_cast<ClassIndex>(i % spec.class_arcs.size());
    const auto& arc = spec.class_arcs[static_cast<std::size_t>(label)];
    const double angle = arc.start_angle + arc.extent * rng.uniform();
    Vec2 q = on_circle(arc, angle, arc.radius);
    if (spec.noise_std > 0.0) {
      q.x += rng.normal(0.0, spec.noise_std);
      q.y += rng.normal(0.0, spec.noise_std);
    }
    data.points.push_back(to_domain(spec, q));
    data.labels.push_back(label);
  }
  return data;
}

Dataset apply_label_noise(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("label noise fraction must be in [0, 1)");
  Dataset out = data;
  const std::size_t m = data.size();
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m)));
  Rng rng(seed);
  // Partial Fisher-Yates picks `count` distinct indices.
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(idx[i], idx[i + rng.below(m - i)]);
    out.labels[idx[i]] = static_cast<ClassIndex>(rng.below(static_cast<std::uint64_t>(data.num_classes)));
  }
  return out;
}

void validate(const TrainConfig& c) {
  if (c.depth < 1 || c.width < 1 || c.batch_size < 1 || c.max_epochs < 0) {
    throw ValidationError("train config: depth, width and batch_size must be >= 1 and max_epochs >= 0");
  }
  if (!(c.weight_decay >= 0.0) || !(c.label_noise >= 0.0 && c.label_noise < 1.0) || !(c.learning_rate >= 0.0) ||
      !(c.ce_stop > 0.0)) {
    throw ValidationError("train config: weight_decay >= 0, label_noise in [0, 1), learning_rate >= 0, ce_stop > 0");
  }
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

MlpModel init_model(const TrainConfig& config, int num_classes, std::uint64_t seed) {
  validate(config);
  if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
  Rng rng(seed);
  MlpModel m;
  m.num_classes = num_classes;
  std::size_t in = 2;
  for (int l = 0; l <= config.depth; ++l) {
    const std::size_t out = l == config.depth ? static_cast<std::size_t>(num_classes) : static_cast<std::size_t>(config.width);
    DenseLayer layer;
    layer.in = in;
    layer.out = out;
    // Glorot uniform.
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    layer.weights.resize(in * out);
    for (auto& w : layer.weights) w = rng.uniform(-limit, limit);
    layer.bias.assign(out, 0.0);
    m.layers.push_back(std::move(layer));
    in = out;
  }
  return m;
}

std::vector<double> flatten_parameters(const MlpModel& model) {
  std::vector<double> flat;
  flat.reserve(model.parameter_count());
  for (const auto& l : model.layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void set_parameters(MlpModel& model, std::span<const double> flat) {
  if (flat.size() != model.parameter_count()) throw ValidationError("parameter vector has the wrong length");
  std::size_t pos = 0;
  for (auto& l : model.layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.weights.size(), l.weights.begin());
    pos += l.weights.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
}

double loss_and_gradient(const MlpModel& model, std::span<const Vec2> points, std::span<const ClassIndex> labels,
                         std::vector<double>& gradient) {
  if (points.empty() || points.size() != labels.size()) throw ValidationError("batch is empty or mismatched");
  gradient.assign(model.parameter_count(), 0.0);
  // Offsets of each layer's weights and biases inside the flat gradient.
  std::vector<std::size_t> w_off(model.layers.size()), b_off(model.layers.size());
  {
    std::size_t pos = 0;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      w_off[l] = pos;
      pos += model.layers[l].weights.size();
      b_off[l] = pos;
      pos += model.layers[l].bias.size();
    }
  }
  Workspace ws(model);
  const double scale = 1.0 / static_cast<double>(points.size());
  double loss = 0.0;
  const std::size_t last = model.layers.size() - 1;
  for (std::size_t i = 0; i < points.size(); ++i) {
    forward(model, points[i], ws);
    auto& probs = ws.acts[last + 1];
    const double lse = softmax(probs);
    const auto y = static_cast<std::size_t>(labels[i]);
    // probs now holds softmax; the logit of y is log(p_y) + lse.
    loss += -std::log(std::max(probs[y], std::numeric_limits<double>::min()));
    (void)lse;
    auto& delta = ws.deltas[last];
    for (std::size_t c = 0; c < delta.size(); ++c) delta[c] = (probs[c] - (c == y ? 1.0 : 0.0)) * scale;
    for (std::size_t l = last + 1; l-- > 0;) {
      const auto& layer = model.layers[l];
      const auto& in = ws.acts[l];
      const auto& d = ws.deltas[l];
      for (std::size_t r = 0; r < layer.out; ++r) {
        double* gw = &gradient[w_off[l] + r * layer.in];
        for (std::size_t c = 0; c < layer.in; ++c) gw[c] += d[r] * in[c];
        gradient[b_off[l] + r] += d[r];
      }
      if (l == 0) break;
      auto& prev = ws.deltas[l - 1];
      std::fill(prev.begin(), prev.end(), 0.0);
      for (std::size_t r = 0; r < layer.out; ++r) {
        const double* w = &layer.weights[r * layer.in];
        for (std::size_t c = 0; c < layer.in; ++c) prev[c] += w[c] * d[r];
      }
      // tanh'(z) = 1 - tanh(z)^2, with tanh(z) stored as the activation.
      for (std::size_t c = 0; c < prev.size(); ++c) prev[c] *= 1.0 - in[c] * in[c];
    }
  }
  return loss * scale;
}

double mean_cross_entropy(const MlpModel& model, std::span<const Vec2> points, std::span<const ClassIndex> labels) {
  if (points.empty() || points.size() != labels.size()) throw ValidationError("batch is empty or mismatched");
  Workspace ws(model);
  double loss = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    forward(model, points[i], ws);
    auto& logits = ws.acts.back();
    softmax(logits);
    loss += -std::log(std::max(logits[static_cast<std::size_t>(labels[i])], std::numeric_limits<double>::min()));
  }
  return loss / static_cast<double>(points.size());
}

void sgd_step(MlpModel& model, std::span<const double> gradient, double learning_rate, double weight_decay) {
  if (gradient.size() != model.parameter_count()) throw ValidationError("gradient has the wrong length");
  std::size_t pos = 0;
  auto update = [&](std::vector<double>& params) {
    for (auto& p : params) {
      p -= learning_rate * (gradient[pos++] + weight_decay * p);
    }
  };
  for (auto& l : model.layers) {
    update(l.weights);
    update(l.bias);
  }
}

MlpModel train_model(const Dataset& data, const TrainConfig& config) {
  validate(config);
  if (data.size() == 0) throw ValidationError("training set is empty");
  MlpModel model = init_model(config, data.num_classes, derive_seed(config.seed, 1));
  Rng shuffle_rng(derive_seed(config.seed, 2));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Vec2> batch_x;
  std::vector<ClassIndex> batch_y;
  std::vector<double> grad;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  model.final_ce = mean_cross_entropy(model, data.points, data.labels);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      batch_x.clear();
      batch_y.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch_x.push_back(data.points[order[i]]);
        batch_y.push_back(data.labels[order[i]]);
      }
      const double loss = loss_and_gradient(model, batch_x, batch_y, grad);
      if (!std::isfinite(loss)) throw DivergenceError("training loss became non-finite", epoch);
      epoch_loss += loss * static_cast<double>(end - start);
      sgd_step(model, grad, config.learning_rate, config.weight_decay);
    }
    epoch_loss /= static_cast<double>(order.size());
    model.epochs = epoch;
    model.final_ce = epoch_loss;
    if (!std::isfinite(epoch_loss)) throw DivergenceError("training loss became non-finite", epoch);
    for (double p : flatten_parameters(model)) {
      if (!std::isfinite(p)) throw DivergenceError("parameters became non-finite", epoch);
    }
    if (epoch_loss <= config.ce_stop) {
      model.converged = true;
      break;
    }
  }
  return model;
}

Predictions model_predict(const MlpModel& model, std::span<const Vec2> points) {
  Workspace ws(model);
  Predictions out;
  out.classes.reserve(points.size());
  out.max_confidence.reserve(points.size());
  out.neg_entropy.reserve(points.size());
  for (Vec2 p : points) {
    forward(model, p, ws);
    auto& probs = ws.acts.back();
    softmax(probs);
    const auto best = std::max_element(probs.begin(), probs.end());
    double h = 0.0;
    for (double q : probs) {
      if (q > 0.0) h += q * std::log(q);
    }
    out.classes.push_back(static_cast<ClassIndex>(best - probs.begin()));
    out.max_confidence.push_back(*best);
    out.neg_entropy.push_back(std::min(h, 0.0));
  }
  return out;
}

std::vector<ClassIndex> model_classes(const MlpModel& model, std::span<const Vec2> points) {
  Workspace ws(model);
  std::vector<ClassIndex> out;
  out.reserve(points.size());
  for (Vec2 p : points) {
    forward(model, p, ws);
    const auto& logits = ws.acts.back();
    out.push_back(static_cast<ClassIndex>(std::max_element(logits.begin(), logits.end()) - logits.begin()));
  }
  return out;
}

WeightDump weight_dump(const MlpModel& model, const std::string& model_id) {
  WeightDump dump;
  dump.model_id = model_id;
  for (const auto& l : model.layers) dump.layers.push_back(DenseMatrix{l.out, l.in, l.weights});
  return dump;
}

std::string to_string(NeighborhoodKind kind) { return kind == NeighborhoodKind::manifold ? "manifold" : "isotropic"; }

NeighborhoodKind neighborhood_kind_from_string(const std::string& text) {
  if (text == "manifold") return NeighborhoodKind::manifold;
  if (text == "isotropic") return NeighborhoodKind::isotropic;
  throw ValidationError("unknown neighborhood kind '" + text + "'");
}

void validate(const NeighborhoodSpec& spec) {
  if (spec.n_samples < 1) throw ValidationError("neighborhood n_samples must be >= 1");
  if (!(spec.size_r > 0.0)) throw ValidationError("neighborhood size_r must be > 0");
}

ArcProjection project_to_arcs(const DomainSpec& domain, Vec2 point) {
  const Vec2 q = to_canonical(domain, point);
  ArcProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < domain.class_arcs.size(); ++i) {
    const auto p = project_to_arc(domain.class_arcs[i], i, q);
    if (p.distance < best.distance) best = p;  // strict: ties keep the lower index
  }
  return best;
}

std::vector<Vec2> sample_neighborhood(Vec2 point, const DomainSpec& domain, const NeighborhoodSpec& spec, Rng& rng) {
  validate(spec);
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(spec.n_samples));
  if (spec.kind == NeighborhoodKind::isotropic) {
    for (int i = 0; i < spec.n_samples; ++i) {
      const double dx = rng.normal(0.0, spec.size_r);
      const double dy = rng.normal(0.0, spec.size_r);
      out.push_back({point.x + dx, point.y + dy});
    }
    return out;
  }
  const ArcProjection proj = project_to_arcs(domain, point);
  const Arc& arc = domain.class_arcs[proj.arc];
  const double radius = arc.radius + proj.offset;
  for (int i = 0; i < spec.n_samples; ++i) {
    const double angle = fold_into_arc(arc, proj.angle + rng.uniform(-spec.size_r, spec.size_r));
    out.push_back(to_domain(domain, on_circle(arc, angle, radius)));
  }
  return out;
}

std::vector<Vec2> sample_neighborhood(Vec2 point, const DomainSpec& domain, const NeighborhoodSpec& spec) {
  Rng rng(spec.seed);
  return sample_neighborhood(point, domain, spec, rng);
}

void validate(const ExperimentConfig& config) {
  if (config.domains.empty()) throw ValidationError("experiment has no domains");
  std::size_t training = 0;
  for (const auto& d : config.domains) {
    validate(d);
    if (d.num_classes() != config.domains.front().num_classes()) {
      throw ValidationError("all domains must share the same classes");
    }
    training += !d.far_shift;
  }
  if (training == 0) throw ValidationError("experiment has no training domains");
  if (config.grid.empty()) throw ValidationError("experiment grid is empty");
  for (const auto& c : config.grid) validate(c);
  for (const auto& n : config.neighborhoods) validate(n);
  for (const auto& n : config.ablation.neighborhoods) validate(n);
  if (config.m_train < 1 || config.m_test < 1 || config.m_validation < 1) {
    throw ValidationError("m_train, m_test and m_validation must be >= 1");
  }
  if (!config.ablation.test_domain.empty()) {
    const bool known = std::any_of(config.domains.begin(), config.domains.end(),
                                   [&](const DomainSpec& d) { return d.domain_id == config.ablation.test_domain; });
    if (!known) throw ValidationError("ablation test domain '" + config.ablation.test_domain + "' is not a domain");
  }
}

void MemorySink::prediction_log(NeighborhoodPredictionLog log) {
  std::lock_guard lock(mutex_);
  prediction_logs.push_back(std::move(log));
}
void MemorySink::score_log(ScoreLog log) {
  std::lock_guard lock(mutex_);
  score_logs.push_back(std::move(log));
}
void MemorySink::weights(WeightDump dump) {
  std::lock_guard lock(mutex_);
  weight_dumps.push_back(std::move(dump));
}
void MemorySink::manifest(Manifest manifest) {
  std::lock_guard lock(mutex_);
  manifest_out = std::move(manifest);
}
void MemorySink::sort() {
  std::sort(prediction_logs.begin(), prediction_logs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.model_id, a.test_domain, a.neighborhood) < std::tie(b.model_id, b.test_domain, b.neighborhood);
  });
  std::sort(score_logs.begin(), score_logs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.model_id, a.domain, a.split) < std::tie(b.model_id, b.domain, b.split);
  });
  std::sort(weight_dumps.begin(), weight_dumps.end(),
            [](const auto& a, const auto& b) { return a.model_id < b.model_id; });
}

void DirectorySink::prediction_log(NeighborhoodPredictionLog log) {
  const auto name = file_stem(log.model_id) + "__" + file_stem(log.test_domain) + "__" + file_stem(log.neighborhood);
  write_file_atomic(root_ / "predictions" / (name + ".jsonl"), serialize(log));
}
void DirectorySink::score_log(ScoreLog log) {
  const auto name = file_stem(log.model_id) + "__" + file_stem(log.domain) + "__" + to_string(log.split);
  write_file_atomic(root_ / "scores" / (name + ".jsonl"), serialize(log));
}
void DirectorySink::weights(WeightDump dump) {
  write_file_atomic(root_ / "weights" / (file_stem(dump.model_id) + ".bin"), serialize(dump));
}
void DirectorySink::manifest(Manifest manifest) { write_file_atomic(root_ / "manifest.jsonl", serialize(manifest)); }

std::string model_id_for(const DomainSpec& domain, std::size_t config_index) {
  std::string idx = std::to_string(config_index);
  if (idx.size() < 3) idx.insert(0, 3 - idx.size(), '0');
  return domain.domain_id + "-c" + idx;
}

namespace {

struct TestDomain {
  const DomainSpec* spec = nullptr;
  Dataset test;
  // Per neighborhood spec: m * n sample points, example-major.
  std::vector<const NeighborhoodSpec*> specs;
  std::vector<std::vector<Vec2>> samples;
};

std::string example_id(std::size_t i) { return "x" + std::to_string(i); }

std::map<std::string, HyperValue> hyperparams_of(const TrainConfig& c) {
  return {{"depth", static_cast<double>(c.depth)},
          {"width", static_cast<double>(c.width)},
          {"weight_decay", c.weight_decay},
          {"label_noise", c.label_noise},
          {"batch_size", static_cast<double>(c.batch_size)},
          {"learning_rate", c.learning_rate},
          {"ce_stop", c.ce_stop},
          {"max_epochs", static_cast<double>(c.max_epochs)},
          {"seed", static_cast<double>(c.seed)}};
}

ScoreLog make_score_log(const MlpModel& model, const std::string& model_id, const DomainSpec& domain, Split split,
                        const Dataset& data, const Provenance& provenance) {
  const Predictions pred = model_predict(model, data.points);
  ScoreLog log;
  log.provenance = provenance;
  log.model_id = model_id;
  log.domain = domain.domain_id;
  log.split = split;
  log.num_classes = data.num_classes;
  log.entries.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    log.entries.push_back(
        {example_id(i), data.labels[i], pred.classes[i], pred.max_confidence[i], pred.neg_entropy[i]});
  }
  return log;
}

}  // namespace

PoolStats run_pool(const ExperimentConfig& config, PoolSink& sink, const Provenance& provenance) {
  validate(config);
  const int k = config.domains.front().num_classes();

  // Shared evaluation data: every model sees the same test points and the
  // same neighborhood samples.
  std::vector<TestDomain> tests(config.domains.size());
  std::vector<Dataset> validation(config.domains.size());
  for (std::size_t d = 0; d < config.domains.size(); ++d) {
    const auto& spec = config.domains[d];
    auto& t = tests[d];
    t.spec = &spec;
    const bool ablation = spec.domain_id == config.ablation.test_domain;
    const std::size_t m = ablation ? std::max(config.m_test, config.ablation.m_test) : config.m_test;
    t.test = generate_domain(spec, m, derive_seed(config.seed, 100 + d, 1));
    validation[d] = generate_domain(spec, config.m_validation, derive_seed(config.seed, 100 + d, 2));
    for (const auto& n : config.neighborhoods) t.specs.push_back(&n);
    if (ablation) {
      for (const auto& n : config.ablation.neighborhoods) t.specs.push_back(&n);
    }
    for (std::size_t s = 0; s < t.specs.size(); ++s) {
      const auto& ns = *t.specs[s];
      std::vector<Vec2> pts;
      pts.reserve(t.test.size() * static_cast<std::size_t>(ns.n_samples));
      for (std::size_t i = 0; i < t.test.size(); ++i) {
        Rng rng(derive_seed(ns.seed, d, i));
        auto nb = sample_neighborhood(t.test.points[i], spec, ns, rng);
        pts.insert(pts.end(), nb.begin(), nb.end());
      }
      t.samples.push_back(std::move(pts));
    }
  }

  struct Job {
    std::size_t domain;
    std::size_t config;
  };
  std::vector<Job> jobs;
  for (std::size_t d = 0; d < config.domains.size(); ++d) {
    if (config.domains[d].far_shift) continue;
    for (std::size_t c = 0; c < config.grid.size(); ++c) jobs.push_back({d, c});
  }

  std::vector<ModelRecord> records(jobs.size());
  std::vector<char> diverged(jobs.size(), 0);
  parallel_for(jobs.size(), config.threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto& domain = config.domains[job.domain];
    TrainConfig tc = config.grid[job.config];
    tc.seed = derive_seed(config.seed, job.domain, job.config);

    ModelRecord& rec = records[j];
    rec.model_id = model_id_for(domain, job.config);
    rec.arch = config.arch;
    rec.train_domain = domain.domain_id;
    rec.hyperparams = hyperparams_of(tc);

    const Dataset clean = generate_domain(domain, config.m_train, derive_seed(config.seed, 100 + job.domain, 0));
    const Dataset train = apply_label_noise(clean, tc.label_noise, derive_seed(tc.seed, 3));
    MlpModel model;
    try {
      model = train_model(train, tc);
    } catch (const DivergenceError&) {
      diverged[j] = 1;
      rec.converged = false;
      return;
    }
    rec.converged = model.converged;
    rec.hyperparams["final_ce"] = model.final_ce;
    rec.hyperparams["epochs"] = static_cast<double>(model.epochs);
    if (!model.converged) return;

    sink.weights(weight_dump(model, rec.model_id));
    sink.score_log(make_score_log(model, rec.model_id, domain, Split::validation, validation[job.domain], provenance));
    for (const auto& t : tests) {
      sink.score_log(make_score_log(model, rec.model_id, *t.spec, Split::test, t.test, provenance));
      const auto base = model_classes(model, t.test.points);
      for (std::size_t s = 0; s < t.specs.size(); ++s) {
        const auto& ns = *t.specs[s];
        const auto n = static_cast<std::size_t>(ns.n_samples);
        const auto preds = model_classes(model, t.samples[s]);
        NeighborhoodPredictionLog log;
        log.provenance = provenance;
        log.model_id = rec.model_id;
        log.test_domain = t.spec->domain_id;
        log.neighborhood = ns.effective_tag();
        log.num_classes = k;
        log.examples.reserve(t.test.size());
        for (std::size_t i = 0; i < t.test.size(); ++i) {
          ExampleEntry e;
          e.example_id = example_id(i);
          e.true_label = t.test.labels[i];
          e.base_prediction = base[i];
          e.neighborhood_predictions.assign(preds.begin() + static_cast<std::ptrdiff_t>(i * n),
                                            preds.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
          log.examples.push_back(std::move(e));
        }
        sink.prediction_log(std::move(log));
      }
    }
  });

  PoolStats stats;
  stats.trained = records.size();
  for (std::size_t j = 0; j < records.size(); ++j) {
    stats.converged += records[j].converged;
    stats.diverged += diverged[j];
  }
  Manifest manifest;
  manifest.provenance = provenance;
  manifest.models = std::move(records);
  sink.manifest(std::move(manifest));
  return stats;
}

PoolStats run_pool_to_directory(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                const Provenance& provenance) {
  namespace fs = std::filesystem;
  auto staging = out_dir;
  staging += ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  PoolStats stats;
  try {
    DirectorySink sink(staging);
    stats = run_pool(config, sink, provenance);
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }
  fs::remove_all(out_dir);
  fs::rename(staging, out_dir);
  return stats;
}

}  // namespace manismooth
