// SPDX-License-Identifier: Apache-2.0
#include "mialab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mialab {

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation: " + name);
}

std::string to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

std::size_t ArchitectureSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) {
    std::size_t in = static_cast<std::size_t>(layer_widths[l]);
    std::size_t out = static_cast<std::size_t>(layer_widths[l + 1]);
    n += in * out + out;
  }
  return n;
}

void ArchitectureSpec::validate() const {
  if (layer_widths.size() < 2)
    throw ConfigError("architecture: need at least one layer (two widths)");
  for (int w : layer_widths)
    if (w < 1) throw ConfigError("architecture: widths must be positive");
  if (init_scheme != "fanin-uniform")
    throw ConfigError("architecture: unknown init scheme " + init_scheme);
}

void Classifier::validate() const {
  spec.validate();
  if (params.size() != spec.param_count())
    throw ShapeError("classifier: parameter count does not match spec");
  for (double p : params)
    if (!std::isfinite(p))
      throw ConfigError("classifier: non-finite parameter");
}

Classifier init_classifier(const ArchitectureSpec& spec) {
  spec.validate();
  Classifier c;
  c.spec = spec;
  c.params.assign(spec.param_count(), 0.0);
  auto rng = make_rng({spec.init_seed, 0x494eu});  // "IN"
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    std::size_t in = static_cast<std::size_t>(spec.layer_widths[l]);
    std::size_t out = static_cast<std::size_t>(spec.layer_widths[l + 1]);
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < in * out; ++i) c.params[off + i] = u(rng);
    off += in * out + out;  // biases stay zero
  }
  return c;
}

namespace {

inline double activate(double z, Activation a) {
  return a == Activation::kRelu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

inline double activate_deriv(double z, double a_val, Activation a) {
  return a == Activation::kRelu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - a_val * a_val;
}

}  // namespace

ForwardTrace forward_trace(const Classifier& model,
                           const std::vector<double>& features) {
  const auto& widths = model.spec.layer_widths;
  if (static_cast<int>(features.size()) != widths.front())
    throw ShapeError("forward: feature length does not match input width");
  const std::size_t num_layers = widths.size() - 1;

  ForwardTrace t;
  t.act.resize(num_layers + 1);
  t.pre.resize(num_layers);
  t.act[0] = features;

  std::size_t off = 0;
  for (std::size_t l = 0; l < num_layers; ++l) {
    std::size_t in = static_cast<std::size_t>(widths[l]);
    std::size_t out = static_cast<std::size_t>(widths[l + 1]);
    const double* w = model.params.data() + off;
    const double* b = w + in * out;
    std::vector<double>& z = t.pre[l];
    z.assign(out, 0.0);
    const std::vector<double>& a = t.act[l];
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* wrow = w + o * in;
      for (std::size_t i = 0; i < in; ++i) s += wrow[i] * a[i];
      z[o] = s;
    }
    if (l + 1 < num_layers) {
      std::vector<double>& av = t.act[l + 1];
      av.resize(out);
      for (std::size_t o = 0; o < out; ++o)
        av[o] = activate(z[o], model.spec.activation);
    } else {
      t.act[l + 1] = z;  // final layer emits raw logits
    }
    off += in * out + out;
  }
  return t;
}

std::vector<double> forward_logits(const Classifier& model,
                                   const std::vector<double>& features) {
  return forward_trace(model, features).act.back();
}

void backprop_logit_grad(const Classifier& model, const ForwardTrace& trace,
                         const std::vector<double>& dlogits,
                         std::vector<double>& grad) {
  const auto& widths = model.spec.layer_widths;
  const std::size_t num_layers = widths.size() - 1;
  if (grad.size() != model.params.size())
    throw ShapeError("backprop: gradient buffer size mismatch");
  if (dlogits.size() != static_cast<std::size_t>(widths.back()))
    throw ShapeError("backprop: dlogits length mismatch");

  // Offsets of each layer's weights in the flat vector.
  std::vector<std::size_t> offsets(num_layers);
  std::size_t off = 0;
  for (std::size_t l = 0; l < num_layers; ++l) {
    offsets[l] = off;
    off += static_cast<std::size_t>(widths[l]) *
               static_cast<std::size_t>(widths[l + 1]) +
           static_cast<std::size_t>(widths[l + 1]);
  }

  std::vector<double> dz = dlogits;
  for (std::size_t l = num_layers; l-- > 0;) {
    std::size_t in = static_cast<std::size_t>(widths[l]);
    std::size_t out = static_cast<std::size_t>(widths[l + 1]);
    const double* w = model.params.data() + offsets[l];
    double* gw = grad.data() + offsets[l];
    double* gb = gw + in * out;
    const std::vector<double>& a = trace.act[l];
    for (std::size_t o = 0; o < out; ++o) {
      double* gw_row = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) gw_row[i] += dz[o] * a[i];
      gb[o] += dz[o];
    }
    if (l == 0) break;
    std::vector<double> da(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wrow = w + o * in;
      for (std::size_t i = 0; i < in; ++i) da[i] += wrow[i] * dz[o];
    }
    dz.assign(in, 0.0);
    for (std::size_t i = 0; i < in; ++i)
      dz[i] = da[i] * activate_deriv(trace.pre[l - 1][i], trace.act[l][i],
                                     model.spec.activation);
  }
}

std::vector<double> softmax(const std::vector<double>& logits,
                            double temperature) {
  if (!(temperature > 0.0))
    throw ConfigError("softmax: temperature must be > 0");
  if (logits.empty()) throw ShapeError("softmax: empty logits");
  double zmax = -std::numeric_limits<double>::infinity();
  for (double z : logits) zmax = std::max(zmax, z / temperature);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] / temperature - zmax);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double cross_entropy(const std::vector<double>& probs, int label) {
  if (label < 0 || label >= static_cast<int>(probs.size()))
    throw ShapeError("cross_entropy: label out of range");
  return -std::log(clamp_prob(probs[static_cast<std::size_t>(label)]));
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0))
    throw ConfigError("train: learning rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("train: momentum must be in [0, 1)");
  if (weight_decay < 0.0)
    throw ConfigError("train: weight decay must be >= 0");
}

BatchSchedule::BatchSchedule(std::size_t n, std::size_t batch_size,
                             std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(make_rng({seed, 0x4253u})) {
  if (n_ == 0) throw ConfigError("batch schedule: empty dataset");
  if (batch_size_ == 0) throw ConfigError("batch schedule: zero batch size");
  order_.resize(n_);
  std::iota(order_.begin(), order_.end(), 0);
  reshuffle();
}

void BatchSchedule::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

const std::vector<std::size_t>& BatchSchedule::next_batch() {
  if (cursor_ >= n_) reshuffle();
  std::size_t end = std::min(cursor_ + batch_size_, n_);
  batch_.assign(order_.begin() + static_cast<long>(cursor_),
                order_.begin() + static_cast<long>(end));
  cursor_ = end;
  return batch_;
}

Classifier train(const Classifier& model, const Dataset& dataset,
                 const TrainConfig& config, TrainLog* log) {
  config.validate();
  model.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  if (dataset.feature_dim != model.feature_dim())
    throw ShapeError("train: dataset feature_dim does not match model");
  if (dataset.num_classes != model.num_classes())
    throw ShapeError("train: dataset num_classes does not match model");

  Classifier current = model;
  std::vector<double> velocity(current.params.size(), 0.0);
  std::vector<double> grad(current.params.size());
  BatchSchedule schedule(dataset.size(), config.batch_size,
                         config.shuffle_seed);

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto& batch = schedule.next_batch();
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t idx : batch) {
      const Example& ex = dataset.examples[idx];
      ForwardTrace trace = forward_trace(current, ex.features);
      std::vector<double> p = softmax(trace.act.back(), 1.0);
      loss += cross_entropy(p, ex.label);
      p[static_cast<std::size_t>(ex.label)] -= 1.0;  // dCE/dlogits
      backprop_logit_grad(current, trace, p, grad);
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    loss *= inv_b;
    if (!std::isfinite(loss))
      throw TrainingDiverged(
          "train: non-finite loss at step " + std::to_string(step), step);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      double g = grad[i] * inv_b + config.weight_decay * current.params[i];
      velocity[i] = config.momentum * velocity[i] + g;
      current.params[i] -= config.learning_rate * velocity[i];
    }
    if (log) log->rows.push_back({step, loss});
  }
  return current;
}

double accuracy(const Classifier& model, const Dataset& dataset) {
  if (dataset.empty()) throw ConfigError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (const Example& ex : dataset.examples) {
    std::vector<double> z = forward_logits(model, ex.features);
    std::size_t best = 0;
    for (std::size_t k = 1; k < z.size(); ++k)
      if (z[k] > z[best]) best = k;  // ties keep the smallest index
    if (static_cast<int>(best) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

namespace {

std::string params_to_b64(const std::vector<double>& params) {
  std::vector<unsigned char> bytes(params.size() * 8);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(params[i]);
    for (int b = 0; b < 8; ++b)
      bytes[i * 8 + static_cast<std::size_t>(b)] =
          static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
  }
  return base64_encode(bytes.data(), bytes.size());
}

std::vector<double> params_from_b64(const std::string& text) {
  std::vector<unsigned char> bytes = base64_decode(text);
  if (bytes.size() % 8 != 0)
    throw ConfigError("model file: parameter payload is not 8-byte aligned");
  std::vector<double> params(bytes.size() / 8);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b)
      bits = (bits << 8) | bytes[i * 8 + static_cast<std::size_t>(b)];
    params[i] = std::bit_cast<double>(bits);
  }
  return params;
}

}  // namespace

std::string classifier_to_json(const Classifier& model) {
  model.validate();
  nlohmann::json j;
  j["format"] = "mlp-classifier-v1";
  j["layer_widths"] = model.spec.layer_widths;
  j["activation"] = to_string(model.spec.activation);
  j["init_scheme"] = model.spec.init_scheme;
  j["init_seed"] = model.spec.init_seed;
  j["params_b64le"] = params_to_b64(model.params);
  return j.dump(2);
}

Classifier classifier_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("model file: invalid JSON");
  if (j.value("format", "") != "mlp-classifier-v1")
    throw ConfigError("model file: unknown format tag");
  Classifier c;
  c.spec.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  c.spec.activation = activation_from_string(j.at("activation").get<std::string>());
  c.spec.init_scheme = j.at("init_scheme").get<std::string>();
  c.spec.init_seed = j.at("init_seed").get<std::uint64_t>();
  c.params = params_from_b64(j.at("params_b64le").get<std::string>());
  c.validate();
  return c;
}

void save_classifier(const Classifier& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("model file: cannot open " + path);
  out << classifier_to_json(model) << "\n";
}

Classifier load_classifier(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("model file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return classifier_from_json(ss.str());
}

}  // namespace mialab
