// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mialab/common.hpp"
#include "mialab/data.hpp"

namespace mialab {

enum class Activation { kRelu, kTanh };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

// Dense feed-forward classifier shape: layer_widths runs input, hidden...,
// output. A single affine layer is {d, K}. Hidden layers apply the
// activation; the final layer emits raw logits.
struct ArchitectureSpec {
  std::vector<int> layer_widths;
  Activation activation = Activation::kRelu;
  std::string init_scheme = "fanin-uniform";
  std::uint64_t init_seed = 0;

  int feature_dim() const { return layer_widths.front(); }
  int num_classes() const { return layer_widths.back(); }
  std::size_t param_count() const;
  void validate() const;
};

// Parameters are one flat vector: for each layer, the weight matrix
// row-major [out][in] followed by the bias [out]. The layout is part of the
// persistence format.
struct Classifier {
  ArchitectureSpec spec;
  std::vector<double> params;

  int feature_dim() const { return spec.feature_dim(); }
  int num_classes() const { return spec.num_classes(); }
  void validate() const;
};

// Fan-in-scaled uniform init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
// biases zero. Deterministic in spec.init_seed.
Classifier init_classifier(const ArchitectureSpec& spec);

std::vector<double> forward_logits(const Classifier& model,
                                   const std::vector<double>& features);

// Numerically stable softmax of logits / temperature.
std::vector<double> softmax(const std::vector<double>& logits,
                            double temperature = 1.0);

// -log(probs[label]) with the probability clamped to [kProbEpsilon, 1].
double cross_entropy(const std::vector<double>& probs, int label);

struct TrainConfig {
  std::size_t steps = 0;
  std::size_t batch_size = 1;
  double learning_rate = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::uint64_t shuffle_seed = 0;

  void validate() const;
};

struct TrainLog {
  struct Row {
    std::size_t step;
    double loss;
  };
  std::vector<Row> rows;
};

// Exactly config.steps minibatch SGD steps on mean cross-entropy. Momentum
// buffers follow v <- m*v + g, theta <- theta - lr*v; weight decay is L2
// added to the gradient and is not part of the reported loss. Batch order is
// a seeded permutation per epoch. Throws TrainingDiverged on non-finite loss.
Classifier train(const Classifier& model, const Dataset& dataset,
                 const TrainConfig& config, TrainLog* log = nullptr);

// Fraction of argmax-correct predictions; ties resolve to the smallest class.
double accuracy(const Classifier& model, const Dataset& dataset);

// --- lower-level pieces shared with the distillation trainer and tests ---

struct ForwardTrace {
  // act[0] is the input; act[l+1] the output of layer l; act.back() are the
  // logits. pre[l] holds layer l's affine output before activation.
  std::vector<std::vector<double>> act;
  std::vector<std::vector<double>> pre;
};

ForwardTrace forward_trace(const Classifier& model,
                           const std::vector<double>& features);

// Accumulates dL/dparams into grad (size param_count) from dL/dlogits.
void backprop_logit_grad(const Classifier& model, const ForwardTrace& trace,
                         const std::vector<double>& dlogits,
                         std::vector<double>& grad);

// Seeded permutation per epoch, consumed batch by batch. The final batch of
// an epoch may be short.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  const std::vector<std::size_t>& next_batch();

 private:
  void reshuffle();
  std::size_t n_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> batch_;
  std::mt19937_64 rng_;
};

// Persistence: JSON envelope carrying the spec plus the flat parameter
// vector as base64 of little-endian IEEE-754 doubles (bit-exact round trip).
std::string classifier_to_json(const Classifier& model);
Classifier classifier_from_json(const std::string& text);
void save_classifier(const Classifier& model, const std::string& path);
Classifier load_classifier(const std::string& path);

}  // namespace mialab
