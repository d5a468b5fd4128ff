#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "qclass/autograd.hpp"
#include "qclass/batching.hpp"
#include "qclass/checkpoint.hpp"
#include "qclass/embeddings.hpp"
#include "qclass/model_config.hpp"

namespace qclass {

// A question classifier: embedding lookup followed by one of the four architectures.
// forward() returns logits [B][C]; softmax is applied only inside the loss or at readout.
template <class T>
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual Var<T> forward(Tape<T>& tape, const Batch& batch, bool training, Rng& rng) = 0;

  // Training objective for logits produced by forward().
  virtual Var<T> loss(Tape<T>& tape, const Var<T>& logits, std::span<const int> targets);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet<T>& parameters() noexcept { return params_; }
  const ParameterSet<T>& parameters() const noexcept { return params_; }
  std::size_t embedding_dim() const { return embedding_->tensor.dim(1); }

 protected:
  Classifier(ModelConfig config, const Tensor<T>& embedding_matrix);
  Var<T> embed(Tape<T>& tape, const Batch& batch);

  ModelConfig config_;
  ParameterSet<T> params_;
  Var<T> embedding_;
};

// Builds the model for config; weights drawn from init_rng (Glorot-uniform matrices, zero biases,
// LSTM forget-gate bias +1). Throws ConfigError for an invalid config.
template <class T>
std::unique_ptr<Classifier<T>> make_model(const ModelConfig& config, const Tensor<T>& embedding_matrix,
                                          Rng& init_rng);

// Argmax per row; ties resolve to the lowest class id.
template <class T>
std::vector<int> predict(const Tensor<T>& logits);

// --- building blocks, exposed for testing ---

template <class T>
struct LstmWeights {
  Var<T> input;      // [in][4H], gate blocks i | f | g | o
  Var<T> recurrent;  // [H][4H]
  Var<T> bias;       // [4H]
};

template <class T>
struct LstmState {
  Var<T> h;  // [B][H]
  Var<T> c;  // [B][H]
};

// One LSTM step: i, f, o = sigmoid(.), g = tanh(.), c = f*c_prev + i*g, h = o*tanh(c).
template <class T>
LstmState<T> lstm_cell(Tape<T>& tape, const Var<T>& x, const LstmState<T>& prev, const LstmWeights<T>& w);

// Same step with the input projection x*W + b already computed ([B][4H]).
template <class T>
LstmState<T> lstm_cell_projected(Tape<T>& tape, const Var<T>& projected, const LstmState<T>& prev,
                                 const Var<T>& recurrent);

template <class T>
struct QrnnLayerWeights {
  Var<T> z_filters, z_bias;  // [H][k][in], [H]
  Var<T> f_filters, f_bias;
  Var<T> o_filters, o_bias;
};

// Causal convolutions give Z, F, O; z = tanh(Z), f = sigmoid(F), o = sigmoid(O); then the gated
// recurrence c_t = f*c_{t-1} + (1-f)*z with h = o*c (fo) or h = c (f). x[B][T][in] -> [B][T][H].
template <class T>
Var<T> qrnn_layer(Tape<T>& tape, const Var<T>& x, const QrnnLayerWeights<T>& w, QrnnPooling pooling);

// Number of CNN windows of width k per row that lie inside the sentence: max(1, length - k + 1).
std::vector<std::size_t> cnn_valid_windows(std::span<const std::size_t> lengths, std::size_t width,
                                           std::size_t time);

// Checkpoint = binary parameter file plus "<path>.json" holding the model config.
// Frozen embeddings are not stored; they are rebuilt from the embedding table on load.
void save_model(const std::filesystem::path& path, Classifier<float>& model);
std::unique_ptr<Classifier<float>> load_model(const std::filesystem::path& path, const EmbeddingTable& table);
ModelConfig read_model_manifest(const std::filesystem::path& checkpoint_path);

std::vector<NamedTensor> export_parameters(const Classifier<float>& model);
void import_parameters(Classifier<float>& model, const std::vector<NamedTensor>& tensors);

}  // namespace qclass
