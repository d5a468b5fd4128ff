#include "qclass/models.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "qclass/errors.hpp"
#include "qclass/ops.hpp"

namespace qclass {

namespace {

// Range multiplier for the layer that produces class logits, so untrained predictions start near uniform.
constexpr double kOutputGain = 0.1;

template <class T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Tensor<T> zeros(Shape shape) {
  return Tensor<T>(std::move(shape), T(0));
}

template <class T>
std::vector<std::size_t> last_positions(const Batch& batch) {
  std::vector<std::size_t> pos(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) pos[b] = batch.lengths[b] - 1;
  return pos;
}

}  // namespace

template <class T>
Classifier<T>::Classifier(ModelConfig config, const Tensor<T>& embedding_matrix) : config_(std::move(config)) {
  validate(config_);
  if (embedding_matrix.rank() != 2 || embedding_matrix.dim(1) == 0) {
    throw ShapeError("embedding matrix must be [V][D], got " + shape_str(embedding_matrix.shape()));
  }
  embedding_ = params_.add("embedding", embedding_matrix, config_.trainable_embeddings);
}

template <class T>
Var<T> Classifier<T>::embed(Tape<T>& tape, const Batch& batch) {
  return ops::embedding_gather(tape, embedding_, batch.indices, batch.size(), batch.time);
}

template <class T>
Var<T> Classifier<T>::loss(Tape<T>& tape, const Var<T>& logits, std::span<const int> targets) {
  if (const auto* lr = std::get_if<LogRegConfig>(&config_.arch); lr && lr->loss == LogRegLoss::SigmoidOneVsRest) {
    return ops::sigmoid_cross_entropy(tape, logits, targets);
  }
  return ops::softmax_cross_entropy(tape, logits, targets).loss;
}

std::vector<std::size_t> cnn_valid_windows(std::span<const std::size_t> lengths, std::size_t width,
                                           std::size_t time) {
  const std::size_t out_len = time >= width ? time - width + 1 : 0;
  std::vector<std::size_t> valid(lengths.size());
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    const std::size_t inside = lengths[b] >= width ? lengths[b] - width + 1 : 1;
    valid[b] = std::min(inside, out_len);
  }
  return valid;
}

template <class T>
LstmState<T> lstm_cell_projected(Tape<T>& tape, const Var<T>& projected, const LstmState<T>& prev,
                                 const Var<T>& recurrent) {
  const std::size_t hidden = recurrent->tensor.dim(0);
  if (projected->tensor.rank() != 2 || projected->tensor.dim(1) != 4 * hidden) {
    throw ShapeError("lstm_cell: projected input must be [B][" + std::to_string(4 * hidden) + "], got " +
                     shape_str(projected->tensor.shape()));
  }
  Var<T> gates = ops::add(tape, projected, ops::matmul(tape, prev.h, recurrent));
  Var<T> in_gate = ops::sigmoid(tape, ops::slice_cols(tape, gates, 0, hidden));
  Var<T> forget_gate = ops::sigmoid(tape, ops::slice_cols(tape, gates, hidden, hidden));
  Var<T> candidate = ops::tanh(tape, ops::slice_cols(tape, gates, 2 * hidden, hidden));
  Var<T> out_gate = ops::sigmoid(tape, ops::slice_cols(tape, gates, 3 * hidden, hidden));
  Var<T> c = ops::add(tape, ops::mul(tape, forget_gate, prev.c), ops::mul(tape, in_gate, candidate));
  Var<T> h = ops::mul(tape, out_gate, ops::tanh(tape, c));
  return {h, c};
}

template <class T>
LstmState<T> lstm_cell(Tape<T>& tape, const Var<T>& x, const LstmState<T>& prev, const LstmWeights<T>& w) {
  return lstm_cell_projected(tape, ops::linear(tape, x, w.input, w.bias), prev, w.recurrent);
}

template <class T>
Var<T> qrnn_layer(Tape<T>& tape, const Var<T>& x, const QrnnLayerWeights<T>& w, QrnnPooling pooling) {
  Var<T> z = ops::tanh(tape, ops::masked_conv1d_time(tape, x, w.z_filters, w.z_bias));
  Var<T> f = ops::sigmoid(tape, ops::masked_conv1d_time(tape, x, w.f_filters, w.f_bias));
  Var<T> o;
  if (pooling == QrnnPooling::FO) o = ops::sigmoid(tape, ops::masked_conv1d_time(tape, x, w.o_filters, w.o_bias));
  return ops::qrnn_pool(tape, z, f, o);
}

namespace {

template <class T>
class LogReg final : public Classifier<T> {
 public:
  LogReg(const ModelConfig& config, const Tensor<T>& emb, Rng& rng) : Classifier<T>(config, emb) {
    const auto& c = std::get<LogRegConfig>(config.arch);
    const std::size_t dim = this->embedding_dim();
    const auto classes = static_cast<std::size_t>(c.classes);
    weight_ = this->params_.add("linear.weight", glorot<T>({dim, classes}, dim, classes, rng, kOutputGain));
    bias_ = this->params_.add("linear.bias", zeros<T>({classes}));
  }

  Var<T> forward(Tape<T>& tape, const Batch& batch, bool, Rng&) override {
    Var<T> x = this->embed(tape, batch);
    Var<T> avg = ops::avgpool_time(tape, x, batch.lengths);
    return ops::linear(tape, avg, weight_, bias_);
  }

 private:
  Var<T> weight_, bias_;
};

template <class T>
class TextCnn final : public Classifier<T> {
 public:
  TextCnn(const ModelConfig& config, const Tensor<T>& emb, Rng& rng)
      : Classifier<T>(config, emb), cfg_(std::get<TextCnnConfig>(config.arch)) {
    const std::size_t dim = this->embedding_dim();
    const std::size_t m = cfg_.filters;
    for (std::size_t k : cfg_.kernel_sizes) {
      const std::string tag = "conv" + std::to_string(k);
      filters_.push_back(this->params_.add(tag + ".filters", glorot<T>({m, k, dim}, k * dim, k * m, rng)));
      biases_.push_back(this->params_.add(tag + ".bias", zeros<T>({m})));
    }
    std::vector<std::size_t> widths = {m * cfg_.kernel_sizes.size()};
    if (cfg_.fc_layers == 3) {
      widths.push_back(widths.back() / 2);
      widths.push_back(widths.back() / 2);
    }
    widths.push_back(static_cast<std::size_t>(cfg_.classes));
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const std::string tag = "fc" + std::to_string(i);
      fc_w_.push_back(
          this->params_.add(tag + ".weight", glorot<T>({widths[i], widths[i + 1]}, widths[i], widths[i + 1], rng,
                                                       i + 2 == widths.size() ? kOutputGain : 1.0)));
      fc_b_.push_back(this->params_.add(tag + ".bias", zeros<T>({widths[i + 1]})));
    }
  }

  Var<T> forward(Tape<T>& tape, const Batch& batch, bool training, Rng& rng) override {
    Var<T> x = this->embed(tape, batch);
    std::vector<Var<T>> pooled;
    for (std::size_t i = 0; i < cfg_.kernel_sizes.size(); ++i) {
      Var<T> feature_map = ops::relu(tape, ops::conv1d_time(tape, x, filters_[i], biases_[i]));
      const auto valid = cnn_valid_windows(batch.lengths, cfg_.kernel_sizes[i], batch.time);
      pooled.push_back(ops::maxpool_time(tape, feature_map, valid));
    }
    Var<T> h = pooled.size() == 1 ? pooled[0] : ops::concat_last(tape, pooled);
    h = ops::dropout(tape, h, cfg_.dropout, training, rng);
    for (std::size_t i = 0; i < fc_w_.size(); ++i) {
      h = ops::linear(tape, h, fc_w_[i], fc_b_[i]);
      if (i + 1 < fc_w_.size()) h = ops::relu(tape, h);
    }
    return h;
  }

 private:
  TextCnnConfig cfg_;
  std::vector<Var<T>> filters_, biases_, fc_w_, fc_b_;
};

template <class T>
class BiLstm final : public Classifier<T> {
 public:
  BiLstm(const ModelConfig& config, const Tensor<T>& emb, Rng& rng)
      : Classifier<T>(config, emb), cfg_(std::get<BiLstmConfig>(config.arch)) {
    const std::size_t hidden = cfg_.hidden;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::size_t in = l == 0 ? this->embedding_dim() : 2 * hidden;
      for (const char* dir : {"fwd", "bwd"}) {
        const std::string tag = "lstm" + std::to_string(l) + "." + dir;
        LstmWeights<T> w;
        w.input = this->params_.add(tag + ".input", glorot<T>({in, 4 * hidden}, in, 4 * hidden, rng));
        w.recurrent = this->params_.add(tag + ".recurrent", glorot<T>({hidden, 4 * hidden}, hidden, 4 * hidden, rng));
        Tensor<T> bias = zeros<T>({4 * hidden});
        for (std::size_t u = hidden; u < 2 * hidden; ++u) bias[u] = T(1);  // forget gate
        w.bias = this->params_.add(tag + ".bias", std::move(bias));
        weights_.push_back(w);
      }
    }
    const auto classes = static_cast<std::size_t>(cfg_.classes);
    out_w_ = this->params_.add("fc.weight", glorot<T>({2 * hidden, classes}, 2 * hidden, classes, rng, kOutputGain));
    out_b_ = this->params_.add("fc.bias", zeros<T>({classes}));
  }

  Var<T> forward(Tape<T>& tape, const Batch& batch, bool training, Rng& rng) override {
    const std::size_t batch_size = batch.size(), time = batch.time, hidden = cfg_.hidden;
    Var<T> x = this->embed(tape, batch);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      Var<T> fwd = run_direction(tape, x, weights_[2 * l], batch, false);
      Var<T> bwd = run_direction(tape, x, weights_[2 * l + 1], batch, true);
      x = ops::dropout(tape, ops::concat_last(tape, std::vector<Var<T>>{fwd, bwd}), cfg_.dropout, training, rng);
    }
    (void)batch_size;
    (void)time;
    const auto last = last_positions<T>(batch);
    Var<T> fwd_final = ops::slice_cols(tape, ops::gather_time(tape, x, last), 0, hidden);
    Var<T> bwd_final = ops::slice_cols(tape, ops::time_step(tape, x, 0), hidden, hidden);
    Var<T> features = ops::concat_last(tape, std::vector<Var<T>>{fwd_final, bwd_final});
    return ops::linear(tape, features, out_w_, out_b_);
  }

 private:
  // Runs one direction over x[B][T][in] and returns [B][T][H]. The reverse scan of row b starts
  // from a zero state at lengths[b] - 1; its outputs at PAD positions are zero.
  Var<T> run_direction(Tape<T>& tape, const Var<T>& x, const LstmWeights<T>& w, const Batch& batch, bool reverse) {
    const std::size_t batch_size = batch.size(), time = batch.time, in = x->tensor.dim(2), hidden = cfg_.hidden;
    Var<T> flat = ops::reshape(tape, x, {batch_size * time, in});
    Var<T> projected = ops::reshape(tape, ops::linear(tape, flat, w.input, w.bias), {batch_size, time, 4 * hidden});
    LstmState<T> state{tape.constant(zeros<T>({batch_size, hidden})), tape.constant(zeros<T>({batch_size, hidden}))};
    std::vector<Var<T>> outputs(time);
    std::vector<T> mask(batch_size);
    for (std::size_t step = 0; step < time; ++step) {
      const std::size_t t = reverse ? time - 1 - step : step;
      state = lstm_cell_projected(tape, ops::time_step(tape, projected, t), state, w.recurrent);
      if (reverse) {
        bool all_inside = true;
        for (std::size_t b = 0; b < batch_size; ++b) {
          mask[b] = t < batch.lengths[b] ? T(1) : T(0);
          all_inside = all_inside && mask[b] == T(1);
        }
        if (!all_inside) state = {ops::scale_rows<T>(tape, state.h, mask), ops::scale_rows<T>(tape, state.c, mask)};
      }
      outputs[t] = state.h;
    }
    return ops::stack_time(tape, outputs);
  }

  BiLstmConfig cfg_;
  std::vector<LstmWeights<T>> weights_;  // layer-major, fwd then bwd
  Var<T> out_w_, out_b_;
};

template <class T>
class Qrnn final : public Classifier<T> {
 public:
  Qrnn(const ModelConfig& config, const Tensor<T>& emb, Rng& rng)
      : Classifier<T>(config, emb), cfg_(std::get<QrnnConfig>(config.arch)) {
    const std::size_t hidden = cfg_.hidden, k = cfg_.filter_width;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::size_t in = l == 0 ? this->embedding_dim() : hidden;
      const std::string tag = "qrnn" + std::to_string(l);
      QrnnLayerWeights<T> w;
      auto bank = [&](const char* gate, Var<T>& filters, Var<T>& bias) {
        filters = this->params_.add(tag + "." + gate + ".filters", glorot<T>({hidden, k, in}, k * in, k * hidden, rng));
        bias = this->params_.add(tag + "." + gate + ".bias", zeros<T>({hidden}));
      };
      bank("z", w.z_filters, w.z_bias);
      bank("f", w.f_filters, w.f_bias);
      if (cfg_.pooling == QrnnPooling::FO) bank("o", w.o_filters, w.o_bias);
      layers_.push_back(w);
    }
    const auto classes = static_cast<std::size_t>(cfg_.classes);
    out_w_ = this->params_.add("fc.weight", glorot<T>({hidden, classes}, hidden, classes, rng, kOutputGain));
    out_b_ = this->params_.add("fc.bias", zeros<T>({classes}));
  }

  Var<T> forward(Tape<T>& tape, const Batch& batch, bool training, Rng& rng) override {
    Var<T> x = this->embed(tape, batch);
    for (const auto& w : layers_) {
      x = ops::dropout(tape, qrnn_layer(tape, x, w, cfg_.pooling), cfg_.dropout, training, rng);
    }
    Var<T> last = ops::gather_time(tape, x, last_positions<T>(batch));
    return ops::linear(tape, last, out_w_, out_b_);
  }

 private:
  QrnnConfig cfg_;
  std::vector<QrnnLayerWeights<T>> layers_;
  Var<T> out_w_, out_b_;
};

}  // namespace

template <class T>
std::unique_ptr<Classifier<T>> make_model(const ModelConfig& config, const Tensor<T>& embedding_matrix,
                                          Rng& init_rng) {
  validate(config);
  if (std::holds_alternative<LogRegConfig>(config.arch)) {
    return std::make_unique<LogReg<T>>(config, embedding_matrix, init_rng);
  }
  if (std::holds_alternative<TextCnnConfig>(config.arch)) {
    return std::make_unique<TextCnn<T>>(config, embedding_matrix, init_rng);
  }
  if (std::holds_alternative<BiLstmConfig>(config.arch)) {
    return std::make_unique<BiLstm<T>>(config, embedding_matrix, init_rng);
  }
  return std::make_unique<Qrnn<T>>(config, embedding_matrix, init_rng);
}

template <class T>
std::vector<int> predict(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("predict: logits must be [B][C]");
  std::vector<int> out(logits.dim(0));
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.dim(1); ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

std::vector<NamedTensor> export_parameters(const Classifier<float>& model) {
  std::vector<NamedTensor> out;
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    Tensor<float> copy(params[i].tensor().shape(), params[i].tensor().vector());
    out.push_back({params[i].name, std::move(copy)});
  }
  return out;
}

void import_parameters(Classifier<float>& model, const std::vector<NamedTensor>& tensors) {
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<float>& p = params[i];
    const NamedTensor* match = nullptr;
    for (const auto& nt : tensors) {
      if (nt.name == p.name) match = &nt;
    }
    if (!match) {
      if (p.trainable) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
      continue;
    }
    if (match->tensor.shape() != p.tensor().shape()) {
      throw FormatError("checkpoint parameter '" + p.name + "' has shape " + shape_str(match->tensor.shape()) +
                        ", model expects " + shape_str(p.tensor().shape()));
    }
    std::copy(match->tensor.values().begin(), match->tensor.values().end(), p.tensor().values().begin());
  }
}

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".json");
}

}  // namespace

void save_model(const std::filesystem::path& path, Classifier<float>& model) {
  write_checkpoint(path, export_parameters(model));
  nlohmann::json manifest = {{"format", "qclass-checkpoint"},
                             {"version", kCheckpointVersion},
                             {"model", to_json(model.config())},
                             {"embedding_dim", model.embedding_dim()},
                             {"vocab_size", model.parameters()[0].tensor().dim(0)}};
  std::ofstream os(manifest_path(path));
  if (!os) throw std::runtime_error("cannot write " + manifest_path(path).string());
  os << manifest.dump(2) << '\n';
}

ModelConfig read_model_manifest(const std::filesystem::path& checkpoint_path) {
  std::ifstream is(manifest_path(checkpoint_path));
  if (!is) throw DataError("missing checkpoint manifest " + manifest_path(checkpoint_path).string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!manifest.contains("model")) throw FormatError("checkpoint manifest lacks 'model'");
  return model_config_from_json(manifest.at("model"));
}

std::unique_ptr<Classifier<float>> load_model(const std::filesystem::path& path, const EmbeddingTable& table) {
  const ModelConfig config = read_model_manifest(path);
  Rng rng(0);
  auto model = make_model<float>(config, table.matrix, rng);
  import_parameters(*model, read_checkpoint(path));
  return model;
}

#define QCLASS_INSTANTIATE(T)                                                                                     \
  template class Classifier<T>;                                                                                   \
  template std::unique_ptr<Classifier<T>> make_model<T>(const ModelConfig&, const Tensor<T>&, Rng&);              \
  template std::vector<int> predict<T>(const Tensor<T>&);                                                         \
  template LstmState<T> lstm_cell<T>(Tape<T>&, const Var<T>&, const LstmState<T>&, const LstmWeights<T>&);        \
  template LstmState<T> lstm_cell_projected<T>(Tape<T>&, const Var<T>&, const LstmState<T>&, const Var<T>&);      \
  template Var<T> qrnn_layer<T>(Tape<T>&, const Var<T>&, const QrnnLayerWeights<T>&, QrnnPooling);

QCLASS_INSTANTIATE(float)
QCLASS_INSTANTIATE(double)

#undef QCLASS_INSTANTIATE

}  // namespace qclass
