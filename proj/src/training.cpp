#include "qclass/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <stdexcept>

#include "qclass/batching.hpp"
#include "qclass/errors.hpp"
#include "qclass/kernels.hpp"
#include "qclass/optim.hpp"

namespace qclass {

double TrainConfig::effective_clip_norm(const ModelConfig& model) const {
  if (clip_norm) return *clip_norm;
  return model.recurrent() ? 5.0 : 0.0;
}

void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ConfigError("field 'lr' must be a positive number");
  if (c.epochs < 1 || c.epochs > 1000) throw ConfigError("field 'epochs' must lie in [1, 1000]");
  if (c.batch_size == 0) throw ConfigError("field 'batch_size' must be at least 1");
  if (c.dropout && !(*c.dropout >= 0.0 && *c.dropout < 1.0)) throw ConfigError("field 'dropout' must lie in [0, 1)");
  if (c.hidden && *c.hidden == 0) throw ConfigError("field 'hidden' must be at least 1");
  if (c.clip_norm && !(*c.clip_norm >= 0.0)) throw ConfigError("field 'clip_norm' must be >= 0 (0 disables)");
  if (c.threads < 0) throw ConfigError("field 'threads' must be >= 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"lr", c.lr},       {"epochs", c.epochs},     {"batch_size", c.batch_size},
                      {"seed", c.seed},   {"patience", c.patience}, {"threads", c.threads}};
  j["dropout"] = c.dropout ? nlohmann::json(*c.dropout) : nlohmann::json(nullptr);
  j["hidden"] = c.hidden ? nlohmann::json(*c.hidden) : nlohmann::json(nullptr);
  j["clip_norm"] = c.clip_norm ? nlohmann::json(*c.clip_norm) : nlohmann::json(nullptr);
  return j;
}

namespace {

const nlohmann::json* field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return nullptr;
  return &j.at(key);
}

[[noreturn]] void wrong_type(const char* key) { throw ConfigError("field '" + std::string(key) + "' has the wrong type"); }

double read_number(const nlohmann::json& v, const char* key) {
  if (!v.is_number()) wrong_type(key);
  return v.get<double>();
}

long long read_integer(const nlohmann::json& v, const char* key) {
  if (!v.is_number_integer()) wrong_type(key);
  return v.get<long long>();
}

std::size_t read_count(const nlohmann::json& v, const char* key) {
  const long long n = read_integer(v, key);
  if (n < 0) throw ConfigError("field '" + std::string(key) + "' must be non-negative");
  return static_cast<std::size_t>(n);
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const std::set<std::string> known = {"lr",   "epochs",   "batch_size", "dropout", "hidden",
                                              "seed", "patience", "clip_norm",  "threads"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown field '" + key + "'");
  }
  TrainConfig c;
  if (auto* v = field(j, "lr")) c.lr = read_number(*v, "lr");
  if (auto* v = field(j, "epochs")) c.epochs = static_cast<int>(read_integer(*v, "epochs"));
  if (auto* v = field(j, "batch_size")) c.batch_size = read_count(*v, "batch_size");
  if (auto* v = field(j, "dropout")) c.dropout = read_number(*v, "dropout");
  if (auto* v = field(j, "hidden")) c.hidden = read_count(*v, "hidden");
  if (auto* v = field(j, "seed")) c.seed = static_cast<std::uint64_t>(read_count(*v, "seed"));
  if (auto* v = field(j, "patience")) c.patience = static_cast<int>(read_integer(*v, "patience"));
  if (auto* v = field(j, "clip_norm")) c.clip_norm = read_number(*v, "clip_norm");
  if (auto* v = field(j, "threads")) c.threads = static_cast<int>(read_integer(*v, "threads"));
  validate(c);
  return c;
}

ModelConfig apply_overrides(ModelConfig model, const TrainConfig& train) {
  if (train.dropout) model.set_dropout(*train.dropout);
  if (train.hidden) model.set_hidden(*train.hidden);
  validate(model);
  return model;
}

nlohmann::json RunRecord::to_json(bool include_timing) const {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : epochs) {
    history.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"train_accuracy", e.train_accuracy},
                       {"validation_accuracy", e.validation_accuracy}});
  }
  nlohmann::json j = {{"model_config", model_config},
                      {"train_config", train_config},
                      {"seed", seed},
                      {"parameter_count", parameter_count},
                      {"initial_loss", initial_loss},
                      {"epochs", history},
                      {"best_epoch", best_epoch},
                      {"best_validation_accuracy", best_validation_accuracy},
                      {"steps", steps},
                      {"stopped_early", stopped_early}};
  j["internal_test_accuracy"] = internal_test_accuracy ? nlohmann::json(*internal_test_accuracy) : nlohmann::json();
  j["test_accuracy"] = test_accuracy ? nlohmann::json(*test_accuracy) : nlohmann::json();
  if (include_timing) j["wall_seconds"] = wall_seconds;
  return j;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

enum Stream : std::uint64_t { kInitStream = 1, kDropoutStream = 2, kShuffleStream = 3 };

std::vector<Batch> eval_batches(const Classifier<float>& model, std::span<const LabeledQuestion> data,
                                const Vocabulary& vocab, std::size_t batch_size) {
  BatchOptions opts;
  opts.batch_size = batch_size;
  opts.min_length = model.config().min_length();
  return make_batches(data, vocab, opts);
}

}  // namespace

EvalResult evaluate(Classifier<float>& model, std::span<const LabeledQuestion> data, const Vocabulary& vocab,
                    std::size_t batch_size) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult result;
  Rng unused(0);
  std::size_t correct = 0;
  for (const Batch& batch : eval_batches(model, data, vocab, batch_size)) {
    Tape<float> tape(false);
    const auto predicted = predict(model.forward(tape, batch, false, unused)->tensor);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const int truth = batch.labels[b];
      result.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted[b])] += 1;
      correct += predicted[b] == truth;
    }
  }
  result.count = data.size();
  result.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return result;
}

void print_evaluation(std::ostream& os, const EvalResult& r) {
  std::size_t correct = 0;
  for (int c = 0; c < kNumClasses; ++c) correct += r.confusion[c][c];
  os << "accuracy: " << std::fixed << std::setprecision(4) << r.accuracy << " (" << correct << "/" << r.count
     << ")\n";
  os << "confusion (rows = true, columns = predicted)\n";
  os << std::setw(6) << "";
  for (auto name : kLabelNames) os << std::setw(6) << name;
  os << '\n';
  for (int t = 0; t < kNumClasses; ++t) {
    os << std::setw(6) << kLabelNames[t];
    for (int p = 0; p < kNumClasses; ++p) os << std::setw(6) << r.confusion[t][p];
    os << '\n';
  }
  os.unsetf(std::ios::fixed);
}

double mean_loss(Classifier<float>& model, std::span<const LabeledQuestion> data, const Vocabulary& vocab,
                 std::size_t batch_size) {
  if (data.empty()) throw std::invalid_argument("mean_loss: empty dataset");
  Rng unused(0);
  double total = 0.0;
  for (const Batch& batch : eval_batches(model, data, vocab, batch_size)) {
    Tape<float> tape(false);
    Var<float> logits = model.forward(tape, batch, false, unused);
    total += static_cast<double>(model.loss(tape, logits, batch.labels)->tensor[0]) * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(data.size());
}

TrainResult train(const ModelConfig& model_config_in, const TrainConfig& tc, const DatasetSplits& splits,
                  const Vocabulary& vocab, const EmbeddingTable& table, const EpochCallback& on_epoch) {
  validate(tc);
  if (splits.train.empty()) throw DataError("training split is empty");
  if (splits.validation.empty()) throw DataError("validation split is empty");
  if (table.vocab_size() != vocab.size()) {
    throw DataError("embedding table has " + std::to_string(table.vocab_size()) + " rows but the vocabulary has " +
                    std::to_string(vocab.size()) + " entries");
  }
  if (tc.threads > 0) kernels::parallel::set_threads(tc.threads);
  const auto start = std::chrono::steady_clock::now();

  const ModelConfig model_config = apply_overrides(model_config_in, tc);
  Rng init_rng(derive_seed(tc.seed, kInitStream));
  Rng dropout_rng(derive_seed(tc.seed, kDropoutStream));
  TrainResult result;
  result.model = make_model<float>(model_config, table.matrix, init_rng);
  Classifier<float>& model = *result.model;
  const auto params = model.parameters().trainable();
  const AdamOptions adam{.lr = tc.lr};
  const double clip = tc.effective_clip_norm(model_config);

  RunRecord& record = result.record;
  record.model_config = to_json(model_config);
  record.train_config = to_json(tc);
  record.seed = tc.seed;
  record.parameter_count = model.parameters().count_trainable();

  std::vector<NamedTensor> best_params = export_parameters(model);
  double best_val = -1.0;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    // Batch membership is fixed by the length sort; only the batch order changes per epoch.
    BatchOptions opts;
    opts.batch_size = tc.batch_size;
    opts.min_length = model_config.min_length();
    opts.shuffle = true;
    opts.seed = derive_seed(tc.seed, kShuffleStream + 16 * static_cast<std::uint64_t>(epoch));
    const auto batches = make_batches(splits.train, vocab, opts);

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      Tape<float> tape(true);
      Var<float> logits, loss;
      try {
        logits = model.forward(tape, batch, true, dropout_rng);
        loss = model.loss(tape, logits, batch.labels);
      } catch (const std::domain_error& e) {
        throw DivergenceError(epoch, bi + 1, e.what());
      }
      const double value = loss->tensor[0];
      if (!std::isfinite(value)) throw DivergenceError(epoch, bi + 1, "training loss is " + std::to_string(value));
      if (record.steps == 0) record.initial_loss = value;
      const auto predicted = predict(logits->tensor);
      for (std::size_t b = 0; b < batch.size(); ++b) correct += predicted[b] == batch.labels[b];
      loss_sum += value * static_cast<double>(batch.size());
      seen += batch.size();

      try {
        tape.backward(loss);
      } catch (const std::domain_error& e) {
        throw DivergenceError(epoch, bi + 1, e.what());
      }
      if (clip > 0.0) {
        const double norm = clip_grad_norm<float>(params, clip);
        if (!std::isfinite(norm)) throw DivergenceError(epoch, bi + 1, "gradient norm is not finite");
      }
      adam_step<float>(params, adam);
      record.steps += 1;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    stats.validation_accuracy = evaluate(model, splits.validation, vocab, tc.batch_size).accuracy;
    record.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stats.validation_accuracy > best_val) {
      best_val = stats.validation_accuracy;
      record.best_epoch = epoch;
      best_params = export_parameters(model);
    } else if (tc.patience > 0 && epoch - record.best_epoch >= tc.patience) {
      record.stopped_early = epoch < tc.epochs;
      break;
    }
  }

  import_parameters(model, best_params);
  record.best_validation_accuracy = best_val;
  if (!splits.internal_test.empty()) {
    record.internal_test_accuracy = evaluate(model, splits.internal_test, vocab, tc.batch_size).accuracy;
  }
  if (!splits.official_test.empty()) {
    record.test_accuracy = evaluate(model, splits.official_test, vocab, tc.batch_size).accuracy;
  }
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<SweepRow> sweep_kernels(const ModelConfig& base, const std::vector<std::vector<std::size_t>>& kernel_sets,
                                    const TrainConfig& train_config, std::span<const std::uint64_t> seeds,
                                    const DatasetSplits& splits, const Vocabulary& vocab, const EmbeddingTable& table) {
  if (!std::holds_alternative<TextCnnConfig>(base.arch)) throw ConfigError("sweep needs a textcnn base config");
  if (splits.internal_test.empty()) throw DataError("internal test split is empty");
  std::vector<SweepRow> rows;
  for (const auto& kernels : kernel_sets) {
    ModelConfig config = base;
    auto& cnn = std::get<TextCnnConfig>(config.arch);
    cnn.kernel_sizes = kernels;
    std::sort(cnn.kernel_sizes.begin(), cnn.kernel_sizes.end());
    validate(config);
    for (std::uint64_t seed : seeds) {
      TrainConfig tc = train_config;
      tc.seed = seed;
      TrainResult run = train(config, tc, splits, vocab, table);
      SweepRow row;
      row.kernel_sizes = cnn.kernel_sizes;
      row.seed = seed;
      row.best_epoch = run.record.best_epoch;
      row.validation_accuracy = run.record.best_validation_accuracy;
      row.internal_test_accuracy = run.record.internal_test_accuracy.value_or(0.0);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

namespace {

std::string join_kernels(const std::vector<std::size_t>& kernels) {
  std::string out;
  for (std::size_t i = 0; i < kernels.size(); ++i) out += (i ? "-" : "") + std::to_string(kernels[i]);
  return out;
}

}  // namespace

void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "kernels,seed,best_epoch,validation_accuracy,internal_test_accuracy\n";
  os << std::setprecision(6);
  for (const auto& r : rows) {
    os << join_kernels(r.kernel_sizes) << ',' << r.seed << ',' << r.best_epoch << ',' << r.validation_accuracy << ','
       << r.internal_test_accuracy << '\n';
  }
}

std::vector<BenchRow> benchmark_throughput(std::span<const BenchModel> models, std::span<const BenchShape> shapes,
                                           int repeats, int warmup, std::size_t embedding_dim, std::uint64_t seed) {
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  constexpr std::size_t kVocab = 1000;
  Rng rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.4f);
  Tensor<float> embeddings({kVocab, embedding_dim});
  for (auto& v : embeddings.values()) v = normal(rng);

  using Clock = std::chrono::steady_clock;
  auto median_seconds = [&](const std::function<void()>& pass) {
    for (int i = 0; i < warmup; ++i) pass();
    std::vector<double> times;
    for (int i = 0; i < repeats; ++i) {
      const auto t0 = Clock::now();
      pass();
      times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
    return times[times.size() / 2];
  };

  std::vector<BenchRow> rows;
  for (const auto& bm : models) {
    Rng init(derive_seed(seed, kInitStream));
    auto model = make_model<float>(bm.config, embeddings, init);
    for (const auto& shape : shapes) {
      Batch batch;
      batch.time = std::max(shape.seq_len, bm.config.min_length());
      std::uniform_int_distribution<std::int32_t> token(2, static_cast<std::int32_t>(kVocab) - 1);
      std::uniform_int_distribution<int> label(0, bm.config.classes() - 1);
      batch.indices.assign(shape.batch * batch.time, Vocabulary::pad_index);
      for (std::size_t b = 0; b < shape.batch; ++b) {
        for (std::size_t t = 0; t < shape.seq_len; ++t) batch.indices[b * batch.time + t] = token(rng);
        batch.lengths.push_back(shape.seq_len);
        batch.labels.push_back(label(rng));
      }
      Rng dropout_rng(seed);
      const double fwd = median_seconds([&] {
        Tape<float> tape(false);
        model->forward(tape, batch, false, dropout_rng);
      });
      const double fwd_bwd = median_seconds([&] {
        Tape<float> tape(true);
        Var<float> logits = model->forward(tape, batch, true, dropout_rng);
        tape.backward(model->loss(tape, logits, batch.labels));
        model->parameters().zero_grad();
      });
      const double tokens = static_cast<double>(shape.batch * shape.seq_len);
      rows.push_back({bm.name, shape.batch, shape.seq_len, tokens / fwd, tokens / fwd_bwd});
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows) {
  os << "model,batch,seq_len,forward_tokens_per_s,forward_backward_tokens_per_s\n";
  os << std::fixed << std::setprecision(1);
  for (const auto& r : rows) {
    os << r.model << ',' << r.batch << ',' << r.seq_len << ',' << r.forward_tokens_per_second << ','
       << r.train_tokens_per_second << '\n';
  }
  os.unsetf(std::ios::fixed);
}

namespace {

Preset make_preset(std::string name, std::string description, ModelConfig model, int epochs) {
  Preset p;
  p.name = std::move(name);
  p.description = std::move(description);
  p.model = std::move(model);
  p.train.epochs = epochs;
  return p;
}

ModelConfig cnn(std::vector<std::size_t> kernels, int fc_layers) {
  TextCnnConfig c;
  c.kernel_sizes = std::move(kernels);
  c.fc_layers = fc_layers;
  return ModelConfig{c};
}

ModelConfig bilstm(std::size_t layers) {
  BiLstmConfig c;
  c.layers = layers;
  return ModelConfig{c};
}

ModelConfig qrnn(std::size_t layers, std::size_t width) {
  QrnnConfig c;
  c.layers = layers;
  c.filter_width = width;
  return ModelConfig{c};
}

}  // namespace

const std::vector<Preset>& builtin_presets() {
  static const std::vector<Preset> presets = [] {
    std::vector<Preset> p;
    p.push_back(make_preset("logreg", "Logistic regression over averaged embeddings", ModelConfig{LogRegConfig{}}, 100));
    p.push_back(make_preset("bilstm-2", "Bi-LSTM, 2 stacked layers", bilstm(2), 30));
    p.push_back(make_preset("bilstm-5", "Bi-LSTM, 5 stacked layers", bilstm(5), 30));
    p.push_back(make_preset("cnn-2", "CNN, kernels (2), 1 FC layer", cnn({2}, 1), 30));
    p.push_back(make_preset("cnn-23", "CNN, kernels (2,3), 1 FC layer", cnn({2, 3}, 1), 30));
    p.push_back(make_preset("cnn-234", "CNN, kernels (2,3,4), 1 FC layer", cnn({2, 3, 4}, 1), 30));
    p.push_back(make_preset("cnn-2345-fc1", "CNN, kernels (2,3,4,5), 1 FC layer", cnn({2, 3, 4, 5}, 1), 30));
    p.push_back(make_preset("cnn-23456-fc1", "CNN, kernels (2,3,4,5,6), 1 FC layer", cnn({2, 3, 4, 5, 6}, 1), 30));
    p.push_back(make_preset("cnn-23456-fc3", "CNN, kernels (2,3,4,5,6), 3 FC layers", cnn({2, 3, 4, 5, 6}, 3), 30));
    p.push_back(make_preset("qrnn-1l-w1", "QRNN, 1 layer, window 1", qrnn(1, 1), 40));
    p.push_back(make_preset("qrnn-2l-w1", "QRNN, 2 layers, window 1", qrnn(2, 1), 40));
    p.push_back(make_preset("qrnn-2l-w2", "QRNN, 2 layers, window 2", qrnn(2, 2), 40));
    return p;
  }();
  return presets;
}

const Preset* find_builtin_preset(const std::string& name) {
  for (const auto& p : builtin_presets()) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

nlohmann::json to_json(const Preset& preset) {
  return {{"name", preset.name},
          {"description", preset.description},
          {"model", to_json(preset.model)},
          {"train", to_json(preset.train)}};
}

Preset preset_from_json(const nlohmann::json& j, const std::string& name) {
  if (!j.is_object()) throw ConfigError("preset must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "name" && key != "description" && key != "model" && key != "train") {
      throw ConfigError("unknown field '" + key + "'");
    }
  }
  if (!j.contains("model")) throw ConfigError("field 'model' is required");
  Preset p;
  p.name = j.contains("name") && j.at("name").is_string() ? j.at("name").get<std::string>() : name;
  if (j.contains("description")) {
    if (!j.at("description").is_string()) wrong_type("description");
    p.description = j.at("description").get<std::string>();
  }
  p.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) p.train = train_config_from_json(j.at("train"));
  return p;
}

std::vector<std::vector<std::size_t>> default_sweep_kernel_sets() {
  return {{2}, {2, 3}, {2, 3, 4}, {2, 3, 4, 5}, {2, 3, 4, 5, 6}};
}

}  // namespace qclass
