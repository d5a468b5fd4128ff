#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qclass/corpus.hpp"
#include "qclass/embeddings.hpp"
#include "qclass/model_config.hpp"
#include "qclass/models.hpp"

namespace qclass {

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 30;
  std::size_t batch_size = 64;
  std::optional<double> dropout;     // overrides the model config when set
  std::optional<std::size_t> hidden;  // filters (CNN) or hidden width (BiLSTM, QRNN)
  std::uint64_t seed = 1;
  int patience = 15;                 // epochs without validation gain before stopping; <= 0 disables
  std::optional<double> clip_norm;   // unset: 5 for recurrent models, no clipping otherwise
  int threads = 0;                   // 0 leaves the OpenMP default

  double effective_clip_norm(const ModelConfig& model) const;
};

// Throws ConfigError naming the field.
void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Model config with the train config's dropout / hidden overrides applied.
ModelConfig apply_overrides(ModelConfig model, const TrainConfig& train);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct RunRecord {
  nlohmann::json model_config;
  nlohmann::json train_config;
  std::uint64_t seed = 0;
  std::size_t parameter_count = 0;  // trainable scalars
  double initial_loss = 0.0;        // first training batch, before any update
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_validation_accuracy = 0.0;
  std::optional<double> internal_test_accuracy;
  std::optional<double> test_accuracy;  // official test set
  std::size_t steps = 0;
  bool stopped_early = false;
  double wall_seconds = 0.0;

  // include_timing = false drops wall_seconds, the only field that differs between identical runs.
  nlohmann::json to_json(bool include_timing = true) const;
};

struct EvalResult {
  double accuracy = 0.0;
  std::size_t count = 0;
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  // [true][predicted]
};

// Accuracy and confusion matrix with dropout off. Throws std::invalid_argument on empty data.
EvalResult evaluate(Classifier<float>& model, std::span<const LabeledQuestion> data, const Vocabulary& vocab,
                    std::size_t batch_size = 64);

// Prints "accuracy: 0.xxxx (n/N)" followed by the labelled 6x6 matrix.
void print_evaluation(std::ostream& os, const EvalResult& result);

// Mean loss over the data at the current parameters, dropout off.
double mean_loss(Classifier<float>& model, std::span<const LabeledQuestion> data, const Vocabulary& vocab,
                 std::size_t batch_size = 64);

struct TrainResult {
  std::unique_ptr<Classifier<float>> model;  // holds the best-validation parameters
  RunRecord record;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Adam training with per-epoch validation, best-epoch retention and patience-based stopping.
// Requires a non-empty train and validation split. Throws DivergenceError on a non-finite loss.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const DatasetSplits& splits,
                  const Vocabulary& vocab, const EmbeddingTable& table, const EpochCallback& on_epoch = {});

// Independent seed streams derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct SweepRow {
  std::vector<std::size_t> kernel_sizes;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  double validation_accuracy = 0.0;
  double internal_test_accuracy = 0.0;
};

// One train + internal-test evaluation per (kernel set, seed), in that order.
std::vector<SweepRow> sweep_kernels(const ModelConfig& base, const std::vector<std::vector<std::size_t>>& kernel_sets,
                                    const TrainConfig& train_config, std::span<const std::uint64_t> seeds,
                                    const DatasetSplits& splits, const Vocabulary& vocab, const EmbeddingTable& table);

// Columns: kernels,seed,best_epoch,validation_accuracy,internal_test_accuracy. Kernels joined with '-'.
void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows);

struct BenchModel {
  std::string name;
  ModelConfig config;
};

struct BenchShape {
  std::size_t batch = 64;
  std::size_t seq_len = 16;
};

struct BenchRow {
  std::string model;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  double forward_tokens_per_second = 0.0;
  double train_tokens_per_second = 0.0;  // forward + backward
};

// Random embeddings and token ids; `warmup` untimed passes, then the median of `repeats` timed passes.
std::vector<BenchRow> benchmark_throughput(std::span<const BenchModel> models, std::span<const BenchShape> shapes,
                                           int repeats, int warmup = 2, std::size_t embedding_dim = 300,
                                           std::uint64_t seed = 1);

// Columns: model,batch,seq_len,forward_tokens_per_s,forward_backward_tokens_per_s.
void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows);

// A named (model, training) configuration. The built-in list mirrors configs/presets/*.json.
struct Preset {
  std::string name;
  std::string description;
  ModelConfig model;
  TrainConfig train;
};

const std::vector<Preset>& builtin_presets();
const Preset* find_builtin_preset(const std::string& name);
nlohmann::json to_json(const Preset& preset);
Preset preset_from_json(const nlohmann::json& j, const std::string& name);

// The kernel sets of the CNN kernel-size sweep: (2), (2,3), ..., (2,3,4,5,6).
std::vector<std::vector<std::size_t>> default_sweep_kernel_sets();

}  // namespace qclass
