#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

namespace qclass {

enum class LogRegLoss { Softmax, SigmoidOneVsRest };

struct LogRegConfig {
  LogRegLoss loss = LogRegLoss::Softmax;
  int classes = 6;
};

struct TextCnnConfig {
  std::vector<std::size_t> kernel_sizes = {2, 3, 4, 5, 6};
  std::size_t filters = 100;  // per kernel size
  int fc_layers = 1;          // 1 or 3
  double dropout = 0.5;
  int classes = 6;
};

struct BiLstmConfig {
  std::size_t layers = 2;
  std::size_t hidden = 150;  // per direction
  double dropout = 0.3;
  int classes = 6;
};

enum class QrnnPooling { F, FO };

struct QrnnConfig {
  std::size_t layers = 2;
  std::size_t filter_width = 2;
  std::size_t hidden = 256;
  double dropout = 0.3;
  QrnnPooling pooling = QrnnPooling::FO;
  int classes = 6;
};

struct ModelConfig {
  std::variant<LogRegConfig, TextCnnConfig, BiLstmConfig, QrnnConfig> arch;
  bool trainable_embeddings = false;

  // "logreg" | "textcnn" | "bilstm" | "qrnn"
  std::string type_name() const;
  int classes() const;
  // Smallest padded batch length the architecture accepts.
  std::size_t min_length() const;
  bool recurrent() const;
  // Overrides for the shared knobs; no-ops where an architecture lacks them.
  void set_dropout(double rate);
  void set_hidden(std::size_t width);
};

// Throws ConfigError naming the offending field.
void validate(const ModelConfig& config);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace qclass
