#include "qclass/model_config.hpp"

#include <algorithm>
#include <set>

#include "qclass/errors.hpp"

namespace qclass {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

std::string ModelConfig::type_name() const {
  return std::visit(Overloaded{[](const LogRegConfig&) { return std::string("logreg"); },
                               [](const TextCnnConfig&) { return std::string("textcnn"); },
                               [](const BiLstmConfig&) { return std::string("bilstm"); },
                               [](const QrnnConfig&) { return std::string("qrnn"); }},
                    arch);
}

int ModelConfig::classes() const {
  return std::visit([](const auto& c) { return c.classes; }, arch);
}

std::size_t ModelConfig::min_length() const {
  return std::visit(Overloaded{[](const LogRegConfig&) -> std::size_t { return 1; },
                               [](const TextCnnConfig& c) -> std::size_t {
                                 return c.kernel_sizes.empty()
                                            ? 1
                                            : *std::max_element(c.kernel_sizes.begin(), c.kernel_sizes.end());
                               },
                               [](const BiLstmConfig&) -> std::size_t { return 1; },
                               [](const QrnnConfig& c) -> std::size_t { return std::max<std::size_t>(1, c.filter_width); }},
                    arch);
}

bool ModelConfig::recurrent() const {
  return std::holds_alternative<BiLstmConfig>(arch) || std::holds_alternative<QrnnConfig>(arch);
}

void ModelConfig::set_dropout(double rate) {
  std::visit(Overloaded{[](LogRegConfig&) {}, [rate](auto& c) { c.dropout = rate; }}, arch);
}

void ModelConfig::set_hidden(std::size_t width) {
  std::visit(Overloaded{[](LogRegConfig&) {}, [width](TextCnnConfig& c) { c.filters = width; },
                        [width](BiLstmConfig& c) { c.hidden = width; }, [width](QrnnConfig& c) { c.hidden = width; }},
             arch);
}

namespace {

void check_dropout(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("field 'dropout' must lie in [0, 1)");
}

void check_classes(int classes) {
  if (classes < 2) throw ConfigError("field 'classes' must be at least 2");
}

}  // namespace

void validate(const ModelConfig& config) {
  std::visit(Overloaded{
                 [](const LogRegConfig& c) { check_classes(c.classes); },
                 [](const TextCnnConfig& c) {
                   check_classes(c.classes);
                   check_dropout(c.dropout);
                   if (c.kernel_sizes.empty()) throw ConfigError("field 'kernel_sizes' must not be empty");
                   std::set<std::size_t> seen;
                   for (std::size_t k : c.kernel_sizes) {
                     if (k == 0) throw ConfigError("field 'kernel_sizes' entries must be at least 1");
                     if (!seen.insert(k).second) throw ConfigError("field 'kernel_sizes' entries must be distinct");
                   }
                   if (c.filters == 0) throw ConfigError("field 'filters' must be at least 1");
                   if (c.fc_layers != 1 && c.fc_layers != 3) throw ConfigError("field 'fc_layers' must be 1 or 3");
                   if (c.fc_layers == 3 && c.filters * c.kernel_sizes.size() < 4) {
                     throw ConfigError("field 'filters' too small for a 3-layer head (feature width must be >= 4)");
                   }
                 },
                 [](const BiLstmConfig& c) {
                   check_classes(c.classes);
                   check_dropout(c.dropout);
                   if (c.layers == 0) throw ConfigError("field 'layers' must be at least 1");
                   if (c.hidden == 0) throw ConfigError("field 'hidden' must be at least 1");
                 },
                 [](const QrnnConfig& c) {
                   check_classes(c.classes);
                   check_dropout(c.dropout);
                   if (c.layers != 1 && c.layers != 2) throw ConfigError("field 'layers' must be 1 or 2");
                   if (c.filter_width != 1 && c.filter_width != 2) {
                     throw ConfigError("field 'filter_width' must be 1 or 2");
                   }
                   if (c.hidden == 0) throw ConfigError("field 'hidden' must be at least 1");
                 }},
             config.arch);
}

nlohmann::json to_json(const ModelConfig& config) {
  nlohmann::json j = std::visit(
      Overloaded{[](const LogRegConfig& c) {
                   return nlohmann::json{{"loss", c.loss == LogRegLoss::Softmax ? "softmax" : "sigmoid"},
                                         {"classes", c.classes}};
                 },
                 [](const TextCnnConfig& c) {
                   return nlohmann::json{{"kernel_sizes", c.kernel_sizes},
                                         {"filters", c.filters},
                                         {"fc_layers", c.fc_layers},
                                         {"dropout", c.dropout},
                                         {"classes", c.classes}};
                 },
                 [](const BiLstmConfig& c) {
                   return nlohmann::json{
                       {"layers", c.layers}, {"hidden", c.hidden}, {"dropout", c.dropout}, {"classes", c.classes}};
                 },
                 [](const QrnnConfig& c) {
                   return nlohmann::json{{"layers", c.layers},
                                         {"filter_width", c.filter_width},
                                         {"hidden", c.hidden},
                                         {"dropout", c.dropout},
                                         {"pooling", c.pooling == QrnnPooling::FO ? "fo" : "f"},
                                         {"classes", c.classes}};
                 }},
      config.arch);
  j["type"] = config.type_name();
  j["trainable_embeddings"] = config.trainable_embeddings;
  return j;
}

namespace {

// Strict field reader: every key must be consumed, types are checked, errors name the field.
class Fields {
 public:
  explicit Fields(const nlohmann::json& j) : j_(j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  }

  template <class V>
  void read(const char* key, V& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      const auto& v = j_.at(key);
      if constexpr (std::is_same_v<V, std::size_t> || std::is_same_v<V, int>) {
        if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("");
      } else if constexpr (std::is_same_v<V, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<V, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.template get<V>();
    } catch (const std::exception&) {
      throw ConfigError("field '" + std::string(key) + "' has the wrong type");
    }
  }

  void read_sizes(const char* key, std::vector<std::size_t>& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError("field '" + std::string(key) + "' must be an array of integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < 0) {
        throw ConfigError("field '" + std::string(key) + "' must be an array of non-negative integers");
      }
      out.push_back(e.get<std::size_t>());
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown field '" + key + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::set<std::string> used_;
};

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j) {
  Fields f(j);
  std::string type;
  f.read("type", type);
  if (type.empty()) throw ConfigError("field 'type' is required (logreg | textcnn | bilstm | qrnn)");
  ModelConfig config;
  f.read("trainable_embeddings", config.trainable_embeddings);
  if (type == "logreg") {
    LogRegConfig c;
    std::string loss = "softmax";
    f.read("loss", loss);
    if (loss == "softmax") {
      c.loss = LogRegLoss::Softmax;
    } else if (loss == "sigmoid") {
      c.loss = LogRegLoss::SigmoidOneVsRest;
    } else {
      throw ConfigError("field 'loss' must be \"softmax\" or \"sigmoid\"");
    }
    f.read("classes", c.classes);
    config.arch = c;
  } else if (type == "textcnn") {
    TextCnnConfig c;
    f.read_sizes("kernel_sizes", c.kernel_sizes);
    f.read("filters", c.filters);
    f.read("fc_layers", c.fc_layers);
    f.read("dropout", c.dropout);
    f.read("classes", c.classes);
    std::sort(c.kernel_sizes.begin(), c.kernel_sizes.end());
    config.arch = c;
  } else if (type == "bilstm") {
    BiLstmConfig c;
    f.read("layers", c.layers);
    f.read("hidden", c.hidden);
    f.read("dropout", c.dropout);
    f.read("classes", c.classes);
    config.arch = c;
  } else if (type == "qrnn") {
    QrnnConfig c;
    std::string pooling = "fo";
    f.read("layers", c.layers);
    f.read("filter_width", c.filter_width);
    f.read("hidden", c.hidden);
    f.read("dropout", c.dropout);
    f.read("pooling", pooling);
    f.read("classes", c.classes);
    if (pooling == "fo") {
      c.pooling = QrnnPooling::FO;
    } else if (pooling == "f") {
      c.pooling = QrnnPooling::F;
    } else {
      throw ConfigError("field 'pooling' must be \"f\" or \"fo\"");
    }
    config.arch = c;
  } else {
    throw ConfigError("field 'type' has unknown value '" + type + "'");
  }
  f.finish();
  validate(config);
  return config;
}

}  // namespace qclass
