#pragma once

// Random small models and batches for property tests, plus closed-form parameter counts.

#include <random>
#include <string>
#include <vector>

#include "qclass/models.hpp"

namespace qclass::synth {

enum class Family { LogReg, CnnFc1, CnnFc3, BiLstm2, Qrnn2W2 };

inline const std::vector<Family>& all_families() {
  static const std::vector<Family> f = {Family::LogReg, Family::CnnFc1, Family::CnnFc3, Family::BiLstm2,
                                        Family::Qrnn2W2};
  return f;
}

inline std::string family_name(Family f) {
  switch (f) {
    case Family::LogReg: return "logreg";
    case Family::CnnFc1: return "cnn-fc1";
    case Family::CnnFc3: return "cnn-fc3";
    case Family::BiLstm2: return "bilstm-2";
    case Family::Qrnn2W2: return "qrnn-2l-w2";
  }
  return "?";
}

inline std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// A small random configuration of the family; dropout is non-zero so training-mode paths run.
inline ModelConfig small_config(Family f, Rng& rng) {
  switch (f) {
    case Family::LogReg: {
      LogRegConfig c;
      c.loss = draw(rng, 0, 3) == 0 ? LogRegLoss::SigmoidOneVsRest : LogRegLoss::Softmax;
      return {c};
    }
    case Family::CnnFc1:
    case Family::CnnFc3: {
      TextCnnConfig c;
      c.kernel_sizes.clear();
      for (std::size_t k = 1; k <= 4; ++k) {
        if (draw(rng, 0, 1) || (k == 4 && c.kernel_sizes.empty())) c.kernel_sizes.push_back(k);
      }
      c.filters = draw(rng, 2, 4);
      c.fc_layers = f == Family::CnnFc3 ? 3 : 1;
      if (c.fc_layers == 3) c.filters = std::max<std::size_t>(c.filters, 4);
      c.dropout = 0.3;
      return {c};
    }
    case Family::BiLstm2: {
      BiLstmConfig c;
      c.layers = 2;
      c.hidden = draw(rng, 1, 3);
      c.dropout = 0.3;
      return {c};
    }
    case Family::Qrnn2W2: {
      QrnnConfig c;
      c.layers = 2;
      c.filter_width = 2;
      c.hidden = draw(rng, 1, 4);
      c.dropout = 0.3;
      c.pooling = draw(rng, 0, 3) == 0 ? QrnnPooling::F : QrnnPooling::FO;
      return {c};
    }
  }
  return {};
}

// Row 0 (PAD) is zero, as in a loaded table.
template <class T>
Tensor<T> random_embeddings(std::size_t vocab, std::size_t dim, Rng& rng, double scale = 0.5) {
  Tensor<T> m({vocab, dim});
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t r = 1; r < vocab; ++r) {
    for (std::size_t c = 0; c < dim; ++c) m.at(r, c) = static_cast<T>(u(rng));
  }
  return m;
}

inline Batch random_batch(std::size_t batch, std::size_t max_len, std::size_t min_length, std::size_t vocab,
                          Rng& rng) {
  Batch b;
  for (std::size_t r = 0; r < batch; ++r) b.lengths.push_back(draw(rng, 1, max_len));
  std::size_t longest = 0;
  for (auto l : b.lengths) longest = std::max(longest, l);
  b.time = std::max(longest, min_length);
  b.indices.assign(batch * b.time, Vocabulary::pad_index);
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t t = 0; t < b.lengths[r]; ++t) {
      b.indices[r * b.time + t] = static_cast<std::int32_t>(draw(rng, 1, vocab - 1));
    }
    b.labels.push_back(static_cast<int>(draw(rng, 0, kNumClasses - 1)));
  }
  return b;
}

// Trainable scalar count derived from the configuration alone.
inline std::size_t expected_parameter_count(const ModelConfig& config, std::size_t dim, std::size_t vocab) {
  const std::size_t C = static_cast<std::size_t>(config.classes());
  std::size_t n = config.trainable_embeddings ? vocab * dim : 0;
  if (std::holds_alternative<LogRegConfig>(config.arch)) return n + dim * C + C;
  if (const auto* c = std::get_if<TextCnnConfig>(&config.arch)) {
    for (std::size_t k : c->kernel_sizes) n += c->filters * k * dim + c->filters;
    const std::size_t F = c->filters * c->kernel_sizes.size();
    if (c->fc_layers == 1) return n + F * C + C;
    const std::size_t F2 = F / 2, F4 = F2 / 2;
    return n + F * F2 + F2 + F2 * F4 + F4 + F4 * C + C;
  }
  if (const auto* c = std::get_if<BiLstmConfig>(&config.arch)) {
    const std::size_t H = c->hidden;
    for (std::size_t l = 0; l < c->layers; ++l) {
      const std::size_t in = l == 0 ? dim : 2 * H;
      n += 2 * (in * 4 * H + H * 4 * H + 4 * H);
    }
    return n + 2 * H * C + C;
  }
  const auto& c = std::get<QrnnConfig>(config.arch);
  const std::size_t gates = c.pooling == QrnnPooling::FO ? 3 : 2;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::size_t in = l == 0 ? dim : c.hidden;
    n += gates * (c.hidden * c.filter_width * in + c.hidden);
  }
  return n + c.hidden * C + C;
}

}  // namespace qclass::synth
