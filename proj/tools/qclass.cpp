// qclass: prepare | train | eval | sweep | bench | predict
//
// Exit codes: 0 success, 2 usage/config/format error, 3 data error, 4 numerical divergence.
// Config precedence (lowest first): preset, --config file, --train-config file, command-line flags.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "qclass/errors.hpp"
#include "qclass/kernels.hpp"
#include "qclass/ops.hpp"
#include "qclass/pipeline.hpp"
#include "qclass/training.hpp"

namespace fs = std::filesystem;
using namespace qclass;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

fs::path preset_dir() {
  if (const char* env = std::getenv("QCLASS_PRESET_DIR")) return env;
#ifdef QCLASS_PRESET_DIR
  return QCLASS_PRESET_DIR;
#else
  return "configs/presets";
#endif
}

Preset resolve_preset(const std::string& name) {
  const fs::path file = preset_dir() / (name + ".json");
  if (fs::exists(file)) return preset_from_json(read_json_file(file), name);
  if (const Preset* p = find_builtin_preset(name)) return *p;
  std::string known;
  for (const auto& p : builtin_presets()) known += " " + p.name;
  throw ConfigError("unknown preset '" + name + "' (known:" + known + ")");
}

// Shared model/training options.
struct RunFlags {
  std::string preset;
  std::string config;
  std::string train_config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<double> dropout;
  std::optional<std::size_t> hidden;
  std::optional<int> patience;
  std::optional<std::size_t> batch_size;

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Named preset (configs/presets/<name>.json or built-in)");
    cmd->add_option("--config", config, "Model config JSON, or a preset-format file with model/train keys");
    cmd->add_option("--train-config", train_config, "Training config JSON");
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--epochs", epochs, "Epoch budget");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--dropout", dropout, "Dropout override");
    cmd->add_option("--hidden", hidden, "Hidden width / filter count override");
    cmd->add_option("--patience", patience, "Early-stop patience (<= 0 disables)");
    cmd->add_option("--batch-size", batch_size, "Batch size");
  }

  Preset resolve(const std::string& fallback_preset) const {
    Preset p;
    if (!preset.empty()) {
      p = resolve_preset(preset);
    } else if (config.empty()) {
      p = resolve_preset(fallback_preset);
    }
    if (!config.empty()) {
      const nlohmann::json j = read_json_file(config);
      if (j.is_object() && j.contains("model")) {
        p = preset_from_json(j, fs::path(config).stem().string());
      } else {
        p.model = model_config_from_json(j);
        p.name = fs::path(config).stem().string();
      }
    }
    if (!train_config.empty()) p.train = train_config_from_json(read_json_file(train_config));
    if (seed) p.train.seed = *seed;
    if (epochs) p.train.epochs = *epochs;
    if (lr) p.train.lr = *lr;
    if (dropout) p.train.dropout = *dropout;
    if (hidden) p.train.hidden = *hidden;
    if (patience) p.train.patience = *patience;
    if (batch_size) p.train.batch_size = *batch_size;
    validate(p.train);
    p.model = apply_overrides(p.model, p.train);
    return p;
  }

  std::vector<std::string> config_paths() const {
    std::vector<std::string> out;
    if (!config.empty()) out.push_back(config);
    if (!train_config.empty()) out.push_back(train_config);
    return out;
  }
};

RunManifest begin_manifest(const std::string& command, const std::vector<std::string>& argv) {
  RunManifest m;
  m.command = command;
  m.argv = argv;
  m.git_revision = git_revision();
  m.started_at = utc_timestamp();
  return m;
}

void record_prepared_inputs(RunManifest& m, const fs::path& data_dir, const PreparedData& data) {
  for (const auto& [name, sum] : data.manifest.output_checksums) m.input_checksums[(data_dir / name).string()] = sum;
  for (const auto& [name, sum] : data.manifest.input_checksums) m.input_checksums["source:" + name] = sum;
}

void finish_manifest(RunManifest& m, const fs::path& path) {
  m.finished_at = utc_timestamp();
  m.write(path);
}

fs::path manifest_dir(const std::string& out_dir, const fs::path& fallback) {
  const fs::path dir = out_dir.empty() ? fallback : fs::path(out_dir);
  fs::create_directories(dir);
  return dir;
}

const std::vector<LabeledQuestion>& select_split(const DatasetSplits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "validation" || name == "val") return s.validation;
  if (name == "internal_test" || name == "internal") return s.internal_test;
  if (name == "test" || name == "official_test") return s.official_test;
  throw ConfigError("unknown split '" + name + "' (train | validation | internal_test | test)");
}

std::vector<std::vector<std::size_t>> parse_kernel_sets(const std::string& text) {
  std::vector<std::vector<std::size_t>> sets;
  std::stringstream outer(text);
  std::string group;
  while (std::getline(outer, group, ';')) {
    std::vector<std::size_t> ks;
    std::stringstream inner(group);
    std::string item;
    while (std::getline(inner, item, ',')) {
      try {
        ks.push_back(std::stoul(item));
      } catch (const std::exception&) {
        throw ConfigError("bad kernel size '" + item + "' in --kernel-sets");
      }
    }
    if (ks.empty()) throw ConfigError("empty kernel set in --kernel-sets");
    sets.push_back(ks);
  }
  return sets;
}

BenchShape parse_shape(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument("");
    return {std::stoul(text.substr(0, x)), std::stoul(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("bad --shape '" + text + "' (expected BATCHxSEQ_LEN, e.g. 64x32)");
  }
}

void write_csv_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

int run(int argc, char** argv) {
  CLI::App app{"Question classification on TREC: data preparation, training, evaluation, sweep, benchmark"};
  app.require_subcommand(1);
  app.fallthrough();
  std::vector<std::string> args(argv, argv + argc);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP worker threads (0 = default)")->check(CLI::NonNegativeNumber);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Tokenize, split, build the vocabulary and embedding cache");
  std::string p_data_dir, p_train, p_test, p_glove, p_out = "data/prepared";
  PrepareOptions popt;
  prepare->add_option("--data-dir", p_data_dir, "Directory holding train_5500.label and TREC_10.label");
  prepare->add_option("--train", p_train, "TREC training label file");
  prepare->add_option("--test", p_test, "TREC test label file");
  prepare->add_option("--glove", p_glove, "GloVe text file")->required();
  prepare->add_option("--dim", popt.dim, "Embedding dimension")->check(CLI::PositiveNumber);
  prepare->add_option("--out-dir", p_out, "Output directory");
  prepare->add_option("--seed", popt.seed, "Split / UNK-vector seed");
  prepare->add_flag("--lowercase", popt.lowercase, "Lowercase tokens");
  prepare->add_flag("--force", popt.force, "Overwrite an existing preparation with different inputs");
  prepare->add_option("--validation-size", popt.sizes.validation, "Validation examples");
  prepare->add_option("--internal-test-size", popt.sizes.internal_test, "Internal test examples");
  prepare->add_option("--min-total", popt.sizes.min_total, "Minimum training-file size");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes model.ckpt, run_record.json, manifest.json");
  RunFlags t_flags;
  std::string t_data = "data/prepared", t_out = "runs/latest";
  train_cmd->add_option("--data-dir", t_data, "Prepared data directory");
  train_cmd->add_option("--out-dir", t_out, "Run output directory");
  t_flags.attach(train_cmd);
  bool t_quiet = false;
  train_cmd->add_flag("--quiet", t_quiet, "No per-epoch progress");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and confusion matrix of a checkpoint");
  std::string e_ckpt, e_data = "data/prepared", e_split = "test", e_out;
  eval_cmd->add_option("--checkpoint", e_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data-dir", e_data, "Prepared data directory");
  eval_cmd->add_option("--split", e_split, "train | validation | internal_test | test");
  eval_cmd->add_option("--out-dir", e_out, "Where to write eval_manifest.json (default: checkpoint directory)");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "CNN kernel-size sweep on the internal test split (CSV)");
  RunFlags s_flags;
  std::string s_data = "data/prepared", s_out = "runs/sweep", s_sets, s_seeds;
  sweep_cmd->add_option("--data-dir", s_data, "Prepared data directory");
  sweep_cmd->add_option("--out-dir", s_out, "Output directory (sweep.csv, manifest.json)");
  sweep_cmd->add_option("--kernel-sets", s_sets, "e.g. \"2;2,3;2,3,4\" (default: the five standard sets)");
  sweep_cmd->add_option("--seeds", s_seeds, "Comma-separated seeds (default: --seed)");
  s_flags.attach(sweep_cmd);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Forward and forward+backward throughput (CSV)");
  std::vector<std::string> b_models, b_shapes;
  std::string b_out = "runs/bench";
  int b_repeats = 5, b_warmup = 2;
  std::size_t b_dim = 300;
  std::uint64_t b_seed = 1;
  bench_cmd->add_option("--model", b_models, "Preset name or model config path (repeatable)");
  bench_cmd->add_option("--shape", b_shapes, "BATCHxSEQ_LEN (repeatable)");
  bench_cmd->add_option("--repeats", b_repeats, "Timed repeats")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--warmup", b_warmup, "Untimed warm-up passes")->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--dim", b_dim, "Embedding dimension")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", b_seed, "Seed for weights and inputs");
  bench_cmd->add_option("--out-dir", b_out, "Output directory (bench.csv, manifest.json)");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Classify questions read from stdin, one per line");
  std::string pr_ckpt, pr_data = "data/prepared", pr_out;
  predict_cmd->add_option("--checkpoint", pr_ckpt, "Checkpoint file")->required();
  predict_cmd->add_option("--data-dir", pr_data, "Prepared data directory");
  predict_cmd->add_option("--out-dir", pr_out, "Where to write predict_manifest.json (default: checkpoint directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  if (threads > 0) kernels::parallel::set_threads(threads);

  if (*prepare) {
    if (p_train.empty() && !p_data_dir.empty()) p_train = (fs::path(p_data_dir) / "train_5500.label").string();
    if (p_test.empty() && !p_data_dir.empty()) p_test = (fs::path(p_data_dir) / "TREC_10.label").string();
    if (p_train.empty() || p_test.empty()) throw ConfigError("prepare needs --data-dir or both --train and --test");
    popt.train_file = p_train;
    popt.test_file = p_test;
    popt.glove_file = p_glove;
    popt.out_dir = p_out;
    const PrepareOutcome outcome = prepare_dataset(popt, args);
    if (outcome.cache_hit) {
      std::cout << "cache hit: " << p_out << " is up to date\n";
    } else {
      std::cout << "prepared " << p_out << ": " << outcome.manifest.extra["counts"].dump() << '\n';
    }
    return 0;
  }

  if (*train_cmd) {
    const Preset preset = t_flags.resolve("cnn-23456-fc1");
    const PreparedData data = load_prepared(t_data);
    fs::create_directories(t_out);
    RunManifest m = begin_manifest("train", args);
    m.config_paths = t_flags.config_paths();
    m.seed = preset.train.seed;
    record_prepared_inputs(m, t_data, data);
    m.extra = {{"preset", preset.name}, {"model", to_json(preset.model)}, {"train", to_json(preset.train)}};
    m.write(fs::path(t_out) / kManifestFile);  // before training starts

    TrainResult result = train(preset.model, preset.train, data.splits, data.vocab, data.table,
                               [&](const EpochStats& e) {
                                 if (t_quiet) return;
                                 std::cerr << "epoch " << e.epoch << "  loss " << e.train_loss << "  train_acc "
                                           << e.train_accuracy << "  val_acc " << e.validation_accuracy << '\n';
                               });
    const fs::path ckpt = fs::path(t_out) / "model.ckpt";
    save_model(ckpt, *result.model);
    {
      std::ofstream os(fs::path(t_out) / "run_record.json");
      os << result.record.to_json().dump(2) << '\n';
    }
    m.output_checksums = {{"model.ckpt", sha256_file(ckpt)},
                          {"model.ckpt.json", sha256_file(ckpt.string() + ".json")},
                          {"run_record.json", sha256_file(fs::path(t_out) / "run_record.json")}};
    finish_manifest(m, fs::path(t_out) / kManifestFile);
    std::cout << "best epoch " << result.record.best_epoch << ", validation accuracy "
              << result.record.best_validation_accuracy;
    if (result.record.test_accuracy) std::cout << ", test accuracy " << *result.record.test_accuracy;
    std::cout << "\ncheckpoint: " << ckpt.string() << '\n';
    return 0;
  }

  if (*eval_cmd) {
    const PreparedData data = load_prepared(e_data);
    RunManifest m = begin_manifest("eval", args);
    record_prepared_inputs(m, e_data, data);
    m.input_checksums[e_ckpt] = sha256_file(e_ckpt);
    auto model = load_model(e_ckpt, data.table);
    const auto& split = select_split(data.splits, e_split);
    if (split.empty()) throw DataError("split '" + e_split + "' is empty");
    const EvalResult r = evaluate(*model, split, data.vocab);
    print_evaluation(std::cout, r);
    m.extra = {{"split", e_split}, {"accuracy", r.accuracy}, {"confusion", r.confusion}};
    finish_manifest(m, manifest_dir(e_out, fs::path(e_ckpt).parent_path()) / "eval_manifest.json");
    return 0;
  }

  if (*sweep_cmd) {
    Preset base = s_flags.resolve("cnn-23456-fc1");
    const PreparedData data = load_prepared(s_data);
    const auto sets = s_sets.empty() ? default_sweep_kernel_sets() : parse_kernel_sets(s_sets);
    std::vector<std::uint64_t> seeds;
    if (s_seeds.empty()) {
      seeds.push_back(base.train.seed);
    } else {
      std::stringstream ss(s_seeds);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          seeds.push_back(std::stoull(item));
        } catch (const std::exception&) {
          throw ConfigError("bad seed '" + item + "' in --seeds");
        }
      }
    }
    fs::create_directories(s_out);
    RunManifest m = begin_manifest("sweep", args);
    m.config_paths = s_flags.config_paths();
    m.seed = base.train.seed;
    record_prepared_inputs(m, s_data, data);
    m.extra = {{"base", to_json(base)}, {"kernel_sets", sets}, {"seeds", seeds}};
    m.write(fs::path(s_out) / kManifestFile);
    const auto rows = sweep_kernels(base.model, sets, base.train, seeds, data.splits, data.vocab, data.table);
    std::ostringstream csv;
    write_sweep_csv(csv, rows);
    write_csv_file(fs::path(s_out) / "sweep.csv", csv.str());
    std::cout << csv.str();
    m.output_checksums = {{"sweep.csv", sha256_file(fs::path(s_out) / "sweep.csv")}};
    finish_manifest(m, fs::path(s_out) / kManifestFile);
    return 0;
  }

  if (*bench_cmd) {
    if (b_models.empty()) b_models = {"qrnn-2l-w2", "bilstm-2", "cnn-23456-fc1"};
    if (b_shapes.empty()) b_shapes = {"64x16", "64x64"};
    std::vector<BenchModel> models;
    for (const auto& name : b_models) {
      if (fs::exists(name)) {
        const nlohmann::json j = read_json_file(name);
        const ModelConfig config =
            j.contains("model") ? preset_from_json(j, name).model : model_config_from_json(j);
        models.push_back({fs::path(name).stem().string(), config});
      } else {
        models.push_back({name, resolve_preset(name).model});
      }
    }
    std::vector<BenchShape> shapes;
    for (const auto& s : b_shapes) shapes.push_back(parse_shape(s));
    fs::create_directories(b_out);
    RunManifest m = begin_manifest("bench", args);
    m.seed = b_seed;
    m.extra = {{"threads", kernels::parallel::max_threads()}, {"repeats", b_repeats}, {"warmup", b_warmup}, {"dim", b_dim}};
    m.write(fs::path(b_out) / kManifestFile);
    const auto rows = benchmark_throughput(models, shapes, b_repeats, b_warmup, b_dim, b_seed);
    std::ostringstream csv;
    write_bench_csv(csv, rows);
    write_csv_file(fs::path(b_out) / "bench.csv", csv.str());
    std::cout << csv.str();
    m.output_checksums = {{"bench.csv", sha256_file(fs::path(b_out) / "bench.csv")}};
    finish_manifest(m, fs::path(b_out) / kManifestFile);
    return 0;
  }

  if (*predict_cmd) {
    const PreparedData data = load_prepared(pr_data);
    RunManifest m = begin_manifest("predict", args);
    record_prepared_inputs(m, pr_data, data);
    m.input_checksums[pr_ckpt] = sha256_file(pr_ckpt);
    auto model = load_model(pr_ckpt, data.table);
    Rng unused(0);
    std::string line;
    std::size_t count = 0;
    std::cout << std::fixed << std::setprecision(6);
    while (std::getline(std::cin, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      LabeledQuestion q;
      q.tokens = tokenize(line, data.tokenizer);
      const Batch batch = make_batch(std::span<const LabeledQuestion>(&q, 1), data.vocab, model->config().min_length());
      Tape<float> tape(false);
      const Tensor<float> logits = model->forward(tape, batch, false, unused)->tensor;
      const Tensor<float> probs = ops::softmax(logits);
      std::cout << kLabelNames[static_cast<std::size_t>(predict(logits)[0])];
      for (int c = 0; c < kNumClasses; ++c) std::cout << ' ' << kLabelNames[c] << '=' << probs.at(0, c);
      std::cout << '\n';
      ++count;
    }
    m.extra = {{"questions", count}};
    finish_manifest(m, manifest_dir(pr_out, fs::path(pr_ckpt).parent_path()) / "predict_manifest.json");
    return 0;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
