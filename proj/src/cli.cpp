#include "acnn/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>

#include "acnn/binary_io.hpp"
#include "acnn/checkpoint.hpp"
#include "acnn/saliency.hpp"

namespace acnn {

namespace {

using nlohmann::json;

// Reads known keys from one JSON object and rejects anything else.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorCode::BadConfig, where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& value) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      value = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::BadConfig, where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.contains(key)) throw Error(ErrorCode::BadConfig, "unknown key " + where_ + "." + key);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename T>
void require_non_negative(const json& j, const char* key) {
  if (j.contains(key) && j.at(key).is_number_integer() && j.at(key).get<long long>() < 0) {
    throw Error(ErrorCode::BadConfig, std::string(key) + " must not be negative");
  }
}

}  // namespace

void RunConfig::validate() const {
  if (dataset != "cifar10" && dataset != "cifar100") {
    throw Error(ErrorCode::BadConfig, "dataset must be cifar10 or cifar100");
  }
  if ((dataset == "cifar10" && classes != 10) || (dataset == "cifar100" && classes != 100)) {
    throw Error(ErrorCode::BadConfig, "class count does not match the dataset");
  }
  if (!(input_dropout >= 0.0 && input_dropout < 1.0) || !(hidden_dropout >= 0.0 && hidden_dropout < 1.0)) {
    throw Error(ErrorCode::BadRate, "dropout rates must be in [0, 1)");
  }
  if (!(preprocess.gcn_eps > 0.0) || !(preprocess.zca_eps_relative >= 0.0)) {
    throw Error(ErrorCode::BadConfig, "preprocessing epsilons must be positive");
  }
  train.validate();
  make_model(*this);
}

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("config is not valid JSON: ") + e.what());
  }
  for (const char* key : {"classes", "seed", "n_train", "n_test"}) require_non_negative<long long>(j, key);
  RunConfig c;
  ObjectReader top(j, "config");
  std::string data_dir = c.data_dir.string(), out_dir = c.out_dir.string();
  top.get("arch", c.arch);
  top.get("scale", c.scale);
  top.get("classes", c.classes);
  top.get("dataset", c.dataset);
  top.get("data_dir", data_dir);
  top.get("out_dir", out_dir);
  top.get("seed", c.seed);
  top.get("n_train", c.n_train);
  top.get("n_test", c.n_test);
  c.data_dir = data_dir;
  c.out_dir = out_dir;
  if (const json* d = top.child("dropout")) {
    ObjectReader r(*d, "dropout");
    r.get("input", c.input_dropout);
    r.get("hidden", c.hidden_dropout);
    r.finish();
  }
  if (const json* p = top.child("preprocess")) {
    ObjectReader r(*p, "preprocess");
    r.get("gcn", c.preprocess.gcn);
    r.get("gcn_eps", c.preprocess.gcn_eps);
    r.get("zca", c.preprocess.zca);
    r.get("zca_eps_relative", c.preprocess.zca_eps_relative);
    r.finish();
  }
  if (const json* t = top.child("train")) {
    for (const char* key : {"epochs", "batch"}) require_non_negative<long long>(*t, key);
    ObjectReader r(*t, "train");
    r.get("epochs", c.train.epochs);
    r.get("batch", c.train.batch);
    r.get("lr", c.train.schedule.base_lr);
    r.get("lr_factor", c.train.schedule.factor);
    r.get("milestones", c.train.schedule.milestones);
    r.get("momentum", c.train.momentum);
    r.get("weight_decay", c.train.weight_decay);
    r.get("augment", c.train.augment);
    r.finish();
  }
  top.finish();
  c.train.seed = c.seed;
  return c;
}

std::string dump_run_config(const RunConfig& c) {
  json j = {
      {"arch", c.arch},
      {"scale", c.scale},
      {"classes", c.classes},
      {"dataset", c.dataset},
      {"data_dir", c.data_dir.string()},
      {"out_dir", c.out_dir.string()},
      {"seed", c.seed},
      {"n_train", c.n_train},
      {"n_test", c.n_test},
      {"dropout", {{"input", c.input_dropout}, {"hidden", c.hidden_dropout}}},
      {"preprocess",
       {{"gcn", c.preprocess.gcn},
        {"gcn_eps", c.preprocess.gcn_eps},
        {"zca", c.preprocess.zca},
        {"zca_eps_relative", c.preprocess.zca_eps_relative}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch", c.train.batch},
        {"lr", c.train.schedule.base_lr},
        {"lr_factor", c.train.schedule.factor},
        {"milestones", c.train.schedule.milestones},
        {"momentum", c.train.momentum},
        {"weight_decay", c.train.weight_decay},
        {"augment", c.train.augment}}},
  };
  return j.dump(2) + "\n";
}

Model make_model(const RunConfig& config) {
  const Model base = build_architecture(config.arch, config.classes, config.scale);
  std::vector<LayerSpec> layers = base.layers();
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::Dropout) layers[i].rate = i == 0 ? config.input_dropout : config.hidden_dropout;
  const Dims in = base.input_dims();
  Model model(base.arch_id(), in.channels, in.height, in.width, std::move(layers));
  Rng rng = Rng(config.seed).split(0);
  initialize_weights(model, rng);
  return model;
}

std::filesystem::path cifar10_dir(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("ACNK_CIFAR10_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

namespace {

std::pair<Dataset, Dataset> load_dataset(const std::string& dataset, const std::filesystem::path& dir) {
  if (dataset == "cifar10") return load_cifar10(dir);
  if (dataset == "cifar100") return load_cifar100(dir);
  throw Error(ErrorCode::BadConfig, "unknown dataset " + dataset);
}

Dataset take_first(const Dataset& d, std::size_t n) { return n == 0 || n >= d.size() ? d : d.slice(0, n); }

std::string read_text(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

int run_train(const std::filesystem::path& config_path, std::optional<std::uint64_t> seed,
              std::optional<std::string> out_dir, std::ostream& out, std::ostream& err) {
  RunConfig config = parse_run_config(read_text(config_path));
  if (seed) config.seed = config.train.seed = *seed;
  if (out_dir) config.out_dir = *out_dir;
  config.validate();

  auto [train_full, test_full] = load_dataset(config.dataset, config.data_dir);
  const Dataset train_raw = take_first(train_full, config.n_train);
  const Dataset test_raw = take_first(test_full, config.n_test);
  err << "loaded " << train_raw.size() << " training and " << test_raw.size() << " test images\n";
  const PreprocStats stats = fit_preprocessing(train_raw, config.preprocess);
  const Dataset train_set = apply_preprocessing(stats, train_raw);
  const Dataset test_set = apply_preprocessing(stats, test_raw);

  std::filesystem::create_directories(config.out_dir);
  write_text_atomic(config.out_dir / "config.json", dump_run_config(config));
  save_preproc_stats(stats, config.out_dir / "preproc.stats");
  Model model = make_model(config);
  err << model.arch_id() << ": " << count_parameters(model) << " parameters\n";

  std::vector<EpochMetrics> rows;
  const auto on_epoch = [&](const EpochMetrics& m, const Model&) {
    rows.push_back(m);
    write_metrics_csv(rows, config.out_dir / "metrics.csv");
    err << "epoch " << m.epoch << " lr " << m.lr << " loss " << m.train_loss << " test error " << m.test_error
        << "\n";
  };
  train(model, train_set, &test_set, config.train, on_epoch);
  write_metrics_csv(rows, config.out_dir / "metrics.csv");
  save_checkpoint(model, config.out_dir / "model.acnk");
  out << (rows.empty() ? evaluate(model, test_set) : rows.back().test_error) << "\n";
  return 0;
}

Dataset load_eval_split(const std::string& dataset, const std::filesystem::path& dir, std::size_t n,
                        const std::optional<std::string>& stats_path, std::ostream& err) {
  Dataset test = take_first(load_dataset(dataset, dir).second, n);
  if (stats_path) return apply_preprocessing(load_preproc_stats(*stats_path), test);
  err << "warning: no preprocessing stats given; using raw pixels\n";
  return test;
}

int run_visualize(const std::filesystem::path& checkpoint, const std::string& rule_name, std::size_t layer,
                  std::size_t channel, bool switches, const std::optional<std::string>& data_dir,
                  const std::optional<std::string>& stats_path, const std::string& dataset, std::size_t n,
                  std::size_t top, const std::filesystem::path& out_dir, std::ostream& err) {
  const SaliencyRule rule = parse_saliency_rule(rule_name);
  const Model model = load_checkpoint(checkpoint);
  std::filesystem::create_directories(out_dir);
  const char* ext = model.input_dims().channels == 3 ? ".ppm" : ".pgm";
  const std::string file = std::string("visualization") + ext;
  const std::string neuron_id = "layer" + std::to_string(layer) + ":channel" + std::to_string(channel);
  std::vector<ManifestEntry> manifest;
  if (!data_dir) {
    const Reconstruction<float> r = reconstruct<float>(model, nullptr, NeuronRef::max_position(layer, channel), rule,
                                                       switches);
    render_visualization(std::span(&r.image, 1), {}, 1, out_dir / file);
    manifest.push_back({neuron_id, std::nullopt, 0.0, file});
  } else {
    const Dataset data = load_eval_split(dataset, *data_dir, n, stats_path, err);
    const std::vector<Patch> patches = top_activating_patches(model, data, layer, channel, top);
    std::vector<FeatureMap> maps, crops;
    for (const Patch& p : patches) {
      const FeatureMap image = data.images.sample(p.image);
      maps.push_back(reconstruct(model, &image, NeuronRef::at(layer, channel, p.row, p.col), rule, switches).image);
      crops.push_back(p.crop);
      manifest.push_back({neuron_id + ":" + std::to_string(p.row) + "," + std::to_string(p.col), p.image,
                          p.activation, file});
    }
    render_visualization(maps, crops, std::min<std::size_t>(maps.size(), 10), out_dir / file);
  }
  write_manifest(manifest, out_dir / "manifest.csv");
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"All-convolutional network toolkit", "acnn"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, data_dir, out_path, arch, rule = "guided", dataset = "cifar10";
  std::optional<std::string> stats_path, vis_data;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_override;
  std::size_t layer = 0, channel = 0, n = 0, top = 9, classes = 10;
  double scale = 1.0;
  bool switches = false, no_gcn = false, no_zca = false;

  auto* train_cmd = app.add_subcommand("train", "Train a network from a JSON run config");
  train_cmd->add_option("--config", config_path, "Run config file")->required();
  train_cmd->add_option("--seed", seed, "Override the config seed");
  train_cmd->add_option("--out", out_override, "Override the output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Test-split error rate of a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--stats", stats_path, "Preprocessing stats from training");
  eval_cmd->add_option("--dataset", dataset, "cifar10 or cifar100");
  eval_cmd->add_option("--n", n, "Use only the first N test images");

  auto* vis_cmd = app.add_subcommand("visualize", "Reconstruct a neuron back to image space");
  vis_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  vis_cmd->add_option("--rule", rule, "backprop, deconvnet or guided")
      ->check(CLI::IsMember({"backprop", "deconvnet", "guided"}));
  vis_cmd->add_option("--layer", layer, "Layer index")->required();
  vis_cmd->add_option("--channel", channel, "Channel index")->required();
  vis_cmd->add_flag("--switches", switches, "Route max-pools through recorded switches");
  vis_cmd->add_option("--data", vis_data, "Dataset directory; omit for an unconditioned reconstruction");
  vis_cmd->add_option("--stats", stats_path, "Preprocessing stats from training");
  vis_cmd->add_option("--dataset", dataset, "cifar10 or cifar100");
  vis_cmd->add_option("--n", n, "Scan only the first N test images");
  vis_cmd->add_option("--top", top, "Number of top-activating patches")->check(CLI::PositiveNumber);
  vis_cmd->add_option("--out", out_path, "Output directory")->required();

  auto* count_cmd = app.add_subcommand("count-params", "Print the parameter count of an architecture");
  count_cmd->add_option("--arch", arch, "Architecture id, e.g. all-cnn-c")->required();
  count_cmd->add_option("--scale", scale, "Channel width multiplier");
  count_cmd->add_option("--classes", classes, "Number of classes");

  auto* surgery_cmd = app.add_subcommand("surgery", "Replace stride-2 convolutions by stride 1 plus 2x2 max-pooling");
  surgery_cmd->add_option("--checkpoint", checkpoint, "Input checkpoint")->required();
  surgery_cmd->add_option("--out", out_path, "Output checkpoint")->required();

  auto* pre_cmd = app.add_subcommand("preprocess", "Fit contrast normalization and ZCA whitening");
  pre_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  pre_cmd->add_option("--out", out_path, "Stats file")->required();
  pre_cmd->add_option("--dataset", dataset, "cifar10 or cifar100");
  pre_cmd->add_option("--n", n, "Fit on the first N training images");
  pre_cmd->add_flag("--no-gcn", no_gcn, "Skip global contrast normalization");
  pre_cmd->add_flag("--no-zca", no_zca, "Skip ZCA whitening");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (*train_cmd) return run_train(config_path, seed, out_override, out, err);
    if (*eval_cmd) {
      const Model model = load_checkpoint(checkpoint);
      const Dataset data = load_eval_split(dataset, data_dir, n, stats_path, err);
      out << evaluate(model, data) << "\n";
      return 0;
    }
    if (*vis_cmd) {
      return run_visualize(checkpoint, rule, layer, channel, switches, vis_data, stats_path, dataset, n, top, out_path,
                           err);
    }
    if (*count_cmd) {
      out << count_parameters(build_architecture(arch, classes, scale)) << "\n";
      return 0;
    }
    if (*surgery_cmd) {
      save_checkpoint(pool_surgery(load_checkpoint(checkpoint)), out_path);
      return 0;
    }
    if (*pre_cmd) {
      const Dataset train_set = take_first(load_dataset(dataset, data_dir).first, n);
      PreprocConfig pc;
      pc.gcn = !no_gcn;
      pc.zca = !no_zca;
      save_preproc_stats(fit_preprocessing(train_set, pc), out_path);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace acnn
