#include "samic/cli.hpp"

#include "samic/annotation.hpp"
#include "samic/checkpoint.hpp"
#include "samic/codec.hpp"
#include "samic/config.hpp"
#include "samic/dataset.hpp"
#include "samic/evaluate.hpp"
#include "samic/http_api.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <Eigen/Core>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

namespace samic {
namespace fs = std::filesystem;
namespace {

std::atomic<bool> g_shutdown{false};

void on_signal(int) { g_shutdown.store(true); }

// Bad flag values detected after CLI11 accepted the syntax.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_file(path)); }

nlohmann::ordered_json versions() {
  char eigen[32];
  std::snprintf(eigen, sizeof eigen, "%d.%d.%d", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION);
  char json[32];
  std::snprintf(json, sizeof json, "%d.%d.%d", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                NLOHMANN_JSON_VERSION_PATCH);
  return {{"samic", SAMIC_VERSION}, {"eigen", eigen},         {"libpng", libpng_version()},
          {"openssl", openssl_version()}, {"nlohmann_json", json}, {"cpp-httplib", CPPHTTPLIB_VERSION},
          {"compiler", __VERSION__}};
}

// run.json: what ran, on which inputs, with which effective configuration.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> args)
      : command_(std::move(command)), args_(std::move(args)), started_(utc_timestamp()) {}

  void input(const std::string& role, const fs::path& path) {
    inputs_.push_back({{"role", role}, {"path", fs::absolute(path).string()}, {"sha256", file_sha256(path)}});
  }
  // One digest over the files of a dataset, in manifest order.
  void dataset(const std::string& role, const std::vector<const DatasetItem*>& items) {
    std::string joined;
    for (const auto* item : items) {
      for (const auto* p : {&item->image, &item->prompts, &item->mask}) joined += file_sha256(*p) + "\n";
    }
    inputs_.push_back({{"role", role}, {"items", items.size()}, {"sha256", sha256_hex(joined)}});
  }
  void output(const fs::path& path) { outputs_.push_back(path.filename().string()); }
  void config(nlohmann::ordered_json c) { config_ = std::move(c); }

  void write(const fs::path& dir, const std::string& status, const std::string& error = {}) const {
    nlohmann::ordered_json j;
    j["command"] = command_;
    j["argv"] = args_;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["started_at"] = started_;
    j["finished_at"] = utc_timestamp();
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["config"] = config_;
    j["config_sha256"] = sha256_hex(config_.dump());
    j["versions"] = versions();
    write_file_atomic(dir / "run.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  std::string started_;
  nlohmann::ordered_json inputs_ = nlohmann::ordered_json::array();
  nlohmann::ordered_json outputs_ = nlohmann::ordered_json::array();
  nlohmann::ordered_json config_ = nlohmann::ordered_json::object();
};

struct Common {
  fs::path out;
  fs::path config;
  int verbosity = 0;
  bool deterministic = false;
  std::string segmenter;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->add_option("--config", c.config, "TOML or JSON run configuration")->check(CLI::ExistingFile);
  sub->add_flag("-v,--verbose", c.verbosity, "More progress output");
  sub->add_flag("--deterministic", c.deterministic, "Serialize everything that could reorder arithmetic");
}

double parse_number(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) throw UsageError("bad number in " + what + ": '" + text + "'");
  return v;
}

// "x,y" entries, several per argument when separated by ';'.
std::vector<PointPrompt> parse_points(const std::vector<std::string>& specs) {
  std::vector<PointPrompt> points;
  for (const auto& spec : specs) {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ';')) {
      if (item.empty()) continue;
      const auto comma = item.find(',');
      if (comma == std::string::npos) throw UsageError("point must be x,y: '" + item + "'");
      points.push_back({parse_number(item.substr(0, comma), "point"), parse_number(item.substr(comma + 1), "point")});
    }
  }
  if (points.empty()) throw UsageError("no points given");
  return points;
}

std::pair<int, int> parse_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw UsageError("size must be HxW: '" + text + "'");
  const double h = parse_number(text.substr(0, x), "size");
  const double w = parse_number(text.substr(x + 1), "size");
  if (h < 1 || w < 1 || h != std::floor(h) || w != std::floor(w)) throw UsageError("size must be positive integers");
  return {static_cast<int>(h), static_cast<int>(w)};
}

nlohmann::ordered_json points_json(const std::vector<PointPrompt>& points) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (const auto& p : points) a.push_back({p.x, p.y});
  return a;
}

void check_inside(const std::vector<PointPrompt>& points, int height, int width) {
  for (const auto& p : points) {
    if (p.x < 0 || p.y < 0 || p.x > width - 1 || p.y > height - 1) {
      throw UsageError("point (" + std::to_string(p.x) + "," + std::to_string(p.y) + ") lies outside the " +
                       std::to_string(height) + "x" + std::to_string(width) + " image");
    }
  }
}

template <typename T>
void override_if(const CLI::Option* opt, T& target, const T& value) {
  if (opt->count() > 0) target = value;
}

// defaults < --config file < flags (flags are applied by each subcommand).
RunConfig base_config(const Common& c, RunManifest& manifest) {
  RunConfig cfg;
  if (!c.config.empty()) {
    manifest.input("config", c.config);
    cfg = apply_config(load_config_document(c.config));
  }
  if (!c.segmenter.empty()) cfg.segmenter = c.segmenter;
  if (c.deterministic) cfg.train.deterministic = true;
  return cfg;
}

std::unique_ptr<HeatmapPredictor> make_predictor(const std::string& name, const CorrelationNet<float>* net,
                                                 PyramidCache* cache, std::uint64_t seed) {
  if (name == "samic") return std::make_unique<ModelPredictor>(*net, *cache);
  if (name == "oracle") return std::make_unique<OraclePredictor>();
  if (name == "noise") return std::make_unique<NoisePredictor>(seed);
  if (name == "location-prior") return std::make_unique<LocationPriorPredictor>();
  throw UsageError("unknown predictor: " + name);
}

std::vector<const DatasetItem*> split_items(const DatasetIndex& index, const std::string& split) {
  auto items = index.items_in(split);
  if (items.empty()) throw ArgumentError("manifest has no '" + split + "' items");
  return items;
}

fs::path cache_directory(const fs::path& fallback) {
  if (const char* env = std::getenv("SAMIC_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class Cli {
 public:
  Cli(std::vector<std::string> args, std::ostream& out, std::ostream& err)
      : args_(std::move(args)), out_(out), err_(err) {}

  int run();

 private:
  void build();
  int dispatch();
  int execute(const std::string& name, const std::function<void(RunManifest&)>& body);
  std::string suggestion() const;

  void encode(RunManifest& m);
  void peaks(RunManifest& m);
  void train_cmd(RunManifest& m);
  void predict(RunManifest& m);
  void eval(RunManifest& m);
  void serve(RunManifest& m);
  void export_cmd(RunManifest& m);

  std::vector<std::string> args_;
  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"In-context heatmap prompting for promptable segmentation", "samic"};
  Common common_;
  std::map<std::string, CLI::Option*> opt_;

  // encode / peaks
  std::vector<std::string> points_;
  std::string size_ = "224x224";
  double sigma_ = 0.0;
  fs::path in_;
  double tau_ = 0.0;
  int connectivity_ = 0;
  // train / eval / predict
  fs::path manifest_;
  std::string benchmark_;
  std::uint64_t seed_ = 0;
  int epochs_ = 0;
  double lr_ = 0.0;
  int batch_size_ = 0;
  int patience_ = 0;
  double subsample_ = 0.0;
  int depth_ = 0;
  std::string losses_;
  bool kld_sum_normalized_ = false;
  fs::path checkpoint_;
  std::vector<fs::path> context_;
  std::vector<fs::path> context_prompts_;
  std::vector<std::string> context_points_;
  fs::path target_;
  bool segment_ = false;
  std::string split_ = "test";
  std::string predictor_ = "samic";
  std::vector<int> shots_ = {1};
  int folds_ = 0;
  // serve / export
  fs::path storage_;
  std::string host_ = "127.0.0.1";
  int port_ = 8080;
  std::string session_;
  std::string class_name_ = "annotated";
  std::vector<fs::path> reports_;
  std::vector<std::string> labels_;
};

void Cli::build() {
  app_.require_subcommand(1);
  app_.set_version_flag("--version", SAMIC_VERSION);

  auto* encode = app_.add_subcommand("encode", "Encode point prompts into a 16-bit heatmap PNG");
  add_common(encode, common_);
  encode->add_option("--points", points_, "Prompt points x,y (repeat, or join with ';')")->required();
  encode->add_option("--size", size_, "Heatmap size HxW")->capture_default_str();
  opt_["encode.sigma"] = encode->add_option("--sigma", sigma_, "Gaussian width, fraction of the image size");

  auto* peaks = app_.add_subcommand("peaks", "Extract peak prompts from a heatmap");
  add_common(peaks, common_);
  peaks->add_option("--in", in_, "Heatmap (16-bit PNG or raw float32)")->required()->check(CLI::ExistingFile);
  opt_["peaks.tau"] = peaks->add_option("--tau", tau_, "Binarization threshold");
  opt_["peaks.connectivity"] = peaks->add_option("--connectivity", connectivity_, "4 or 8");

  auto* train = app_.add_subcommand("train", "Train the correlation net episodically");
  add_common(train, common_);
  opt_["train.manifest"] = train->add_option("--manifest", manifest_, "Dataset manifest")->check(CLI::ExistingFile);
  opt_["train.benchmark"] = train->add_option("--benchmark", benchmark_, "Validate split sizes (fss1000, pascal5i, coco20i)");
  opt_["train.seed"] = train->add_option("--seed", seed_, "Training seed");
  opt_["train.epochs"] = train->add_option("--epochs", epochs_, "Maximum epochs");
  opt_["train.lr"] = train->add_option("--lr", lr_, "Adam learning rate");
  opt_["train.batch"] = train->add_option("--batch-size", batch_size_, "Episodes per step");
  opt_["train.patience"] = train->add_option("--patience", patience_, "Early-stopping patience in epochs");
  opt_["train.subsample"] = train->add_option("--subsample", subsample_, "Per-class training fraction");
  opt_["train.depth"] = train->add_option("--depth", depth_, "4D convolution layers per squeezing block");
  opt_["train.losses"] = train->add_option("--losses", losses_, "Enabled loss terms, e.g. kld,cc,nss");
  opt_["train.kldsum"] = train->add_flag("--kld-sum-normalized", kld_sum_normalized_, "KLD on sum-normalized maps");
  train->add_option("--segmenter", common_.segmenter, "Segmenter backend (recorded only)");

  auto* predict = app_.add_subcommand("predict", "Predict prompts for a target image from context samples");
  add_common(predict, common_);
  predict->add_option("--checkpoint", checkpoint_, "Trained weights")->required()->check(CLI::ExistingFile);
  predict->add_option("--context", context_, "Context image (repeat for K shots)")->required()->check(CLI::ExistingFile);
  auto* cp = predict->add_option("--context-prompts", context_prompts_, "Prompt record per context image")
                 ->check(CLI::ExistingFile);
  auto* cpts = predict->add_option("--context-points", context_points_, "Points per context image, x,y;x,y");
  cp->excludes(cpts);
  predict->add_option("--target", target_, "Target image")->required()->check(CLI::ExistingFile);
  predict->add_flag("--segment", segment_, "Also run the segmenter on the predicted prompts");
  predict->add_option("--segmenter", common_.segmenter, "Segmenter backend (mock or external)");

  auto* eval = app_.add_subcommand("eval", "K-shot evaluation over a dataset split");
  add_common(eval, common_);
  opt_["eval.manifest"] = eval->add_option("--manifest", manifest_, "Dataset manifest")->check(CLI::ExistingFile);
  opt_["eval.benchmark"] = eval->add_option("--benchmark", benchmark_, "Validate split sizes");
  eval->add_option("--split", split_, "Split to evaluate")->capture_default_str();
  eval->add_option("--checkpoint", checkpoint_, "Trained weights (predictor samic)")->check(CLI::ExistingFile);
  eval->add_option("--predictor", predictor_, "samic, oracle, noise or location-prior")
      ->check(CLI::IsMember({"samic", "oracle", "noise", "location-prior"}))
      ->capture_default_str();
  eval->add_option("--shots", shots_, "Context samples per target (repeatable)")->capture_default_str();
  opt_["eval.seed"] = eval->add_option("--seed", seed_, "Context selection seed");
  eval->add_option("--folds", folds_, "Report per-fold means over this many class folds");
  eval->add_option("--segmenter", common_.segmenter, "Segmenter backend (mock or external)");

  auto* serve = app_.add_subcommand("serve", "Run the annotation service HTTP API");
  add_common(serve, common_);
  serve->add_option("--storage", storage_, "Session and record storage")->required();
  serve->add_option("--host", host_, "Bind address")->capture_default_str();
  serve->add_option("--port", port_, "Port, 0 for any free port")->capture_default_str()->check(CLI::Range(0, 65535));
  serve->add_option("--segmenter", common_.segmenter, "Segmenter backend (mock or external)");

  auto* exp = app_.add_subcommand("export", "Export an annotation session as a dataset, or render report tables");
  add_common(exp, common_);
  auto* st = exp->add_option("--storage", storage_, "Annotation storage")->check(CLI::ExistingDirectory);
  auto* se = exp->add_option("--session", session_, "Session id");
  exp->add_option("--class", class_name_, "Class name of the exported items")->capture_default_str();
  auto* rep = exp->add_option("--reports", reports_, "Evaluation reports to tabulate")->check(CLI::ExistingFile);
  exp->add_option("--labels", labels_, "Row labels for bare metric reports");
  exp->add_option("--segmenter", common_.segmenter, "Segmenter backend used to reload the storage");
  st->needs(se);
  se->needs(st);
  rep->excludes(st)->excludes(se);
}

std::string Cli::suggestion() const {
  std::vector<std::string> candidates;
  std::vector<std::string> subcommands;
  for (const auto* sub : app_.get_subcommands({})) subcommands.push_back(sub->get_name());
  const auto selected = app_.get_subcommands();
  const CLI::App* scope = selected.empty() ? &app_ : selected.front();
  for (const auto* opt : scope->get_options()) {
    for (const auto& l : opt->get_lnames()) candidates.push_back("--" + l);
  }
  for (const auto& word : app_.remaining(true)) {
    if (word.rfind("--", 0) == 0) {
      const std::string flag = word.substr(0, word.find('='));
      const std::string hit = closest_match(flag, candidates);
      if (!hit.empty()) return "unknown flag " + flag + "; did you mean " + hit + "?";
    } else if (selected.empty()) {
      const std::string hit = closest_match(word, subcommands);
      if (!hit.empty()) return "unknown command " + word + "; did you mean " + hit + "?";
    }
  }
  return {};
}

int Cli::run() {
  build();
  std::vector<std::string> reversed(args_.rbegin(), args_.rend());
  try {
    app_.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app_.exit(e, out_, err_);
    std::string hint = suggestion();
    if (hint.empty() && app_.get_subcommands().empty()) {
      // CLI11 reports a missing subcommand before looking at extras.
      std::vector<std::string> names;
      for (const auto* sub : app_.get_subcommands({})) names.push_back(sub->get_name());
      for (const auto& a : args_) {
        if (a.empty() || a[0] == '-') continue;
        if (const auto hit = closest_match(a, names); !hit.empty()) {
          hint = "unknown command " + a + "; did you mean " + hit + "?";
        }
        break;
      }
    }
    err_ << "samic: " << e.what() << "\n";
    if (!hint.empty()) err_ << "samic: " << hint << "\n";
    err_ << "Run with --help for more information.\n";
    return 2;
  }
  return dispatch();
}

int Cli::dispatch() {
  const std::string name = app_.get_subcommands().front()->get_name();
  static const std::map<std::string, void (Cli::*)(RunManifest&)> handlers = {
      {"encode", &Cli::encode}, {"peaks", &Cli::peaks}, {"train", &Cli::train_cmd}, {"predict", &Cli::predict},
      {"eval", &Cli::eval},     {"serve", &Cli::serve}, {"export", &Cli::export_cmd}};
  const auto handler = handlers.at(name);
  return execute(name, [this, handler](RunManifest& m) { (this->*handler)(m); });
}

int Cli::execute(const std::string& name, const std::function<void(RunManifest&)>& body) {
  RunManifest manifest(name, args_);
  auto record = [&](const std::string& status, const std::string& error) {
    try {
      fs::create_directories(common_.out);
      manifest.write(common_.out, status, error);
    } catch (const std::exception& e) {
      err_ << "samic " << name << ": could not write run.json: " << e.what() << "\n";
    }
  };
  try {
    fs::create_directories(common_.out);
    body(manifest);
  } catch (const UsageError& e) {
    err_ << "samic " << name << ": " << e.what() << "\n";
    record("usage-error", e.what());
    return 2;
  } catch (const ConfigError& e) {
    err_ << "samic " << name << ": " << e.what() << "\n";
    record("usage-error", e.what());
    return 2;
  } catch (const std::exception& e) {
    err_ << "samic " << name << ": " << e.what() << "\n";
    record("failed", e.what());
    return 1;
  }
  try {
    manifest.write(common_.out, "ok");
  } catch (const std::exception& e) {
    err_ << "samic " << name << ": could not write run.json: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

void Cli::encode(RunManifest& m) {
  RunConfig cfg = base_config(common_, m);
  override_if(opt_.at("encode.sigma"), cfg.heatmap.sigma, sigma_);
  cfg.heatmap.validate();
  const auto [h, w] = parse_size(size_);
  const auto points = parse_points(points_);
  check_inside(points, h, w);
  const SaliencyHeatmap g = encode_prompts(points, h, w, cfg.heatmap);
  const fs::path path = common_.out / "heatmap.png";
  write_heatmap_png(path, g);
  m.output(path);
  m.config({{"heatmap", to_json(cfg).at("heatmap")}, {"size", {h, w}}, {"points", points_json(points)}});
  out_ << path.string() << "\n";
}

void Cli::peaks(RunManifest& m) {
  RunConfig cfg = base_config(common_, m);
  override_if(opt_.at("peaks.tau"), cfg.heatmap.tau, tau_);
  override_if(opt_.at("peaks.connectivity"), cfg.heatmap.connectivity, connectivity_);
  cfg.heatmap.validate();
  m.input("heatmap", in_);
  const SaliencyHeatmap g = in_.extension() == ".png" ? read_heatmap_png(in_) : decode_heatmap_raw(read_file(in_));
  const PeakResult r = extract_peaks(g, cfg.heatmap);
  nlohmann::ordered_json j{{"points", points_json(r.points)},
                           {"fallback", r.fallback},
                           {"tau", cfg.heatmap.tau},
                           {"connectivity", cfg.heatmap.connectivity}};
  const fs::path path = common_.out / "peaks.json";
  write_file_atomic(path, j.dump() + "\n");
  m.output(path);
  m.config({{"heatmap", to_json(cfg).at("heatmap")}});
  out_ << j.dump() << "\n";
}

void Cli::train_cmd(RunManifest& m) {
  RunConfig cfg = base_config(common_, m);
  override_if(opt_.at("train.manifest"), cfg.manifest, manifest_);
  override_if(opt_.at("train.benchmark"), cfg.benchmark, benchmark_);
  override_if(opt_.at("train.seed"), cfg.train.seed, seed_);
  override_if(opt_.at("train.epochs"), cfg.train.max_epochs, epochs_);
  override_if(opt_.at("train.lr"), cfg.train.lr, lr_);
  override_if(opt_.at("train.batch"), cfg.train.batch_size, batch_size_);
  override_if(opt_.at("train.patience"), cfg.train.patience, patience_);
  override_if(opt_.at("train.subsample"), cfg.train.subsample_fraction, subsample_);
  override_if(opt_.at("train.depth"), cfg.net.num_4dconv_layers, depth_);
  if (opt_.at("train.kldsum")->count() > 0) cfg.train.losses.kld_sum_normalized = kld_sum_normalized_;
  if (opt_.at("train.losses")->count() > 0) {
    LossFlags& f = cfg.train.losses;
    f.kld = f.cc = f.nss = false;
    std::stringstream ss(losses_);
    std::string term;
    while (std::getline(ss, term, ',')) {
      if (term == "kld") f.kld = true;
      else if (term == "cc") f.cc = true;
      else if (term == "nss") f.nss = true;
      else throw UsageError("unknown loss term: " + term);
    }
  }
  cfg.net.validate();
  cfg.train.validate();
  cfg.heatmap.validate();
  if (cfg.manifest.empty()) throw UsageError("a dataset manifest is required (--manifest or data.manifest)");
  m.config(to_json(cfg));
  m.input("manifest", cfg.manifest);

  const DatasetIndex index = load_split_manifest(cfg.manifest, cfg.benchmark);
  std::vector<DatasetItem> train_items;
  for (const auto* item : split_items(index, "train")) train_items.push_back(*item);
  const Subsample sub =
      subsample_training_set(train_items, index.classes_in("train"), cfg.train.subsample_fraction, cfg.train.seed);
  std::vector<const DatasetItem*> chosen;
  for (const auto& item : sub.items) chosen.push_back(&item);
  m.dataset("training-items", chosen);
  const auto pool = load_items(chosen, cfg.net.input_height, cfg.net.input_width, cfg.heatmap);

  const Backbone<float> backbone(cfg.net.backbone_id);
  CorrelationNet<float> net(cfg.net, level_channels_for(backbone.layer_strides()));
  PyramidCache cache(backbone, cfg.net.input_height, cfg.net.input_width);
  TrainOutputs outputs;
  outputs.log = common_.out / "train_log.jsonl";
  outputs.checkpoint = common_.out / "model.ckpt";
  outputs.snapshot_dir = common_.out / "diagnostics";
  if (common_.verbosity > 0) {
    outputs.on_epoch = [this](int epoch, double loss, bool best) {
      out_ << "epoch " << epoch << " loss " << loss << (best ? " (best)" : "") << std::endl;
    };
  }
  const TrainResult r = train(net, cache, pool, cfg.train, outputs);

  nlohmann::ordered_json summary;
  summary["epochs_completed"] = r.epochs_completed;
  summary["best_epoch"] = r.best_epoch;
  summary["best_loss"] = r.best_loss;
  summary["early_stopped"] = r.early_stopped;
  summary["steps"] = r.steps;
  summary["epoch_losses"] = r.epoch_losses;
  summary["parameters"] = net.parameter_count();
  summary["backbone_digest"] = {hex64(r.backbone_digest_before), hex64(r.backbone_digest_after)};
  summary["training_items"] = nlohmann::ordered_json::array();
  for (const auto& item : sub.items) summary["training_items"].push_back(item.id);
  summary["skipped_classes"] = sub.skipped_classes;
  summary["checkpoint_sha256"] = file_sha256(outputs.checkpoint);
  const fs::path result_path = common_.out / "train_result.json";
  write_file_atomic(result_path, summary.dump(2) + "\n");
  for (const auto& p : {outputs.checkpoint, outputs.log, result_path}) m.output(p);
  out_ << "trained " << r.epochs_completed << " epochs, best epoch " << r.best_epoch << " loss " << r.best_loss
       << "\n"
       << outputs.checkpoint.string() << "\n";
}

void Cli::predict(RunManifest& m) {
  RunConfig cfg = base_config(common_, m);
  cfg.heatmap.validate();
  m.input("checkpoint", checkpoint_);
  const CorrelationNet<float> net = load_checkpoint(checkpoint_);
  const Backbone<float> backbone(net.config().backbone_id);

  std::vector<RgbImage> images;
  for (const auto& p : context_) {
    m.input("context", p);
    images.push_back(read_png_rgb(p));
  }
  std::vector<PromptSet> prompts;
  if (!context_prompts_.empty()) {
    if (context_prompts_.size() != context_.size()) throw UsageError("one --context-prompts per --context image");
    for (const auto& p : context_prompts_) {
      m.input("context-prompts", p);
      prompts.push_back(prompt_record_from_json(nlohmann::json::parse(read_file(p))).prompts);
    }
  } else {
    if (context_points_.size() != context_.size()) {
      throw UsageError("give one --context-points or --context-prompts per --context image");
    }
    for (std::size_t k = 0; k < context_points_.size(); ++k) {
      const auto pts = parse_points({context_points_[k]});
      check_inside(pts, images[k].height, images[k].width);
      prompts.push_back(PromptSet{context_[k].stem().string(), {pts}});
    }
  }
  m.input("target", target_);
  const RgbImage target = read_png_rgb(target_);

  const SaliencyHeatmap g = predict_heatmap(net, backbone, images, prompts, target, cfg.heatmap);
  const PeakResult peaks = extract_peaks(g, cfg.heatmap);
  const PromptSet native = rescale_prompts(PromptSet{target_.stem().string(), {peaks.points}}, g.height(),
                                           g.width(), target.height, target.width);
  const fs::path heat_path = common_.out / "heatmap.png";
  write_heatmap_png(heat_path, g);
  m.output(heat_path);
  nlohmann::ordered_json j{{"points", points_json(native.instances.front())},
                           {"input_points", points_json(peaks.points)},
                           {"fallback", peaks.fallback}};
  if (segment_) {
    const auto segmenter = make_segmenter(cfg.segmenter);
    const SegmentationResult seg = segment_instances(*segmenter, target, native);
    const fs::path mask_path = common_.out / "mask.png";
    write_png_mask(mask_path, seg.mask);
    m.output(mask_path);
    j["segmenter"] = segmenter->id();
    j["confidence"] = seg.confidence;
    j["mask_area"] = seg.mask.cast<int>().sum();
  }
  const fs::path peaks_path = common_.out / "prediction.json";
  write_file_atomic(peaks_path, j.dump(2) + "\n");
  m.output(peaks_path);
  nlohmann::ordered_json c = to_json(cfg);
  c["net"] = to_json(net.config());
  m.config(c);
  out_ << j.dump() << "\n";
}

void Cli::eval(RunManifest& m) {
  RunConfig cfg = base_config(common_, m);
  override_if(opt_.at("eval.manifest"), cfg.manifest, manifest_);
  override_if(opt_.at("eval.benchmark"), cfg.benchmark, benchmark_);
  const std::uint64_t seed = opt_.at("eval.seed")->count() > 0 ? seed_ : cfg.train.seed;
  cfg.heatmap.validate();
  if (cfg.manifest.empty()) throw UsageError("a dataset manifest is required (--manifest or data.manifest)");
  for (int k : shots_) {
    if (k < 1) throw UsageError("--shots must be positive");
  }
  std::optional<CorrelationNet<float>> net;
  if (predictor_ == "samic") {
    if (checkpoint_.empty()) throw UsageError("predictor samic needs --checkpoint");
    m.input("checkpoint", checkpoint_);
    net.emplace(load_checkpoint(checkpoint_));
    cfg.net = net->config();
  }
  m.input("manifest", cfg.manifest);
  const DatasetIndex index = load_split_manifest(cfg.manifest, cfg.benchmark);
  const auto items = split_items(index, split_);
  m.dataset("evaluation-items", items);
  const auto pool = load_items(items, cfg.net.input_height, cfg.net.input_width, cfg.heatmap);

  std::optional<Backbone<float>> backbone;
  std::optional<PyramidCache> cache;
  if (net) {
    backbone.emplace(cfg.net.backbone_id);
    cache.emplace(*backbone, cfg.net.input_height, cfg.net.input_width);
  }
  auto predictor = make_predictor(predictor_, net ? &*net : nullptr, cache ? &*cache : nullptr, seed);
  const auto segmenter = make_segmenter(cfg.segmenter);

  std::map<std::string, int> fold_of_class;
  if (folds_ > 0) {
    for (const auto& f : make_folds(index.classes, folds_)) {
      for (const auto& c : f.classes) fold_of_class[c] = f.fold_index;
    }
  }
  nlohmann::ordered_json report{{"split", split_}, {"rows", nlohmann::ordered_json::array()}};
  std::vector<std::pair<std::string, MetricReport>> rows;
  std::string episodes;
  for (int k : shots_) {
    KShotResult r = evaluate_kshot(*predictor, pool, k, *segmenter, cfg.heatmap, seed);
    if (!fold_of_class.empty()) assign_folds(r.report, fold_of_class);
    const std::string label = predictor->name() + " " + std::to_string(k) + "-shot";
    report["rows"].push_back({{"label", label}, {"shots", k}, {"report", to_json(r.report)}});
    rows.emplace_back(label, r.report);
    for (const auto& e : r.episodes) {
      nlohmann::ordered_json line{{"shots", k},           {"target", e.target},   {"contexts", e.contexts},
                                  {"class", e.class_name}, {"prompts", points_json(e.prompts)},
                                  {"fallback", e.fallback}, {"confidence", e.confidence}, {"iou", e.iou}};
      episodes += line.dump() + "\n";
    }
    if (common_.verbosity > 0) out_ << label << ": mIoU " << r.report.mean << ", " << r.fallbacks << " fallbacks\n";
  }
  const std::string table = render_table(rows);
  const fs::path report_path = common_.out / "report.json";
  const fs::path table_path = common_.out / "table.txt";
  const fs::path episodes_path = common_.out / "episodes.jsonl";
  write_file_atomic(report_path, report.dump(2) + "\n");
  write_file_atomic(table_path, table);
  write_file_atomic(episodes_path, episodes);
  for (const auto& p : {report_path, table_path, episodes_path}) m.output(p);
  nlohmann::ordered_json c = to_json(cfg);
  c["eval"] = {{"split", split_}, {"predictor", predictor_}, {"shots", shots_}, {"seed", seed}, {"folds", folds_}};
  m.config(c);
  out_ << table;
}

void Cli::serve(RunManifest& m) {
  RunConfig cfg = base_config(common_, m);
  std::shared_ptr<const Segmenter> segmenter = make_segmenter(cfg.segmenter);
  fs::create_directories(storage_);
  const fs::path cache_dir = cache_directory(storage_ / "embedding-cache");
  m.config({{"segmenter", {{"backend", segmenter->id()}}},
            {"serve", {{"storage", fs::absolute(storage_).string()}, {"cache", fs::absolute(cache_dir).string()},
                       {"host", host_}, {"port", port_}}}});
  AnnotationService service(storage_, segmenter, std::make_shared<EmbeddingCache>(cache_dir));
  httplib::Server server;
  mount_annotation_api(server, service);

  int port = port_;
  if (port == 0) {
    port = server.bind_to_any_port(host_);
  } else if (!server.bind_to_port(host_, port)) {
    port = -1;
  }
  if (port < 0) throw std::runtime_error("cannot bind " + host_ + ":" + std::to_string(port_));

  const fs::path info = common_.out / "server.json";
  write_file_atomic(info, nlohmann::ordered_json{{"host", host_}, {"port", port}}.dump() + "\n");
  m.output(info);
  out_ << "listening on http://" << host_ << ":" << port << std::endl;

  g_shutdown.store(false);
  auto previous_int = std::signal(SIGINT, on_signal);
  auto previous_term = std::signal(SIGTERM, on_signal);
  std::atomic<bool> finished{false};
  // stop() is a no-op until listen_after_bind() is running, so keep asking.
  std::thread watcher([&] {
    while (!finished.load()) {
      if (g_shutdown.load()) server.stop();
      std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
  });
  const bool clean = server.listen_after_bind();
  finished.store(true);
  watcher.join();
  std::signal(SIGINT, previous_int);
  std::signal(SIGTERM, previous_term);
  if (!clean && !g_shutdown.load()) throw std::runtime_error("HTTP server stopped unexpectedly");
  out_ << "stopped" << std::endl;
}

void Cli::export_cmd(RunManifest& m) {
  RunConfig cfg = base_config(common_, m);
  if (!reports_.empty()) {
    std::vector<std::pair<std::string, MetricReport>> rows;
    for (std::size_t i = 0; i < reports_.size(); ++i) {
      m.input("report", reports_[i]);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(read_file(reports_[i]));
      } catch (const nlohmann::json::exception& e) {
        throw StorageError(reports_[i].string() + ": " + e.what());
      }
      if (j.contains("rows")) {
        for (const auto& row : j["rows"]) rows.emplace_back(row.at("label"), metric_report_from_json(row.at("report")));
      } else {
        rows.emplace_back(i < labels_.size() ? labels_[i] : reports_[i].stem().string(), metric_report_from_json(j));
      }
    }
    const std::string table = render_table(rows);
    const fs::path path = common_.out / "table.txt";
    write_file_atomic(path, table);
    m.output(path);
    out_ << table;
    return;
  }
  if (session_.empty()) throw UsageError("export needs --storage and --session, or --reports");
  std::shared_ptr<const Segmenter> segmenter = make_segmenter(cfg.segmenter);
  AnnotationService service(storage_, segmenter,
                            std::make_shared<EmbeddingCache>(cache_directory(storage_ / "embedding-cache")));
  const DatasetIndex index = service.export_dataset(session_, common_.out, class_name_);
  m.output(common_.out / "manifest.json");
  m.config({{"export", {{"storage", fs::absolute(storage_).string()}, {"session", session_}, {"class", class_name_}}}});
  out_ << "exported " << index.items.size() << " items to " << (common_.out / "manifest.json").string() << "\n";
}

}  // namespace

// Optimal string alignment distance: Levenshtein plus adjacent transpositions.
std::size_t edit_distance(const std::string& a, const std::string& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t cost = a[i - 1] == b[j - 1] ? 0 : 1;
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost});
      if (i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1]) d[i][j] = std::min(d[i][j], d[i - 2][j - 2] + 1);
    }
  }
  return d[n][m];
}

std::string closest_match(const std::string& word, const std::vector<std::string>& candidates) {
  std::string best;
  std::size_t best_d = 4;
  for (const auto& c : candidates) {
    const std::size_t d = edit_distance(word, c);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

void request_shutdown() { g_shutdown.store(true); }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli(args, out, err);
  return cli.run();
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace samic
