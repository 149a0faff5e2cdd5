// Command-line entry point: corpus generation, PDS4 product conversion,
// training, evaluation, gradient checking, and model summaries.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrnet/data.hpp"
#include "mrnet/gradcheck.hpp"
#include "mrnet/metrics.hpp"
#include "mrnet/model.hpp"
#include "mrnet/pds4.hpp"
#include "mrnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInputError = 2;

constexpr std::int64_t kReferenceFullScaleParams = 41366179;

// Deferred config-file merge: command-line flags win, then config values,
// then defaults.
class ConfigBinder {
 public:
  template <typename T>
  void bind(CLI::Option* opt, const std::string& key, T* field) {
    appliers_.push_back([opt, key, field](const json& cfg) {
      if (opt->count() == 0 && cfg.contains(key)) *field = cfg.at(key).get<T>();
    });
    savers_.push_back([key, field](json& out) { out[key] = *field; });
  }

  void apply(const json& cfg) const {
    for (const auto& f : appliers_) f(cfg);
  }

  json resolved(const std::string& subcommand) const {
    json out;
    out["subcommand"] = subcommand;
    for (const auto& f : savers_) f(out);
    return out;
  }

 private:
  std::vector<std::function<void(const json&)>> appliers_;
  std::vector<std::function<void(json&)>> savers_;
};

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string run_dir;
};

void add_common(CLI::App* sub, CommonArgs* args, ConfigBinder* binder) {
  sub->add_option("--config", args->config_path, "JSON config file; flags override its values");
  auto* out = sub->add_option("--out-dir", args->out_dir,
                              "base directory for run outputs (default: $MRNET_OUT_DIR or ./runs)");
  auto* run = sub->add_option("--run-dir", args->run_dir, "exact output directory (overrides --out-dir)");
  binder->bind(out, "out_dir", &args->out_dir);
  binder->bind(run, "run_dir", &args->run_dir);
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config " + path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  return j;
}

fs::path resolve_run_dir(const std::string& subcommand, const CommonArgs& args) {
  if (!args.run_dir.empty()) return args.run_dir;
  fs::path base = args.out_dir;
  if (base.empty()) {
    if (const char* env = std::getenv("MRNET_OUT_DIR")) base = env;
    if (base.empty()) base = "runs";
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::tm tm_buf{};
  localtime_r(&now, &tm_buf);
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_buf);
  fs::path dir = base / (subcommand + "-" + stamp);
  for (int i = 1; fs::exists(dir); ++i) dir = base / (subcommand + "-" + std::string(stamp) + "-" + std::to_string(i));
  return dir;
}

fs::path prepare_run_dir(const std::string& subcommand, const CommonArgs& args) {
  const fs::path dir = resolve_run_dir(subcommand, args);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create run directory " + dir.string());
  return dir;
}

void write_repro(const fs::path& run_dir, const json& resolved) {
  std::ofstream out(run_dir / "run.json", std::ios::trunc);
  out << resolved.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (run_dir / "run.json").string());
}

double parse_ratio_token(const std::string& token) {
  const auto slash = token.find('/');
  if (slash != std::string::npos) {
    const double num = std::stod(token.substr(0, slash));
    const double den = std::stod(token.substr(slash + 1));
    if (den == 0.0) throw std::runtime_error("split ratio division by zero in '" + token + "'");
    return num / den;
  }
  return std::stod(token);
}

mrnet::SplitRatios parse_split(const std::string& text) {
  std::vector<double> vals;
  std::istringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) vals.push_back(parse_ratio_token(tok));
  if (vals.size() != 3)
    throw std::runtime_error("--split needs three comma-separated ratios (train,validation,test), got '" + text + "'");
  return {vals[0], vals[1], vals[2]};
}

std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  std::vector<std::uint64_t> seeds;
  if (dots == std::string::npos) {
    seeds.push_back(std::stoull(text));
    return seeds;
  }
  const std::uint64_t lo = std::stoull(text.substr(0, dots));
  const std::uint64_t hi = std::stoull(text.substr(dots + 2));
  if (hi < lo) throw std::runtime_error("seed range '" + text + "' is empty");
  for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
  return seeds;
}

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  CommonArgs common;
  std::int64_t classes = 3;
  std::int64_t per_class = 100;
  std::int64_t resolution = 64;
  std::uint64_t seed = 0;
  std::string split = "0.7,0.15,0.15";
};

int cmd_generate(const GenerateArgs& args, const ConfigBinder& binder) {
  mrnet::SyntheticSpec spec;
  spec.classes = args.classes;
  spec.per_class = args.per_class;
  spec.resolution = args.resolution;
  spec.seed = args.seed;
  const mrnet::SplitRatios ratios = parse_split(args.split);

  const fs::path run_dir = prepare_run_dir("generate", args.common);
  write_repro(run_dir, binder.resolved("generate"));
  const mrnet::DatasetManifest manifest = mrnet::generate_synthetic(spec, run_dir, ratios);

  std::cout << "generated " << manifest.records.size() << " images (" << args.classes << " classes x "
            << args.per_class << ") at " << args.resolution << "x" << args.resolution << "\n"
            << "train/validation/test: " << manifest.count(mrnet::Split::Train) << "/"
            << manifest.count(mrnet::Split::Validation) << "/" << manifest.count(mrnet::Split::Test) << "\n"
            << "manifest: " << (run_dir / "manifest.csv").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  CommonArgs common;
  std::string arch = "mrnet";
  double scale = 1.0;
  std::int64_t resolution = 512;
  std::int64_t classes = 3;
  std::string manifest;
  std::uint64_t seed = 0;
  std::int64_t epochs = 10;
  std::int64_t batch_size = 16;
  double lr = 1e-4;
  double reduced_lr = 1e-5;
  std::int64_t lr_drop_epoch = 5;
};

int cmd_train(const TrainArgs& args, const ConfigBinder& binder) {
  const mrnet::DatasetManifest manifest = mrnet::read_manifest(args.manifest);
  const mrnet::ModelSpec spec = mrnet::build_architecture(args.arch, args.classes, args.resolution, args.scale);

  mrnet::TrainConfig config;
  config.epochs = args.epochs;
  config.initial_lr = args.lr;
  config.reduced_lr = args.reduced_lr;
  config.lr_drop_epoch = std::min(args.lr_drop_epoch, args.epochs);
  config.batch_size = args.batch_size;
  config.seed = args.seed;
  config.validate();

  const fs::path run_dir = prepare_run_dir("train", args.common);
  write_repro(run_dir, binder.resolved("train"));

  std::ofstream csv(run_dir / "epochs.csv", std::ios::trunc);
  csv << "epoch,train_loss,val_accuracy,seconds\n";
  const auto on_epoch = [&csv](const mrnet::EpochReport& r) {
    csv << r.epoch << ',' << csv_double(r.train_loss) << ',' << csv_double(r.val_accuracy) << ','
        << csv_double(r.seconds) << '\n';
    csv.flush();
    std::printf("epoch %lld  loss=%.6f  val_accuracy=%.4f  (%.1fs)\n", static_cast<long long>(r.epoch), r.train_loss,
                r.val_accuracy, r.seconds);
    std::fflush(stdout);
  };

  mrnet::TrainResult result = mrnet::train(spec, manifest, config, on_epoch);
  mrnet::save_checkpoint(result.model, run_dir / "checkpoint.mrnet");
  std::cout << "checkpoint: " << (run_dir / "checkpoint.mrnet").string() << "\n";

  if (manifest.count(mrnet::Split::Test) > 0) {
    const mrnet::SplitData test = mrnet::load_split_data(manifest, mrnet::Split::Test, spec.input_resolution);
    const mrnet::Tensor probs = mrnet::predict(result.model, test.x);
    std::printf("test accuracy: %.4f\n", mrnet::accuracy_of(probs, test.labels));
  } else {
    std::cout << "test accuracy: n/a (manifest has no test split)\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  CommonArgs common;
  std::string manifest;
  std::vector<std::string> checkpoints;
};

int cmd_eval(const EvalArgs& args, const ConfigBinder& binder) {
  const mrnet::DatasetManifest manifest = mrnet::read_manifest(args.manifest);
  const auto test_records = manifest.of_split(mrnet::Split::Test);
  if (test_records.empty()) throw std::runtime_error("eval: manifest has no test split");

  std::vector<mrnet::ModelInstance> models;
  for (const auto& p : args.checkpoints) models.push_back(mrnet::load_checkpoint(p));

  const mrnet::Tensor probe = mrnet::load_image(test_records.front()->resolved_path);
  for (const auto& m : models) {
    if (probe.dim(1) != m.spec.input_resolution || probe.dim(2) != m.spec.input_resolution)
      throw std::runtime_error("eval: checkpoint '" + m.spec.name + "' expects resolution " +
                               std::to_string(m.spec.input_resolution) + " but test images are " +
                               std::to_string(probe.dim(1)) + "x" + std::to_string(probe.dim(2)));
    if (m.spec.classes != manifest.n_classes())
      throw std::runtime_error("eval: checkpoint '" + m.spec.name + "' has " + std::to_string(m.spec.classes) +
                               " classes but the manifest has " + std::to_string(manifest.n_classes()));
  }

  const fs::path run_dir = prepare_run_dir("eval", args.common);
  write_repro(run_dir, binder.resolved("eval"));

  const mrnet::SplitData test =
      mrnet::load_split_data(manifest, mrnet::Split::Test, models.front().spec.input_resolution);

  std::vector<mrnet::ComparisonRow> rows;
  std::map<std::string, int> name_uses;
  for (const auto& model : models) {
    const mrnet::Tensor probs = mrnet::predict(model, test.x);
    const auto preds = mrnet::argmax_rows(probs);
    const mrnet::ConfusionMatrix cm = mrnet::confusion(preds, test.labels, manifest.n_classes());

    mrnet::ComparisonRow row;
    row.name = model.spec.name;
    row.param_count = mrnet::param_count(model.spec);
    row.sec_per_epoch = model.mean_epoch_seconds;
    row.metrics = mrnet::report(cm);
    rows.push_back(row);

    const mrnet::MulticlassAuc auc = mrnet::multiclass_auc(probs, test.labels);
    std::string svg_name = "roc-" + model.spec.name;
    const int uses = name_uses[model.spec.name]++;
    if (uses > 0) svg_name += "-" + std::to_string(uses + 1);
    std::ofstream svg(run_dir / (svg_name + ".svg"), std::ios::trunc);
    svg << mrnet::render_roc_svg(auc.curves);
    if (auc.missing_class)
      std::cerr << "warning: some classes absent from the test split; their AUCs are undefined and excluded "
                   "from the macro average\n";
  }

  const std::string table = mrnet::render_comparison_text(rows);
  std::cout << table;
  std::ofstream(run_dir / "comparison.txt", std::ios::trunc) << table;
  std::ofstream(run_dir / "comparison.csv", std::ios::trunc) << mrnet::render_comparison_csv(rows);
  std::cout << "outputs: " << run_dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct ConvertArgs {
  CommonArgs common;
  std::vector<std::string> labels;
};

int cmd_convert(const ConvertArgs& args, const ConfigBinder& binder) {
  const fs::path run_dir = prepare_run_dir("convert", args.common);
  write_repro(run_dir, binder.resolved("convert"));

  std::size_t converted = 0, failed = 0;
  for (const auto& label_path : args.labels) {
    try {
      const mrnet::Pds4LiteLabel label = mrnet::pds4lite_parse(label_path);
      const fs::path raw = fs::path(label_path).parent_path() / label.data_file;
      const fs::path out = run_dir / (fs::path(label_path).stem().string() + ".png");
      mrnet::pds4lite_convert(label, raw, out);
      ++converted;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      ++failed;
    }
  }
  std::cout << converted << " converted, " << failed << " failed\n";
  return failed == 0 ? kOk : kInputError;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  CommonArgs common;
  std::string seed = "1..5";
  double eps = 1e-5;
  double tolerance = 1e-4;
  bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& args, const ConfigBinder& binder) {
  const auto seeds = parse_seed_range(args.seed);
  mrnet::GradCheckOptions options;
  options.eps = args.eps;
  options.tolerance = args.tolerance;
  options.corrupt = args.corrupt;

  std::vector<std::string> order;
  std::map<std::string, double> worst;
  for (const std::uint64_t s : seeds) {
    for (const auto& item : mrnet::run_gradient_checks(s, options)) {
      auto it = worst.find(item.name);
      if (it == worst.end()) {
        order.push_back(item.name);
        worst[item.name] = item.max_rel_err;
      } else {
        it->second = std::max(it->second, item.max_rel_err);
      }
    }
  }

  const fs::path run_dir = prepare_run_dir("gradcheck", args.common);
  write_repro(run_dir, binder.resolved("gradcheck"));
  std::ofstream report(run_dir / "gradcheck.txt", std::ios::trunc);

  bool ok = true;
  for (const auto& name : order) {
    const double err = worst[name];
    const bool pass = err < args.tolerance;
    ok = ok && pass;
    char line[160];
    std::snprintf(line, sizeof(line), "%-34s max_rel_err=%.3e  %s\n", name.c_str(), err, pass ? "ok" : "FAIL");
    std::cout << line;
    report << line;
  }
  std::printf("gradient check %s (%zu items, %zu seeds, tolerance %g)\n", ok ? "PASSED" : "FAILED", order.size(),
              seeds.size(), args.tolerance);
  return ok ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------

struct SummaryArgs {
  std::string arch = "mrnet";
  double scale = 1.0;
  std::int64_t resolution = 512;
  std::int64_t classes = 3;
};

int cmd_summary(const SummaryArgs& args) {
  const mrnet::ModelSpec spec = mrnet::build_architecture(args.arch, args.classes, args.resolution, args.scale);
  std::cout << mrnet::summarize(spec);
  if (args.arch == "mrnet" && args.scale == 1.0)
    std::cout << "reference total at full scale (reported): " << kReferenceFullScaleParams << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mrnet: lunar rock image classification toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  ConfigBinder gen_binder;
  auto* gen_cmd = app.add_subcommand("generate", "generate a synthetic texture corpus with a manifest");
  add_common(gen_cmd, &gen.common, &gen_binder);
  gen_binder.bind(gen_cmd->add_option("--classes", gen.classes, "number of classes"), "classes", &gen.classes);
  gen_binder.bind(gen_cmd->add_option("--per-class", gen.per_class, "images per class"), "per_class", &gen.per_class);
  gen_binder.bind(gen_cmd->add_option("--resolution", gen.resolution, "image edge length"), "resolution",
                  &gen.resolution);
  gen_binder.bind(gen_cmd->add_option("--seed", gen.seed, "generator seed"), "seed", &gen.seed);
  gen_binder.bind(gen_cmd->add_option("--split", gen.split, "train,validation,test ratios (decimals or fractions)"),
                  "split", &gen.split);

  TrainArgs tr;
  ConfigBinder tr_binder;
  auto* tr_cmd = app.add_subcommand("train", "train an architecture on a manifest");
  add_common(tr_cmd, &tr.common, &tr_binder);
  tr_binder.bind(tr_cmd->add_option("--arch", tr.arch, "mrnet | alexnet-mini | mobilenet-mini | vgg16-mini"), "arch",
                 &tr.arch);
  tr_binder.bind(tr_cmd->add_option("--scale", tr.scale, "width scale (1 = full, 0.125 = desk scale)"), "scale",
                 &tr.scale);
  tr_binder.bind(tr_cmd->add_option("--resolution", tr.resolution, "input resolution"), "resolution", &tr.resolution);
  tr_binder.bind(tr_cmd->add_option("--classes", tr.classes, "number of classes"), "classes", &tr.classes);
  tr_binder.bind(tr_cmd->add_option("--manifest", tr.manifest, "dataset manifest CSV"), "manifest", &tr.manifest);
  tr_binder.bind(tr_cmd->add_option("--seed", tr.seed, "training seed"), "seed", &tr.seed);
  tr_binder.bind(tr_cmd->add_option("--epochs", tr.epochs, "number of epochs"), "epochs", &tr.epochs);
  tr_binder.bind(tr_cmd->add_option("--batch-size", tr.batch_size, "batch size"), "batch_size", &tr.batch_size);
  tr_binder.bind(tr_cmd->add_option("--lr", tr.lr, "initial learning rate"), "lr", &tr.lr);
  tr_binder.bind(tr_cmd->add_option("--reduced-lr", tr.reduced_lr, "learning rate after the drop"), "reduced_lr",
                 &tr.reduced_lr);
  tr_binder.bind(tr_cmd->add_option("--lr-drop-epoch", tr.lr_drop_epoch, "epoch index at which the rate drops"),
                 "lr_drop_epoch", &tr.lr_drop_epoch);

  EvalArgs ev;
  ConfigBinder ev_binder;
  auto* ev_cmd = app.add_subcommand("eval", "evaluate checkpoints on the test split; table + ROC SVGs");
  add_common(ev_cmd, &ev.common, &ev_binder);
  ev_binder.bind(ev_cmd->add_option("--manifest", ev.manifest, "dataset manifest CSV"), "manifest", &ev.manifest);
  ev_binder.bind(ev_cmd->add_option("--checkpoint", ev.checkpoints, "checkpoint file (repeatable)"), "checkpoints",
                 &ev.checkpoints);

  ConvertArgs cv;
  ConfigBinder cv_binder;
  auto* cv_cmd = app.add_subcommand("convert", "convert PDS4-lite Array_3D_Image products to PNG");
  add_common(cv_cmd, &cv.common, &cv_binder);
  cv_binder.bind(cv_cmd->add_option("labels", cv.labels, "label XML files"), "labels", &cv.labels);

  GradcheckArgs gc;
  ConfigBinder gc_binder;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference checks of every op and the full model loss");
  add_common(gc_cmd, &gc.common, &gc_binder);
  gc_binder.bind(gc_cmd->add_option("--seed", gc.seed, "seed or inclusive range like 1..5"), "seed", &gc.seed);
  gc_binder.bind(gc_cmd->add_option("--eps", gc.eps, "central-difference step"), "eps", &gc.eps);
  gc_binder.bind(gc_cmd->add_option("--tolerance", gc.tolerance, "max relative error allowed"), "tolerance",
                 &gc.tolerance);
  gc_binder.bind(gc_cmd->add_flag("--corrupt", gc.corrupt, "self-test hook: corrupt one gradient")->group(""),
                 "corrupt", &gc.corrupt);

  SummaryArgs sm;
  auto* sm_cmd = app.add_subcommand("summary", "print layer shapes and parameter counts");
  sm_cmd->add_option("--arch", sm.arch, "architecture name");
  sm_cmd->add_option("--scale", sm.scale, "width scale");
  sm_cmd->add_option("--resolution", sm.resolution, "input resolution");
  sm_cmd->add_option("--classes", sm.classes, "number of classes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    if (gen_cmd->parsed()) {
      gen_binder.apply(load_config(gen.common.config_path));
      return cmd_generate(gen, gen_binder);
    }
    if (tr_cmd->parsed()) {
      tr_binder.apply(load_config(tr.common.config_path));
      return cmd_train(tr, tr_binder);
    }
    if (ev_cmd->parsed()) {
      ev_binder.apply(load_config(ev.common.config_path));
      return cmd_eval(ev, ev_binder);
    }
    if (cv_cmd->parsed()) {
      cv_binder.apply(load_config(cv.common.config_path));
      return cmd_convert(cv, cv_binder);
    }
    if (gc_cmd->parsed()) {
      gc_binder.apply(load_config(gc.common.config_path));
      return cmd_gradcheck(gc, gc_binder);
    }
    if (sm_cmd->parsed()) return cmd_summary(sm);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
