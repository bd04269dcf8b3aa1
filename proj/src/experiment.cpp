#include "evifuse/experiment.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "evifuse/checkpoint.hpp"
#include "evifuse/error.hpp"
#include "evifuse/fusion.hpp"
#include "evifuse/seed.hpp"

namespace evifuse {

namespace {

using nlohmann::json;

constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kModelStream = 2;
constexpr std::uint64_t kTrainingStream = 3;

// Reads typed fields out of one JSON object, recording every problem.
class Fields {
 public:
  Fields(const json& obj, std::string path, std::vector<std::string>& problems, std::set<std::string> known)
      : obj_(obj), path_(std::move(path)), problems_(problems) {
    if (!obj_.is_object()) {
      problems_.push_back(where() + " must be an object");
      return;
    }
    for (const auto& [key, _] : obj_.items()) {
      if (!known.contains(key)) problems_.push_back("unknown key " + name(key));
    }
  }

  bool has(const std::string& key) const { return obj_.is_object() && obj_.contains(key); }
  const json& at(const std::string& key) const { return obj_.at(key); }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& into) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return bad(key, "a boolean");
      into = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return bad(key, "an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) {
          into = v.get<T>();
        } else {
          bad(key, "a nonnegative integer");
        }
      } else {
        into = v.get<T>();
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return bad(key, "a number");
      into = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return bad(key, "a string");
      into = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) return bad(key, "an array of numbers");
      std::vector<double> out;
      for (const auto& e : v) {
        if (!e.is_number()) return bad(key, "an array of numbers");
        out.push_back(e.get<double>());
      }
      into = std::move(out);
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      if (!v.is_array()) return bad(key, "an array of strings");
      std::vector<std::string> out;
      for (const auto& e : v) {
        if (!e.is_string()) return bad(key, "an array of strings");
        out.push_back(e.get<std::string>());
      }
      into = std::move(out);
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  void bad(const std::string& key, const std::string& what) { problems_.push_back(name(key) + " must be " + what); }

  const json& obj_;
  std::string path_;
  std::vector<std::string>& problems_;
};

const json kEmptyObject = json::object();

const json& section(const json& doc, const std::string& key) {
  return doc.contains(key) ? doc.at(key) : kEmptyObject;
}

std::string nll_name(NllMode mode) { return mode == NllMode::TrueClass ? "true_class" : "one_vs_rest"; }

}  // namespace

void ExperimentConfig::resolve_seeds() {
  if (!synthetic_seed_set) synthetic.seed = derive_seed(seed, kDataStream);
  training.seed = derive_seed(seed, kTrainingStream);
}

std::vector<std::string> ExperimentConfig::problems() const {
  std::vector<std::string> out;
  if (!dataset) {
    const auto s = synthetic.problems();
    out.insert(out.end(), s.begin(), s.end());
  } else if (dataset->empty()) {
    out.push_back("dataset must be a non-empty path");
  }
  if (split.train < 1) out.push_back("split.train must be >= 1");
  if (split.validation < 1) out.push_back("split.validation must be >= 1");
  if (split.test < 1) out.push_back("split.test must be >= 1");
  if (model.prototypes < 1) out.push_back("model.prototypes must be >= 1");
  if (model.features < 1) out.push_back("model.features must be >= 1");
  if (model.hidden < 1) out.push_back("model.hidden must be >= 1");
  if (model.radius < 0) out.push_back("model.radius must be >= 0");
  for (const auto& p : training.problems()) out.push_back("training." + p);
  return out;
}

ExperimentConfig parse_experiment_config(const json& doc) {
  ExperimentConfig c;
  std::vector<std::string> problems;
  Fields top(doc, "", problems, {"seed", "dataset", "synthetic", "split", "model", "training", "evaluation"});
  top.read("seed", c.seed);
  if (top.has("dataset") && !doc.at("dataset").is_null()) {
    std::string path;
    top.read("dataset", path);
    c.dataset = path;
  }

  Fields syn(section(doc, "synthetic"), "synthetic", problems,
             {"width", "height", "classes", "modalities", "labels", "fidelity", "class_prior", "noise",
              "layout", "regions", "seed"});
  syn.read("width", c.synthetic.width);
  syn.read("height", c.synthetic.height);
  syn.read("classes", c.synthetic.classes);
  syn.read("modalities", c.synthetic.modalities);
  syn.read("labels", c.synthetic.labels);
  syn.read("fidelity", c.synthetic.fidelity);
  syn.read("class_prior", c.synthetic.class_prior);
  syn.read("noise", c.synthetic.noise);
  syn.read("regions", c.synthetic.regions);
  if (syn.has("seed")) {
    syn.read("seed", c.synthetic.seed);
    c.synthetic_seed_set = true;
  }
  if (syn.has("layout")) {
    std::string layout;
    syn.read("layout", layout);
    if (layout == "blobs" || layout == "stripes") {
      c.synthetic.layout = layout_from_string(layout);
    } else {
      problems.push_back("synthetic.layout must be \"blobs\" or \"stripes\"");
    }
  }

  Fields split(section(doc, "split"), "split", problems, {"train", "validation", "test"});
  split.read("train", c.split.train);
  split.read("validation", c.split.validation);
  split.read("test", c.split.test);

  Fields model(section(doc, "model"), "model", problems, {"prototypes", "features", "hidden", "radius"});
  model.read("prototypes", c.model.prototypes);
  model.read("features", c.model.features);
  model.read("hidden", c.model.hidden);
  model.read("radius", c.model.radius);

  Fields tr(section(doc, "training"), "training", problems,
            {"learning_rate", "batch_size", "patience", "pretrain_epochs", "fusion_epochs", "finetune_epochs",
             "pretrain", "train_fusion", "finetune"});
  tr.read("learning_rate", c.training.learning_rate);
  tr.read("batch_size", c.training.batch_size);
  tr.read("patience", c.training.patience);
  tr.read("pretrain_epochs", c.training.pretrain_epochs);
  tr.read("fusion_epochs", c.training.fusion_epochs);
  tr.read("finetune_epochs", c.training.finetune_epochs);
  tr.read("pretrain", c.training.pretrain);
  tr.read("train_fusion", c.training.train_fusion);
  tr.read("finetune", c.training.finetune);

  Fields ev(section(doc, "evaluation"), "evaluation", problems, {"nll"});
  if (ev.has("nll")) {
    std::string mode;
    ev.read("nll", mode);
    if (mode == "true_class") {
      c.nll = NllMode::TrueClass;
    } else if (mode == "one_vs_rest") {
      c.nll = NllMode::OneVsRest;
    } else {
      problems.push_back("evaluation.nll must be \"true_class\" or \"one_vs_rest\"");
    }
  }

  for (const auto& p : c.problems()) problems.push_back(p);
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " config problem(s):";
    for (const auto& p : problems) msg += " " + p + ";";
    fail(ErrorCode::Config, msg);
  }
  c.resolve_seeds();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Config, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(doc);
}

json to_json(const ExperimentConfig& c) {
  json doc;
  doc["seed"] = c.seed;
  doc["dataset"] = c.dataset ? json(*c.dataset) : json(nullptr);
  const auto& s = c.synthetic;
  doc["synthetic"] = {{"width", s.width},
                      {"height", s.height},
                      {"classes", s.classes},
                      {"modalities", s.modalities},
                      {"labels", s.frame().labels()},
                      {"fidelity", s.fidelity},
                      {"class_prior", s.prior()},
                      {"noise", s.noise},
                      {"layout", to_string(s.layout)},
                      {"regions", s.regions},
                      {"seed", s.seed}};
  doc["split"] = {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}};
  doc["model"] = {{"prototypes", c.model.prototypes},
                  {"features", c.model.features},
                  {"hidden", c.model.hidden},
                  {"radius", c.model.radius}};
  const auto& t = c.training;
  doc["training"] = {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
                     {"patience", t.patience},           {"pretrain_epochs", t.pretrain_epochs},
                     {"fusion_epochs", t.fusion_epochs}, {"finetune_epochs", t.finetune_epochs},
                     {"pretrain", t.pretrain},           {"train_fusion", t.train_fusion},
                     {"finetune", t.finetune}};
  doc["evaluation"] = {{"nll", nll_name(c.nll)}};
  return doc;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out.flush()) fail(ErrorCode::Io, "failed writing " + path.string());
}

template <typename Fn>
void write_csv(const std::filesystem::path& path, Fn&& fn) {
  std::ostringstream out;
  fn(out);
  write_text(path, out.str());
}

void require_compatible(const Model& model, const Dataset& data) {
  if (model.classes() != data.classes()) {
    fail(ErrorCode::FrameMismatch, "checkpoint has K=" + std::to_string(model.classes()) +
                                       " classes but the dataset has K=" + std::to_string(data.classes()));
  }
  if (model.modalities() != data.modality_count()) {
    fail(ErrorCode::DimensionMismatch, "checkpoint has T=" + std::to_string(model.modalities()) +
                                           " modalities but the dataset has T=" +
                                           std::to_string(data.modality_count()));
  }
  if (!(model.frame() == data.frame)) {
    fail(ErrorCode::FrameMismatch, "checkpoint and dataset frame labels differ");
  }
  for (int t = 0; t < model.modalities(); ++t) {
    if (model.extractor(t).channels() != data.channels[static_cast<std::size_t>(t)]) {
      fail(ErrorCode::DimensionMismatch, "checkpoint extractor " + std::to_string(t) + " expects " +
                                             std::to_string(model.extractor(t).channels()) +
                                             " channels but the dataset has " +
                                             std::to_string(data.channels[static_cast<std::size_t>(t)]));
    }
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                const RunOptions& options) {
  if (const auto list = config.problems(); !list.empty()) {
    std::string msg = std::to_string(list.size()) + " config problem(s):";
    for (const auto& p : list) msg += " " + p + ";";
    fail(ErrorCode::Config, msg);
  }
  if (options.eval_only && !options.checkpoint) {
    fail(ErrorCode::Config, "--eval-only requires --checkpoint");
  }
  const Dataset data = config.dataset ? load_dataset(*config.dataset) : generate(config.synthetic, config.split.total());
  if (data.examples.size() < config.split.total()) {
    fail(ErrorCode::Config, "splits need " + std::to_string(config.split.total()) + " examples but the dataset holds " +
                                std::to_string(data.examples.size()));
  }
  std::optional<Checkpoint> loaded;
  if (options.checkpoint) {
    loaded = load_checkpoint(*options.checkpoint);
    require_compatible(loaded->model, data);
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  const std::string config_text = to_json(config).dump(2) + "\n";
  write_text(out_dir / "config.json", config_text);

  const auto train_set = data.slice(0, config.split.train);
  const auto val_set = data.slice(config.split.train, config.split.validation);
  const auto test_set = data.slice(config.split.train + config.split.validation, config.split.test);

  ExperimentResult result;
  std::optional<Model> model;
  if (options.eval_only) {
    model = loaded->model;
  } else {
    const Model initial = loaded ? loaded->model
                                 : init_model(config.model, data.frame, data.modalities, data.channels,
                                              derive_seed(config.seed, kModelStream));
    auto trained = train(initial, train_set, val_set, config.training);
    write_csv(out_dir / "training_log.csv",
              [&](std::ostream& out) { write_training_log(out, trained.log, data.modalities); });
    save_checkpoint(out_dir / "checkpoint.bin",
                    Checkpoint{trained.model, config_text, trained.optimizer, trained.best});
    result.diverged = trained.diverged;
    result.divergence = trained.divergence;
    model = trained.model;
    result.training = std::move(trained);
  }

  result.report = evaluate(*model, test_set, data.modalities, config.nll);
  write_csv(out_dir / "metrics.csv", [&](std::ostream& out) { write_metrics_csv(out, result.report); });
  write_csv(out_dir / "calibration.csv",
            [&](std::ostream& out) { write_calibration_csv(out, result.report.fused_bins); });
  write_csv(out_dir / "summary.csv", [&](std::ostream& out) { write_summary_csv(out, result.report); });
  write_csv(out_dir / "beta.csv", [&](std::ostream& out) { write_beta_csv(out, model->reliability()); });
  write_csv(out_dir / "beta_table.csv", [&](std::ostream& out) { write_beta_table(out, model->reliability()); });
  return result;
}

void report_beta(const std::filesystem::path& checkpoint, std::ostream& out) {
  write_beta_table(out, load_checkpoint(checkpoint).model.reliability());
}

}  // namespace evifuse
