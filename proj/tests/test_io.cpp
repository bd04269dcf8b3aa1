#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "evifuse/checkpoint.hpp"
#include "evifuse/dataset.hpp"
#include "evifuse/error.hpp"
#include "evifuse/experiment.hpp"

using namespace evifuse;
namespace fs = std::filesystem;

namespace {

std::string bytes_of(const Dataset& d) {
  std::ostringstream out;
  write_dataset(out, d);
  return out.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("evifuse_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_experiment(std::uint64_t seed) {
  nlohmann::json doc = {
      {"seed", seed},
      {"synthetic", {{"width", 8}, {"height", 8}, {"regions", 4}}},
      {"split", {{"train", 6}, {"validation", 2}, {"test", 3}}},
      {"model", {{"prototypes", 4}, {"hidden", 4}}},
      {"training", {{"pretrain_epochs", 2}, {"fusion_epochs", 3}, {"finetune_epochs", 1}, {"learning_rate", 0.05}}}};
  return parse_experiment_config(doc);
}

Error config_error(const nlohmann::json& doc) {
  try {
    parse_experiment_config(doc);
  } catch (const Error& e) {
    return e;
  }
  return Error(ErrorCode::InvalidArgument, "no error");
}

}  // namespace

TEST(Dataset, SaveLoadSaveIsByteIdentical) {
  SyntheticSpec spec;
  spec.width = 6;
  spec.height = 5;
  spec.seed = 3;
  const auto d = generate(spec, 4);
  const auto first = bytes_of(d);
  std::istringstream in(first);
  const auto back = read_dataset(in);
  EXPECT_EQ(bytes_of(back), first);
  EXPECT_EQ(back.examples[2].images[1], d.examples[2].images[1]);
  EXPECT_EQ(back.examples[3].labels, d.examples[3].labels);

  const auto dir = scratch("dataset");
  save_dataset(dir / "a.evd", d);
  save_dataset(dir / "b.evd", load_dataset(dir / "a.evd"));
  EXPECT_EQ(read_file(dir / "a.evd"), read_file(dir / "b.evd"));
}

TEST(Dataset, CorruptionIsRejected) {
  SyntheticSpec spec;
  spec.width = 4;
  spec.height = 4;
  const auto bytes = bytes_of(generate(spec, 2));

  std::istringstream truncated(bytes.substr(0, bytes.size() - 7));
  try {
    read_dataset(truncated);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Truncated);
    EXPECT_NE(std::string(e.what()).find("unexpected end of payload"), std::string::npos);
  }

  std::string wrong = bytes;
  wrong[0] = 'X';
  std::istringstream bad_magic(wrong);
  try {
    read_dataset(bad_magic);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("not a dataset container"), std::string::npos);
  }

  std::string version = bytes;
  version[8] = 9;
  std::istringstream bad_version(version);
  try {
    read_dataset(bad_version);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Version);
  }

  std::istringstream trailing(bytes + "x");
  EXPECT_THROW(read_dataset(trailing), Error);
  EXPECT_THROW(load_dataset("/nonexistent/evifuse.evd"), Error);
}

TEST(Generator, PerfectFidelityWithoutNoiseRendersClassLevels) {
  SyntheticSpec spec;
  spec.fidelity.assign(6, 1.0);
  spec.noise = 0.0;
  spec.seed = 5;
  const auto d = generate(spec, 5);
  for (const auto& ex : d.examples) {
    for (const auto& img : ex.images) {
      for (std::size_t n = 0; n < img.voxels(); ++n) {
        EXPECT_EQ(img.data[n], class_intensity(ex.labels.labels[n], 3));
      }
    }
  }
  EXPECT_NE(class_intensity(0, 3), class_intensity(1, 3));
  EXPECT_NE(class_intensity(1, 3), class_intensity(2, 3));
}

TEST(Generator, FidelityControlsConfusion) {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.fidelity = {1.0, 0.5, 0.5, 1.0};
  spec.noise = 0.0;
  spec.seed = 6;
  const auto d = generate(spec, 40);
  std::size_t total[2][2] = {}, faithful[2][2] = {};
  for (const auto& ex : d.examples) {
    for (int t = 0; t < 2; ++t) {
      for (std::size_t n = 0; n < ex.labels.voxels(); ++n) {
        const int k = ex.labels.labels[n];
        ++total[t][k];
        if (ex.images[static_cast<std::size_t>(t)].data[n] == class_intensity(k, 2)) ++faithful[t][k];
      }
    }
  }
  EXPECT_EQ(faithful[0][0], total[0][0]);
  EXPECT_EQ(faithful[1][1], total[1][1]);
  EXPECT_NEAR(static_cast<double>(faithful[0][1]) / static_cast<double>(total[0][1]), 0.5, 0.03);
  EXPECT_NEAR(static_cast<double>(faithful[1][0]) / static_cast<double>(total[1][0]), 0.5, 0.03);
}

TEST(Generator, ClassFrequenciesFollowPrior) {
  SyntheticSpec spec;
  spec.width = 16;
  spec.height = 16;
  spec.class_prior = {0.5, 0.3, 0.2};
  spec.seed = 7;
  const auto d = generate(spec, 600);
  std::vector<double> freq(3, 0.0);
  double n = 0.0;
  for (const auto& ex : d.examples) {
    for (auto l : ex.labels.labels) freq[l] += 1.0;
    n += static_cast<double>(ex.labels.voxels());
  }
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(freq[static_cast<std::size_t>(k)] / n, spec.class_prior[static_cast<std::size_t>(k)], 0.03);
}

TEST(Generator, DeterministicAndValidated) {
  SyntheticSpec spec;
  spec.layout = Layout::Stripes;
  spec.seed = 8;
  EXPECT_EQ(bytes_of(generate(spec, 3)), bytes_of(generate(spec, 3)));
  spec.seed = 9;
  const auto other = bytes_of(generate(spec, 3));
  spec.seed = 8;
  EXPECT_NE(bytes_of(generate(spec, 3)), other);

  SyntheticSpec bad;
  bad.fidelity = {1.0, 0.4, 0.5, 1.0, 0.5, 1.2};
  bad.noise = -1.0;
  EXPECT_EQ(bad.problems().size(), 3u);
  EXPECT_THROW(generate(bad, 1), Error);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const auto config = tiny_experiment(1);
  const int channels[] = {1, 1};
  Checkpoint ckpt{init_model(config.model, Frame::indexed(3), {"A", "B"}, channels, 4), to_json(config).dump(),
                  OptimizerState(5), BestRecord{7, 2, 0.625}};
  ckpt.optimizer->first = {1, 2, 3, 4, 5};
  ckpt.optimizer->step = 11;
  std::ostringstream out;
  write_checkpoint(out, ckpt);
  std::istringstream in(out.str());
  const auto back = read_checkpoint(in);
  std::ostringstream again;
  write_checkpoint(again, back);
  EXPECT_EQ(again.str(), out.str());
  EXPECT_EQ(pack_parameters(back.model), pack_parameters(ckpt.model));
  EXPECT_EQ(back.config_json, ckpt.config_json);
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_TRUE(*back.optimizer == *ckpt.optimizer);
  EXPECT_EQ(back.best.epoch, 7);
  EXPECT_EQ(back.best.val_dice_fused, 0.625);

  const std::string bytes = out.str();
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), Error);
  std::string wrong = bytes;
  wrong[1] = '?';
  std::istringstream bad(wrong);
  try {
    read_checkpoint(bad);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("not a checkpoint"), std::string::npos);
  }
}

TEST(Config, DefaultsAndDerivedSeeds) {
  const auto c = parse_experiment_config(nlohmann::json{{"seed", 5}});
  EXPECT_EQ(c.split.train, 64u);
  EXPECT_EQ(c.split.validation, 16u);
  EXPECT_EQ(c.split.test, 16u);
  EXPECT_EQ(c.synthetic.width, 32);
  EXPECT_EQ(c.synthetic.classes, 3);
  EXPECT_EQ(c.training.learning_rate, 0.01);
  EXPECT_EQ(c.training.batch_size, 4);
  EXPECT_EQ(c.training.patience, 10);
  EXPECT_NE(c.synthetic.seed, c.training.seed);
  const auto again = parse_experiment_config(to_json(c));
  EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(Config, ErrorsAreListedTogether) {
  const auto e = config_error(nlohmann::json{{"seed", "seven"},
                                             {"colour", "blue"},
                                             {"synthetic", {{"noise", -1.0}, {"layout", "zigzag"}}},
                                             {"training", {{"learning_rate", 0}, {"patience", -2}, {"epochs", 3}}},
                                             {"evaluation", {{"nll", "binary"}}}});
  EXPECT_EQ(e.code(), ErrorCode::Config);
  const std::string msg = e.what();
  for (const char* needle : {"seed", "colour", "synthetic.noise", "synthetic.layout", "learning_rate", "patience",
                             "training.epochs", "evaluation.nll"}) {
    EXPECT_NE(msg.find(needle), std::string::npos) << needle << " missing from: " << msg;
  }
}

TEST(Experiment, WritesArtifactsAndEvaluatesCheckpoint) {
  const auto dir = scratch("run");
  const auto config = tiny_experiment(2);
  const auto result = run_experiment(config, dir);
  for (const char* name : {"config.json", "training_log.csv", "checkpoint.bin", "metrics.csv", "calibration.csv",
                           "summary.csv", "beta.csv", "beta_table.csv"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  EXPECT_EQ(result.report.examples.size(), 3u);
  std::istringstream metrics(read_file(dir / "metrics.csv"));
  std::string header;
  std::getline(metrics, header);
  EXPECT_EQ(header, "example_id,dice_fused,dice_modality_A,dice_modality_B,brier,nll,ece");
  std::istringstream calib(read_file(dir / "calibration.csv"));
  std::getline(calib, header);
  EXPECT_EQ(header, "bin,count,accuracy,confidence");

  // Evaluation alone reproduces the report of the trained run.
  const auto eval_dir = scratch("eval");
  RunOptions eval_only;
  eval_only.eval_only = true;
  eval_only.checkpoint = dir / "checkpoint.bin";
  const auto evaluated = run_experiment(config, eval_dir, eval_only);
  EXPECT_FALSE(evaluated.training.has_value());
  EXPECT_EQ(read_file(eval_dir / "metrics.csv"), read_file(dir / "metrics.csv"));
  EXPECT_EQ(read_file(eval_dir / "summary.csv"), read_file(dir / "summary.csv"));

  std::ostringstream table;
  report_beta(dir / "checkpoint.bin", table);
  std::istringstream rows(table.str());
  std::string line;
  std::getline(rows, line);
  int modality_rows = 0;
  while (std::getline(rows, line)) {
    ++modality_rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 3) << line;
  }
  EXPECT_EQ(modality_rows, 2);
}

TEST(Experiment, EvalOnlyNeedsCheckpoint) {
  RunOptions options;
  options.eval_only = true;
  try {
    run_experiment(tiny_experiment(3), scratch("nockpt"), options);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
  }
}

TEST(Experiment, ClassCountMismatchNamesBothValues) {
  const auto dir = scratch("mismatch");
  const auto config = tiny_experiment(4);
  const int channels[] = {1, 1};
  ModelConfig mc = config.model;
  save_checkpoint(dir / "k2.bin", Checkpoint{init_model(mc, Frame::indexed(2), {"A", "B"}, channels, 1), "{}",
                                             std::nullopt, BestRecord{}});
  RunOptions options;
  options.eval_only = true;
  options.checkpoint = dir / "k2.bin";
  try {
    run_experiment(config, dir / "out", options);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("K=2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("K=3"), std::string::npos) << msg;
  }
}

TEST(Experiment, FreshCheckpointReportsHalf) {
  const auto dir = scratch("fresh");
  const int channels[] = {1, 1};
  save_checkpoint(dir / "fresh.bin", Checkpoint{init_model(ModelConfig{}, Frame::indexed(3), {"A", "B"}, channels, 1),
                                                "{}", std::nullopt, BestRecord{}});
  std::ostringstream table;
  report_beta(dir / "fresh.bin", table);
  std::istringstream rows(table.str());
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) EXPECT_NE(line.find(",0.500,0.500,0.500"), std::string::npos) << line;
}

TEST(Experiment, DatasetFileInput) {
  const auto dir = scratch("file");
  auto config = tiny_experiment(5);
  save_dataset(dir / "data.evd", generate(config.synthetic, config.split.total()));
  auto from_file = config;
  from_file.dataset = (dir / "data.evd").string();
  run_experiment(config, dir / "synthetic");
  run_experiment(from_file, dir / "loaded");
  EXPECT_EQ(read_file(dir / "synthetic" / "metrics.csv"), read_file(dir / "loaded" / "metrics.csv"));

  auto too_big = from_file;
  too_big.split.train = 100;
  EXPECT_THROW(run_experiment(too_big, dir / "big"), Error);
}
