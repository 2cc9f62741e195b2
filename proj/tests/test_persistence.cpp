#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sys/wait.h>

#include "genrobust/config.hpp"
#include "genrobust/container.hpp"
#include "genrobust/persistence.hpp"
#include "test_util.hpp"

using namespace genrobust;
using genrobust::testing::random_dataset;
using genrobust::testing::random_tensor;
using genrobust::testing::temp_dir;

namespace {

Shape random_shape(Rng& rng) {
  Shape s(rng.uniform_index(4));
  for (auto& d : s) d = rng.uniform_index(5);  // zero extents included
  return s;
}

TensorContainer random_container(Rng& rng) {
  TensorContainer c;
  const std::size_t n = rng.uniform_index(6);
  for (std::size_t e = 0; e < n; ++e) {
    const Shape shape = random_shape(rng);
    const std::string name = "t" + std::to_string(e) + (e % 2 ? "/\xce\xb1" : "");
    switch (rng.uniform_index(3)) {
      case 0: {
        Tensor t(shape);
        for (auto& v : t.data()) v = rng.normal() * 1e3;
        c.add(name, t);
        break;
      }
      case 1: {
        TensorF t(shape);
        for (auto& v : t.data()) v = static_cast<float>(rng.normal());
        c.add(name, t);
        break;
      }
      default: {
        IndexTensor t(shape);
        for (auto& v : t.data()) v = static_cast<std::uint32_t>(rng.uniform_index(std::size_t{1} << 32));
        c.add(name, t);
      }
    }
  }
  if (rng.coin()) c.set_meta("note", "run " + std::to_string(rng.uniform_index(100)));
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GENROBUST_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Container, RandomRoundTripsAreBitIdentical) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto c = random_container(rng);
    const auto bytes = c.serialize();
    const auto back = TensorContainer::deserialize(bytes);
    EXPECT_EQ(back, c);
    EXPECT_EQ(back.serialize(), bytes);
  }
}

TEST(Container, EmptyTensorAndFile) {
  const auto dir = temp_dir("container");
  TensorContainer c;
  c.add("empty", Tensor(Shape{0, 3}));
  save_container(dir + "/c.grtc", c);
  const auto back = load_container(dir + "/c.grtc");
  EXPECT_EQ(back.f64("empty").shape(), (Shape{0, 3}));
  EXPECT_THROW(back.u32("empty"), FormatError);
  EXPECT_THROW(back.f64("missing"), FormatError);
  EXPECT_ANY_THROW(load_container(dir + "/nope.grtc"));
}

TEST(Container, EveryCorruptedByteIsDetected) {
  Rng rng(2);
  std::size_t trials = 0;
  for (int i = 0; i < 20; ++i) {
    const auto bytes = random_container(rng).serialize();
    for (std::size_t pos = 0; pos < bytes.size(); ++pos) {
      auto bad = bytes;
      bad[pos] = static_cast<char>(bad[pos] ^ static_cast<char>(1 + rng.uniform_index(255)));
      EXPECT_ANY_THROW(TensorContainer::deserialize(bad)) << "byte " << pos;
      ++trials;
    }
  }
  EXPECT_GT(trials, 100u);
  EXPECT_ANY_THROW(TensorContainer::deserialize("GRTC"));
}

TEST(Container, DuplicateNamesRejected) {
  TensorContainer c;
  c.add("a", Tensor(Shape{1}));
  EXPECT_ANY_THROW(c.add("a", Tensor(Shape{1})));
}

TEST(Artifacts, DatasetRoundTrip) {
  Rng rng(3);
  const auto dir = temp_dir("artifacts");
  const auto d = random_dataset(17, {1, 3, 2}, 4, rng);
  save_dataset(dir + "/d.grtc", d, "abc");
  const auto back = load_dataset(dir + "/d.grtc");
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.num_classes, 4u);
  EXPECT_EQ(artifact_config_hash(dir + "/d.grtc"), "abc");
}

TEST(Artifacts, PseudoLabeledRoundTrip) {
  Rng rng(4);
  const auto dir = temp_dir("pseudo");
  PseudoLabeledSet s;
  s.images = random_tensor({5, 1, 2, 2}, rng, 0, 1);
  s.labels = {0, 1, 2, 1, 0};
  s.scores = {0.5, 0.9, 0.4, 1.0, 0.34};
  s.num_classes = 3;
  s.labeler_id = "f_nr.grtc";
  save_pseudo_labeled(dir + "/p.grtc", s, "h");
  const auto back = load_pseudo_labeled(dir + "/p.grtc");
  EXPECT_EQ(back.images, s.images);
  EXPECT_EQ(back.labels, s.labels);
  EXPECT_EQ(back.scores, s.scores);
  EXPECT_EQ(back.labeler_id, s.labeler_id);
}

TEST(Artifacts, WrongKindIsRejected) {
  Rng rng(5);
  const auto dir = temp_dir("kind");
  save_dataset(dir + "/d.grtc", random_dataset(3, {1, 1, 1}, 2, rng), "");
  EXPECT_ANY_THROW(load_classifier(dir + "/d.grtc"));
}

TEST(Config, UnknownKeyNamesItsPath) {
  try {
    parse_config(nlohmann::json::parse(R"({"train": {"inner": {"stpes": 3}}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.inner.stpes"), std::string::npos);
  }
}

TEST(Config, RangeAndTypeErrors) {
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"train": {"alpha": 1.5}})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"train": {"batch_size": 0}})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"train": {"epochs": "ten"}})")), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"train": {"perturbation": {"norm": "l1"}}})")), ConfigError);
}

TEST(Config, JsonRoundTripPreservesHash) {
  const auto c = parse_config(nlohmann::json::parse(R"({"train": {"alpha": 0.7, "beta": 3}, "seed": 9})"));
  EXPECT_EQ(c.train.alpha, 0.7);
  EXPECT_EQ(c.seed, 9u);
  const auto again = parse_config(to_json(c));
  EXPECT_EQ(config_hash(again), config_hash(c));
  auto other = c;
  other.train.beta = 4;
  EXPECT_NE(config_hash(other), config_hash(c));
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
}

TEST(Cli, ExitCodes) {
  const auto dir = temp_dir("cli");
  EXPECT_EQ(run_cli(""), 1);                                  // no subcommand
  EXPECT_EQ(run_cli("train --out " + dir + "/m.grtc"), 1);    // missing --data
  std::ofstream(dir + "/bad.json") << R"({"train": {"alpah": 1}})";
  EXPECT_EQ(run_cli("make-data -c " + dir + "/bad.json -o " + dir), 1);
  EXPECT_EQ(run_cli("train-nonrobust -d " + dir + "/missing.grtc -o " + dir + "/m.grtc"), 2);

  std::ofstream(dir + "/ok.json") << R"({"data": {"train_size": 20, "test_size": 8, "holdout_size": 4}})";
  ASSERT_EQ(run_cli("make-data -c " + dir + "/ok.json -o " + dir), 0);
  const auto train = load_dataset(dir + "/train.grtc");
  EXPECT_EQ(train.size(), 20u);
  EXPECT_EQ(load_dataset(dir + "/holdout.grtc").size(), 4u);
  EXPECT_EQ(artifact_config_hash(dir + "/train.grtc"),
            config_hash(parse_config(nlohmann::json::parse(R"({"data": {"train_size": 20, "test_size": 8, "holdout_size": 4}})"))));
}
