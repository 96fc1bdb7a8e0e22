#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "finetag/trainer.hpp"
#include "support/planted.hpp"
#include "support/temp_dir.hpp"

using finetag::Dtype;
using finetag::Error;
using finetag::ErrorCode;
using finetag::FeatureStore;
using finetag::LossKind;
using finetag::ModelConfig;
using finetag::ModelParams;
using finetag::OptimizerKind;
using finetag::TrainConfig;
using finetag::TrainResult;
using finetag::TrainSinks;

namespace {

struct Fixture {
  testsupport::TempDir dir;
  testsupport::PlantedDataset data;
  testsupport::PlantedPaths paths;
  std::unique_ptr<FeatureStore> store;
  finetag::ProjectionBasis basis;

  explicit Fixture(testsupport::PlantedOptions opt = {}) {
    data = testsupport::make_planted(opt);
    paths = testsupport::write_bundle(data, dir.path());
    store = std::make_unique<FeatureStore>(paths.features);
    basis.weights = data.true_params.proj_weights;
    basis.bias = data.true_params.proj_bias;
  }

  ModelConfig config(Dtype dtype = Dtype::f64) const {
    ModelConfig c = data.config;
    c.dtype = dtype;
    return c;
  }
};

testsupport::PlantedOptions small_options() {
  testsupport::PlantedOptions opt;
  opt.num_images = 48;
  opt.train_count = 40;
  return opt;
}

}  // namespace

TEST_CASE("training reduces the loss on a learnable dataset") {
  Fixture fx(small_options());
  auto config = fx.config();
  auto params = finetag::init_params<double>(config, fx.basis, 3);

  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 12;
  tc.learning_rate = 1e-3;
  tc.optimizer = OptimizerKind::adam;
  tc.loss = LossKind::smooth;
  tc.seed = 5;

  auto result = finetag::train(config, params, *fx.store, fx.data.labels,
                               fx.data.split, tc);
  REQUIRE(result.history.size() == 12);
  CHECK(result.history.back().mean_loss < 0.6 * result.history.front().mean_loss);
  // Validation ranking quality should climb as the loss falls.
  REQUIRE(result.history.front().val_avgprec.has_value());
  REQUIRE(result.history.back().val_avgprec.has_value());
  CHECK(*result.history.back().val_avgprec > *result.history.front().val_avgprec);
}

TEST_CASE("the hinge loss trains too") {
  Fixture fx(small_options());
  auto config = fx.config();
  auto params = finetag::init_params<double>(config, fx.basis, 3);

  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 12;
  tc.learning_rate = 1e-3;
  tc.loss = LossKind::hinge;
  tc.seed = 5;

  auto result = finetag::train(config, params, *fx.store, fx.data.labels,
                               fx.data.split, tc);
  CHECK(result.history.back().mean_loss < result.history.front().mean_loss);
}

TEST_CASE("training is bit-deterministic in the seed and thread count") {
  Fixture fx(small_options());
  auto config = fx.config();

  auto run = [&](std::uint64_t seed, std::uint32_t threads) {
    auto params = finetag::init_params<double>(config, fx.basis, 11);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = 3;
    tc.learning_rate = 1e-3;
    tc.seed = seed;
    tc.threads = threads;
    finetag::train(config, params, *fx.store, fx.data.labels, fx.data.split, tc);
    return params;
  };

  auto a = run(9, 1);
  auto b = run(9, 1);
  auto c = run(9, 3);  // parallel forward passes must not change the result
  auto d = run(10, 1);

  CHECK(a.fc_weights.data()[0] == b.fc_weights.data()[0]);
  CHECK(std::equal(a.fc_weights.data().begin(), a.fc_weights.data().end(),
                   b.fc_weights.data().begin()));
  CHECK(std::equal(a.fc_weights.data().begin(), a.fc_weights.data().end(),
                   c.fc_weights.data().begin()));
  CHECK(std::equal(a.proj_weights.data().begin(), a.proj_weights.data().end(),
                   c.proj_weights.data().begin()));
  CHECK_FALSE(std::equal(a.fc_weights.data().begin(), a.fc_weights.data().end(),
                         d.fc_weights.data().begin()));
}

TEST_CASE("a zero learning rate leaves the parameters untouched") {
  Fixture fx(small_options());
  auto config = fx.config();
  auto params = finetag::init_params<double>(config, fx.basis, 2);
  auto before = params.fc_weights;

  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 2;
  tc.learning_rate = 0.0;
  tc.seed = 1;

  auto result = finetag::train(config, params, *fx.store, fx.data.labels,
                               fx.data.split, tc);
  CHECK(std::equal(before.data().begin(), before.data().end(),
                   params.fc_weights.data().begin()));
  // And with frozen parameters both epochs see the same mean loss.
  CHECK(result.history[0].mean_loss ==
        Catch::Approx(result.history[1].mean_loss).epsilon(1e-12));
}

TEST_CASE("images without a rankable label set are skipped and counted") {
  Fixture fx(small_options());
  auto config = fx.config();

  // Rebuild the labels with two broken training rows: one empty, one full.
  auto labels = fx.data.labels;
  const std::uint32_t empty_row = 0, full_row = 1;
  for (std::uint32_t c = 0; c < labels.cols(); ++c) {
    labels.set(empty_row, c, false);
    labels.set(full_row, c, true);
  }

  auto params = finetag::init_params<double>(config, fx.basis, 4);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 1;
  tc.learning_rate = 1e-4;
  tc.seed = 2;

  auto result = finetag::train(config, params, *fx.store, labels, fx.data.split, tc);
  CHECK(result.history[0].skipped == 2);
}

TEST_CASE("an untrainable dataset raises AllImagesSkipped") {
  Fixture fx(small_options());
  auto config = fx.config();
  auto labels = fx.data.labels;
  for (std::uint32_t r = 0; r < labels.rows(); ++r)
    for (std::uint32_t c = 0; c < labels.cols(); ++c) labels.set(r, c, false);

  auto params = finetag::init_params<double>(config, fx.basis, 4);
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_MATCHES(
      finetag::train(config, params, *fx.store, labels, fx.data.split, tc), Error,
      Catch::Matchers::Predicate<Error>([](const Error& e) {
        return e.code() == ErrorCode::AllImagesSkipped;
      }));
}

TEST_CASE("a train id missing from the feature store fails fast") {
  Fixture fx(small_options());
  auto config = fx.config();
  auto params = finetag::init_params<double>(config, fx.basis, 4);
  auto split = fx.data.split;
  split.train_ids.push_back(9999);

  TrainConfig tc;
  CHECK_THROWS_MATCHES(
      finetag::train(config, params, *fx.store, fx.data.labels, split, tc), Error,
      Catch::Matchers::Predicate<Error>([](const Error& e) {
        return e.code() == ErrorCode::MissingId;
      }));
}

TEST_CASE("checkpoints and history are written per epoch") {
  Fixture fx(small_options());
  auto config = fx.config(Dtype::f32);
  auto params = finetag::init_params<float>(config, fx.basis, 6);

  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 3;
  tc.learning_rate = 1e-3;
  tc.seed = 7;

  TrainSinks sinks;
  sinks.checkpoint_path = fx.dir / "model.ftmd";
  std::ostringstream history;
  sinks.history = &history;
  std::uint32_t callbacks = 0;
  sinks.on_epoch = [&](const finetag::EpochRecord& rec) {
    ++callbacks;
    CHECK(rec.epoch == callbacks);
  };

  finetag::train(config, params, *fx.store, fx.data.labels, fx.data.split, tc, sinks);
  CHECK(callbacks == 3);

  // The checkpoint on disk holds the final parameters.
  std::ifstream in(sinks.checkpoint_path, std::ios::binary);
  REQUIRE(in.good());
  auto [loaded_config, loaded] = finetag::read_checkpoint<float>(in);
  CHECK(loaded_config == config);
  CHECK(std::equal(params.fc_weights.data().begin(), params.fc_weights.data().end(),
                   loaded.fc_weights.data().begin()));

  // History is JSON lines with the agreed fields.
  std::istringstream lines(history.str());
  std::string line;
  std::uint32_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch") == n);
    CHECK(j.at("mean_loss").is_number());
    CHECK((j.at("val_avgprec").is_number() || j.at("val_avgprec").is_null()));
    CHECK(j.at("skipped").is_number_unsigned());
  }
  CHECK(n == 3);
}

TEST_CASE("an empty validation split reports a null val metric") {
  Fixture fx(small_options());
  auto config = fx.config();
  auto params = finetag::init_params<double>(config, fx.basis, 6);
  auto split = fx.data.split;
  split.val_ids.clear();

  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 1;
  tc.learning_rate = 1e-4;

  std::ostringstream history;
  TrainSinks sinks;
  sinks.history = &history;
  auto result = finetag::train(config, params, *fx.store, fx.data.labels, split, tc, sinks);
  CHECK_FALSE(result.history[0].val_avgprec.has_value());
  auto j = nlohmann::json::parse(history.str());
  CHECK(j.at("val_avgprec").is_null());
}

TEST_CASE("a diverging run cannot clobber the last good checkpoint") {
  Fixture fx(small_options());
  auto config = fx.config(Dtype::f32);
  auto checkpoint = fx.dir / "model.ftmd";

  TrainSinks sinks;
  sinks.checkpoint_path = checkpoint;

  {
    auto params = finetag::init_params<float>(config, fx.basis, 8);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = 1;
    tc.learning_rate = 1e-4;
    finetag::train(config, params, *fx.store, fx.data.labels, fx.data.split, tc, sinks);
  }
  auto good_bytes = finetag::io::read_file(checkpoint);

  {
    auto params = finetag::init_params<float>(config, fx.basis, 8);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = 1;
    tc.learning_rate = 1e30;  // f32 overflows to inf within the first epoch
    tc.optimizer = OptimizerKind::sgd_momentum;
    CHECK_THROWS_AS(
        finetag::train(config, params, *fx.store, fx.data.labels, fx.data.split, tc, sinks),
        Error);
  }

  // The failed run aborted before its end-of-epoch write, so the previous
  // checkpoint must still be present, intact, and loadable.
  CHECK(finetag::io::read_file(checkpoint) == good_bytes);
  std::ifstream in(checkpoint, std::ios::binary);
  CHECK_NOTHROW(finetag::read_checkpoint<float>(in));
}

TEST_CASE("score_images returns per-id forward passes in order") {
  Fixture fx(small_options());
  auto config = fx.config();
  auto params = finetag::init_params<double>(config, fx.basis, 12);

  std::vector<std::uint32_t> ids{5, 2, 9};
  auto scores = finetag::score_images(config, params, *fx.store, ids);
  REQUIRE(scores.rows() == 3);
  REQUIRE(scores.cols() == config.num_classes);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto alpha = fx.store->read(ids[i]).values.cast<double>();
    auto logits = finetag::model_forward(config, params, alpha);
    for (std::uint32_t n = 0; n < config.num_classes; ++n)
      CHECK(scores(std::uint32_t(i), n) == logits[n]);
  }

  // Threaded scoring is bit-identical to sequential scoring.
  auto threaded = finetag::score_images(config, params, *fx.store, ids, 4);
  CHECK(std::equal(scores.data().begin(), scores.data().end(),
                   threaded.data().begin()));
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_MATCHES(tc.validate(), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::ConfigMismatch;
                       }));
  tc = TrainConfig{};
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.threads = 0;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.learning_rate = -1e-4;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  CHECK_NOTHROW(tc.validate());
  CHECK(tc.resolved_lr() == 1e-5);  // Adam default
  tc.optimizer = OptimizerKind::sgd_momentum;
  CHECK(tc.resolved_lr() == 1e-4);
  tc.learning_rate = 0.5;
  CHECK(tc.resolved_lr() == 0.5);
}

TEST_CASE("an empty training split is refused") {
  Fixture fx(small_options());
  auto config = fx.config();
  auto params = finetag::init_params<double>(config, fx.basis, 1);
  finetag::DatasetSplit empty;
  TrainConfig tc;
  CHECK_THROWS_MATCHES(
      finetag::train(config, params, *fx.store, fx.data.labels, empty, tc), Error,
      Catch::Matchers::Predicate<Error>([](const Error& e) {
        return e.code() == ErrorCode::AllImagesSkipped;
      }));
}
