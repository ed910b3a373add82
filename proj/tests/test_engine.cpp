#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "engine_fixture.hpp"
#include "samda/checkpoint.hpp"
#include "samda/errors.hpp"
#include "samda/report.hpp"
#include "samda/ttda.hpp"

namespace samda {
namespace {

namespace fs = std::filesystem;
using adapt::Method;
using testing::tiny_train;

class EngineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<testing::TempDir>("engine");
    data::generate_dataset(testing::tiny_dataset(), data_dir());
    base_ = std::make_unique<engine::TrainResult>(
        engine::train_supervised(tiny_train(Method::kFullFt, data_dir()), dir_->path() / "base"));
  }
  static void TearDownTestSuite() {
    base_.reset();
    dir_.reset();
  }
  static fs::path data_dir() { return dir_->path() / "data"; }
  static fs::path scratch(const std::string& name) { return dir_->path() / name; }
  static engine::TrainConfig adapted(Method m) {
    auto c = tiny_train(m, data_dir());
    c.base_checkpoint = base_->checkpoint.string();
    return c;
  }

  static std::unique_ptr<testing::TempDir> dir_;
  static std::unique_ptr<engine::TrainResult> base_;
};

std::unique_ptr<testing::TempDir> EngineTest::dir_;
std::unique_ptr<engine::TrainResult> EngineTest::base_;

TEST(Prompt, InteriorPointOfSquare) {
  loss::BinaryMask m{10, 10, std::vector<std::uint8_t>(100, 0)};
  for (int y = 2; y <= 6; ++y)
    for (int x = 3; x <= 7; ++x) m.data[y * 10 + x] = 1;
  const auto p = engine::interior_point(m, 0, 0);
  EXPECT_EQ(p.x, 5.0);
  EXPECT_EQ(p.y, 4.0);
  EXPECT_TRUE(p.positive);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto q = engine::interior_point(m, seed, 2);
    EXPECT_LE(std::fabs(q.x - 5.0), 2.0);
    EXPECT_LE(std::fabs(q.y - 4.0), 2.0);
    EXPECT_EQ(m.data[int(q.y) * 10 + int(q.x)], 1);
  }
  loss::BinaryMask empty{4, 4, std::vector<std::uint8_t>(16, 0)};
  EXPECT_THROW(engine::interior_point(empty, 0, 0), ValidationError);
}

TEST(Prompt, InteriorPointAvoidsHoleAtCentroid) {
  // Ring: the centroid is in the hole, the prompt must land on the mask.
  loss::BinaryMask m{11, 11, std::vector<std::uint8_t>(121, 0)};
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      const int r2 = (x - 5) * (x - 5) + (y - 5) * (y - 5);
      m.data[y * 11 + x] = r2 >= 4 && r2 <= 20;
    }
  const auto p = engine::interior_point(m, 0, 0);
  EXPECT_EQ(m.data[int(p.y) * 11 + int(p.x)], 1);
}

TEST(Prompt, EvalPromptDependsOnIdsOnly) {
  auto a = data::generate_sample(data::default_source_domain(), data::volume_seed(1, 4), 2);
  auto b = data::generate_sample(data::default_target_domain(), data::volume_seed(1, 4), 2);
  a.volume_id = b.volume_id = 4;
  const auto pa = engine::eval_prompt(a, 2), pb = engine::eval_prompt(b, 2);
  EXPECT_EQ(pa.points[0].x, pb.points[0].x);
  EXPECT_EQ(pa.points[0].y, pb.points[0].y);
}

TEST_F(EngineTest, OracleStubScoresOne) {
  const auto ds = engine::Dataset::open(data_dir());
  const auto samples = ds.load("target", "test");
  engine::Predictor oracle = [](const data::Sample& s, const sam::PromptSet&) {
    std::vector<float> v;
    for (auto m : s.mask.data) v.push_back(m ? 10.0f : -10.0f);
    return Tensor<float>::from({s.height, s.width}, v);
  };
  const auto r = engine::evaluate_predictor(oracle, samples, "target", "test", 2);
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_EQ(r.per_image.size(), samples.size());
  EXPECT_EQ(r.sample_ids.front(), "v0004_s00");
}

TEST_F(EngineTest, EvaluationIsIdempotent) {
  auto loaded = engine::load_model(base_->checkpoint);
  const auto samples = engine::Dataset::open(data_dir()).load("source", "test");
  const auto a = engine::evaluate(*loaded.model, samples, "source", "test");
  const auto b = engine::evaluate(*loaded.model, samples, "source", "test");
  EXPECT_EQ(a.per_image, b.per_image);
  // The stored evaluation from training matches a fresh one on the reloaded model.
  EXPECT_EQ(base_->evaluations.at(0).per_image, a.per_image);
}

TEST_F(EngineTest, BaseTrainingLossDecreases) {
  ASSERT_EQ(base_->epoch_loss.size(), 3u);
  EXPECT_LT(base_->epoch_loss[2], base_->epoch_loss[0]);
  EXPECT_EQ(base_->val_iou.size(), 4u);
  EXPECT_EQ(base_->trainable, base_->total);
}

TEST_F(EngineTest, TrainingIsSeedDeterministic) {
  auto cfg = adapted(Method::kSamDaDec);
  cfg.epochs = 2;
  const auto a = engine::train_supervised(cfg, scratch("det_a"));
  const auto b = engine::train_supervised(cfg, scratch("det_b"));
  EXPECT_EQ(read_file_bytes(a.checkpoint), read_file_bytes(b.checkpoint));
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  cfg.seed = 1;
  const auto c = engine::train_supervised(cfg, scratch("det_c"));
  EXPECT_NE(a.epoch_loss, c.epoch_loss);
}

TEST_F(EngineTest, AdapterStartsFromBaseAndKeepsItFrozen) {
  const auto r = engine::train_supervised(adapted(Method::kSamDaDec), scratch("dec"));
  EXPECT_EQ(r.val_iou[0], base_->val_iou[base_->best_epoch]);
  EXPECT_LT(double(r.trainable) / double(r.total), 0.5);

  auto base = engine::load_model(base_->checkpoint);
  auto tuned = engine::load_model(r.checkpoint);
  EXPECT_EQ(tuned.spec.method, Method::kSamDaDec);
  for (const auto& [name, p] : base.model->params()) {
    const auto a = p.tensor.data();
    const auto b = tuned.model->params().tensor(name).data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end())) << name;
  }
}

TEST_F(EngineTest, TrainValidation) {
  auto cfg = adapted(Method::kSamDaDec);
  cfg.base_checkpoint.clear();
  EXPECT_THROW(engine::train_supervised(cfg, scratch("bad")), ValidationError);
  cfg = adapted(Method::kSamDaDec);
  cfg.data_dir = (scratch("missing")).string();
  EXPECT_THROW(engine::train_supervised(cfg, scratch("bad")), ValidationError);
  EXPECT_THROW(engine::load_model(scratch("missing.sdck")), ValidationError);
}

TEST_F(EngineTest, SidecarRoundTrip) {
  const auto j = config::read_json_file(engine::sidecar_path(base_->checkpoint));
  const auto spec = engine::model_spec_from_json(j);
  EXPECT_EQ(spec.model, testing::tiny_engine_model());
  EXPECT_EQ(spec.method, Method::kFullFt);
}

ttda::TTDAConfig quiet_ttda() {
  ttda::TTDAConfig c;
  c.iterations = 2;
  return c;
}

TEST_F(EngineTest, TtdaZeroWeightsIsNoOp) {
  auto loaded = engine::load_model(base_->checkpoint);
  auto cfg = quiet_ttda();
  cfg.loss.lambda_entropy = cfg.loss.lambda_proximity = cfg.loss.lambda_contrastive = 0;
  ttda::prepare_model(loaded, cfg);
  const auto samples = engine::Dataset::open(data_dir()).load("target", "test");
  const auto r = ttda::run_ttda(*loaded.model, samples, cfg);
  ASSERT_EQ(r.samples.size(), samples.size());
  for (const auto& s : r.samples) EXPECT_EQ(s.iou_before, s.iou_after);
  EXPECT_EQ(r.restores_verified, samples.size());
}

TEST_F(EngineTest, TtdaRestoresWeightsAfterEverySample) {
  auto loaded = engine::load_model(base_->checkpoint);
  auto cfg = quiet_ttda();
  cfg.lr = 1e-2;
  ttda::prepare_model(loaded, cfg);
  const auto before = encode_checkpoint(to_checkpoint(loaded.model->params()));
  const auto samples = engine::Dataset::open(data_dir()).load("target", "test");
  const auto r = ttda::run_ttda(*loaded.model, samples, cfg);
  EXPECT_EQ(r.restores_verified, samples.size());
  EXPECT_EQ(encode_checkpoint(to_checkpoint(loaded.model->params())), before);
  bool any_contrastive = false, any_change = false;
  for (const auto& s : r.samples) {
    any_contrastive |= s.used_contrastive;
    any_change |= s.entropy_after != s.entropy_before;
  }
  EXPECT_TRUE(any_contrastive);
  EXPECT_TRUE(any_change);

  // Isolation: adapting a single sample alone gives the same record as inside the sweep.
  const auto solo = ttda::run_ttda(*loaded.model, {samples[3]}, cfg);
  EXPECT_EQ(solo.samples[0].iou_after, r.samples[3].iou_after);
}

TEST_F(EngineTest, TtdaSweepIsRepeatableInProcess) {
  auto loaded = engine::load_model(base_->checkpoint);
  auto cfg = quiet_ttda();
  ttda::prepare_model(loaded, cfg);
  const auto samples = engine::Dataset::open(data_dir()).load("target", "test");
  const auto a = ttda::run_ttda(*loaded.model, samples, cfg);
  std::vector<std::vector<float>> churn;  // move later heap allocations around
  for (int i = 1; i < 40; ++i) churn.emplace_back(static_cast<std::size_t>(i * 3), 1.0f);
  const auto b = ttda::run_ttda(*loaded.model, samples, cfg);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].entropy_after, b.samples[i].entropy_after) << i;
    EXPECT_EQ(a.samples[i].iou_after, b.samples[i].iou_after) << i;
  }
}

TEST_F(EngineTest, TtdaRejectsMismatchedMethod) {
  const auto r = engine::train_supervised(adapted(Method::kLora), scratch("lora"));
  auto loaded = engine::load_model(r.checkpoint);
  EXPECT_THROW(ttda::prepare_model(loaded, quiet_ttda()), ValidationError);
}

// ---- report --------------------------------------------------------------

TEST_F(EngineTest, ReportSingleFragmentIsIdentity) {
  const auto rep = report::build_report({base_->fragment});
  const auto& g = rep.json.at("groups").at(0);
  EXPECT_EQ(g.at("group"), "full_ft");
  const auto& e = base_->evaluations.at(1);
  const auto& d = g.at("domains").at("target/test");
  EXPECT_NEAR(d.at("mean").get<double>(), e.mean, 1e-12);
  const auto runs = d.at("per_image").get<std::vector<std::vector<double>>>();
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_EQ(runs[0], e.per_image);
  EXPECT_EQ(d.at("std_over"), "images");
  EXPECT_NE(rep.table.find("full_ft"), std::string::npos);
}

TEST_F(EngineTest, ReportRejectsInconsistentFragments) {
  auto frag = base_->fragment;
  frag["evaluations"][0]["mean"] = frag["evaluations"][0]["mean"].get<double>() + 1e-6;
  EXPECT_THROW(report::build_report({frag}), IntegrityError);

  auto other = base_->fragment;
  other["seed"] = 9;
  other["params"]["trainable"] = 1;
  EXPECT_THROW(report::build_report({base_->fragment, other}), IntegrityError);

  other = base_->fragment;
  other["seed"] = 9;
  other["evaluations"][0]["sample_ids"][0] = "v9999_s00";
  EXPECT_THROW(report::build_report({base_->fragment, other}), IntegrityError);
}

TEST_F(EngineTest, ReportIsDeterministicAndTestsAgainstReference) {
  const auto dec = engine::train_supervised(adapted(Method::kSamDaDec), scratch("rep/dec"));
  const auto dft = engine::train_supervised(adapted(Method::kDecoderFt), scratch("rep/dft"));
  const auto a = report::emit_report(scratch("rep"));
  const auto b = report::emit_report(scratch("rep"));
  EXPECT_EQ(a.json.dump(), b.json.dump());
  EXPECT_EQ(a.table, b.table);
  bool found = false;
  for (const auto& t : a.json.at("ttests")) {
    if (t.at("a") == "sam_da_dec" && t.at("b") == "decoder_ft") found = true;
  }
  EXPECT_TRUE(found);
}

// ---- configs ---------------------------------------------------------------

TEST(Config, VersionAndUnknownKeys) {
  engine::TrainConfig c;
  c.method = Method::kFullFt;
  auto j = engine::to_json(c);
  EXPECT_EQ(j.at("version"), config::kConfigVersion);
  const auto back = engine::train_config_from_json(j);
  EXPECT_EQ(engine::to_json(back), j);

  auto no_version = j;
  no_version.erase("version");
  EXPECT_THROW(engine::train_config_from_json(no_version), ValidationError);
  auto wrong_version = j;
  wrong_version["version"] = 2;
  EXPECT_THROW(engine::train_config_from_json(wrong_version), ValidationError);
  auto unknown = j;
  unknown["learning_rate"] = 0.1;
  EXPECT_THROW(engine::train_config_from_json(unknown), ValidationError);
  auto nested = j;
  nested["model"]["depth"] = 3;
  EXPECT_THROW(engine::train_config_from_json(nested), ValidationError);
  auto wrong_type = j;
  wrong_type["epochs"] = "ten";
  EXPECT_THROW(engine::train_config_from_json(wrong_type), ValidationError);
  auto bad_method = j;
  bad_method["method"] = "prompt_tuning";
  EXPECT_THROW(engine::train_config_from_json(bad_method), ValidationError);
}

TEST(Config, DatasetAndTtdaRoundTrip) {
  const auto spec = testing::tiny_dataset();
  EXPECT_EQ(config::dataset_spec_from_json(config::to_json(spec)), spec);
  ttda::TTDAConfig t;
  t.iterations = 7;
  t.loss.entropy_percentile = 0.4;
  const auto back = ttda::ttda_config_from_json(ttda::to_json(t));
  EXPECT_EQ(back.iterations, 7);
  EXPECT_EQ(back.loss, t.loss);
  t.iterations = 0;
  EXPECT_THROW(t.validate(), ValidationError);
}

TEST(Ablation, MatrixShapes) {
  engine::ExperimentConfig c;
  const auto size = engine::ablation_matrix(c, engine::AblationAxis::kSize);
  ASSERT_EQ(size.size(), 12u);
  std::set<std::string> groups;
  for (const auto& r : size) {
    groups.insert(r.group);
    EXPECT_EQ(r.config.method, Method::kSamDaDec);
    EXPECT_EQ(r.config.seed, r.seed);
  }
  EXPECT_EQ(groups, (std::set<std::string>{"sam_da_dec_Da128", "sam_da_dec_Da256", "sam_da_dec_Da512"}));
  EXPECT_EQ(size[4].config.adapter.prompt_dim, 256);

  const auto place = engine::ablation_matrix(c, engine::AblationAxis::kPlacement);
  ASSERT_EQ(place.size(), 8u);
  EXPECT_EQ(place[0].config.method, Method::kSamDaDec);
  EXPECT_EQ(place[7].config.method, Method::kSamDaEnc);

  EXPECT_EQ(engine::ablation_matrix(c, engine::AblationAxis::kMethod).size(), 20u);
  EXPECT_THROW(engine::parse_axis("depth"), ValidationError);

  const auto j = engine::to_json(c);
  EXPECT_EQ(engine::to_json(engine::experiment_config_from_json(j)), j);
}

}  // namespace
}  // namespace samda
