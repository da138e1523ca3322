#include <gtest/gtest.h>

#include <fstream>

#include "json.hpp"

#include "facedit/checkpoint.hpp"
#include "facedit/errors.hpp"
#include "facedit/finetune.hpp"
#include "facedit/random.hpp"
#include "facedit/toy_denoiser.hpp"
#include "facedit/toy_models.hpp"
#include "test_support.hpp"

using namespace facedit;
using facedit::testing::TempDir;

namespace {

const Shape3 kShape{4, 8, 8};

CaptionedDataset small_faces(int n = 4) {
    CaptionedDataset ds;
    for (int s = 0; s < n; ++s) ds.samples.push_back({synthetic_face(100 + s, kShape), "a photo of a face", {}});
    ds.prompt_bank = {"a photo of a face with bangs", "a photo of a smiling face"};
    return ds;
}

TrainConfig small_config(int iterations) {
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 2;
    cfg.iterations = iterations;
    cfg.height = kShape.height;
    cfg.width = kShape.width;
    cfg.inversion_steps = 5;
    cfg.seed = 3;
    return cfg;
}

bool same(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, m] : a) {
        if (!(b.at(name).array() == m.array()).all()) return false;
    }
    return true;
}

class FinetuneTest : public ::testing::Test {
protected:
    NoiseSchedule schedule_ = NoiseSchedule::linear_beta(1000, 0.00085, 0.012);
    ToyImageEmbedder face_;
    ToyTextEmbedder text_;
    ImageTextEmbedder clip_{face_, text_};
};

}  // namespace

TEST(TrainConfig, Validation) {
    TrainConfig cfg = small_config(1);
    EXPECT_NO_THROW(cfg.validate());
    cfg.learning_rate = -1e-3;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = small_config(0);
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = small_config(1);
    cfg.truncated_steps = 6;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = small_config(1);
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(CaptionedDataset, Validation) {
    CaptionedDataset ds = small_faces(2);
    EXPECT_NO_THROW(ds.validate());
    ds.samples[1].caption.clear();
    EXPECT_THROW(ds.validate(), InvalidDataset);
    ds = small_faces(2);
    ds.samples[1].image = synthetic_face(1, {4, 6, 6});
    EXPECT_THROW(ds.validate(), InvalidDataset);
    EXPECT_THROW(CaptionedDataset{}.validate(), InvalidDataset);
}

TEST(Adam, FirstStepMovesEachParameterByTheLearningRate) {
    ParameterSet p = {{"a", MatrixX::Constant(1, 2, 1.0)}, {"b", MatrixX::Constant(1, 1, 5.0)}};
    ParameterSet g = {{"a", (MatrixX(1, 2) << 0.5, -3.0).finished()}, {"b", MatrixX::Constant(1, 1, 2.0)}};
    Adam adam(0.1);
    adam.step(p, g, {"a"});
    EXPECT_NEAR(p.at("a")(0, 0), 0.9, 1e-7);
    EXPECT_NEAR(p.at("a")(0, 1), 1.1, 1e-7);
    EXPECT_EQ(p.at("b")(0, 0), 5.0);  // not trainable
    EXPECT_EQ(adam.steps_taken(), 1);
}

TEST_F(FinetuneTest, SingleIterationTakesOneStep) {
    ToyDenoiser toy;
    std::vector<TrainStep> seen;
    FinetuneHooks hooks;
    hooks.on_step = [&](const TrainStep& s) { seen.push_back(s); };
    const auto curve = finetune_identity_branch(toy, small_faces(), small_config(1), schedule_, face_, hooks);
    ASSERT_EQ(curve.size(), 1u);
    ASSERT_EQ(seen.size(), 1u);
    EXPECT_EQ(curve[0].step, 0);
    EXPECT_GT(curve[0].loss, 0.0);
    EXPECT_FALSE(same(toy.parameters(), ToyDenoiser().parameters()));
}

TEST_F(FinetuneTest, ZeroLearningRateFreezesParameters) {
    ToyDenoiser toy;
    TrainConfig cfg = small_config(3);
    cfg.learning_rate = 0.0;
    finetune_identity_branch(toy, small_faces(), cfg, schedule_, face_);
    EXPECT_TRUE(same(toy.parameters(), ToyDenoiser().parameters()));
    finetune_directional_branch(toy, small_faces(), cfg, schedule_, clip_);
    EXPECT_TRUE(same(toy.parameters(), ToyDenoiser().parameters()));
}

TEST_F(FinetuneTest, TrainableSubsetLeavesOtherParametersAlone) {
    ToyDenoiser toy;
    TrainConfig cfg = small_config(2);
    cfg.trainable = {"up."};
    finetune_identity_branch(toy, small_faces(), cfg, schedule_, face_);
    const ToyDenoiser fresh;
    for (const auto& [name, m] : toy.parameters()) {
        const bool changed = !(m.array() == fresh.parameters().at(name).array()).all();
        if (name.rfind("up.", 0) != 0) {
            EXPECT_FALSE(changed) << name;
        }
    }
    EXPECT_FALSE(same(toy.parameters(), fresh.parameters()));
}

TEST_F(FinetuneTest, FixedSeedIsDeterministic) {
    ToyDenoiser a, b;
    const auto ca = finetune_directional_branch(a, small_faces(), small_config(4), schedule_, clip_);
    const auto cb = finetune_directional_branch(b, small_faces(), small_config(4), schedule_, clip_);
    ASSERT_EQ(ca.size(), cb.size());
    for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca[i].loss, cb[i].loss);
    EXPECT_TRUE(same(a.parameters(), b.parameters()));
}

TEST_F(FinetuneTest, IdentityLossDecreasesOnToyFaces) {
    ToyDenoiser toy;
    TrainConfig cfg = small_config(60);
    const auto curve = finetune_identity_branch(toy, small_faces(), cfg, schedule_, face_);
    const auto d = decile_means(curve);
    EXPECT_GT(d.first, d.last);
}

TEST_F(FinetuneTest, FrozenGenerationWithoutDirectionTermIsExactlyZero) {
    ToyDenoiser toy;
    TrainConfig cfg = small_config(3);
    cfg.loss_weights = {0.3, 0.0};
    FinetuneHooks hooks;
    hooks.frozen_generation = true;
    const auto curve = finetune_directional_branch(toy, small_faces(), cfg, schedule_, clip_, hooks);
    for (const auto& s : curve) EXPECT_EQ(s.loss, 0.0);
}

TEST_F(FinetuneTest, DirectionalBranchNeedsTargetPrompts) {
    ToyDenoiser toy;
    CaptionedDataset ds = small_faces(2);
    ds.prompt_bank.clear();
    EXPECT_THROW(finetune_directional_branch(toy, ds, small_config(1), schedule_, clip_), InvalidDataset);
    ds.samples[0].edit_prompts = {"a photo of an old face"};
    ds.samples[1].edit_prompts = {"a photo of a young face"};
    EXPECT_NO_THROW(finetune_directional_branch(toy, ds, small_config(1), schedule_, clip_));
}

TEST_F(FinetuneTest, ResolutionMismatchIsAnInvalidDataset) {
    ToyDenoiser toy;
    TrainConfig cfg = small_config(1);
    cfg.height = 16;
    EXPECT_THROW(finetune_identity_branch(toy, small_faces(), cfg, schedule_, face_), InvalidDataset);
}

TEST_F(FinetuneTest, DivergenceIsANumericalError) {
    ToyDenoiser toy;
    TrainConfig cfg = small_config(1);
    CaptionedDataset ds = small_faces(1);
    ds.samples[0].image.values()[0] = 1e300;
    EXPECT_THROW(finetune_identity_branch(toy, ds, cfg, schedule_, face_), NumericalError);
}

TEST(LossCurve, DecilesAndJsonLog) {
    std::vector<TrainStep> curve;
    for (int i = 0; i < 20; ++i) curve.push_back({i, 20.0 - i, 1.0});
    const auto d = decile_means(curve);
    EXPECT_EQ(d.first, 19.5);
    EXPECT_EQ(d.last, 1.5);
    const auto one = decile_means({TrainStep{0, 4.0, 0.0}});
    EXPECT_EQ(one.first, 4.0);
    EXPECT_EQ(one.last, 4.0);

    TempDir dir;
    write_loss_log(curve, dir / "loss.jsonl");
    std::ifstream in(dir / "loss.jsonl");
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j.at("step").get<int>(), n);
        EXPECT_EQ(j.at("loss").get<double>(), 20.0 - n);
        ++n;
    }
    EXPECT_EQ(n, 20);
}

TEST(Checkpoint, RoundTripReproducesOutputsBitExactly) {
    TempDir dir;
    ToyDenoiser toy(ToyDenoiserConfig{.seed = 5});
    Rng rng(1);
    toy.parameters().at("out.b") = gaussian_matrix(1, 4, rng);
    save_checkpoint(toy, dir / "eps.ckpt");
    const ToyDenoiser back = load_checkpoint(dir / "eps.ckpt");
    EXPECT_TRUE(same(back.parameters(), toy.parameters()));
    const Tensor3 x = gaussian_tensor({4, 5, 5}, rng);
    EXPECT_EQ(back.predict(x, 321, "a photo of a face"), toy.predict(x, 321, "a photo of a face"));
    EXPECT_EQ(back.config().seed, 5u);
}

TEST(Checkpoint, ErrorsByKind) {
    TempDir dir;
    EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), MissingArtifactError);

    {
        std::ofstream(dir / "foreign.ckpt", std::ios::binary) << "NOPE and more bytes";
    }
    EXPECT_THROW(load_checkpoint(dir / "foreign.ckpt"), VersionError);

    save_checkpoint(ToyDenoiser(), dir / "full.ckpt");
    const auto size = std::filesystem::file_size(dir / "full.ckpt");
    std::filesystem::copy_file(dir / "full.ckpt", dir / "cut.ckpt");
    std::filesystem::resize_file(dir / "cut.ckpt", size / 2);
    EXPECT_THROW(load_checkpoint(dir / "cut.ckpt"), IntegrityError);

    std::filesystem::copy_file(dir / "full.ckpt", dir / "future.ckpt");
    {
        std::fstream f(dir / "future.ckpt", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v[4] = {99, 0, 0, 0};
        f.write(v, 4);
    }
    EXPECT_THROW(load_checkpoint(dir / "future.ckpt"), VersionError);
}
