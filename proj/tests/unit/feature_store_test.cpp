#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <thread>

#include "facedit/ddim.hpp"
#include "facedit/errors.hpp"
#include "facedit/feature_cache.hpp"
#include "facedit/injection.hpp"
#include "facedit/random.hpp"
#include "facedit/toy_denoiser.hpp"
#include "test_support.hpp"

using namespace facedit;
using facedit::testing::TempDir;

namespace {

FeatureRecord random_record(Rng& rng, int rows = 5, int cols = 3) {
    return gaussian_matrix(rows, cols, rng).cast<float>();
}

}  // namespace

TEST(FeatureCache, ReadYourWrite) {
    Rng rng(1);
    FeatureCache cache;
    const FeatureRecord rec = random_record(rng);
    cache.record({0, "up.0.attn", 10}, rec);
    EXPECT_TRUE(cache.contains({0, "up.0.attn", 10}));
    EXPECT_EQ(cache.lookup({0, "up.0.attn", 10}), rec);
    EXPECT_EQ(cache.find({1, "up.0.attn", 10}), nullptr);
    EXPECT_THROW(cache.lookup({1, "up.0.attn", 10}), MissingFeatureError);
}

TEST(FeatureCache, IsWriteOnce) {
    Rng rng(2);
    FeatureCache cache;
    cache.record({0, "a", 1}, random_record(rng));
    const FeatureRecord first = cache.lookup({0, "a", 1});
    EXPECT_THROW(cache.record({0, "a", 1}, random_record(rng)), WriteOnceViolation);
    EXPECT_EQ(cache.lookup({0, "a", 1}), first);
}

TEST(FeatureCache, RejectsNonFiniteAndInconsistentTokenCounts) {
    Rng rng(3);
    FeatureCache cache;
    FeatureRecord bad = random_record(rng);
    bad(1, 1) = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(cache.record({0, "a", 1}, bad), InvalidArgument);
    cache.record({0, "a", 1}, random_record(rng, 5, 3));
    EXPECT_THROW(cache.record({1, "a", 1}, random_record(rng, 6, 3)), InvalidArgument);
    EXPECT_NO_THROW(cache.record({1, "b", 1}, random_record(rng, 6, 3)));
}

TEST(FeatureCache, CountsEveryFrameLayerTimestep) {
    Rng rng(4);
    FeatureCache cache;
    for (int frame = 0; frame < 2; ++frame)
        for (const char* layer : {"a", "b", "c"})
            for (int t : {1, 5, 9, 13}) cache.record({frame, layer, t}, random_record(rng));
    EXPECT_EQ(cache.size(), 24u);
    EXPECT_EQ(cache.keys().size(), 24u);
}

TEST(FeatureCache, ConcurrentRecordingOfDistinctKeys) {
    FeatureCache cache;
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([&cache, w] {
            Rng rng(static_cast<std::uint64_t>(w));
            for (int t = 0; t < 50; ++t) cache.record({w, "a", t}, random_record(rng));
        });
    }
    for (auto& th : workers) th.join();
    EXPECT_EQ(cache.size(), 200u);
}

TEST(FeatureCachePersistence, RoundTripIsBitExact) {
    TempDir dir;
    Rng rng(5);
    FeatureCache cache;
    for (int frame = 0; frame < 3; ++frame)
        for (int t : {20, 40}) cache.record({frame, "down.1.attn", t}, random_record(rng, 7, 4));
    cache.set_metadata("steps", "20");
    const Manifest manifest = persist(cache, dir.path());
    EXPECT_EQ(manifest.entries.size(), 6u);
    EXPECT_EQ(manifest.checksum_algorithm, "crc32");

    const FeatureCache back = load_cache(dir.path());
    ASSERT_EQ(back.size(), cache.size());
    for (const auto& key : cache.keys()) {
        const FeatureRecord& a = cache.lookup(key);
        const FeatureRecord& b = back.lookup(key);
        ASSERT_EQ(a.rows(), b.rows());
        EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()), 0) << key.str();
    }
    EXPECT_EQ(back.metadata("steps"), "20");
}

TEST(FeatureCachePersistence, EmptyCacheRoundTrips) {
    TempDir dir;
    const Manifest manifest = persist(FeatureCache{}, dir.path());
    EXPECT_TRUE(manifest.entries.empty());
    EXPECT_TRUE(has_manifest(dir.path()));
    EXPECT_EQ(load_cache(dir.path()).size(), 0u);
}

TEST(FeatureCachePersistence, MissingManifestIsAMissingArtifact) {
    TempDir dir;
    EXPECT_FALSE(has_manifest(dir.path()));
    EXPECT_THROW(load_cache(dir.path()), MissingArtifactError);
}

TEST(FeatureCachePersistence, MissingOrCorruptRecordIsAnIntegrityError) {
    TempDir dir;
    Rng rng(6);
    FeatureCache cache;
    cache.record({0, "a", 1}, random_record(rng));
    const Manifest m = persist(cache, dir.path());
    const auto record = dir.path() / m.entries.front().file;

    {  // Flip one payload byte: checksum mismatch.
        std::fstream f(record, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-1, std::ios::end);
        f.put('\x7f');
    }
    EXPECT_THROW(load_cache(dir.path()), IntegrityError);

    std::filesystem::remove(record);
    try {
        load_cache(dir.path());
        FAIL() << "expected IntegrityError";
    } catch (const IntegrityError& e) {
        EXPECT_NE(std::string(e.what()).find("(frame 0, a, t=1)"), std::string::npos) << e.what();
    }
}

TEST(CacheRecorder, FiltersLayersAndTimesteps) {
    FeatureCache cache;
    CacheRecorder rec(cache, {3, 7}, {"keep"}, {10});
    const FeatureMatrix m = FeatureMatrix::Ones(2, 2);
    rec.on_features("keep", 0, 10, m);
    rec.on_features("keep", 1, 10, m);
    rec.on_features("drop", 0, 10, m);
    rec.on_features("keep", 0, 20, m);
    EXPECT_EQ(cache.size(), 2u);
    EXPECT_TRUE(cache.contains({3, "keep", 10}));
    EXPECT_TRUE(cache.contains({7, "keep", 10}));
}

class InjectionTest : public ::testing::Test {
protected:
    void SetUp() override {
        grid_ = schedule_.timestep_grid(kSteps);
        sampled_.assign(grid_.begin() + 1, grid_.end());
        Rng rng(9);
        x_T_ = Latent{gaussian_tensor({4, 8, 8}, rng), 0, grid_.back()};
        cond_.prompt = "a photo of a face";
    }

    static constexpr int kSteps = 6;
    NoiseSchedule schedule_ = NoiseSchedule::linear_beta(1000, 0.00085, 0.012);
    ToyDenoiser toy_;
    std::vector<int> grid_, sampled_;
    Latent x_T_;
    Conditioning cond_;
};

TEST_F(InjectionTest, EmptyLayerSetIsANoOp) {
    FeatureCache cache;
    const InjectionContext ctx = make_injection_context(cache, 0, {}, sampled_);
    EXPECT_EQ(sample(x_T_, toy_, kSteps, schedule_, cond_, &ctx).data,
              sample(x_T_, toy_, kSteps, schedule_, cond_).data);
}

TEST_F(InjectionTest, SelfInjectionIsAFixedPoint) {
    const auto& sites = toy_.attention_layers();
    const LayerSet all(sites.begin(), sites.end());
    FeatureCache cache;
    CacheRecorder recorder(cache, {0}, all, sampled_);
    SamplerHooks hooks;
    hooks.sink = &recorder;
    const Latent plain = sample(x_T_, toy_, kSteps, schedule_, cond_, nullptr, hooks);
    EXPECT_EQ(cache.size(), all.size() * sampled_.size());

    const InjectionContext ctx = make_injection_context(cache, 0, all, sampled_);
    EXPECT_EQ(sample(x_T_, toy_, kSteps, schedule_, cond_, &ctx).data, plain.data);
}

TEST_F(InjectionTest, ForeignFeaturesChangeTheOutput) {
    const LayerSet up = {"up.0.attn", "up.1.attn"};
    FeatureCache cache;
    CacheRecorder recorder(cache, {0}, up, sampled_);
    SamplerHooks hooks;
    hooks.sink = &recorder;
    Conditioning other = cond_;
    other.prompt = "a photo of a face with sunglasses";
    sample(x_T_, toy_, kSteps, schedule_, other, nullptr, hooks);
    const InjectionContext ctx = make_injection_context(cache, 0, up, sampled_);
    EXPECT_NE(sample(x_T_, toy_, kSteps, schedule_, cond_, &ctx).data,
              sample(x_T_, toy_, kSteps, schedule_, cond_).data);
}

TEST_F(InjectionTest, MissingFeaturesFailEagerlyListingEveryGap) {
    FeatureCache cache;
    cache.record({0, "up.0.attn", sampled_.front()}, FeatureMatrix::Ones(64, 16));
    try {
        make_injection_context(cache, 0, {"up.0.attn"}, sampled_);
        FAIL() << "expected MissingFeatureError";
    } catch (const MissingFeatureError& e) {
        EXPECT_EQ(e.gaps().size(), sampled_.size() - 1);
    }
}

TEST_F(InjectionTest, UnknownLayerFailsBeforeAnyDenoiserCall) {
    FeatureCache cache;
    EXPECT_THROW(require_known_layers(toy_, {"mid.attn"}, "injection"), InvalidArgument);
    // A context over an unknown layer has nothing to resolve.
    EXPECT_THROW(make_injection_context(cache, 0, {"mid.attn"}, sampled_), MissingFeatureError);
}

TEST_F(InjectionTest, FullContextMustCoverTheSamplingGrid) {
    const auto& sites = toy_.attention_layers();
    const LayerSet all(sites.begin(), sites.end());
    FeatureCache cache;
    CacheRecorder recorder(cache, {0}, all, sampled_);
    SamplerHooks hooks;
    hooks.sink = &recorder;
    sample(x_T_, toy_, kSteps, schedule_, cond_, nullptr, hooks);
    const std::vector<int> some(sampled_.begin(), sampled_.begin() + 2);
    const InjectionContext full = make_injection_context(cache, 0, all, some);
    EXPECT_THROW(sample(x_T_, toy_, kSteps, schedule_, cond_, &full), MissingFeatureError);
    const InjectionContext partial = make_injection_context(cache, 0, all, some, true);
    EXPECT_NO_THROW(sample(x_T_, toy_, kSteps, schedule_, cond_, &partial));
}
