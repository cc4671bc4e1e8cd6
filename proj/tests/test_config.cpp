#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "tmad/config.hpp"

namespace tmad {
namespace {

using nlohmann::json;

std::vector<std::string> errors_of(const json& j) {
    try {
        (void)RunConfig::from_json(j);
    } catch (const ConfigError& e) {
        return e.errors();
    }
    return {};
}

bool has(const std::vector<std::string>& errors, const std::string& needle) {
    return std::any_of(errors.begin(), errors.end(), [&](const auto& e) { return e.find(needle) != std::string::npos; });
}

TEST(Config, EmptyObjectGivesDefaults) {
    const auto c = RunConfig::from_json(json::object());
    EXPECT_EQ(c.model, ModelSpec{});
    EXPECT_EQ(c.model.patch_size, 32);
    EXPECT_EQ(c.model.pool_size, 100);
    EXPECT_EQ(c.model.candidates, 4);
    EXPECT_EQ(c.train.patches_per_image, 16);
    EXPECT_DOUBLE_EQ(c.train.lr, 1e-4);
    EXPECT_EQ(c.service.port, 8080);
    EXPECT_EQ(c.train.mask.kind, MaskSpec::Kind::freeform);
    EXPECT_DOUBLE_EQ(c.losses.hole, 6.0);
    EXPECT_DOUBLE_EQ(c.losses.valid, 1.0);
}

TEST(Config, RectangleModeUsesItsLossPresetAndMasks) {
    const auto c = RunConfig::from_json({{"model", {{"mask_mode", "rectangle"}}}});
    EXPECT_DOUBLE_EQ(c.losses.hole, 5.0);
    EXPECT_DOUBLE_EQ(c.losses.valid, 0.0);
    EXPECT_EQ(c.train.mask.kind, MaskSpec::Kind::rectangle);
    const auto d = RunConfig::from_json({{"model", {{"mask_mode", "rectangle"}}}, {"losses", {{"lambda_valid", 0.5}}}});
    EXPECT_DOUBLE_EQ(d.losses.valid, 0.5);
}

TEST(Config, UnknownKeysAreNamed) {
    const auto errors = errors_of({{"modle", json::object()}, {"model", {{"patchsize", 16}}}, {"train", {{"lr", 1e-3}, {"epochs", 2}}}});
    EXPECT_EQ(errors.size(), 3u);
    EXPECT_TRUE(has(errors, "config.modle: unknown key"));
    EXPECT_TRUE(has(errors, "model.patchsize: unknown key"));
    EXPECT_TRUE(has(errors, "train.epochs: unknown key"));
}

TEST(Config, EveryErrorIsReportedTogether) {
    const auto errors = errors_of({
        {"model", {{"patch_size", 6}, {"retrieval", "best"}}},
        {"train", {{"lr", "fast"}}},
        {"losses", {{"lambda_tv", -0.5}}},
        {"service", {{"port", 70000}, {"workers", 0}}},
        {"masks", {{"min_height", 50}, {"max_height", 10}}},
    });
    EXPECT_EQ(errors.size(), 7u);
    EXPECT_TRUE(has(errors, "model.patch_size must be a positive multiple of 4"));
    EXPECT_TRUE(has(errors, "model.retrieval"));
    EXPECT_TRUE(has(errors, "train.lr: wrong type"));
    EXPECT_TRUE(has(errors, "lambda_tv"));
    EXPECT_TRUE(has(errors, "service.port"));
    EXPECT_TRUE(has(errors, "service.workers"));
    EXPECT_TRUE(has(errors, "masks.min_height"));
}

TEST(Config, NegativeWeightsNameTheirKey) {
    for (const std::string key : {"lambda_hole", "lambda_valid", "lambda_l1", "lambda_gan_pd", "lambda_percep", "lambda_tv",
                                  "lambda_gan_gl", "gradient_penalty"}) {
        const auto errors = errors_of({{"losses", {{key, -1.0}}}});
        ASSERT_EQ(errors.size(), 1u) << key;
        EXPECT_NE(errors[0].find(key), std::string::npos) << errors[0];
    }
}

TEST(Config, CandidatesCannotExceedThePool) {
    const auto errors = errors_of({{"model", {{"pool_size", 3}, {"candidates", 4}}}});
    EXPECT_TRUE(has(errors, "model.candidates"));
}

TEST(Config, ToJsonRoundTrips) {
    const auto c = RunConfig::from_json({{"model", {{"patch_size", 16}, {"retrieval", "weighted_sum"}, {"coarse_width", 8}}},
                                         {"train", {{"joint_steps", 50}, {"seed", 3}}},
                                         {"losses", {{"lambda_tv", 0.1}}},
                                         {"service", {{"port", 0}}}});
    const auto j = c.to_json();
    const auto again = RunConfig::from_json(j);
    EXPECT_EQ(again.to_json(), j);
    EXPECT_EQ(again.model, c.model);
    EXPECT_EQ(again.joint_steps, 50);
    EXPECT_DOUBLE_EQ(again.losses.tv, 0.1);
}

TEST(Config, LoadReportsUnreadableFiles) {
    const auto dir = std::filesystem::temp_directory_path() / "tmad_config_test";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "bad.json") << "{ \"model\": ";
    EXPECT_THROW((void)RunConfig::load(dir / "bad.json"), ConfigError);
    EXPECT_THROW((void)RunConfig::load(dir / "missing.json"), ConfigError);
    std::ofstream(dir / "good.json") << R"({"model": {"patch_size": 16}})";
    EXPECT_EQ(RunConfig::load(dir / "good.json").model.patch_size, 16);
    std::filesystem::remove_all(dir);
}

TEST(Config, RootMustBeAnObject) {
    EXPECT_FALSE(errors_of(json::array()).empty());
}

}  // namespace
}  // namespace tmad
