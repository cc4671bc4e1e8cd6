#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_fixtures.hpp"
#include "tmad/checkpoint.hpp"
#include "tmad/image_io.hpp"

namespace tmad {
namespace {

namespace fs = std::filesystem;
using testing::rect_mask;
using testing::stripes;
using testing::toy_spec;

class CheckpointTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("tmad_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path path(const std::string& name) const { return dir_ / name; }

    static std::string contents(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    }
    static void overwrite(const fs::path& p, const std::string& bytes) {
        std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
    }
    static std::string load_error(const fs::path& p, Model& m) {
        try {
            (void)load_checkpoint(p, m);
        } catch (const CheckpointError& e) {
            return e.what();
        }
        return "";
    }

    fs::path dir_;
};

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
    Model a(toy_spec(), 1);
    // Move the spectral-norm buffers away from their initial state first.
    (void)a.patch_critic.score_update(constant(stripes(8, 8).tensor()));
    save_checkpoint(path("a.ckpt"), a);
    Model b(toy_spec(), 2);
    EXPECT_FALSE(load_checkpoint(path("a.ckpt"), b).has_value());
    save_checkpoint(path("b.ckpt"), b);
    EXPECT_EQ(contents(path("a.ckpt")), contents(path("b.ckpt")));

    const auto pa = a.parameters();
    const auto pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value().vector(), pb[i].var.value().vector());
    const auto ba = a.buffers();
    const auto bb = b.buffers();
    ASSERT_FALSE(ba.empty());
    for (std::size_t i = 0; i < ba.size(); ++i) EXPECT_EQ(ba[i].tensor->vector(), bb[i].tensor->vector());
}

TEST_F(CheckpointTest, LoadedModelInpaintsIdentically) {
    Model a(toy_spec(), 3);
    save_checkpoint(path("m.ckpt"), a);
    EXPECT_EQ(read_checkpoint_spec(path("m.ckpt")), toy_spec());
    const auto b = load_model(path("m.ckpt"));
    const Image img = stripes(32, 40);
    const Mask mask = rect_mask(32, 40, 6, 10, 14, 12);
    EXPECT_EQ(inpaint(a, img, mask).output, inpaint(*b, img, mask).output);
}

TEST_F(CheckpointTest, TrainingStateRoundTrips) {
    Model m(toy_spec(), 4);
    TrainState state;
    state.step = 123;
    state.rng.seed(77);
    state.rng.discard(5);
    state.generator.t = 9;
    for (const auto& p : m.generator_parameters()) {
        state.generator.names.push_back(p.name);
        state.generator.m.push_back(Tensor(p.var.shape(), 0.25));
        state.generator.v.push_back(Tensor(p.var.shape(), 0.5));
    }
    save_checkpoint(path("s.ckpt"), m, &state);
    Model n(toy_spec(), 4);
    const auto loaded = load_checkpoint(path("s.ckpt"), n);
    ASSERT_TRUE(loaded.has_value());
    EXPECT_EQ(loaded->step, 123);
    EXPECT_EQ(loaded->rng, state.rng);
    EXPECT_EQ(loaded->generator.t, 9);
    EXPECT_EQ(loaded->generator.names, state.generator.names);
    ASSERT_EQ(loaded->generator.m.size(), state.generator.m.size());
    EXPECT_EQ(loaded->generator.v.back().vector(), state.generator.v.back().vector());
    EXPECT_TRUE(loaded->critic.names.empty());
}

TEST_F(CheckpointTest, RefusesAnotherPatchSize) {
    Model a(toy_spec(8), 1);
    save_checkpoint(path("k8.ckpt"), a);
    Model b(toy_spec(16), 1);
    const auto message = load_error(path("k8.ckpt"), b);
    EXPECT_NE(message.find("patch_size"), std::string::npos) << message;
}

TEST_F(CheckpointTest, RefusesCorruptPayload) {
    Model a(toy_spec(), 1);
    save_checkpoint(path("c.ckpt"), a);
    auto bytes = contents(path("c.ckpt"));
    bytes[bytes.size() - 3] ^= 0x40;
    overwrite(path("c.ckpt"), bytes);
    const auto message = load_error(path("c.ckpt"), a);
    EXPECT_NE(message.find("checksum"), std::string::npos) << message;
}

TEST_F(CheckpointTest, RefusesTruncatedFile) {
    Model a(toy_spec(), 1);
    save_checkpoint(path("t.ckpt"), a);
    const auto bytes = contents(path("t.ckpt"));
    overwrite(path("t.ckpt"), bytes.substr(0, bytes.size() - 8));
    EXPECT_NE(load_error(path("t.ckpt"), a).find("truncated"), std::string::npos);
    overwrite(path("t.ckpt"), bytes.substr(0, 30));
    EXPECT_FALSE(load_error(path("t.ckpt"), a).empty());
}

TEST_F(CheckpointTest, RefusesForeignVersionAndNonCheckpoints) {
    Model a(toy_spec(), 1);
    save_checkpoint(path("v.ckpt"), a);
    auto bytes = contents(path("v.ckpt"));
    bytes[8] = static_cast<char>(kCheckpointVersion + 1);
    overwrite(path("v.ckpt"), bytes);
    EXPECT_NE(load_error(path("v.ckpt"), a).find("version"), std::string::npos);

    write_image(path("x.png"), stripes(4, 4));
    EXPECT_NE(load_error(path("x.png"), a).find("not a checkpoint"), std::string::npos);
    EXPECT_NE(load_error(path("missing.ckpt"), a).find("cannot open"), std::string::npos);
    EXPECT_THROW((void)load_model(path("missing.ckpt")), CheckpointError);
}

TEST_F(CheckpointTest, FailedLoadLeavesTheModelUntouched) {
    Model a(toy_spec(), 1);
    save_checkpoint(path("a.ckpt"), a);
    auto bytes = contents(path("a.ckpt"));
    bytes.back() ^= 0x01;
    overwrite(path("a.ckpt"), bytes);
    Model b(toy_spec(), 2);
    const auto before = b.parameters().front().var.value().vector();
    EXPECT_THROW((void)load_checkpoint(path("a.ckpt"), b), CheckpointError);
    EXPECT_EQ(b.parameters().front().var.value().vector(), before);
}

}  // namespace
}  // namespace tmad
