#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hydranat/io.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using hnat::Shape;
using hnat::Tensor;
using testutil::random_uniform;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("hydranat_io_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Hnat1, HeaderBytesAreExact) {
    Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    std::ostringstream os(std::ios::binary);
    hnat::write_hnat1(os, t);
    const std::string bytes = os.str();
    const char want_header[] = {'H', 'N', 'A', 'T', '1', '\n',
                                2, 0, 0, 0,   // ndim
                                2, 0, 0, 0,   // extent 0
                                3, 0, 0, 0,   // extent 1
                                0};           // dtype f32
    ASSERT_EQ(bytes.size(), sizeof(want_header) + 6 * sizeof(float));
    EXPECT_EQ(std::string(bytes.data(), sizeof(want_header)),
              std::string(want_header, sizeof(want_header)));
    float first;
    std::memcpy(&first, bytes.data() + sizeof(want_header), sizeof(float));
    EXPECT_EQ(first, 1.0f);
}

TEST(Hnat1, RoundTripBothDtypes) {
    hnat::Rng rng(1);
    auto dir = fresh_dir("roundtrip");
    for (int trial = 0; trial < 20; ++trial) {
        Shape shape;
        const int nd = 1 + static_cast<int>(rng.next_u64() % 4);
        for (int i = 0; i < nd; ++i) shape.push_back(1 + rng.next_u64() % 5);
        auto tf = random_uniform<float>(shape, rng);
        hnat::write_hnat1(dir / "t.hnat", tf);
        auto back_f = hnat::read_hnat1<float>(dir / "t.hnat");
        EXPECT_EQ(back_f.shape(), tf.shape());
        EXPECT_EQ(back_f.vec(), tf.vec());

        auto td = random_uniform<double>(shape, rng);
        hnat::write_hnat1(dir / "t.hnat", td);
        auto back_d = hnat::read_hnat1<double>(dir / "t.hnat");
        EXPECT_EQ(back_d.vec(), td.vec());
    }
}

TEST(Hnat1, RejectsWrongDtypeMagicAndTruncation) {
    auto dir = fresh_dir("reject");
    Tensor<float> t({4}, 1.0f);
    hnat::write_hnat1(dir / "f32.hnat", t);
    EXPECT_THROW(hnat::read_hnat1<double>(dir / "f32.hnat"), hnat::IoError);
    EXPECT_THROW(hnat::read_hnat1<float>(dir / "missing.hnat"), hnat::IoError);

    std::ofstream(dir / "bad.hnat", std::ios::binary) << "NOTHNAT";
    EXPECT_THROW(hnat::read_hnat1<float>(dir / "bad.hnat"), hnat::IoError);

    const std::string full = slurp(dir / "f32.hnat");
    std::ofstream(dir / "cut.hnat", std::ios::binary) << full.substr(0, full.size() - 3);
    EXPECT_THROW(hnat::read_hnat1<float>(dir / "cut.hnat"), hnat::IoError);
}

TEST(Images, PpmAndPgmHeaders) {
    auto dir = fresh_dir("img");
    std::vector<std::uint8_t> gray(6 * 4, 37);
    hnat::write_pgm(dir / "m.pgm", 6, 4, gray);
    const std::string pgm = slurp(dir / "m.pgm");
    EXPECT_EQ(pgm.substr(0, 11), "P5\n6 4\n255\n");
    EXPECT_EQ(pgm.size(), 11 + 24u);

    std::vector<std::uint8_t> rgb(32 * 32 * 3, 128);
    hnat::write_ppm(dir / "m.ppm", 32, 32, rgb);
    const std::string ppm = slurp(dir / "m.ppm");
    EXPECT_EQ(ppm.substr(0, 12), "P6\n32 32\n255");
    EXPECT_EQ(ppm.size(), 13 + 32u * 32u * 3u);
    EXPECT_THROW(hnat::write_ppm(dir / "bad.ppm", 4, 4, rgb), hnat::DimensionError);
}

TEST(TensorStore, GeneratorParamsRoundTrip) {
    auto dir = fresh_dir("params");
    auto cfg = hnat::build_config_2split(16);
    hnat::Rng rng(5);
    auto params = hnat::init_generator_params<float>(cfg, rng);
    hnat::save_generator_params(dir, params);
    EXPECT_TRUE(fs::exists(dir / "params.json"));

    auto loaded = hnat::load_generator_params<float>(cfg, dir);
    bool all_equal = true;
    std::size_t count = 0;
    hnat::visit_params(params, [&](const std::string& name, Tensor<float>& t) {
        ++count;
        Tensor<float>* other = nullptr;
        hnat::visit_params(loaded, [&](const std::string& n2, Tensor<float>& t2) {
            if (n2 == name) other = &t2;
        });
        ASSERT_NE(other, nullptr) << name;
        all_equal = all_equal && other->vec() == t.vec();
    });
    EXPECT_GT(count, 10u);
    EXPECT_TRUE(all_equal);

    // a missing tensor is an error
    auto store = hnat::load_tensor_store<float>(dir);
    fs::remove(dir / "constant.hnat");
    std::ifstream is(dir / "params.json");
    EXPECT_THROW(hnat::load_generator_params<float>(cfg, dir), hnat::IoError);
}

TEST(TensorStore, HydraParamsRoundTrip) {
    auto dir = fresh_dir("hydra_params");
    auto plan = hnat::PartitionPlan::make(4, {{3, 1}, {3, 2}});
    hnat::Rng rng(6);
    auto params = hnat::init_hydra_params<float>(16, plan, true, rng);
    hnat::save_hydra_params(dir, params);
    auto back = hnat::load_hydra_params<float>(dir);
    EXPECT_EQ(back.qkv_weight.vec(), params.qkv_weight.vec());
    EXPECT_EQ(back.qkv_bias.vec(), params.qkv_bias.vec());
    ASSERT_EQ(back.rpb.size(), 2u);
    EXPECT_EQ(back.rpb[1].vec(), params.rpb[1].vec());
    EXPECT_EQ(back.proj_weight.vec(), params.proj_weight.vec());
    EXPECT_EQ(back.scale, params.scale);

    auto no_bias = hnat::init_hydra_params<float>(16, plan, false, rng);
    hnat::save_hydra_params(dir, no_bias);
    auto back2 = hnat::load_hydra_params<float>(dir);
    EXPECT_TRUE(back2.qkv_bias.empty());
}

TEST(ConfigJson, RoundTripAndDefaults) {
    auto dir = fresh_dir("cfg");
    auto cfg = hnat::build_config_2split(32);
    cfg.seed = 1234;
    hnat::save_config_json(dir / "config.json", cfg);
    auto back = hnat::load_config_json(dir / "config.json");
    EXPECT_EQ(back.target, 32);
    EXPECT_EQ(back.design, "2split");
    EXPECT_EQ(back.seed, 1234u);
    EXPECT_EQ(back.channels, cfg.channels);
    EXPECT_EQ(back.heads, cfg.heads);
}

TEST(ConfigJson, OverridesAndErrors) {
    auto dir = fresh_dir("cfg2");
    std::ofstream(dir / "ok.json") << R"({"target": 16, "design": "pyramid", "seed": 7,
                                          "channels": {"16": 32}, "heads": {"16": 2}})";
    auto cfg = hnat::load_config_json(dir / "ok.json");
    EXPECT_EQ(cfg.channels_at(16), 32);
    EXPECT_EQ(cfg.heads_at(16), 2);
    EXPECT_EQ(cfg.dilations_at(16), (std::vector<int>{1, 2}));

    std::ofstream(dir / "badjson.json") << "{not json";
    EXPECT_THROW(hnat::load_config_json(dir / "badjson.json"), hnat::ConfigError);
    std::ofstream(dir / "badtarget.json") << R"({"target": 48})";
    EXPECT_THROW(hnat::load_config_json(dir / "badtarget.json"), hnat::ConfigError);
    std::ofstream(dir / "baddesign.json") << R"({"target": 16, "design": "spiral"})";
    EXPECT_THROW(hnat::load_config_json(dir / "baddesign.json"), hnat::ConfigError);
    std::ofstream(dir / "badheads.json") << R"({"target": 16, "heads": {"16": 3}})";
    EXPECT_THROW(hnat::load_config_json(dir / "badheads.json"), hnat::ConfigError);
    EXPECT_THROW(hnat::load_config_json(dir / "missing.json"), hnat::IoError);
}

TEST(AtomicWrite, NoTempFileRemains) {
    auto dir = fresh_dir("atomic");
    Tensor<float> t({3}, 1.0f);
    hnat::write_hnat1(dir / "x.hnat", t);
    EXPECT_TRUE(fs::exists(dir / "x.hnat"));
    EXPECT_FALSE(fs::exists(dir / "x.hnat.tmp"));
}
