#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "mostdsa/checkpoint.hpp"
#include "mostdsa/data.hpp"
#include "mostdsa/model.hpp"

using namespace mostdsa;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("mostdsa_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("png round trip preserves quantized values") {
    Rng rng(110);
    Tensor<float> img = random_uniform<float>(Shape(1, 1, 23, 31), rng, 0, 1);
    auto bytes = image_io::encode_png_gray8(img);
    Tensor<float> back = image_io::decode_png_gray8(bytes);
    REQUIRE(back.shape() == img.shape());
    for (std::int64_t i = 0; i < img.numel(); ++i) {
        const float want = image_io::quantize8(img.data()[i]) / 255.0f;
        CHECK(back.data()[i] == want);
    }
}

TEST_CASE("png reader handles sub and up filters") {
    // hand-build a 3x2 grayscale PNG with filter types 1 (sub) and 2 (up)
    const unsigned char rows[2][3] = {{10, 30, 60}, {15, 40, 80}};
    std::vector<unsigned char> raw;
    raw.push_back(1);  // sub filter: first raw, rest deltas
    raw.push_back(10);
    raw.push_back(20);
    raw.push_back(30);
    raw.push_back(2);  // up filter: deltas against previous row
    raw.push_back(5);
    raw.push_back(10);
    raw.push_back(20);

    uLongf clen = compressBound(uLong(raw.size()));
    std::vector<unsigned char> comp(clen);
    REQUIRE(compress2(comp.data(), &clen, raw.data(), uLong(raw.size()), 6) == Z_OK);
    comp.resize(clen);

    std::vector<unsigned char> png = {137, 80, 78, 71, 13, 10, 26, 10};
    auto put_chunk = [&](const char* type, const std::vector<unsigned char>& payload) {
        for (int i = 3; i >= 0; --i) png.push_back((payload.size() >> (8 * i)) & 0xff);
        const std::size_t start = png.size();
        png.insert(png.end(), type, type + 4);
        png.insert(png.end(), payload.begin(), payload.end());
        const std::uint32_t crc = ::crc32(0, png.data() + start, uInt(png.size() - start));
        for (int i = 3; i >= 0; --i) png.push_back((crc >> (8 * i)) & 0xff);
    };
    std::vector<unsigned char> ihdr = {0, 0, 0, 3, 0, 0, 0, 2, 8, 0, 0, 0, 0};
    put_chunk("IHDR", ihdr);
    put_chunk("IDAT", comp);
    put_chunk("IEND", {});

    Tensor<float> img = image_io::decode_png_gray8(png);
    REQUIRE(img.shape() == Shape(1, 1, 2, 3));
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x)
            CHECK(img.at(0, 0, y, x) == Catch::Approx(rows[y][x] / 255.0).margin(1e-7));
}

TEST_CASE("config parse, serialize, and validation") {
    const std::string text =
        "# toy setup\n"
        "r = 5\n"
        "channels = 16,32,64\n"
        "n_interp = 2   # two frames\n"
        "lr_peak = 3e-4\n"
        "seed = 77\n";
    Config cfg = Config::parse(text);
    CHECK(cfg.r == 5);
    CHECK(cfg.n_interp == 2);
    CHECK(cfg.lr_peak == 3e-4);
    CHECK(cfg.seed == 77);

    // round trip through serialize
    Config back = Config::parse(cfg.serialize());
    CHECK(back.serialize() == cfg.serialize());

    CHECK_THROWS_WITH(Config::parse("bogus_key = 1\n"),
                      Catch::Matchers::ContainsSubstring("bogus_key"));
    CHECK_THROWS_WITH(Config::parse("r = 4\n"), Catch::Matchers::ContainsSubstring("centered"));
    CHECK_THROWS_AS(Config::parse("schedule = 0.5,0.5\n"), UsageError);
    CHECK_THROWS_AS(Config::parse("schedule = 1.5\n"), UsageError);
    CHECK_THROWS_AS(Config::parse("crop = 30\n"), ConfigError);
}

TEST_CASE("default r follows the interpolation count") {
    Config cfg;
    cfg.n_interp = 1;
    CHECK(cfg.effective_r() == 29);
    cfg.n_interp = 2;
    CHECK(cfg.effective_r() == 29);
    cfg.n_interp = 3;
    CHECK(cfg.effective_r() == 21);
    cfg.r = 9;
    CHECK(cfg.effective_r() == 9);
}

TEST_CASE("checkpoint round trip is bit-identical and checksum-verified") {
    Config cfg;
    cfg.r = 3;
    cfg.seed = 111;
    Model<float> model(cfg);
    model.params().set_step(1234);

    auto bytes = checkpoint::serialize(model.params(), cfg);
    auto [store2, cfg2] = checkpoint::deserialize(bytes);
    CHECK(store2.size() == model.params().size());
    CHECK(store2.step() == 1234);
    CHECK(cfg2.serialize() == cfg.serialize());
    auto bytes2 = checkpoint::serialize(store2, cfg2);
    CHECK(bytes == bytes2);

    // corrupt one payload byte: checksum must reject
    auto bad = bytes;
    bad[bytes.size() / 2] ^= 0x40;
    CHECK_THROWS_WITH(checkpoint::deserialize(bad),
                      Catch::Matchers::ContainsSubstring("checksum"));

    auto nomagic = bytes;
    nomagic[0] = 'X';
    CHECK_THROWS_WITH(checkpoint::deserialize(nomagic),
                      Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("checkpoint save/load through files") {
    fs::path dir = temp_dir("ckpt");
    Config cfg;
    cfg.r = 3;
    cfg.seed = 7;
    Model<float> model(cfg);
    const std::string path = (dir / "model.ckpt").string();
    checkpoint::save(path, model.params(), cfg);
    auto [store, cfg2] = checkpoint::load(path);
    CHECK(cfg2.r == 3);
    const auto& a = model.params().at("attn.wq").value;
    const auto& b = store.at("attn.wq").value;
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
    fs::remove_all(dir);
}

TEST_CASE("dataset write and load round trip") {
    fs::path dir = temp_dir("data");
    data::generate_dataset(dir.string(), 3, 5, 32, 32, synth::Regime::mixed, 500);
    auto scenes = data::load_dataset(dir.string());
    REQUIRE(scenes.size() == 3);
    CHECK(scenes[0].id == "scene_0000");
    CHECK(scenes[0].frames.size() == 5);
    CHECK(scenes[0].frames[0].shape() == Shape(1, 1, 32, 32));
    CHECK(scenes[0].regime == synth::Regime::mixed);
    CHECK(scenes[0].seed == 500);
    CHECK(scenes[1].seed == 500 + 7919);

    // regenerating over the same directory is byte-identical
    auto first = image_io::encode_png_gray8(scenes[0].frames[0]);
    data::generate_dataset(dir.string(), 3, 5, 32, 32, synth::Regime::mixed, 500);
    auto scenes2 = data::load_dataset(dir.string());
    CHECK(image_io::encode_png_gray8(scenes2[0].frames[0]) == first);
    fs::remove_all(dir);
}
