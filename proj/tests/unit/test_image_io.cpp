#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "drc/image_io.hpp"
#include "test_util.hpp"

using namespace drc;
namespace fs = std::filesystem;

namespace {
const fs::path kData = DRC_TEST_DATA_DIR;

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}
} // namespace

TEST_CASE("png gray8 pixels load exactly") {
    Tensor img = load_image_gray(kData / "gray8.png");
    REQUIRE(img.shape() == std::vector<int>{3, 4});
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(img.at(y, x) == doctest::Approx((y * 4 + x) * 20 / 255.0).epsilon(1e-12));
}

TEST_CASE("png gray16 keeps 16-bit resolution") {
    Tensor img = load_image_gray(kData / "gray16.png");
    REQUIRE(img.shape() == std::vector<int>{2, 3});
    const double expect[6] = {0, 1000, 20000, 40000, 60000, 65535};
    for (int i = 0; i < 6; ++i)
        CHECK(img[std::size_t(i)] == doctest::Approx(expect[i] / 65535.0).epsilon(1e-12));
}

TEST_CASE("png rgb8 reduces to Rec.601 luminance") {
    Tensor img = load_image_gray(kData / "rgb8.png");
    REQUIRE(img.shape() == std::vector<int>{2, 2});
    CHECK(img.at(0, 0) == doctest::Approx(0.299).epsilon(1e-9));
    CHECK(img.at(0, 1) == doctest::Approx(0.587).epsilon(1e-9));
    CHECK(img.at(1, 0) == doctest::Approx(0.114).epsilon(1e-9));
    CHECK(img.at(1, 1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("palette and alpha variants load") {
    Tensor pal = load_image_gray(kData / "palette.png");
    REQUIRE(pal.shape() == std::vector<int>{1, 4});
    CHECK(pal.at(0, 0) == doctest::Approx(0.0));
    CHECK(pal.at(0, 1) == doctest::Approx(128.0 / 255.0).epsilon(1e-9));
    CHECK(pal.at(0, 2) == doctest::Approx(1.0));
    CHECK(pal.at(0, 3) == doctest::Approx(0.299).epsilon(1e-9));

    Tensor rgba = load_image_gray(kData / "rgba8.png");
    REQUIRE(rgba.shape() == std::vector<int>{2, 2});
    CHECK(rgba.at(0, 0) == doctest::Approx(0.299 * 200.0 / 255.0).epsilon(1e-9));
}

TEST_CASE("baseline jpegs decode to the encoded levels") {
    Tensor gray = load_image_gray(kData / "gray.jpg");
    REQUIRE(gray.shape() == std::vector<int>{16, 16});
    for (std::size_t i = 0; i < gray.size(); ++i)
        CHECK(gray[i] == doctest::Approx(128.0 / 255.0).epsilon(0.02));

    Tensor rgb = load_image_gray(kData / "rgb.jpg");
    const double lum = (0.299 * 100 + 0.587 * 150 + 0.114 * 200) / 255.0;
    for (std::size_t i = 0; i < rgb.size(); ++i)
        CHECK(rgb[i] == doctest::Approx(lum).epsilon(0.03));
}

TEST_CASE("pgm round trip") {
    const fs::path p = fs::temp_directory_path() / "drc_io_test.pgm";
    std::vector<std::uint8_t> pix(6 * 5);
    for (std::size_t i = 0; i < pix.size(); ++i) pix[i] = std::uint8_t(i * 8);
    write_pgm(p, pix.data(), 6, 5);
    Tensor img = load_image_gray(p);
    REQUIRE(img.shape() == std::vector<int>{5, 6});
    for (std::size_t i = 0; i < pix.size(); ++i)
        CHECK(img[i] == doctest::Approx(pix[i] / 255.0).epsilon(1e-12));
    fs::remove(p);
}

TEST_CASE("own png writer is lossless and byte-stable") {
    const fs::path dir = fs::temp_directory_path();
    Rng rng(77);
    std::vector<std::uint8_t> rgb(9 * 7 * 3);
    for (auto& v : rgb) v = std::uint8_t(rng.next_below(256));

    write_png_rgb8(dir / "drc_a.png", rgb.data(), 9, 7);
    write_png_rgb8(dir / "drc_b.png", rgb.data(), 9, 7);
    CHECK(slurp(dir / "drc_a.png") == slurp(dir / "drc_b.png"));

    // Read back through libpng: lossless luminance match.
    Tensor img = load_image_gray(dir / "drc_a.png");
    REQUIRE(img.shape() == std::vector<int>{7, 9});
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 9; ++x) {
            const std::size_t i = (std::size_t(y) * 9 + x) * 3;
            const double lum = (0.299 * rgb[i] + 0.587 * rgb[i + 1] + 0.114 * rgb[i + 2]) / 255.0;
            CHECK(img.at(y, x) == doctest::Approx(lum).epsilon(1e-9));
        }

    std::vector<std::uint8_t> gray(12 * 4);
    for (auto& v : gray) v = std::uint8_t(rng.next_below(256));
    write_png_gray8(dir / "drc_g.png", gray.data(), 12, 4);
    Tensor gimg = load_image_gray(dir / "drc_g.png");
    REQUIRE(gimg.shape() == std::vector<int>{4, 12});
    for (std::size_t i = 0; i < gray.size(); ++i)
        CHECK(gimg[i] == doctest::Approx(gray[i] / 255.0).epsilon(1e-12));

    fs::remove(dir / "drc_a.png");
    fs::remove(dir / "drc_b.png");
    fs::remove(dir / "drc_g.png");
}

TEST_CASE("reader error cases") {
    CHECK_THROWS_AS(load_image_gray(kData / "missing.png"), DataError);
    CHECK_THROWS_AS(load_image_gray(kData / "gray8.bmp"), DataError);
    const fs::path bad = fs::temp_directory_path() / "drc_bad.png";
    std::ofstream(bad) << "this is not a png";
    CHECK_THROWS_AS(load_image_gray(bad), DataError);
    fs::remove(bad);
}
