#include "support.hpp"

#include "zecon/error.hpp"
#include "zecon/image_io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace zecon;

TEST_CASE("byte and unit conversions") {
    CHECK(byte_to_unit(0) == -1.0);
    CHECK(byte_to_unit(255) == 1.0);
    CHECK(unit_to_byte(-1.0) == 0);
    CHECK(unit_to_byte(1.0) == 255);
    // 127.5 rounds half to even
    CHECK(unit_to_byte(0.0) == 128);
    CHECK(unit_to_byte(-1.0 / 255.0) == 127);
    CHECK(unit_to_byte(5.0) == 255);
    CHECK(unit_to_byte(-3.0) == 0);
    CHECK_THROWS(unit_to_byte(std::numeric_limits<double>::quiet_NaN()));
    for (int v = 0; v < 256; ++v) CHECK(unit_to_byte(byte_to_unit(static_cast<std::uint8_t>(v))) == v);
}

TEST_CASE("write and read round trip") {
    auto x = test::random_image(12, 3);
    auto path = std::filesystem::temp_directory_path() / "zecon_io_test" / "img.png";
    write_image(x, path);
    auto back = read_image(path);
    CHECK(back.shape() == x.shape());
    CHECK(back == quantize(x));
    CHECK(max_abs_diff(back, x) <= 1.0 / 255.0 + 1e-12);
    std::filesystem::remove_all(path.parent_path());
    CHECK_THROWS(read_image("/nonexistent/none.png"));
}

TEST_CASE("resize_square") {
    Tensor flat({3, 8, 8}, 0.25);
    auto down = resize_square(flat, 4);
    CHECK(down.shape() == std::vector<std::size_t>{3, 4, 4});
    CHECK(max_abs_diff(down, Tensor({3, 4, 4}, 0.25)) < 1e-12);
    auto up = resize_square(flat, 16);
    CHECK(max_abs_diff(up, Tensor({3, 16, 16}, 0.25)) < 1e-12);
    auto x = test::random_image(8, 1);
    CHECK(resize_square(x, 8) == x);
}
