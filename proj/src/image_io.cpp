#include "zecon/image_io.hpp"

#include "zecon/error.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace zecon {

double byte_to_unit(std::uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }

std::uint8_t unit_to_byte(double x) {
    if (std::isnan(x)) throw Error("image_io", "cannot quantise NaN");
    const double v = std::nearbyint((std::clamp(x, -1.0, 1.0) + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

Tensor read_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error("image_io", "no such file: " + path.string());
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw Error("image_io", "cannot decode image: " + path.string());
    cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
    const auto h = static_cast<std::size_t>(m.rows), w = static_cast<std::size_t>(m.cols);
    Tensor out({3, h, w});
    for (std::size_t y = 0; y < h; ++y) {
        const auto* row = m.ptr<cv::Vec3b>(static_cast<int>(y));
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = byte_to_unit(row[x][static_cast<int>(c)]);
    }
    return out;
}

void write_image(const Tensor& image, const std::filesystem::path& path) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw Error("image_io", "expected a [3,H,W] image, got " + shape_str(image.shape()));
    }
    const auto h = image.dim(1), w = image.dim(2);
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
    for (std::size_t y = 0; y < h; ++y) {
        auto* row = m.ptr<cv::Vec3b>(static_cast<int>(y));
        for (std::size_t x = 0; x < w; ++x) {
            // OpenCV stores BGR
            for (std::size_t c = 0; c < 3; ++c) row[x][static_cast<int>(2 - c)] = unit_to_byte(image.at(c, y, x));
        }
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), m)) throw Error("image_io", "cannot write image: " + path.string());
}

Tensor resize_square(const Tensor& image, std::size_t size) {
    if (image.rank() != 3) throw Error("image_io", "expected [C,H,W], got " + shape_str(image.shape()));
    const auto C = image.dim(0), H = image.dim(1), W = image.dim(2);
    if (H == size && W == size) return image;
    const int interp = (H > size || W > size) ? cv::INTER_AREA : cv::INTER_LINEAR;
    Tensor out({C, size, size});
    for (std::size_t c = 0; c < C; ++c) {
        cv::Mat src(static_cast<int>(H), static_cast<int>(W), CV_64F, const_cast<double*>(image.data() + c * H * W));
        cv::Mat dst;
        cv::resize(src, dst, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, interp);
        std::copy(dst.ptr<double>(), dst.ptr<double>() + size * size, out.data() + c * size * size);
    }
    return out;
}

Tensor quantize(const Tensor& image) {
    Tensor out = image;
    for (double& v : out.values()) v = byte_to_unit(unit_to_byte(v));
    return out;
}

} // namespace zecon
