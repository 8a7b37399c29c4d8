#include "mpsr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "mpsr/archive.hpp"

namespace mpsr {

Tensor read_png(const std::filesystem::path& path)
{
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError("png: cannot read " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("png: cannot decode " + path.string() + ": " + img.message);
    }
    const int h = static_cast<int>(img.height);
    const int w = static_cast<int>(img.width);
    Tensor out(Shape{1, 3, h, w});
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++)
            for (int c = 0; c < 3; c++)
                out.at(0, c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image)
{
    const Shape s = image.shape();
    if (s.c != 3)
        throw ShapeError("png: expected 3 channels, got " + s.str());
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::vector<png_byte> buf(static_cast<std::size_t>(s.h) * s.w * 3);
    for (int y = 0; y < s.h; y++)
        for (int x = 0; x < s.w; x++)
            for (int c = 0; c < 3; c++) {
                const double v = std::clamp(image.at(0, c, y, x), 0.0, 1.0);
                buf[(static_cast<std::size_t>(y) * s.w + x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(s.w);
    img.height = static_cast<png_uint_32>(s.h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("png: cannot write " + path.string() + ": " + img.message);
}

} // namespace mpsr
