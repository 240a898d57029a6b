#include "osr/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "osr/errors.hpp"

namespace osr {

void write_image(const std::string& path, const nn::Tensor& image) {
    if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3))
        throw std::invalid_argument("write_image: expected [H,W,1] or [H,W,3], got " + image.shape_str());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw NotFoundError("cannot open image for writing: " + path);
    const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
    os << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w * c; ++x) {
            double v = image[static_cast<std::int64_t>(y) * w * c + x];
            v = std::clamp(v, 0.0, 1.0);
            row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw ParseError("short write on image: " + path);
}

}  // namespace osr
