#ifndef OSR_SHAPE_HPP
#define OSR_SHAPE_HPP

#include <string>

namespace osr {

struct ImageShape {
    int h = 0, w = 0, ch = 0;

    bool operator==(const ImageShape&) const = default;
    int pixels() const { return h * w * ch; }
    std::string str() const { return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(ch); }
};

}  // namespace osr

#endif
