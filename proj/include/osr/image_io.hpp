#ifndef OSR_IMAGE_IO_HPP
#define OSR_IMAGE_IO_HPP

#include <string>

#include "osr/tensor.hpp"

namespace osr {

// Writes [H,W,1] as binary PGM or [H,W,3] as binary PPM; intensities are
// clamped to [0,1] and quantized to 8 bits.
void write_image(const std::string& path, const nn::Tensor& image);

}  // namespace osr

#endif
