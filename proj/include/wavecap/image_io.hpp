#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace wavecap::image_io {

/// Decodes any raster format OpenCV reads as 8-bit RGB, resizes to
/// size x size and returns [3, size, size] float32 in [-1, 1]. Throws
/// DataError when the file cannot be decoded.
torch::Tensor load_image(const std::filesystem::path& path, int64_t size);

/// Writes [3, H, W] values in [-1, 1] as an 8-bit RGB image (format from
/// the extension).
void save_image(const std::filesystem::path& path, const torch::Tensor& image);

}  // namespace wavecap::image_io
