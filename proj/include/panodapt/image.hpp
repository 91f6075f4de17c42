#pragma once

#include <filesystem>

#include "panodapt/tensor.hpp"

namespace panodapt::img {

// 8-bit RGB PNG -> 3xHxW float in [0,1]
Tensor<float> read_png_rgb(const std::filesystem::path& path);

// single-channel 8-bit PNG -> label map (values kept verbatim)
LabelMap read_png_gray(const std::filesystem::path& path);

// float [0,1] (clamped, rounded) -> 8-bit RGB PNG
void write_png_rgb(const Tensor<float>& img, const std::filesystem::path& path);

void write_png_gray(const LabelMap& lab, const std::filesystem::path& path);

}  // namespace panodapt::img
