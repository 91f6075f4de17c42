#pragma once

#include "panodapt/usm.hpp"

namespace panodapt::viz {

// a | b | c with thin white separators
Tensor<float> hstack3(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& c);
Tensor<float> hstack2(const Tensor<float>& a, const Tensor<float>& b);

// yellow displacement segments on a regular grid; dot marks the base point
void draw_field_arrows(Tensor<float>& img, const Tensor<float>& field, int stride = 8);

// blue (weight 0) to red (weight 1) overlay of a 1xHxW map onto the image
Tensor<float> weight_overlay(const Tensor<float>& img, const Tensor<float>& w);

// source | morphed-with-field-arrows | reference
void write_deformation_panel(const usm::DeformNet<float>& F, const data::LabeledImage& x_i,
                             const data::LabeledImage& x_a, const std::filesystem::path& out_png);

// image | panoramic-branch gate weight overlay (red = panoramic branch wins)
void write_gating_panel(const seg::SegModel<float>& model, const Tensor<float>& img,
                        const std::filesystem::path& out_png);

}  // namespace panodapt::viz
