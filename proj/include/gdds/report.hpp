#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gdds/volume.hpp"

namespace gdds {

struct RgbImage {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

void write_png(const RgbImage& img, const std::filesystem::path& path);
RgbImage read_png(const std::filesystem::path& path);

enum class View { axial, coronal };

/// Inputs of one overlay figure; any pointer except `image` may be null.
struct ReportInputs {
    const Volume* image = nullptr;
    const Volume* prob = nullptr;
    const LabelVolume* ref = nullptr;
    const LabelVolume* pred = nullptr;
};

/// Slice with the most reference (else predicted, else probability >= 0.5)
/// foreground; the middle slice when all are empty.
int64_t pick_slice(const ReportInputs& in, View view);

/// Panels side by side: grayscale image, probability overlay (when prob is
/// given), and TP green / FN red / FP blue (when ref and pred are given).
RgbImage render_slice(const ReportInputs& in, View view, int64_t index, int scale = 4);

}  // namespace gdds
