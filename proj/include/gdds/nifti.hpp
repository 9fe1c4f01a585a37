#pragma once

#include <filesystem>

#include "gdds/volume.hpp"

namespace gdds {

/// NIfTI-1 (.nii / .nii.gz) reader/writer.
///
/// Readers accept any scalar datatype, either byte order and compressed or
/// plain files, apply scl_slope/scl_inter, and reorient the grid into the
/// canonical (superior->inferior, anterior->posterior, left->right) axis
/// order using sform, falling back to qform and then to pixdim.
/// Writers always emit canonical orientation: float32 for images, uint8 for
/// labels, gzip-compressed when the path ends in ".gz".
Volume load_volume(const std::filesystem::path& path);

/// Label files must be two-valued. Values within 1e-3 of {0,1} are
/// thresholded at 0.5; a file holding exactly {0, m} with m > 0 (e.g. 0/255
/// masks) is rescaled; anything else is rejected.
LabelVolume load_label(const std::filesystem::path& path);

void save_volume(const Volume& v, const std::filesystem::path& path);
void save_label(const LabelVolume& y, const std::filesystem::path& path);

}  // namespace gdds
