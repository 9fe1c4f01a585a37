#include "gdds/volume.hpp"

#include <algorithm>

namespace gdds {

std::string to_string(const Shape3& s) {
    return std::to_string(s.d) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

int64_t count_foreground(const LabelVolume& y) {
    return std::count_if(y.data().begin(), y.data().end(), [](uint8_t v) { return v != 0; });
}

}  // namespace gdds
