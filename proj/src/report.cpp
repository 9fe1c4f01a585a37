#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "gdds/report.hpp"

namespace gdds {
namespace {

struct FileCloser {
    void operator()(FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<FILE, FileCloser>;

// slice plane (rows, cols) for a view
struct Plane {
    int64_t rows, cols;
};

Plane plane_of(const Shape3& s, View v) { return v == View::axial ? Plane{s.h, s.w} : Plane{s.d, s.w}; }

template <class T>
T at(const Grid3<T>& g, View v, int64_t index, int64_t r, int64_t c) {
    return v == View::axial ? g(index, r, c) : g(r, index, c);
}

int64_t slice_count(const Shape3& s, View v) { return v == View::axial ? s.d : s.h; }

uint8_t to_byte(double v) { return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

}  // namespace

void write_png(const RgbImage& img, const std::filesystem::path& path) {
    if (img.width < 1 || img.height < 1 || img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3) {
        throw Error("write_png: malformed image");
    }
    File f(std::fopen(path.c_str(), "wb"));
    if (!f) throw Error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng failed writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < img.height; ++r) {
        png_write_row(png, const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(r) * img.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
    File f(std::fopen(path.c_str(), "rb"));
    if (!f) throw Error("cannot read " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng initialisation failed");
    }
    RgbImage img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng failed reading " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
    for (int r = 0; r < img.height; ++r) png_read_row(png, img.rgb.data() + static_cast<size_t>(r) * img.width * 3, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

int64_t pick_slice(const ReportInputs& in, View view) {
    if (!in.image) throw Error("report needs an image");
    const auto& s = in.image->shape();
    const Plane pl = plane_of(s, view);
    auto best_of = [&](auto&& fg) -> int64_t {
        int64_t best = -1, best_n = 0;
        for (int64_t k = 0; k < slice_count(s, view); ++k) {
            int64_t n = 0;
            for (int64_t r = 0; r < pl.rows; ++r)
                for (int64_t c = 0; c < pl.cols; ++c) n += fg(k, r, c) ? 1 : 0;
            if (n > best_n) {
                best_n = n;
                best = k;
            }
        }
        return best;
    };
    int64_t k = -1;
    if (in.ref) k = best_of([&](int64_t i, int64_t r, int64_t c) { return at(*in.ref, view, i, r, c) != 0; });
    if (k < 0 && in.pred) k = best_of([&](int64_t i, int64_t r, int64_t c) { return at(*in.pred, view, i, r, c) != 0; });
    if (k < 0 && in.prob) k = best_of([&](int64_t i, int64_t r, int64_t c) { return at(*in.prob, view, i, r, c) >= 0.5f; });
    return k < 0 ? slice_count(s, view) / 2 : k;
}

RgbImage render_slice(const ReportInputs& in, View view, int64_t index, int scale) {
    if (!in.image) throw Error("report needs an image");
    const auto& s = in.image->shape();
    for (const Shape3* o : {in.prob ? &in.prob->shape() : nullptr, in.ref ? &in.ref->shape() : nullptr,
                            in.pred ? &in.pred->shape() : nullptr}) {
        if (o && !(*o == s)) throw Error("report inputs differ in shape: " + to_string(*o) + " vs " + to_string(s));
    }
    if (index < 0 || index >= slice_count(s, view)) throw Error("slice index out of range");
    if (scale < 1) throw Error("scale must be >= 1");
    const Plane pl = plane_of(s, view);

    const auto [lo_it, hi_it] = std::minmax_element(in.image->data().begin(), in.image->data().end());
    const double lo = *lo_it, span = std::max(1e-12, static_cast<double>(*hi_it) - lo);

    const int panels = 1 + (in.prob ? 1 : 0) + (in.ref && in.pred ? 1 : 0);
    RgbImage img;
    img.width = static_cast<int>(pl.cols * scale * panels);
    img.height = static_cast<int>(pl.rows * scale);
    img.rgb.assign(static_cast<size_t>(img.width) * img.height * 3, 0);

    auto put = [&](int panel, int64_t r, int64_t c, double R, double G, double B) {
        for (int dy = 0; dy < scale; ++dy)
            for (int dx = 0; dx < scale; ++dx) {
                const size_t px = static_cast<size_t>((r * scale + dy) * img.width + panel * pl.cols * scale + c * scale + dx);
                img.rgb[px * 3] = to_byte(R);
                img.rgb[px * 3 + 1] = to_byte(G);
                img.rgb[px * 3 + 2] = to_byte(B);
            }
    };

    for (int64_t r = 0; r < pl.rows; ++r)
        for (int64_t c = 0; c < pl.cols; ++c) {
            const double g = (at(*in.image, view, index, r, c) - lo) / span;
            int panel = 0;
            put(panel++, r, c, g, g, g);
            if (in.prob) {
                // red to yellow heat blended by probability
                const double p = std::clamp(static_cast<double>(at(*in.prob, view, index, r, c)), 0.0, 1.0);
                put(panel++, r, c, (1 - p) * g + p, (1 - p) * g + p * p, (1 - p) * g);
            }
            if (in.ref && in.pred) {
                const bool y = at(*in.ref, view, index, r, c) != 0, q = at(*in.pred, view, index, r, c) != 0;
                if (y && q) put(panel, r, c, 0, 0.85, 0);
                else if (y) put(panel, r, c, 0.9, 0, 0);
                else if (q) put(panel, r, c, 0.1, 0.3, 1.0);
                else put(panel, r, c, 0.6 * g, 0.6 * g, 0.6 * g);
            }
        }
    return img;
}

}  // namespace gdds
