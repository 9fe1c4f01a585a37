#include "gdds/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace gdds {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope, scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

enum NiftiType : int16_t {
    kUInt8 = 2, kInt16 = 4, kInt32 = 8, kFloat32 = 16, kFloat64 = 64,
    kInt8 = 256, kUInt16 = 512, kUInt32 = 768, kInt64 = 1024, kUInt64 = 1280,
};

template <class T>
void swap_in_place(T& v) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
}

void swap_header(Nifti1Header& h) {
    swap_in_place(h.sizeof_hdr);
    swap_in_place(h.extents);
    swap_in_place(h.session_error);
    for (auto& d : h.dim) swap_in_place(d);
    swap_in_place(h.intent_p1);
    swap_in_place(h.intent_p2);
    swap_in_place(h.intent_p3);
    swap_in_place(h.intent_code);
    swap_in_place(h.datatype);
    swap_in_place(h.bitpix);
    swap_in_place(h.slice_start);
    for (auto& p : h.pixdim) swap_in_place(p);
    swap_in_place(h.vox_offset);
    swap_in_place(h.scl_slope);
    swap_in_place(h.scl_inter);
    swap_in_place(h.slice_end);
    swap_in_place(h.cal_max);
    swap_in_place(h.cal_min);
    swap_in_place(h.slice_duration);
    swap_in_place(h.toffset);
    swap_in_place(h.glmax);
    swap_in_place(h.glmin);
    swap_in_place(h.qform_code);
    swap_in_place(h.sform_code);
    swap_in_place(h.quatern_b);
    swap_in_place(h.quatern_c);
    swap_in_place(h.quatern_d);
    swap_in_place(h.qoffset_x);
    swap_in_place(h.qoffset_y);
    swap_in_place(h.qoffset_z);
    for (auto& v : h.srow_x) swap_in_place(v);
    for (auto& v : h.srow_y) swap_in_place(v);
    for (auto& v : h.srow_z) swap_in_place(v);
}

bool is_gz_path(const std::filesystem::path& p) { return p.extension() == ".gz"; }

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw Error("no such file: " + path.string());
    }
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (f == nullptr) throw Error("cannot open " + path.string());
    std::vector<unsigned char> out;
    std::array<unsigned char, 1 << 16> buf{};
    while (true) {
        int got = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
        if (got < 0) {
            int errnum = 0;
            std::string msg = gzerror(f, &errnum);
            gzclose(f);
            throw Error("corrupt compressed stream in " + path.string() + ": " + msg);
        }
        if (got == 0) break;
        out.insert(out.end(), buf.begin(), buf.begin() + got);
    }
    gzclose(f);
    return out;
}

void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (is_gz_path(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (f == nullptr) throw Error("cannot write " + path.string());
        const int put = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        const int rc = gzclose(f);
        if (put != static_cast<int>(bytes.size()) || rc != Z_OK) {
            throw Error("failed writing " + path.string());
        }
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

// Voxel-axis direction matrix: column i is the world (RAS) direction of file axis i.
using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 direction_matrix(const Nifti1Header& h) {
    Mat3 m{};
    if (h.sform_code > 0) {
        const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m[r][c] = rows[r][c];
        return m;
    }
    if (h.qform_code > 0) {
        double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
        double a = 1.0 - (b * b + c * c + d * d);
        a = a < 1e-7 ? 0.0 : std::sqrt(a);
        const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
        m[0] = {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)};
        m[1] = {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)};
        m[2] = {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b};
        for (auto& row : m) row[2] *= qfac;
        return m;
    }
    for (int i = 0; i < 3; ++i) m[i][i] = 1.0;
    return m;
}

// For canonical axis k (0: z, 1: y, 2: x) which file axis feeds it and whether
// it must be flipped. Canonical directions in RAS world: -S, -A, +R.
struct AxisMap {
    std::array<int, 3> file_axis{};
    std::array<bool, 3> flip{};
};

AxisMap canonical_axis_map(const Mat3& m) {
    // world row for each canonical axis and the sign that means "increasing index"
    constexpr std::array<int, 3> world_row = {2, 1, 0};
    constexpr std::array<double, 3> wanted_sign = {-1.0, -1.0, 1.0};
    std::array<int, 3> perm = {0, 1, 2};
    std::array<int, 3> best{};
    double best_score = -1.0;
    do {
        double score = 0.0;
        for (int k = 0; k < 3; ++k) score += std::abs(m[world_row[k]][perm[k]]);
        if (score > best_score) {
            best_score = score;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    AxisMap map;
    for (int k = 0; k < 3; ++k) {
        map.file_axis[k] = best[k];
        const double comp = m[world_row[k]][best[k]];
        map.flip[k] = comp * wanted_sign[k] < 0.0;
    }
    return map;
}

template <class Src>
std::vector<double> decode_as_double(const unsigned char* p, size_t n, bool swap) {
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        Src v;
        std::memcpy(&v, p + i * sizeof(Src), sizeof(Src));
        if (swap) swap_in_place(v);
        out[i] = static_cast<double>(v);
    }
    return out;
}

struct RawVolume {
    std::array<int64_t, 3> dims{};  // file axes i, j, k
    std::array<double, 3> pixdim{};
    AxisMap axes;
    std::vector<double> values;  // file order, i fastest
};

RawVolume read_raw(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    if (bytes.size() < sizeof(Nifti1Header)) {
        throw Error("truncated NIfTI header in " + path.string());
    }
    Nifti1Header h;
    std::memcpy(&h, bytes.data(), sizeof(h));
    bool swap = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swap = true;
        if (h.sizeof_hdr != 348) throw Error("not a NIfTI-1 file: " + path.string());
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0 && std::memcmp(h.magic, "ni1", 4) != 0) {
        throw Error("bad NIfTI magic in " + path.string());
    }
    if (std::memcmp(h.magic, "ni1", 4) == 0) {
        throw Error("split .hdr/.img NIfTI pairs are not supported: " + path.string());
    }
    const int ndim = h.dim[0];
    if (ndim < 1 || ndim > 7) throw Error("invalid NIfTI dim[0] in " + path.string());
    for (int i = 4; i <= ndim; ++i) {
        if (h.dim[i] > 1) throw Error("only 3D volumes are supported: " + path.string());
    }
    RawVolume raw;
    for (int i = 0; i < 3; ++i) {
        raw.dims[i] = i < ndim ? h.dim[i + 1] : 1;
        if (raw.dims[i] < 1) throw Error("non-positive dimension in " + path.string());
        double pd = std::abs(h.pixdim[i + 1]);
        raw.pixdim[i] = pd > 0 ? pd : 1.0;
    }
    raw.axes = canonical_axis_map(direction_matrix(h));

    const size_t n = static_cast<size_t>(raw.dims[0] * raw.dims[1] * raw.dims[2]);
    const auto offset = static_cast<size_t>(h.vox_offset < 348 ? 352 : h.vox_offset);
    size_t elem = 0;
    switch (h.datatype) {
        case kUInt8: case kInt8: elem = 1; break;
        case kInt16: case kUInt16: elem = 2; break;
        case kInt32: case kUInt32: case kFloat32: elem = 4; break;
        case kFloat64: case kInt64: case kUInt64: elem = 8; break;
        default: throw Error("unsupported NIfTI datatype " + std::to_string(h.datatype));
    }
    if (bytes.size() < offset + n * elem) {
        throw Error("truncated NIfTI voxel data in " + path.string());
    }
    const unsigned char* p = bytes.data() + offset;
    switch (h.datatype) {
        case kUInt8: raw.values = decode_as_double<uint8_t>(p, n, false); break;
        case kInt8: raw.values = decode_as_double<int8_t>(p, n, false); break;
        case kInt16: raw.values = decode_as_double<int16_t>(p, n, swap); break;
        case kUInt16: raw.values = decode_as_double<uint16_t>(p, n, swap); break;
        case kInt32: raw.values = decode_as_double<int32_t>(p, n, swap); break;
        case kUInt32: raw.values = decode_as_double<uint32_t>(p, n, swap); break;
        case kFloat32: raw.values = decode_as_double<float>(p, n, swap); break;
        case kFloat64: raw.values = decode_as_double<double>(p, n, swap); break;
        case kInt64: raw.values = decode_as_double<int64_t>(p, n, swap); break;
        case kUInt64: raw.values = decode_as_double<uint64_t>(p, n, swap); break;
        default: break;
    }
    if (h.scl_slope != 0.0f && std::isfinite(h.scl_slope) &&
        !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
        for (auto& v : raw.values) v = v * h.scl_slope + h.scl_inter;
    }
    return raw;
}

template <class T, class Convert>
Grid3<T> canonicalize(const RawVolume& raw, Convert convert) {
    const auto& ax = raw.axes;
    Shape3 shape{raw.dims[ax.file_axis[0]], raw.dims[ax.file_axis[1]], raw.dims[ax.file_axis[2]]};
    Spacing sp{raw.pixdim[ax.file_axis[0]], raw.pixdim[ax.file_axis[1]], raw.pixdim[ax.file_axis[2]]};
    Grid3<T> out(shape, T{}, sp);
    const std::array<int64_t, 3> stride = {1, raw.dims[0], raw.dims[0] * raw.dims[1]};
    for (int64_t z = 0; z < shape.d; ++z)
        for (int64_t y = 0; y < shape.h; ++y)
            for (int64_t x = 0; x < shape.w; ++x) {
                const std::array<int64_t, 3> c = {z, y, x};
                int64_t off = 0;
                for (int k = 0; k < 3; ++k) {
                    const int64_t n = shape[k];
                    const int64_t idx = ax.flip[k] ? n - 1 - c[k] : c[k];
                    off += idx * stride[ax.file_axis[k]];
                }
                out(z, y, x) = convert(raw.values[static_cast<size_t>(off)]);
            }
    return out;
}

template <class T>
std::vector<unsigned char> encode(const Grid3<T>& g, int16_t datatype) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(g.shape().w);
    h.dim[2] = static_cast<int16_t>(g.shape().h);
    h.dim[3] = static_cast<int16_t>(g.shape().d);
    for (int i = 4; i < 8; ++i) h.dim[i] = 1;
    h.datatype = datatype;
    h.bitpix = static_cast<int16_t>(8 * sizeof(T));
    const auto& s = g.spacing();
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(s.x);
    h.pixdim[2] = static_cast<float>(s.y);
    h.pixdim[3] = static_cast<float>(s.z);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.xyzt_units = 2;  // mm
    std::strncpy(h.descrip, "gdds", sizeof(h.descrip));
    // file i -> +R, j -> -A, k -> -S: a 180 degree turn about x.
    h.qform_code = 1;
    h.sform_code = 1;
    h.quatern_b = 1.0f;
    h.srow_x[0] = static_cast<float>(s.x);
    h.srow_y[1] = -static_cast<float>(s.y);
    h.srow_z[2] = -static_cast<float>(s.z);
    std::memcpy(h.magic, "n+1", 4);
    if (g.shape().d > 32767 || g.shape().h > 32767 || g.shape().w > 32767) {
        throw Error("dimension too large for NIfTI-1");
    }

    std::vector<unsigned char> bytes(352 + g.data().size() * sizeof(T), 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    std::memcpy(bytes.data() + 352, g.data().data(), g.data().size() * sizeof(T));
    return bytes;
}

}  // namespace

Volume load_volume(const std::filesystem::path& path) {
    const auto raw = read_raw(path);
    return canonicalize<float>(raw, [](double v) { return static_cast<float>(v); });
}

LabelVolume load_label(const std::filesystem::path& path) {
    const auto raw = read_raw(path);
    constexpr double tol = 1e-3;
    bool near_binary = true;
    std::set<double> distinct;
    for (double v : raw.values) {
        if (!(std::abs(v) <= tol || std::abs(v - 1.0) <= tol)) near_binary = false;
        if (distinct.size() <= 2) distinct.insert(v);
    }
    double scale = 1.0;
    if (!near_binary) {
        if (distinct.size() == 2 && *distinct.begin() == 0.0 && *distinct.rbegin() > 0.0) {
            scale = *distinct.rbegin();
        } else {
            throw Error("label file " + path.string() + " is not binary");
        }
    }
    return canonicalize<uint8_t>(raw, [scale](double v) {
        return static_cast<uint8_t>(v / scale > 0.5 ? 1 : 0);
    });
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
    write_all(path, encode(v, kFloat32));
}

void save_label(const LabelVolume& y, const std::filesystem::path& path) {
    write_all(path, encode(y, kUInt8));
}

}  // namespace gdds
