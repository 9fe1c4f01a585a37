#include "gdds/nn/layers.hpp"

#include <algorithm>
#include <cstring>

#include <Eigen/Core>

namespace gdds::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Keep one im2col slab around 32 MB.
int64_t slab_depth(int64_t cin, const Shape3& s) {
    const int64_t per_slice = cin * 27 * s.h * s.w;
    return std::clamp<int64_t>((int64_t{8} << 20) / std::max<int64_t>(per_slice, 1), 1, s.d);
}

void im2col(const Tensor& x, int64_t z0, int64_t z1, float* cols) {
    const int64_t H = x.s.h, W = x.s.w, D = x.s.d;
    const int64_t N = (z1 - z0) * H * W;
    for (int64_t ci = 0; ci < x.c; ++ci) {
        const float* xc = x.channel(ci);
        for (int k = 0; k < 27; ++k) {
            const int kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
            float* row = cols + (ci * 27 + k) * N;
            for (int64_t z = z0; z < z1; ++z) {
                const int64_t zz = z + kz - 1;
                for (int64_t y = 0; y < H; ++y) {
                    float* dst = row + ((z - z0) * H + y) * W;
                    const int64_t yy = y + ky - 1;
                    if (zz < 0 || zz >= D || yy < 0 || yy >= H) {
                        std::fill(dst, dst + W, 0.0f);
                        continue;
                    }
                    const float* src = xc + (zz * H + yy) * W;
                    if (kx == 1) {
                        std::memcpy(dst, src, sizeof(float) * W);
                    } else if (kx == 0) {
                        dst[0] = 0.0f;
                        std::memcpy(dst + 1, src, sizeof(float) * (W - 1));
                    } else {
                        std::memcpy(dst, src + 1, sizeof(float) * (W - 1));
                        dst[W - 1] = 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, int64_t z0, int64_t z1, Tensor& dx) {
    const int64_t H = dx.s.h, W = dx.s.w, D = dx.s.d;
    const int64_t N = (z1 - z0) * H * W;
    for (int64_t ci = 0; ci < dx.c; ++ci) {
        float* xc = dx.channel(ci);
        for (int k = 0; k < 27; ++k) {
            const int kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
            const float* row = cols + (ci * 27 + k) * N;
            for (int64_t z = z0; z < z1; ++z) {
                const int64_t zz = z + kz - 1;
                if (zz < 0 || zz >= D) continue;
                for (int64_t y = 0; y < H; ++y) {
                    const int64_t yy = y + ky - 1;
                    if (yy < 0 || yy >= H) continue;
                    const float* src = row + ((z - z0) * H + y) * W;
                    float* dst = xc + (zz * H + yy) * W;
                    if (kx == 1) {
                        for (int64_t i = 0; i < W; ++i) dst[i] += src[i];
                    } else if (kx == 0) {
                        for (int64_t i = 1; i < W; ++i) dst[i - 1] += src[i];
                    } else {
                        for (int64_t i = 0; i + 1 < W; ++i) dst[i + 1] += src[i];
                    }
                }
            }
        }
    }
}

void check_input(const Tensor& x, int64_t channels, const std::string& layer) {
    if (x.c != channels) {
        throw Error(layer + ": expected " + std::to_string(channels) + " input channels, got " +
                    std::to_string(x.c));
    }
}

}  // namespace

void init_uniform(Param& p, int64_t fan_in, std::mt19937_64& rng, double gain) {
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& w : p.w) w = static_cast<float>(u(rng));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (!(a.s == b.s)) throw Error("concat: spatial shapes differ: " + to_string(a.s) + " vs " + to_string(b.s));
    Tensor out(a.c + b.c, a.s);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
    return out;
}

// ---------------------------------------------------------------- Conv3d

Conv3d::Conv3d(std::string name, int64_t cin_, int64_t cout_, int kernel_, bool bias_)
    : cin(cin_), cout(cout_), kernel(kernel_), has_bias(bias_) {
    if (kernel != 1 && kernel != 3) throw Error("conv kernel must be 1 or 3");
    weight.name = name + ".weight";
    weight.resize(static_cast<size_t>(cout * cin * kernel * kernel * kernel));
    if (has_bias) {
        bias.name = name + ".bias";
        bias.resize(static_cast<size_t>(cout));
    }
}

void Conv3d::init(std::mt19937_64& rng, double gain) {
    init_uniform(weight, cin * kernel * kernel * kernel, rng, gain);
    if (has_bias) std::fill(bias.w.begin(), bias.w.end(), 0.0f);
}

Tensor Conv3d::forward(const Tensor& x) const {
    check_input(x, cin, weight.name);
    Tensor y(cout, x.s);
    const int64_t V = x.voxels();
    const int64_t K = cin * kernel * kernel * kernel;
    CMapM Wm(weight.w.data(), cout, K);
    if (kernel == 1) {
        MapM(y.v.data(), cout, V).noalias() = Wm * CMapM(x.v.data(), cin, V);
    } else {
        const int64_t HW = x.s.h * x.s.w;
        const int64_t step = slab_depth(cin, x.s);
        std::vector<float> cols(static_cast<size_t>(K * step * HW));
        for (int64_t z0 = 0; z0 < x.s.d; z0 += step) {
            const int64_t z1 = std::min(x.s.d, z0 + step);
            const int64_t N = (z1 - z0) * HW;
            im2col(x, z0, z1, cols.data());
            Strided(y.v.data() + z0 * HW, cout, N, Eigen::OuterStride<>(V)).noalias() =
                Wm * CMapM(cols.data(), K, N);
        }
    }
    if (has_bias) {
        for (int64_t o = 0; o < cout; ++o) {
            float* yc = y.channel(o);
            const float b = bias.w[o];
            for (int64_t i = 0; i < V; ++i) yc[i] += b;
        }
    }
    return y;
}

void Conv3d::backward(const Tensor& x, const Tensor& dy, Tensor* dx) {
    const int64_t V = x.voxels();
    const int64_t K = cin * kernel * kernel * kernel;
    CMapM Wm(weight.w.data(), cout, K);
    MapM dW(weight.g.data(), cout, K);
    if (has_bias) {
        for (int64_t o = 0; o < cout; ++o) {
            const float* g = dy.channel(o);
            double acc = 0;
            for (int64_t i = 0; i < V; ++i) acc += g[i];
            bias.g[o] += static_cast<float>(acc);
        }
    }
    if (dx) *dx = Tensor(cin, x.s);
    if (kernel == 1) {
        CMapM X(x.v.data(), cin, V), G(dy.v.data(), cout, V);
        dW.noalias() += G * X.transpose();
        if (dx) MapM(dx->v.data(), cin, V).noalias() = Wm.transpose() * G;
        return;
    }
    const int64_t HW = x.s.h * x.s.w;
    const int64_t step = slab_depth(cin, x.s);
    std::vector<float> cols(static_cast<size_t>(K * step * HW));
    std::vector<float> dcols(dx ? cols.size() : 0);
    for (int64_t z0 = 0; z0 < x.s.d; z0 += step) {
        const int64_t z1 = std::min(x.s.d, z0 + step);
        const int64_t N = (z1 - z0) * HW;
        im2col(x, z0, z1, cols.data());
        CStrided G(dy.v.data() + z0 * HW, cout, N, Eigen::OuterStride<>(V));
        dW.noalias() += G * CMapM(cols.data(), K, N).transpose();
        if (dx) {
            MapM(dcols.data(), K, N).noalias() = Wm.transpose() * G;
            col2im_add(dcols.data(), z0, z1, *dx);
        }
    }
}

void Conv3d::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
}

void Conv3d::collect(std::vector<const Param*>& out) const {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
}

// ---------------------------------------------------------------- InstanceNorm

InstanceNorm::InstanceNorm(std::string name, int64_t channels_) : channels(channels_) {
    gamma.name = name + ".gamma";
    beta.name = name + ".beta";
    gamma.resize(static_cast<size_t>(channels));
    beta.resize(static_cast<size_t>(channels));
    std::fill(gamma.w.begin(), gamma.w.end(), 1.0f);
}

Tensor InstanceNorm::forward(const Tensor& x, Cache& cache) const {
    check_input(x, channels, gamma.name);
    Tensor y(channels, x.s);
    const int64_t V = x.voxels();
    cache.mean.assign(static_cast<size_t>(channels), 0.0f);
    cache.rstd.assign(static_cast<size_t>(channels), 0.0f);
    for (int64_t k = 0; k < channels; ++k) {
        const float* xc = x.channel(k);
        double sum = 0, sq = 0;
        for (int64_t i = 0; i < V; ++i) sum += xc[i];
        const double mean = sum / static_cast<double>(V);
        for (int64_t i = 0; i < V; ++i) sq += (xc[i] - mean) * (xc[i] - mean);
        const double rstd = 1.0 / std::sqrt(sq / static_cast<double>(V) + eps);
        cache.mean[k] = static_cast<float>(mean);
        cache.rstd[k] = static_cast<float>(rstd);
        const float a = gamma.w[k] * static_cast<float>(rstd), m = static_cast<float>(mean), b = beta.w[k];
        float* yc = y.channel(k);
        for (int64_t i = 0; i < V; ++i) yc[i] = a * (xc[i] - m) + b;
    }
    return y;
}

void InstanceNorm::backward(const Tensor& x, const Cache& cache, const Tensor& dy, Tensor& dx) {
    const int64_t V = x.voxels();
    dx = Tensor(channels, x.s);
    for (int64_t k = 0; k < channels; ++k) {
        const float* xc = x.channel(k);
        const float* g = dy.channel(k);
        const double m = cache.mean[k], r = cache.rstd[k];
        double sg = 0, sgx = 0;
        for (int64_t i = 0; i < V; ++i) {
            sg += g[i];
            sgx += g[i] * (xc[i] - m) * r;
        }
        gamma.g[k] += static_cast<float>(sgx);
        beta.g[k] += static_cast<float>(sg);
        const double gm = gamma.w[k];
        const double mean_g = gm * sg / static_cast<double>(V), mean_gx = gm * sgx / static_cast<double>(V);
        float* d = dx.channel(k);
        for (int64_t i = 0; i < V; ++i) {
            const double xhat = (xc[i] - m) * r;
            d[i] = static_cast<float>(r * (gm * g[i] - mean_g - xhat * mean_gx));
        }
    }
}

void InstanceNorm::collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

void InstanceNorm::collect(std::vector<const Param*>& out) const {
    out.push_back(&gamma);
    out.push_back(&beta);
}

// ---------------------------------------------------------------- activations

void leaky_relu_inplace(Tensor& t, float slope) {
    for (auto& v : t.v)
        if (v < 0) v *= slope;
}

void leaky_relu_backward_inplace(const Tensor& y, Tensor& dy, float slope) {
    for (size_t i = 0; i < dy.v.size(); ++i)
        if (y.v[i] <= 0) dy.v[i] *= slope;
}

void relu_inplace(Tensor& t) {
    for (auto& v : t.v) v = std::max(v, 0.0f);
}

void relu_backward_inplace(const Tensor& y, Tensor& dy) {
    for (size_t i = 0; i < dy.v.size(); ++i)
        if (y.v[i] <= 0) dy.v[i] = 0.0f;
}

// ---------------------------------------------------------------- pooling

Tensor max_pool2(const Tensor& x, std::vector<int32_t>& argmax) {
    if (x.s.d % 2 || x.s.h % 2 || x.s.w % 2) throw Error("max_pool2: odd spatial size " + to_string(x.s));
    const Shape3 o{x.s.d / 2, x.s.h / 2, x.s.w / 2};
    Tensor y(x.c, o);
    argmax.assign(static_cast<size_t>(y.numel()), 0);
    int64_t idx = 0;
    for (int64_t k = 0; k < x.c; ++k) {
        const float* xc = x.channel(k);
        for (int64_t z = 0; z < o.d; ++z)
            for (int64_t yy = 0; yy < o.h; ++yy)
                for (int64_t xx = 0; xx < o.w; ++xx, ++idx) {
                    int64_t best = ((2 * z) * x.s.h + 2 * yy) * x.s.w + 2 * xx;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int c = 0; c < 2; ++c) {
                                const int64_t off = ((2 * z + a) * x.s.h + 2 * yy + b) * x.s.w + 2 * xx + c;
                                if (xc[off] > xc[best]) best = off;
                            }
                    y.v[idx] = xc[best];
                    argmax[idx] = static_cast<int32_t>(best);
                }
    }
    return y;
}

Tensor max_pool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, Shape3 in_shape) {
    Tensor dx(dy.c, in_shape);
    const int64_t per = dy.voxels();
    for (int64_t k = 0; k < dy.c; ++k) {
        float* d = dx.channel(k);
        const float* g = dy.channel(k);
        for (int64_t i = 0; i < per; ++i) d[argmax[k * per + i]] += g[i];
    }
    return dx;
}

// ---------------------------------------------------------------- ConvTranspose2

ConvTranspose2::ConvTranspose2(std::string name, int64_t cin_, int64_t cout_) : cin(cin_), cout(cout_) {
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.resize(static_cast<size_t>(cin * cout * 8));
    bias.resize(static_cast<size_t>(cout));
}

void ConvTranspose2::init(std::mt19937_64& rng) {
    init_uniform(weight, cin, rng);
    std::fill(bias.w.begin(), bias.w.end(), 0.0f);
}

Tensor ConvTranspose2::forward(const Tensor& x) const {
    check_input(x, cin, weight.name);
    const int64_t N = x.voxels();
    RowMat T = CMapM(weight.w.data(), cin, cout * 8).transpose() * CMapM(x.v.data(), cin, N);
    const Shape3 o{x.s.d * 2, x.s.h * 2, x.s.w * 2};
    Tensor y(cout, o);
    for (int64_t co = 0; co < cout; ++co)
        for (int t = 0; t < 8; ++t) {
            const int a = t / 4, b = (t / 2) % 2, c = t % 2;
            const float* src = T.data() + (co * 8 + t) * N;
            const float bv = bias.w[co];
            int64_t n = 0;
            for (int64_t z = 0; z < x.s.d; ++z)
                for (int64_t yy = 0; yy < x.s.h; ++yy)
                    for (int64_t xx = 0; xx < x.s.w; ++xx, ++n) y.at(co, 2 * z + a, 2 * yy + b, 2 * xx + c) = src[n] + bv;
        }
    return y;
}

void ConvTranspose2::backward(const Tensor& x, const Tensor& dy, Tensor* dx) {
    const int64_t N = x.voxels();
    RowMat G(cout * 8, N);
    for (int64_t co = 0; co < cout; ++co) {
        double acc = 0;
        for (int t = 0; t < 8; ++t) {
            const int a = t / 4, b = (t / 2) % 2, c = t % 2;
            float* dst = G.data() + (co * 8 + t) * N;
            int64_t n = 0;
            for (int64_t z = 0; z < x.s.d; ++z)
                for (int64_t yy = 0; yy < x.s.h; ++yy)
                    for (int64_t xx = 0; xx < x.s.w; ++xx, ++n) {
                        dst[n] = dy.at(co, 2 * z + a, 2 * yy + b, 2 * xx + c);
                        acc += dst[n];
                    }
        }
        bias.g[co] += static_cast<float>(acc);
    }
    CMapM X(x.v.data(), cin, N);
    MapM(weight.g.data(), cin, cout * 8).noalias() += X * G.transpose();
    if (dx) {
        *dx = Tensor(cin, x.s);
        MapM(dx->v.data(), cin, N).noalias() = CMapM(weight.w.data(), cin, cout * 8) * G;
    }
}

void ConvTranspose2::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

void ConvTranspose2::collect(std::vector<const Param*>& out) const {
    out.push_back(&weight);
    out.push_back(&bias);
}

// ---------------------------------------------------------------- upsampling

namespace {

struct Taps {
    std::vector<int64_t> i0, i1;
    std::vector<float> w1;
};

Taps linear_taps(int64_t n, int factor) {
    Taps t;
    const int64_t m = n * factor;
    t.i0.resize(m);
    t.i1.resize(m);
    t.w1.resize(m);
    for (int64_t o = 0; o < m; ++o) {
        double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
        src = std::max(src, 0.0);
        auto i0 = static_cast<int64_t>(std::floor(src));
        i0 = std::min(i0, n - 1);
        t.i0[o] = i0;
        t.i1[o] = std::min(i0 + 1, n - 1);
        t.w1[o] = static_cast<float>(src - static_cast<double>(i0));
    }
    return t;
}

}  // namespace

void upsample_trilinear(const float* in, Shape3 s, int f, float* out) {
    if (f == 1) {
        std::copy(in, in + s.size(), out);
        return;
    }
    const Taps tz = linear_taps(s.d, f), ty = linear_taps(s.h, f), tx = linear_taps(s.w, f);
    const int64_t D = s.d * f, H = s.h * f, W = s.w * f;
    // x pass: [d][h][W]
    std::vector<float> a(static_cast<size_t>(s.d * s.h * W));
    for (int64_t r = 0; r < s.d * s.h; ++r) {
        const float* src = in + r * s.w;
        float* dst = a.data() + r * W;
        for (int64_t o = 0; o < W; ++o) dst[o] = src[tx.i0[o]] + tx.w1[o] * (src[tx.i1[o]] - src[tx.i0[o]]);
    }
    // y pass: [d][H][W]
    std::vector<float> b(static_cast<size_t>(s.d * H * W));
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t o = 0; o < H; ++o) {
            const float* r0 = a.data() + (z * s.h + ty.i0[o]) * W;
            const float* r1 = a.data() + (z * s.h + ty.i1[o]) * W;
            float* dst = b.data() + (z * H + o) * W;
            const float w = ty.w1[o];
            for (int64_t x = 0; x < W; ++x) dst[x] = r0[x] + w * (r1[x] - r0[x]);
        }
    // z pass
    for (int64_t o = 0; o < D; ++o) {
        const float* p0 = b.data() + tz.i0[o] * H * W;
        const float* p1 = b.data() + tz.i1[o] * H * W;
        float* dst = out + o * H * W;
        const float w = tz.w1[o];
        for (int64_t i = 0; i < H * W; ++i) dst[i] = p0[i] + w * (p1[i] - p0[i]);
    }
}

void upsample_trilinear_backward(const float* dout, Shape3 s, int f, float* din) {
    if (f == 1) {
        for (int64_t i = 0; i < s.size(); ++i) din[i] += dout[i];
        return;
    }
    const Taps tz = linear_taps(s.d, f), ty = linear_taps(s.h, f), tx = linear_taps(s.w, f);
    const int64_t D = s.d * f, H = s.h * f, W = s.w * f;
    std::vector<float> b(static_cast<size_t>(s.d * H * W), 0.0f);
    for (int64_t o = 0; o < D; ++o) {
        const float* g = dout + o * H * W;
        float* p0 = b.data() + tz.i0[o] * H * W;
        float* p1 = b.data() + tz.i1[o] * H * W;
        const float w = tz.w1[o];
        for (int64_t i = 0; i < H * W; ++i) {
            p0[i] += (1.0f - w) * g[i];
            p1[i] += w * g[i];
        }
    }
    std::vector<float> a(static_cast<size_t>(s.d * s.h * W), 0.0f);
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t o = 0; o < H; ++o) {
            const float* g = b.data() + (z * H + o) * W;
            float* r0 = a.data() + (z * s.h + ty.i0[o]) * W;
            float* r1 = a.data() + (z * s.h + ty.i1[o]) * W;
            const float w = ty.w1[o];
            for (int64_t x = 0; x < W; ++x) {
                r0[x] += (1.0f - w) * g[x];
                r1[x] += w * g[x];
            }
        }
    for (int64_t r = 0; r < s.d * s.h; ++r) {
        const float* g = a.data() + r * W;
        float* dst = din + r * s.w;
        for (int64_t o = 0; o < W; ++o) {
            dst[tx.i0[o]] += (1.0f - tx.w1[o]) * g[o];
            dst[tx.i1[o]] += tx.w1[o] * g[o];
        }
    }
}

}  // namespace gdds::nn
