#include "pimforce/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>

#include <Eigen/Dense>

#include "pimforce/common.hpp"
#include "pimforce/nn/parallel.hpp"

namespace pimforce::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using MapCM = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using StridedCMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

void accumulate(const Tensor& t, std::span<const double> g) {
    auto dst = t.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void require(bool cond, const std::string& what) {
    if (!cond) throw ShapeError(what);
}

// Spatial layout of a batched feature map with 1, 2 or 3 spatial axes,
// padded on the left to 3-D.
struct Spatial {
    std::size_t n = 0, c = 0;
    Dims3 size{1, 1, 1};
    std::size_t volume() const { return size[0] * size[1] * size[2]; }
};

Spatial spatial_of(const Shape& s, const char* op) {
    require(s.size() >= 3 && s.size() <= 5,
            std::string(op) + ": expected [N, C, spatial...], got " + shape_str(s));
    Spatial g;
    g.n = s[0];
    g.c = s[1];
    const std::size_t extra = s.size() - 2;
    for (std::size_t i = 0; i < extra; ++i) g.size[3 - extra + i] = s[2 + i];
    return g;
}

Shape with_spatial(const Shape& like, std::size_t n, std::size_t c, const Dims3& sp) {
    Shape out{n, c};
    const std::size_t extra = like.size() - 2;
    for (std::size_t i = 0; i < extra; ++i) out.push_back(sp[3 - extra + i]);
    return out;
}

// Sums per-item buffers in item order so the result does not depend on the
// number of workers.
void reduce_ordered(std::size_t items, std::size_t len,
                    const std::function<void(std::size_t, std::span<double>)>& fill,
                    std::span<double> out) {
    const std::size_t group = std::max<std::size_t>(1, thread_count());
    std::vector<std::vector<double>> bufs(std::min(group, items), std::vector<double>(len));
    for (std::size_t g0 = 0; g0 < items; g0 += group) {
        const std::size_t g1 = std::min(items, g0 + group);
        parallel_for(g1 - g0, [&](std::size_t i) {
            auto& b = bufs[i];
            std::fill(b.begin(), b.end(), 0.0);
            fill(g0 + i, b);
        });
        for (std::size_t i = 0; i < g1 - g0; ++i)
            for (std::size_t k = 0; k < len; ++k) out[k] += bufs[i][k];
    }
}

struct ConvGeo {
    Spatial in;
    std::size_t o = 0;
    Dims3 k{1, 1, 1}, s{1, 1, 1}, p{0, 0, 0}, out{1, 1, 1};
    std::size_t kvol() const { return in.c * k[0] * k[1] * k[2]; }
    std::size_t pvol() const { return out[0] * out[1] * out[2]; }
};

ConvGeo conv_geo(const Tensor& x, const Tensor& w, const WindowSpec& spec) {
    ConvGeo g;
    g.in = spatial_of(x.shape(), "conv");
    require(w.rank() == x.rank(), "conv: weight rank " + shape_str(w.shape()) +
                                      " does not match input " + shape_str(x.shape()));
    require(w.dim(1) == g.in.c, "conv: weight expects " + std::to_string(w.dim(1)) +
                                    " input channels, got " + std::to_string(g.in.c));
    g.o = w.dim(0);
    const std::size_t extra = x.rank() - 2;
    for (std::size_t i = 0; i < 3; ++i) {
        if (i + extra >= 3) {
            g.k[i] = w.dim(2 + i - (3 - extra));
            g.s[i] = spec.stride[i];
            g.p[i] = spec.pad[i];
        }
        require(g.s[i] >= 1, "conv: stride must be positive");
        require(g.in.size[i] + 2 * g.p[i] >= g.k[i], "conv: kernel larger than padded input");
        g.out[i] = window_out(g.in.size[i], g.k[i], g.s[i], g.p[i]);
    }
    return g;
}

// Columns for output rows [r0, r1), a row being one (od, oh) pair.
void im2col_rows(const double* x, const ConvGeo& g, std::size_t r0, std::size_t r1,
                 double* col) {
    const std::size_t ow_n = g.out[2];
    const std::size_t pc = (r1 - r0) * ow_n;
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in.c; ++c)
        for (std::size_t kd = 0; kd < g.k[0]; ++kd)
            for (std::size_t kh = 0; kh < g.k[1]; ++kh)
                for (std::size_t kw = 0; kw < g.k[2]; ++kw, ++row) {
                    double* dst = col + row * pc;
                    for (std::size_t r = r0; r < r1; ++r, dst += ow_n) {
                        const std::size_t od = r / g.out[1], oh = r % g.out[1];
                        const long id = static_cast<long>(od * g.s[0] + kd) - static_cast<long>(g.p[0]);
                        const long ih = static_cast<long>(oh * g.s[1] + kh) - static_cast<long>(g.p[1]);
                        if (id < 0 || id >= static_cast<long>(g.in.size[0]) || ih < 0 ||
                            ih >= static_cast<long>(g.in.size[1])) {
                            std::fill(dst, dst + ow_n, 0.0);
                            continue;
                        }
                        const double* src =
                            x + ((c * g.in.size[0] + id) * g.in.size[1] + ih) * g.in.size[2];
                        for (std::size_t ow = 0; ow < ow_n; ++ow) {
                            const long iw = static_cast<long>(ow * g.s[2] + kw) - static_cast<long>(g.p[2]);
                            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.in.size[2])) ? 0.0 : src[iw];
                        }
                    }
                }
}

void col2im_rows(const double* col, const ConvGeo& g, std::size_t r0, std::size_t r1,
                 double* dx) {
    const std::size_t ow_n = g.out[2];
    const std::size_t pc = (r1 - r0) * ow_n;
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in.c; ++c)
        for (std::size_t kd = 0; kd < g.k[0]; ++kd)
            for (std::size_t kh = 0; kh < g.k[1]; ++kh)
                for (std::size_t kw = 0; kw < g.k[2]; ++kw, ++row) {
                    const double* srcrow = col + row * pc;
                    for (std::size_t r = r0; r < r1; ++r, srcrow += ow_n) {
                        const std::size_t od = r / g.out[1], oh = r % g.out[1];
                        const long id = static_cast<long>(od * g.s[0] + kd) - static_cast<long>(g.p[0]);
                        const long ih = static_cast<long>(oh * g.s[1] + kh) - static_cast<long>(g.p[1]);
                        if (id < 0 || id >= static_cast<long>(g.in.size[0]) || ih < 0 ||
                            ih >= static_cast<long>(g.in.size[1]))
                            continue;
                        double* dst = dx + ((c * g.in.size[0] + id) * g.in.size[1] + ih) * g.in.size[2];
                        for (std::size_t ow = 0; ow < ow_n; ++ow) {
                            const long iw = static_cast<long>(ow * g.s[2] + kw) - static_cast<long>(g.p[2]);
                            if (iw >= 0 && iw < static_cast<long>(g.in.size[2])) dst[iw] += srcrow[ow];
                        }
                    }
                }
}

std::size_t rows_per_chunk(const ConvGeo& g) {
    constexpr std::size_t kBudget = std::size_t{1} << 21;  // doubles per column buffer
    const std::size_t per_row = g.kvol() * g.out[2];
    return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per_row, 1), 1,
                                   g.out[0] * g.out[1]);
}

// Unit-stride convolution without im2col. On the zero-padded input every
// kernel offset is a constant shift of the flattened volume, so each offset
// is one small GEMM over a contiguous span. Columns that wrap across rows
// are computed and discarded.
struct ShiftGeo {
    Dims3 padded{};
    std::size_t pvol = 0;  // padded volume
    std::size_t span = 0;  // columns per GEMM
    std::vector<std::size_t> offsets;
};

ShiftGeo shift_geo(const ConvGeo& g) {
    ShiftGeo s;
    for (std::size_t i = 0; i < 3; ++i) s.padded[i] = g.in.size[i] + 2 * g.p[i];
    s.pvol = s.padded[0] * s.padded[1] * s.padded[2];
    s.span = ((g.out[0] - 1) * s.padded[1] + (g.out[1] - 1)) * s.padded[2] + g.out[2];
    for (std::size_t kd = 0; kd < g.k[0]; ++kd)
        for (std::size_t kh = 0; kh < g.k[1]; ++kh)
            for (std::size_t kw = 0; kw < g.k[2]; ++kw)
                s.offsets.push_back((kd * s.padded[1] + kh) * s.padded[2] + kw);
    return s;
}

void pad_volume(const double* x, const ConvGeo& g, const ShiftGeo& s, double* xp) {
    std::fill(xp, xp + g.in.c * s.pvol, 0.0);
    for (std::size_t c = 0; c < g.in.c; ++c)
        for (std::size_t d = 0; d < g.in.size[0]; ++d)
            for (std::size_t h = 0; h < g.in.size[1]; ++h)
                std::copy_n(x + ((c * g.in.size[0] + d) * g.in.size[1] + h) * g.in.size[2], g.in.size[2],
                            xp + c * s.pvol + ((d + g.p[0]) * s.padded[1] + h + g.p[1]) * s.padded[2] + g.p[2]);
}

// Column of output voxel (d, h, w) inside a span.
std::size_t span_col(const ShiftGeo& s, std::size_t d, std::size_t h, std::size_t w) {
    return (d * s.padded[1] + h) * s.padded[2] + w;
}

Tensor conv_unit_stride(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeo& g) {
    const ShiftGeo s = shift_geo(g);
    const std::size_t O = g.o, C = g.in.c, KK = s.offsets.size(), P = g.pvol();
    const std::size_t in_vol = C * g.in.volume();
    // Weights regrouped per kernel offset: packed[k][o][c].
    std::vector<double> packed(KK * O * C);
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < KK; ++k) packed[(k * O + o) * C + c] = weight.data()[(o * C + c) * KK + k];

    Tensor out = make_result(
        with_spatial(x.shape(), g.in.n, O, g.out), {x, weight, bias},
        [x, weight, bias, g, s, O, C, KK, P, in_vol, packed](TensorImpl& r) mutable {
            const bool gx = wants_grad(x), gw = wants_grad(weight);
            if (gx) x.grad();
            auto per_sample = [&](std::size_t n, std::span<double> dw) {
                RowMat dy = RowMat::Zero(O, s.span);
                const double* gy = r.grad.data() + n * O * P;
                for (std::size_t o = 0; o < O; ++o)
                    for (std::size_t d = 0; d < g.out[0]; ++d)
                        for (std::size_t h = 0; h < g.out[1]; ++h)
                            std::copy_n(gy + (o * g.out[0] + d) * g.out[1] * g.out[2] + h * g.out[2], g.out[2],
                                        dy.data() + o * s.span + span_col(s, d, h, 0));
                if (gw) {
                    std::vector<double> xp(C * s.pvol);
                    pad_volume(x.data().data() + n * in_vol, g, s, xp.data());
                    for (std::size_t k = 0; k < KK; ++k)
                        MapM(dw.data() + k * O * C, O, C).noalias() +=
                            dy * StridedCMap(xp.data() + s.offsets[k], C, s.span, Eigen::OuterStride<>(s.pvol))
                                     .transpose();
                }
                if (gx) {
                    std::vector<double> dxp(C * s.pvol, 0.0);
                    for (std::size_t k = 0; k < KK; ++k)
                        StridedMap(dxp.data() + s.offsets[k], C, s.span, Eigen::OuterStride<>(s.pvol)).noalias() +=
                            MapCM(packed.data() + k * O * C, O, C).transpose() * dy;
                    double* dx = x.grad().data() + n * in_vol;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t d = 0; d < g.in.size[0]; ++d)
                            for (std::size_t h = 0; h < g.in.size[1]; ++h) {
                                const double* src = dxp.data() + c * s.pvol +
                                                    ((d + g.p[0]) * s.padded[1] + h + g.p[1]) * s.padded[2] + g.p[2];
                                double* dst = dx + ((c * g.in.size[0] + d) * g.in.size[1] + h) * g.in.size[2];
                                for (std::size_t w = 0; w < g.in.size[2]; ++w) dst[w] += src[w];
                            }
                }
            };
            if (gw) {
                std::vector<double> dpacked(KK * O * C, 0.0);
                reduce_ordered(g.in.n, KK * O * C, per_sample, dpacked);
                auto dw = weight.grad();
                for (std::size_t o = 0; o < O; ++o)
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t k = 0; k < KK; ++k) dw[(o * C + c) * KK + k] += dpacked[(k * O + o) * C + c];
            } else if (gx) {
                std::vector<double> unused;
                parallel_for(g.in.n, [&](std::size_t n) { per_sample(n, unused); });
            }
            if (wants_grad(bias)) {
                auto db = bias.grad();
                for (std::size_t n = 0; n < g.in.n; ++n)
                    for (std::size_t o = 0; o < O; ++o) {
                        const double* gy = r.grad.data() + (n * O + o) * P;
                        double acc = 0.0;
                        for (std::size_t p = 0; p < P; ++p) acc += gy[p];
                        db[o] += acc;
                    }
            }
        });

    parallel_for(g.in.n, [&](std::size_t n) {
        std::vector<double> xp(C * s.pvol);
        pad_volume(x.data().data() + n * in_vol, g, s, xp.data());
        RowMat acc = RowMat::Zero(O, s.span);
        for (std::size_t k = 0; k < KK; ++k)
            acc.noalias() += MapCM(packed.data() + k * O * C, O, C) *
                             StridedCMap(xp.data() + s.offsets[k], C, s.span, Eigen::OuterStride<>(s.pvol));
        double* yn = out.data().data() + n * O * P;
        for (std::size_t o = 0; o < O; ++o) {
            const double b = bias.defined() ? bias.data()[o] : 0.0;
            for (std::size_t d = 0; d < g.out[0]; ++d)
                for (std::size_t h = 0; h < g.out[1]; ++h) {
                    const double* src = acc.data() + o * s.span + span_col(s, d, h, 0);
                    double* dst = yn + (o * g.out[0] + d) * g.out[1] * g.out[2] + h * g.out[2];
                    for (std::size_t w = 0; w < g.out[2]; ++w) dst[w] = src[w] + b;
                }
        }
    });
    return out;
}

}  // namespace

std::size_t window_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
    Tensor out = make_result(a.shape(), {a, b}, [a, b](TensorImpl& o) mutable {
        if (wants_grad(a)) accumulate(a, o.grad);
        if (wants_grad(b)) accumulate(b, o.grad);
    });
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.data()[i] + b.data()[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_result(a.shape(), {a}, [a, s](TensorImpl& o) mutable {
        auto g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o.grad[i];
    });
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = s * a.data()[i];
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = make_result(x.shape(), {x}, [x](TensorImpl& o) mutable {
        auto g = x.grad();
        const auto xv = x.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) g[i] += o.grad[i];
    });
    auto d = out.data();
    const auto xv = x.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = make_result(x.shape(), {x}, [x](TensorImpl& o) mutable {
        auto g = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = o.data[i];
            g[i] += o.grad[i] * y * (1.0 - y);
        }
    });
    auto d = out.data();
    const auto xv = x.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        // Split by sign so exp never overflows.
        const double v = xv[i];
        d[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    Tensor out = make_result(x.shape(), {x}, [x, lo, hi](TensorImpl& o) mutable {
        auto g = x.grad();
        const auto xv = x.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] >= lo && xv[i] <= hi) g[i] += o.grad[i];
    });
    auto d = out.data();
    const auto xv = x.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::clamp(xv[i], lo, hi);
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(shape_numel(shape) == x.numel(),
            "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    Tensor out = make_result(std::move(shape), {x}, [x](TensorImpl& o) mutable {
        accumulate(x, o.grad);
    });
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    return out;
}

Tensor mean_all(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    Tensor out = make_result({1}, {x}, [x, inv](TensorImpl& o) mutable {
        auto g = x.grad();
        for (auto& v : g) v += o.grad[0] * inv;
    });
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    out.data()[0] = acc * inv;
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require(x.rank() == 2 && weight.rank() == 2 && weight.dim(1) == x.dim(1),
            "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    const std::size_t n = x.dim(0), f = x.dim(1), o = weight.dim(0);
    if (bias.defined()) require(bias.numel() == o, "linear: bias size");
    Tensor out = make_result({n, o}, {x, weight, bias}, [x, weight, bias, n, f, o](TensorImpl& r) mutable {
        MapCM dy(r.grad.data(), n, o);
        if (wants_grad(x)) {
            MapM dx(x.grad().data(), n, f);
            dx.noalias() += dy * MapCM(weight.data().data(), o, f);
        }
        if (wants_grad(weight)) {
            MapM dw(weight.grad().data(), o, f);
            dw.noalias() += dy.transpose() * MapCM(x.data().data(), n, f);
        }
        if (wants_grad(bias)) {
            auto db = bias.grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < o; ++j) db[j] += dy(i, j);
        }
    });
    MapM y(out.data().data(), n, o);
    y.noalias() = MapCM(x.data().data(), n, f) * MapCM(weight.data().data(), o, f).transpose();
    if (bias.defined())
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < o; ++j) y(i, j) += bias.data()[j];
    return out;
}

Tensor concat_features(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
            "concat: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t n = a.dim(0), fa = a.dim(1), fb = b.dim(1);
    Tensor out = make_result({n, fa + fb}, {a, b}, [a, b, n, fa, fb](TensorImpl& o) mutable {
        if (wants_grad(a)) {
            auto g = a.grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < fa; ++j) g[i * fa + j] += o.grad[i * (fa + fb) + j];
        }
        if (wants_grad(b)) {
            auto g = b.grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < fb; ++j) g[i * fb + j] += o.grad[i * (fa + fb) + fa + j];
        }
    });
    auto d = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a.data().data() + i * fa, fa, d.data() + i * (fa + fb));
        std::copy_n(b.data().data() + i * fb, fb, d.data() + i * (fa + fb) + fa);
    }
    return out;
}

Tensor conv(const Tensor& x, const Tensor& weight, const Tensor& bias, const WindowSpec& spec) {
    const ConvGeo g = conv_geo(x, weight, spec);
    if (bias.defined()) require(bias.numel() == g.o, "conv: bias size");
    if (g.s == Dims3{1, 1, 1}) return conv_unit_stride(x, weight, bias, g);
    const std::size_t K = g.kvol(), P = g.pvol(), O = g.o;
    const std::size_t in_vol = g.in.c * g.in.volume();
    const std::size_t rows = g.out[0] * g.out[1];
    const std::size_t chunk = rows_per_chunk(g);

    Tensor out = make_result(
        with_spatial(x.shape(), g.in.n, O, g.out), {x, weight, bias},
        [x, weight, bias, g, K, P, O, in_vol, rows, chunk](TensorImpl& r) mutable {
            const bool gx = wants_grad(x), gw = wants_grad(weight);
            MapCM wm(weight.data().data(), O, K);
            auto per_sample = [&](std::size_t n, std::span<double> dw) {
                std::vector<double> col(K * chunk * g.out[2]);
                const double* xn = x.data().data() + n * in_vol;
                const double* gy = r.grad.data() + n * O * P;
                for (std::size_t r0 = 0; r0 < rows; r0 += chunk) {
                    const std::size_t r1 = std::min(rows, r0 + chunk);
                    const std::size_t pc = (r1 - r0) * g.out[2];
                    StridedCMap dy(gy + r0 * g.out[2], O, pc, Eigen::OuterStride<>(P));
                    if (gw) {
                        im2col_rows(xn, g, r0, r1, col.data());
                        MapM(dw.data(), O, K).noalias() += dy * MapCM(col.data(), K, pc).transpose();
                    }
                    if (gx) {
                        MapM(col.data(), K, pc).noalias() = wm.transpose() * dy;
                        col2im_rows(col.data(), g, r0, r1, x.grad().data() + n * in_vol);
                    }
                }
            };
            if (gx) x.grad();  // allocate before workers touch it
            if (gw) {
                reduce_ordered(g.in.n, O * K, per_sample, weight.grad());
            } else if (gx) {
                std::vector<double> unused;
                parallel_for(g.in.n, [&](std::size_t n) { per_sample(n, unused); });
            }
            if (wants_grad(bias)) {
                auto db = bias.grad();
                for (std::size_t n = 0; n < g.in.n; ++n)
                    for (std::size_t o = 0; o < O; ++o) {
                        const double* gy = r.grad.data() + (n * O + o) * P;
                        double acc = 0.0;
                        for (std::size_t p = 0; p < P; ++p) acc += gy[p];
                        db[o] += acc;
                    }
            }
        });

    MapCM wm(weight.data().data(), O, K);
    parallel_for(g.in.n, [&](std::size_t n) {
        std::vector<double> col(K * chunk * g.out[2]);
        const double* xn = x.data().data() + n * in_vol;
        double* yn = out.data().data() + n * O * P;
        for (std::size_t r0 = 0; r0 < rows; r0 += chunk) {
            const std::size_t r1 = std::min(rows, r0 + chunk);
            const std::size_t pc = (r1 - r0) * g.out[2];
            im2col_rows(xn, g, r0, r1, col.data());
            StridedMap(yn + r0 * g.out[2], O, pc, Eigen::OuterStride<>(P)).noalias() =
                wm * MapCM(col.data(), K, pc);
        }
        if (bias.defined())
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t p = 0; p < P; ++p) yn[o * P + p] += bias.data()[o];
    });
    return out;
}

namespace {

struct SepGeo {
    std::size_t n, c, g, o, k;
    std::size_t s, p;
    std::size_t out;
};

// Banded matrix A[out, k] = profile[out * stride + k - pad] (0 outside).
RowMat band(const double* profile, const SepGeo& sg) {
    RowMat a(sg.out, sg.k);
    for (std::size_t i = 0; i < sg.out; ++i)
        for (std::size_t j = 0; j < sg.k; ++j) {
            const long idx = static_cast<long>(i * sg.s + j) - static_cast<long>(sg.p);
            a(i, j) = (idx < 0 || idx >= static_cast<long>(sg.g)) ? 0.0 : profile[idx];
        }
    return a;
}

}  // namespace

Tensor separable_conv3d(const Tensor& profiles, const Tensor& weight, const WindowSpec& spec) {
    require(profiles.rank() == 4 && profiles.dim(2) == 3,
            "separable_conv3d: profiles must be [N, K, 3, G], got " + shape_str(profiles.shape()));
    require(weight.rank() == 5 && weight.dim(1) == profiles.dim(1) && weight.dim(2) == weight.dim(3) &&
                weight.dim(3) == weight.dim(4),
            "separable_conv3d: weight " + shape_str(weight.shape()));
    require(spec.stride[0] == spec.stride[1] && spec.stride[1] == spec.stride[2] &&
                spec.pad[0] == spec.pad[1] && spec.pad[1] == spec.pad[2],
            "separable_conv3d: stride and padding must be isotropic");
    SepGeo sg{profiles.dim(0), profiles.dim(1), profiles.dim(3), weight.dim(0), weight.dim(2),
              spec.stride[0], spec.pad[0], 0};
    sg.out = window_out(sg.g, sg.k, sg.s, sg.p);
    const std::size_t k = sg.k, k3 = k * k * k, O = sg.o, OW = sg.out, plane = sg.out * sg.out;
    const std::size_t P = plane * sg.out;

    Tensor out = make_result(
        {sg.n, O, sg.out, sg.out, sg.out}, {profiles, weight},
        [profiles, weight, sg, k, k3, O, OW, plane, P](TensorImpl& r) mutable {
            if (!wants_grad(weight)) return;
            auto per_sample = [&](std::size_t n, std::span<double> dw) {
                RowMat u(k, plane), v(k * k, OW), dwc(k * k, k);
                for (std::size_t c = 0; c < sg.c; ++c) {
                    const double* pr = profiles.data().data() + (n * sg.c + c) * 3 * sg.g;
                    const RowMat ax = band(pr, sg), ay = band(pr + sg.g, sg), az = band(pr + 2 * sg.g, sg);
                    for (std::size_t o = 0; o < O; ++o) {
                        MapCM go(r.grad.data() + (n * O + o) * P, sg.out, plane);
                        u.noalias() = ax.transpose() * go;
                        for (std::size_t kd = 0; kd < k; ++kd)
                            v.middleRows(kd * k, k).noalias() =
                                ay.transpose() * MapCM(u.row(kd).data(), sg.out, OW);
                        dwc.noalias() = v * az;
                        double* dst = dw.data() + (o * sg.c + c) * k3;
                        for (std::size_t i = 0; i < k3; ++i) dst[i] += dwc.data()[i];
                    }
                }
            };
            reduce_ordered(sg.n, weight.numel(), per_sample, weight.grad());
        });

    parallel_for(sg.n, [&](std::size_t n) {
        RowMat t1(k * k, OW), t2(k, plane);
        double* yn = out.data().data() + n * O * P;
        for (std::size_t c = 0; c < sg.c; ++c) {
            const double* pr = profiles.data().data() + (n * sg.c + c) * 3 * sg.g;
            const RowMat ax = band(pr, sg), ay = band(pr + sg.g, sg), az = band(pr + 2 * sg.g, sg);
            for (std::size_t o = 0; o < O; ++o) {
                MapCM wc(weight.data().data() + (o * sg.c + c) * k3, k * k, k);
                t1.noalias() = wc * az.transpose();
                for (std::size_t kd = 0; kd < k; ++kd)
                    MapM(t2.row(kd).data(), sg.out, OW).noalias() = ay * t1.middleRows(kd * k, k);
                MapM(yn + o * P, sg.out, plane).noalias() += ax * t2;
            }
        }
    });
    return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const BatchNormState& state, bool training) {
    require(x.rank() >= 2, "batch_norm: rank must be >= 2");
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t s = x.numel() / std::max<std::size_t>(n * c, 1);
    require(gamma.numel() == c && beta.numel() == c, "batch_norm: parameter size");
    require(state.running_mean && state.running_var && state.running_mean->size() == c &&
                state.running_var->size() == c,
            "batch_norm: running statistics size");
    const std::size_t m = n * s;
    require(!training || m > 0, "batch_norm: empty batch");

    std::vector<double> mean(c), inv_std(c);
    const auto xv = x.data();
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double* p = xv.data() + (i * c + ch) * s;
                for (std::size_t j = 0; j < s; ++j) acc += p[j];
            }
            const double mu = acc / static_cast<double>(m);
            double sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double* p = xv.data() + (i * c + ch) * s;
                for (std::size_t j = 0; j < s; ++j) sq += (p[j] - mu) * (p[j] - mu);
            }
            const double var = sq / static_cast<double>(m);
            mean[ch] = mu;
            inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
            auto& rm = *state.running_mean;
            auto& rv = *state.running_var;
            const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
            rm[ch] = (1.0 - state.momentum) * rm[ch] + state.momentum * mu;
            rv[ch] = (1.0 - state.momentum) * rv[ch] + state.momentum * unbiased;
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = (*state.running_mean)[ch];
            inv_std[ch] = 1.0 / std::sqrt((*state.running_var)[ch] + state.eps);
        }
    }

    Tensor out = make_result(x.shape(), {x, gamma, beta},
                             [x, gamma, beta, mean, inv_std, n, c, s, m, training](TensorImpl& r) mutable {
        const auto xv = x.data();
        const auto gv = gamma.data();
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * c + ch) * s;
                for (std::size_t j = 0; j < s; ++j) {
                    const double dy = r.grad[base + j];
                    sum_dy[ch] += dy;
                    sum_dy_xhat[ch] += dy * (xv[base + j] - mean[ch]) * inv_std[ch];
                }
            }
        if (wants_grad(gamma)) {
            auto g = gamma.grad();
            for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy_xhat[ch];
        }
        if (wants_grad(beta)) {
            auto g = beta.grad();
            for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
        }
        if (!wants_grad(x)) return;
        auto dx = x.grad();
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double k = gv[ch] * inv_std[ch];
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * c + ch) * s;
                for (std::size_t j = 0; j < s; ++j) {
                    const double dy = r.grad[base + j];
                    if (training) {
                        const double xhat = (xv[base + j] - mean[ch]) * inv_std[ch];
                        dx[base + j] += k * (dy - inv_m * sum_dy[ch] - xhat * inv_m * sum_dy_xhat[ch]);
                    } else {
                        dx[base + j] += k * dy;
                    }
                }
            }
        }
    });

    auto y = out.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * s;
            for (std::size_t j = 0; j < s; ++j)
                y[base + j] = gv[ch] * (xv[base + j] - mean[ch]) * inv_std[ch] + bv[ch];
        }
    return out;
}

Tensor max_pool(const Tensor& x, const Dims3& kernel, const WindowSpec& spec) {
    const Spatial in = spatial_of(x.shape(), "max_pool");
    const std::size_t extra = x.rank() - 2;
    Dims3 k{1, 1, 1}, st{1, 1, 1}, pd{0, 0, 0}, osz{1, 1, 1};
    for (std::size_t i = 3 - extra; i < 3; ++i) {
        k[i] = kernel[i];
        st[i] = spec.stride[i];
        pd[i] = spec.pad[i];
        require(k[i] >= 1 && st[i] >= 1 && in.size[i] + 2 * pd[i] >= k[i] && pd[i] < k[i], "max_pool: bad window");
        osz[i] = window_out(in.size[i], k[i], st[i], pd[i]);
    }
    const std::size_t ovol = osz[0] * osz[1] * osz[2];
    std::vector<std::uint32_t> argmax(in.n * in.c * ovol);
    std::vector<double> y(in.n * in.c * ovol);
    const auto xv = x.data();
    for (std::size_t nc = 0; nc < in.n * in.c; ++nc) {
        const double* src = xv.data() + nc * in.volume();
        std::size_t q = 0;
        auto range = [&](std::size_t axis, std::size_t o) {
            const long lo = static_cast<long>(o * st[axis]) - static_cast<long>(pd[axis]);
            const long hi = lo + static_cast<long>(k[axis]);
            return std::pair<std::size_t, std::size_t>(
                static_cast<std::size_t>(std::max(lo, 0L)),
                static_cast<std::size_t>(std::min(hi, static_cast<long>(in.size[axis]))));
        };
        for (std::size_t od = 0; od < osz[0]; ++od) {
            const auto [d0, d1] = range(0, od);
            for (std::size_t oh = 0; oh < osz[1]; ++oh) {
                const auto [h0, h1] = range(1, oh);
                for (std::size_t ow = 0; ow < osz[2]; ++ow, ++q) {
                    const auto [w0, w1] = range(2, ow);
                    std::size_t where = (d0 * in.size[1] + h0) * in.size[2] + w0;
                    double best = src[where];
                    for (std::size_t a = d0; a < d1; ++a)
                        for (std::size_t b = h0; b < h1; ++b) {
                            const std::size_t row = (a * in.size[1] + b) * in.size[2];
                            for (std::size_t cc = w0; cc < w1; ++cc)
                                if (src[row + cc] > best) {
                                    best = src[row + cc];
                                    where = row + cc;
                                }
                        }
                    y[nc * ovol + q] = best;
                    argmax[nc * ovol + q] = static_cast<std::uint32_t>(where);
                }
            }
        }
    }

    Tensor out = make_result(with_spatial(x.shape(), in.n, in.c, osz), {x},
                             [x, in, ovol, argmax](TensorImpl& r) mutable {
        auto g = x.grad();
        for (std::size_t nc = 0; nc < in.n * in.c; ++nc)
            for (std::size_t q = 0; q < ovol; ++q)
                g[nc * in.volume() + argmax[nc * ovol + q]] += r.grad[nc * ovol + q];
    });
    std::copy(y.begin(), y.end(), out.data().begin());
    return out;
}

Tensor upsample_nearest(const Tensor& x, const Dims3& factor) {
    const Spatial in = spatial_of(x.shape(), "upsample_nearest");
    const std::size_t extra = x.rank() - 2;
    Dims3 f{1, 1, 1}, osz = in.size;
    for (std::size_t i = 3 - extra; i < 3; ++i) {
        f[i] = factor[i];
        require(f[i] >= 1, "upsample_nearest: factor must be >= 1");
        osz[i] = in.size[i] * f[i];
    }
    const std::size_t ovol = osz[0] * osz[1] * osz[2];
    auto src_index = [in, f, osz](std::size_t q) {
        const std::size_t w = q % osz[2], h = (q / osz[2]) % osz[1], d = q / (osz[1] * osz[2]);
        return ((d / f[0]) * in.size[1] + h / f[1]) * in.size[2] + w / f[2];
    };
    Tensor out = make_result(with_spatial(x.shape(), in.n, in.c, osz), {x},
                             [x, in, ovol, src_index](TensorImpl& r) mutable {
        auto g = x.grad();
        for (std::size_t nc = 0; nc < in.n * in.c; ++nc)
            for (std::size_t q = 0; q < ovol; ++q)
                g[nc * in.volume() + src_index(q)] += r.grad[nc * ovol + q];
    });
    auto y = out.data();
    const auto xv = x.data();
    for (std::size_t nc = 0; nc < in.n * in.c; ++nc)
        for (std::size_t q = 0; q < ovol; ++q) y[nc * ovol + q] = xv[nc * in.volume() + src_index(q)];
    return out;
}

Tensor upsample_linear(const Tensor& x, const Dims3& factor) {
    const Spatial in = spatial_of(x.shape(), "upsample_linear");
    const std::size_t extra = x.rank() - 2;
    Dims3 f{1, 1, 1}, osz = in.size;
    for (std::size_t i = 3 - extra; i < 3; ++i) {
        f[i] = factor[i];
        require(f[i] >= 1, "upsample_linear: factor must be >= 1");
        osz[i] = in.size[i] * f[i];
    }
    // Per axis and output index: the two source taps and their weights, with
    // half-pixel centers and the edges clamped.
    struct Tap {
        std::size_t lo, hi;
        double wlo, whi;
    };
    std::array<std::vector<Tap>, 3> taps;
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t o = 0; o < osz[a]; ++o) {
            const double src = std::max(0.0, (static_cast<double>(o) + 0.5) / static_cast<double>(f[a]) - 0.5);
            const auto lo = std::min(static_cast<std::size_t>(src), in.size[a] - 1);
            const std::size_t hi = std::min(lo + 1, in.size[a] - 1);
            const double w = src - static_cast<double>(lo);
            taps[a].push_back({lo, hi, 1.0 - w, w});
        }
    const std::size_t ovol = osz[0] * osz[1] * osz[2];
    auto visit = [in, osz, taps](std::size_t q, auto&& fn) {
        const std::size_t w = q % osz[2], h = (q / osz[2]) % osz[1], d = q / (osz[1] * osz[2]);
        const Tap& td = taps[0][d];
        const Tap& th = taps[1][h];
        const Tap& tw = taps[2][w];
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < 2; ++k) {
                    const double wt = (i ? td.whi : td.wlo) * (j ? th.whi : th.wlo) * (k ? tw.whi : tw.wlo);
                    const std::size_t src = ((i ? td.hi : td.lo) * in.size[1] + (j ? th.hi : th.lo)) * in.size[2] +
                                            (k ? tw.hi : tw.lo);
                    fn(src, wt);
                }
    };
    Tensor out = make_result(with_spatial(x.shape(), in.n, in.c, osz), {x},
                             [x, in, ovol, visit](TensorImpl& r) mutable {
        auto g = x.grad();
        for (std::size_t nc = 0; nc < in.n * in.c; ++nc)
            for (std::size_t q = 0; q < ovol; ++q) {
                const double go = r.grad[nc * ovol + q];
                visit(q, [&](std::size_t src, double wt) { g[nc * in.volume() + src] += wt * go; });
            }
    });
    auto y = out.data();
    const auto xv = x.data();
    for (std::size_t nc = 0; nc < in.n * in.c; ++nc)
        for (std::size_t q = 0; q < ovol; ++q) {
            double acc = 0.0;
            visit(q, [&](std::size_t src, double wt) { acc += wt * xv[nc * in.volume() + src]; });
            y[nc * ovol + q] = acc;
        }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    const Spatial in = spatial_of(x.shape(), "global_avg_pool");
    const std::size_t vol = in.volume();
    const double inv = 1.0 / static_cast<double>(vol);
    Tensor out = make_result({in.n, in.c}, {x}, [x, in, vol, inv](TensorImpl& r) mutable {
        auto g = x.grad();
        for (std::size_t nc = 0; nc < in.n * in.c; ++nc)
            for (std::size_t j = 0; j < vol; ++j) g[nc * vol + j] += r.grad[nc] * inv;
    });
    auto y = out.data();
    const auto xv = x.data();
    for (std::size_t nc = 0; nc < in.n * in.c; ++nc) {
        double acc = 0.0;
        for (std::size_t j = 0; j < vol; ++j) acc += xv[nc * vol + j];
        y[nc] = acc * inv;
    }
    return out;
}

Tensor pressure_from_probs(const Tensor& c, double p_max) {
    Tensor out = make_result(c.shape(), {c}, [c, p_max](TensorImpl& r) mutable {
        auto g = c.grad();
        const auto cv = c.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (cv[i] > 0.5) g[i] += 2.0 * p_max * r.grad[i];
    });
    auto y = out.data();
    const auto cv = c.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 2.0 * p_max * std::max(0.0, cv[i] - 0.5);
    return out;
}

Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets, double eps) {
    require(targets.size() == probs.numel(), "binary_cross_entropy: target size");
    std::vector<double> t(targets.begin(), targets.end());
    const double inv = 1.0 / static_cast<double>(t.size());
    Tensor out = make_result({1}, {probs}, [probs, t, eps, inv](TensorImpl& r) mutable {
        auto g = probs.grad();
        const auto pv = probs.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            // Zero gradient where the clamp is active.
            if (pv[i] < eps || pv[i] > 1.0 - eps) continue;
            const double p = pv[i];
            g[i] += r.grad[0] * inv * (-(t[i] / p) + (1.0 - t[i]) / (1.0 - p));
        }
    });
    double acc = 0.0;
    const auto pv = probs.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double p = std::clamp(pv[i], eps, 1.0 - eps);
        acc -= t[i] * std::log(p) + (1.0 - t[i]) * std::log(1.0 - p);
    }
    out.data()[0] = acc * inv;
    return out;
}

Tensor mse(const Tensor& pred, std::span<const double> targets) {
    require(targets.size() == pred.numel(), "mse: target size");
    std::vector<double> t(targets.begin(), targets.end());
    const double inv = 1.0 / static_cast<double>(t.size());
    Tensor out = make_result({1}, {pred}, [pred, t, inv](TensorImpl& r) mutable {
        auto g = pred.grad();
        const auto pv = pred.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grad[0] * inv * 2.0 * (pv[i] - t[i]);
    });
    double acc = 0.0;
    const auto pv = pred.data();
    for (std::size_t i = 0; i < t.size(); ++i) acc += (pv[i] - t[i]) * (pv[i] - t[i]);
    out.data()[0] = acc * inv;
    return out;
}

}  // namespace pimforce::nn
