#include "pimforce/semgproc.hpp"

#include <numbers>
#include <cmath>
#include <numeric>

namespace pimforce::semgproc {

std::size_t window_count(std::size_t num_samples, std::size_t stride) {
    if (stride == 0) throw InvalidInput("frame_stream: stride must be positive");
    if (num_samples < kEmgWindow) return 0;
    return (num_samples - kEmgWindow) / stride + 1;
}

SemgWindow window_at(const EmgStream& stream, std::size_t start) {
    if (start + kEmgWindow > stream.size()) throw InvalidInput("window exceeds stream");
    SemgWindow w;
    w.start_time = stream.timestamps[start];
    w.end_time = stream.timestamps[start + kEmgWindow - 1];
    w.data.resize(kEmgChannels * kEmgWindow);
    for (std::size_t n = 0; n < kEmgWindow; ++n)
        for (std::size_t c = 0; c < kEmgChannels; ++c)
            w.data[c * kEmgWindow + n] = stream.samples[(start + n) * kEmgChannels + c];
    return w;
}

std::vector<SemgWindow> frame_stream(const EmgStream& stream, std::size_t stride) {
    if (stream.samples.size() != stream.size() * kEmgChannels)
        throw ShapeError("emg stream: sample buffer does not match 8 channels");
    if (stream.size() < kEmgWindow)
        throw InvalidInput("emg stream shorter than one 1248-sample window");
    const std::size_t n = window_count(stream.size(), stride);
    std::vector<SemgWindow> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(window_at(stream, k * stride));
    return out;
}

const std::vector<double>& hamming_window() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kStftWindow);
        for (std::size_t n = 0; n < kStftWindow; ++n)
            v[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                          static_cast<double>(kStftWindow));
        return v;
    }();
    return w;
}

void fft_inplace(std::span<double> re, std::span<double> im) {
    const std::size_t n = re.size();
    if (n != im.size() || n == 0 || (n & (n - 1)) != 0)
        throw InvalidInput("fft: length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        for (std::size_t k = 0; k < half; ++k) {
            // Twiddles from the exact angle rather than a recurrence.
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
            const double wr = std::cos(ang), wi = std::sin(ang);
            for (std::size_t s = 0; s < n; s += len) {
                const std::size_t a = s + k, b = s + k + half;
                const double tr = re[b] * wr - im[b] * wi;
                const double ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
    }
}

Spectrogram stft(const SemgWindow& w, const StftConfig& cfg) {
    if (w.data.size() != kEmgChannels * kEmgWindow)
        throw ShapeError("stft: window must be 8 x 1248");
    const auto& win = hamming_window();
    const double bin_hz = kEmgRate / static_cast<double>(kStftWindow);
    Spectrogram out;
    out.values.assign(Spectrogram::kSize, 0.0);
    std::vector<double> re(kStftWindow), im(kStftWindow);
    for (std::size_t c = 0; c < kEmgChannels; ++c) {
        const double* x = &w.data[c * kEmgWindow];
        double mean = 0.0;
        if (cfg.remove_mean)
            mean = std::accumulate(x, x + kEmgWindow, 0.0) / static_cast<double>(kEmgWindow);
        for (std::size_t f = 0; f < kStftFrames; ++f) {
            const double* seg = x + f * kStftHop;
            for (std::size_t n = 0; n < kStftWindow; ++n) {
                re[n] = (seg[n] - mean) * win[n];
                im[n] = 0.0;
            }
            fft_inplace(re, im);
            double* dst = &out.values[(c * kStftFrames + f) * kStftBins];
            for (std::size_t b = 0; b < kStftBins; ++b) {
                if (cfg.bins == BinSelection::BelowCutoff &&
                    static_cast<double>(b) * bin_hz >= cfg.cutoff_hz) {
                    dst[b] = 0.0;
                    continue;
                }
                const double mag = std::hypot(re[b], im[b]);
                switch (cfg.scale) {
                    case SpectrumScale::Magnitude: dst[b] = mag; break;
                    case SpectrumScale::Power: dst[b] = mag * mag; break;
                    case SpectrumScale::Log: dst[b] = std::log(mag + cfg.log_epsilon); break;
                }
            }
        }
    }
    return out;
}

}  // namespace pimforce::semgproc
